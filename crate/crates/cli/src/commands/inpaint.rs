use acg::consensus::ConsensusConfig;
use acg::flowfield::{
    corrupt, exact_posterior, metrics, pair_diagnostics, write_fgrid, write_fmask, Conditioning,
    FieldGrid, GrfSampler, InpaintOptions, Inpainter, NeighborMode, PatchLayout, Pattern,
};
use acg::numerics::RngStream;
use rayon::prelude::*;

use crate::config::{core_invalid, ExperimentConfig, Kind};
use crate::error::{invalid, CliError, CliResult};
use crate::output::{results_artifacts, sort_rows, summarize, Artifacts, ResultRow};

/// Reconstruction methods understood by the `methods` list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exact GP posterior mean.
    Oracle,
    /// ACG with one neighbour per patch.
    Single,
    /// ACG with every usable neighbour.
    Acg,
    /// As `Acg`, under mean consensus.
    AcgMean,
    /// As `Acg`, with unconditional pair models and replacement of known pixels.
    AcgReplace,
}

impl Method {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "oracle" => Method::Oracle,
            "single" => Method::Single,
            "acg" => Method::Acg,
            "acg-mean" => Method::AcgMean,
            "acg-replace" => Method::AcgReplace,
            other => return Err(invalid(format!("unknown inpainting method `{other}`"))),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Single => "single",
            Method::Acg => "acg",
            Method::AcgMean => "acg-mean",
            Method::AcgReplace => "acg-replace",
        }
    }
}

pub fn pattern_label(p: &Pattern) -> String {
    match p {
        Pattern::None => "none".into(),
        Pattern::Block(x, y, w, h) => format!("block-{x}-{y}-{w}-{h}"),
        Pattern::RandomRects(n, seed) => format!("rects-{n}-{seed}"),
        Pattern::Stripe(lo, hi) => format!("stripe-{lo}-{hi}"),
    }
}

type JobOutput = (Vec<ResultRow>, Vec<(String, String)>);

struct Job {
    pattern: usize,
    seed: u64,
}

/// Samples a field per (pattern, seed), corrupts it and reconstructs it with
/// every configured method. Rows carry the method in the preset column and
/// `<metric>@<pattern>` in the metric column.
pub fn cmd_inpaint(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    cfg.validate(Kind::Inpaint)?;
    let f = cfg.field()?;
    let methods = f
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<CliResult<Vec<_>>>()?;
    let layout = PatchLayout::new(f.width, f.patch_width).map_err(core_invalid)?;
    let sampler = GrfSampler::new(&f.grf, f.height, f.width).map_err(|e| match e {
        e @ acg::Error::SizeCap { .. } => CliError::Core(e),
        e => core_invalid(e),
    })?;
    let engine = Inpainter::new(f.grf, layout).map_err(core_invalid)?;
    let consensus = cfg.consensus_blocks();
    let [consensus]: [ConsensusConfig; 1] = consensus
        .try_into()
        .map_err(|_| invalid("inpaint takes a single consensus block"))?;
    let base = InpaintOptions {
        preset: cfg.schedule.build().map_err(core_invalid)?,
        consensus,
        sched: cfg.noise_schedule()?,
        seed: 0,
        draws: f.draws,
        noise: cfg.noise,
        ..InpaintOptions::default()
    };
    let consensus_label = base.consensus.build(2).map_err(core_invalid)?.label();

    let jobs: Vec<Job> = (0..f.patterns.len())
        .flat_map(|pattern| cfg.seeds.iter().map(move |&seed| Job { pattern, seed }))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|job| -> CliResult<JobOutput> {
            let pattern = &f.patterns[job.pattern];
            let plabel = pattern_label(pattern);
            let truth = sampler.sample(f.channels, &mut RngStream::new(job.seed));
            let (observed, mask) = corrupt(&truth, pattern).map_err(core_invalid)?;
            let stem = format!("fields/{plabel}_s{}", job.seed);
            let mut files = vec![
                (format!("{stem}_truth.fgrid"), write_fgrid(&truth)),
                (format!("{stem}_mask.fmask"), write_fmask(&mask)),
            ];
            let mut rows = Vec::new();
            for &m in &methods {
                let mut opts = base.clone();
                opts.seed = job.seed;
                let recon: FieldGrid = match m {
                    Method::Oracle => exact_posterior(&observed, &mask, &f.grf)?,
                    Method::Single => {
                        opts.neighbors = NeighborMode::Single;
                        engine.inpaint(&observed, &mask, &opts)?
                    }
                    Method::Acg => engine.inpaint(&observed, &mask, &opts)?,
                    Method::AcgMean => {
                        opts.consensus = ConsensusConfig::default();
                        engine.inpaint(&observed, &mask, &opts)?
                    }
                    Method::AcgReplace => {
                        opts.conditioning = Conditioning::Replace;
                        engine.inpaint(&observed, &mask, &opts)?
                    }
                };
                let q = metrics(&truth, &recon)?;
                let (cons, j, k, h) = match m {
                    Method::Oracle => ("-".to_string(), 0, 0, 0.0),
                    Method::AcgMean => (
                        "mean".to_string(),
                        opts.preset.heat.j_heat,
                        opts.preset.heat.k,
                        opts.preset.heat.h,
                    ),
                    _ => (
                        consensus_label.clone(),
                        opts.preset.heat.j_heat,
                        opts.preset.heat.k,
                        opts.preset.heat.h,
                    ),
                };
                for (name, value) in [("mse", q.mse), ("psnr", q.psnr), ("ssim", q.ssim)] {
                    rows.push(ResultRow {
                        preset: m.label().into(),
                        consensus: cons.clone(),
                        j_heat: j,
                        k,
                        h,
                        seed: job.seed,
                        metric: format!("{name}@{plabel}"),
                        value,
                    });
                }
                files.push((format!("{stem}_{}.fgrid", m.label()), write_fgrid(&recon)));
            }
            Ok((rows, files))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (r, fs) in outcomes {
        rows.extend(r);
        files.extend(fs);
    }
    sort_rows(&mut rows);
    let primary = format!("mse@{}", pattern_label(&f.patterns[0]));
    let summary = summarize(&rows, &primary, |p| p.preset != Method::Oracle.label());
    let mut art = results_artifacts(&rows, &summary)?;

    let diags = pair_diagnostics(&f.grf, &layout, f.height)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in &diags {
        w.serialize(d)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    art.add(
        "pair_diagnostics.csv",
        String::from_utf8(bytes).expect("utf-8"),
    );
    art.report
        .push(format!("pair diagnostics: {}", diags.len()));
    files.sort();
    for (path, body) in files {
        art.add(path, body);
    }
    Ok(art)
}
