use rayon::prelude::*;

use crate::commands::pairs::{run_seed, slug, PairPoint};
use crate::config::{core_invalid, ExperimentConfig, Kind};
use crate::error::{invalid, CliResult};
use crate::output::{results_artifacts, sort_rows, summarize, Artifacts};

/// Every preset under every consensus block on a Gaussian tree, scored
/// against the analytic joint.
pub fn cmd_gauss_tree(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    cfg.validate(Kind::GaussTree)?;
    let target = cfg.target()?;
    if target.tree.is_none() {
        return Err(invalid(
            "gauss-tree needs Gaussian pairs with matching B marginals",
        ));
    }
    let sched = cfg.noise_schedule()?;
    let mut points = Vec::new();
    for name in cfg.preset_names()? {
        let preset = cfg.schedule.build_for(name).map_err(core_invalid)?;
        for c in cfg.consensus_blocks() {
            points.push(PairPoint::new(name.to_string(), preset.clone(), &c)?);
        }
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let n = cfg.n_samples();
    let outcomes = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let point = &points[p];
            let base = point.ensemble(&target, &sched, cfg.noise)?;
            let first_seed = seed == cfg.seeds[0];
            run_seed(point, &target, &base, seed, n, cfg.trace && first_seed).map(|o| (p, o))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (p, o) in outcomes {
        rows.extend(o.rows);
        if let Some(t) = o.trace {
            let pt = &points[p];
            traces.push((
                format!(
                    "traces/{}_{}.jsonl",
                    slug(&pt.label),
                    slug(&pt.consensus.label())
                ),
                t.to_jsonl(),
            ));
        }
    }
    sort_rows(&mut rows);
    let summary = summarize(&rows, "w2", |_| true);
    let mut art = results_artifacts(&rows, &summary)?;
    traces.sort();
    for (path, body) in traces {
        art.add(path, body);
    }
    Ok(art)
}
