use std::collections::BTreeSet;

use acg::schedules::SyncPolicy;
use rayon::prelude::*;

use crate::commands::pairs::{run_seed, PairPoint};
use crate::config::{core_invalid, ExperimentConfig, Kind};
use crate::error::{invalid, CliResult};
use crate::output::{results_artifacts, sort_rows, summarize, Artifacts};

/// Cartesian grid over presets × consensus × K × H × sync policy × J_heat.
/// Overrides that a preset ignores collapse onto one point.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    cfg.validate(Kind::Ablate)?;
    let target = cfg.target()?;
    let sched = cfg.noise_schedule()?;
    let grid = cfg.grid.clone().unwrap_or_default();
    let ks: Vec<Option<usize>> = axis(grid.k);
    let hs: Vec<Option<f64>> = axis(grid.h);
    let js: Vec<Option<usize>> = axis(grid.j_heat);
    let policies: Vec<Option<SyncPolicy>> = match grid.policy {
        Some(list) => list
            .iter()
            .map(|p| p.parse().map(Some).map_err(core_invalid))
            .collect::<CliResult<_>>()?,
        None => vec![None],
    };

    let mut points = Vec::new();
    let mut seen = BTreeSet::new();
    for name in cfg.preset_names()? {
        for c in cfg.consensus_blocks() {
            for &k in &ks {
                for &h in &hs {
                    for &policy in &policies {
                        for &j in &js {
                            let mut sc = cfg.schedule.clone();
                            sc.k = k.or(sc.k);
                            sc.h = h.or(sc.h);
                            sc.j_heat = j.or(sc.j_heat);
                            let mut preset = sc.build_for(name).map_err(core_invalid)?;
                            let mut label = name.to_string();
                            if let Some(p) = policy {
                                preset.sync = p;
                                label = format!("{label}[{p}]");
                            }
                            let point = PairPoint::new(label, preset, &c)?;
                            let key = (
                                point.label.clone(),
                                point.consensus.label(),
                                point.preset.heat.j_heat,
                                point.preset.heat.k,
                                point.preset.heat.h.to_bits(),
                            );
                            if seen.insert(key) {
                                points.push(point);
                            }
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(invalid("ablation grid is empty"));
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
            run_seed(point, &target, &base, seed, n, false)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows: Vec<_> = outcomes.into_iter().flat_map(|o| o.rows).collect();
    sort_rows(&mut rows);
    let summary = summarize(&rows, "nll", |_| true);
    results_artifacts(&rows, &summary)
}

fn axis<T: Copy>(values: Option<Vec<T>>) -> Vec<Option<T>> {
    match values {
        Some(v) => v.into_iter().map(Some).collect(),
        None => vec![None],
    }
}
