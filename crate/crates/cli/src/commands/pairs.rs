//! Shared sampling loop for the two-pair `(A,B),(B,C)` target.

use acg::consensus::{ConsensusConfig, ConsensusOperator};
use acg::diffusion::NoiseSchedule;
use acg::driver::{
    run_acg, within_pair_loglik, Branch, ContextMode, EnsembleConfig, IndexPartition,
    NoiseCoupling, TrajectoryLog,
};
use acg::numerics::{mix_seed, Vector};
use acg::oracle::{empirical_moments, wasserstein2_gaussian};
use acg::schedules::SchedulePreset;

use crate::config::{core_invalid, Target};
use crate::error::CliResult;
use crate::output::ResultRow;

/// One configuration point: preset, consensus and schedule.
#[derive(Debug, Clone)]
pub struct PairPoint {
    pub label: String,
    pub preset: SchedulePreset,
    pub consensus: ConsensusOperator,
}

impl PairPoint {
    pub fn new(
        label: String,
        preset: SchedulePreset,
        consensus: &ConsensusConfig,
    ) -> CliResult<Self> {
        Ok(Self {
            label,
            preset,
            consensus: consensus.build(2).map_err(core_invalid)?,
        })
    }

    pub fn ensemble(
        &self,
        target: &Target,
        sched: &NoiseSchedule,
        noise: NoiseCoupling,
    ) -> CliResult<EnsembleConfig> {
        let (da, db, dc) = target.dims;
        let ab = Branch::new(
            target.ab.clone(),
            IndexPartition::context_then_subject(da, db)?,
            ContextMode::CoGenerate,
            "ab",
        )?;
        let bc = Branch::new(
            target.bc.clone(),
            IndexPartition::subject_then_context(db, dc)?,
            ContextMode::CoGenerate,
            "bc",
        )?;
        let mut cfg = EnsembleConfig::new(
            vec![ab, bc],
            self.consensus
                .needs_unconditional()
                .then(|| target.b_marginal.clone()),
            self.consensus.clone(),
            self.preset.clone(),
            sched.clone(),
        );
        cfg.noise = noise;
        cfg.validate()?;
        Ok(cfg)
    }

    fn row(&self, seed: u64, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            preset: self.label.clone(),
            consensus: self.consensus.label(),
            j_heat: self.preset.heat.j_heat,
            k: self.preset.heat.k,
            h: self.preset.heat.h,
            seed,
            metric: metric.into(),
            value,
        }
    }
}

/// Output of `n_samples` runs for one point and one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub rows: Vec<ResultRow>,
    pub trace: Option<TrajectoryLog>,
}

/// Runs `n` samples with run seeds `mix_seed(seed, i)` and reports
/// `loglik_ab`, `loglik_bc`, `nll` (minus their mean), `disagreement` and,
/// when an analytic joint exists and `n` allows a covariance fit, `w2`
/// (on `A ⊕ B ⊕ C`) and `w2_b`.
pub fn run_seed(
    point: &PairPoint,
    target: &Target,
    base: &EnsembleConfig,
    seed: u64,
    n: usize,
    want_trace: bool,
) -> CliResult<SeedOutcome> {
    let (da, db, dc) = target.dims;
    let mut cfg = base.clone();
    let mut samples: Vec<Vector> = Vec::with_capacity(n);
    let (mut ll_ab, mut ll_bc, mut dis) = (0.0, 0.0, 0.0);
    let mut trace = None;
    for i in 0..n {
        cfg.seed = mix_seed(seed, i as u64);
        cfg.record_trace = want_trace && i == 0;
        let r = run_acg(&cfg)?;
        let ll = within_pair_loglik(&r, &cfg)?;
        ll_ab += ll[0];
        ll_bc += ll[1];
        dis += r.disagreement;
        let mut s = cfg.branches[0]
            .partition
            .extract_context(&r.per_branch_final[0]);
        s.extend_from_slice(&r.canonical_subject);
        s.extend(
            cfg.branches[1]
                .partition
                .extract_context(&r.per_branch_final[1]),
        );
        samples.push(s);
        if r.trace.is_some() {
            trace = r.trace;
        }
    }
    let nf = n as f64;
    let (ll_ab, ll_bc) = (ll_ab / nf, ll_bc / nf);
    let mut rows = vec![
        point.row(seed, "loglik_ab", ll_ab),
        point.row(seed, "loglik_bc", ll_bc),
        point.row(seed, "nll", -0.5 * (ll_ab + ll_bc)),
        point.row(seed, "disagreement", dis / nf),
    ];
    let dim = da + db + dc;
    if let (Some(tree), true) = (&target.tree, n > 2 * dim) {
        let emp = empirical_moments(&samples)?;
        rows.push(point.row(seed, "w2", wasserstein2_gaussian(&emp, &tree.joint)?));
        let b: Vec<usize> = (da..da + db).collect();
        rows.push(point.row(
            seed,
            "w2_b",
            wasserstein2_gaussian(&emp.marginal(&b)?, &tree.joint.marginal(&b)?)?,
        ));
    }
    Ok(SeedOutcome { rows, trace })
}

/// File-name friendly form of a label.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
