//! N-branch annealed co-generation engine.
//!
//! Each branch is a pairwise model over `subject ⊕ context`. At every reverse
//! step the branches predict clean states, the subject blocks are optionally
//! replaced by a consensus value, and each branch takes its own ancestral step.
//! Context coordinates always draw from the branch's own noise stream; subject
//! coordinates draw from one shared stream unless [`NoiseCoupling::Independent`]
//! is selected. Heating (re-noising) and resampling loops follow the plan
//! produced by [`plan_trajectory`].

use std::sync::Arc;

use serde::Serialize;

use crate::consensus::{aggregate, ConsensusOperator};
use crate::diffusion::{
    forward_noise, posterior_coefficients, posterior_step, renoise, tweedie_x0, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};
use crate::schedules::{
    plan_trajectory, sync_indicator, PresetName, SchedulePreset, Segment, VisitTracker,
};
use crate::scoremodels::ScoreModel;

/// Branch-local split of coordinates into the shared subject and the private context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    subject: Vec<usize>,
    context: Vec<usize>,
}

impl IndexPartition {
    pub fn new(subject: Vec<usize>, context: Vec<usize>, dim: usize) -> Result<Self> {
        if subject.is_empty() {
            return Err(Error::InvalidConfig("subject block is empty".into()));
        }
        let mut seen = vec![false; dim];
        for &i in subject.iter().chain(&context) {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            if seen[i] {
                return Err(Error::InvalidConfig(format!("index {i} listed twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig(
                "subject and context must cover the branch dimension".into(),
            ));
        }
        Ok(Self { subject, context })
    }

    /// Context first (`0..d_context`), subject after.
    pub fn context_then_subject(d_context: usize, d_subject: usize) -> Result<Self> {
        let dim = d_context + d_subject;
        Self::new((d_context..dim).collect(), (0..d_context).collect(), dim)
    }

    /// Subject first (`0..d_subject`), context after.
    pub fn subject_then_context(d_subject: usize, d_context: usize) -> Result<Self> {
        let dim = d_context + d_subject;
        Self::new((0..d_subject).collect(), (d_subject..dim).collect(), dim)
    }

    pub fn subject(&self) -> &[usize] {
        &self.subject
    }

    pub fn context(&self) -> &[usize] {
        &self.context
    }

    pub fn dim(&self) -> usize {
        self.subject.len() + self.context.len()
    }

    pub fn extract_subject(&self, x: &[f64]) -> Vector {
        self.subject.iter().map(|&i| x[i]).collect()
    }

    pub fn extract_context(&self, x: &[f64]) -> Vector {
        self.context.iter().map(|&i| x[i]).collect()
    }

    pub fn write_subject(&self, x: &mut [f64], values: &[f64]) {
        for (&i, &v) in self.subject.iter().zip(values) {
            x[i] = v;
        }
    }

    pub fn write_context(&self, x: &mut [f64], values: &[f64]) {
        for (&i, &v) in self.context.iter().zip(values) {
            x[i] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextMode {
    /// The context is generated alongside the subject.
    CoGenerate,
    /// The context is observed; at every level it is replaced by a fresh
    /// forward-noised copy of these values.
    Clamp(Vector),
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub model: Arc<dyn ScoreModel>,
    pub partition: IndexPartition,
    pub mode: ContextMode,
    pub label: String,
}

impl Branch {
    pub fn new(
        model: Arc<dyn ScoreModel>,
        partition: IndexPartition,
        mode: ContextMode,
        label: impl Into<String>,
    ) -> Result<Self> {
        if model.dim() != partition.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: partition.dim(),
            });
        }
        if let ContextMode::Clamp(obs) = &mode {
            if obs.len() != partition.context().len() {
                return Err(Error::DimensionMismatch {
                    expected: partition.context().len(),
                    got: obs.len(),
                });
            }
        }
        Ok(Self {
            model,
            partition,
            mode,
            label: label.into(),
        })
    }
}

/// How the branches' subject coordinates receive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseCoupling {
    /// One draw per step is shared by every branch's subject block (and the
    /// unconditional branch). Branch subjects then differ only through their
    /// models, so consensus averages predictions rather than noise.
    #[default]
    SharedSubject,
    /// Every branch draws its whole state from its own stream.
    Independent,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub branches: Vec<Branch>,
    /// Model of the subject alone; required by unified consensus with `λ > 0`.
    pub uncond_model: Option<Arc<dyn ScoreModel>>,
    pub consensus: ConsensusOperator,
    pub preset: SchedulePreset,
    pub sched: NoiseSchedule,
    pub seed: u64,
    pub record_trace: bool,
    pub noise: NoiseCoupling,
}

impl EnsembleConfig {
    /// Configuration with seed 0, no trace and shared subject noise.
    pub fn new(
        branches: Vec<Branch>,
        uncond_model: Option<Arc<dyn ScoreModel>>,
        consensus: ConsensusOperator,
        preset: SchedulePreset,
        sched: NoiseSchedule,
    ) -> Self {
        Self {
            branches,
            uncond_model,
            consensus,
            preset,
            sched,
            seed: 0,
            record_trace: false,
            noise: NoiseCoupling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .branches
            .first()
            .ok_or_else(|| Error::InvalidConfig("ensemble needs at least one branch".into()))?;
        let ds = first.partition.subject().len();
        for b in &self.branches {
            if b.partition.subject().len() != ds {
                return Err(Error::DimensionMismatch {
                    expected: ds,
                    got: b.partition.subject().len(),
                });
            }
            if b.model.dim() != b.partition.dim() {
                return Err(Error::DimensionMismatch {
                    expected: b.model.dim(),
                    got: b.partition.dim(),
                });
            }
        }
        self.consensus.validate(self.branches.len())?;
        match &self.uncond_model {
            Some(u) if u.dim() != ds => {
                return Err(Error::DimensionMismatch {
                    expected: ds,
                    got: u.dim(),
                })
            }
            None if self.consensus.needs_unconditional() => {
                return Err(Error::MissingUnconditional)
            }
            _ => {}
        }
        self.preset.validate(self.sched.steps())
    }

    pub fn subject_dim(&self) -> usize {
        self.branches
            .first()
            .map_or(0, |b| b.partition.subject().len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Reverse step of a main cooling pass.
    Cool,
    /// Sawtooth reheat between cooling passes.
    Reheat,
    /// Reverse step inside a resampling loop.
    ResampleCool,
    /// Jump back up inside a resampling loop.
    ResampleReheat,
}

impl Phase {
    pub fn is_cooling(self) -> bool {
        matches!(self, Phase::Cool | Phase::ResampleCool)
    }

    pub fn is_heating(self) -> bool {
        !self.is_cooling()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Level the step starts from (cooling) or arrives at (heating).
    pub t: usize,
    pub phase: Phase,
    /// Index of the main cooling pass this record belongs to.
    #[serde(skip)]
    pub pass: usize,
    #[serde(rename = "sync")]
    pub sync_applied: bool,
    /// Max pairwise L∞ gap between branch subject predictions before injection.
    pub disagreement: f64,
    /// Branch subject predictions after injection; empty for heating records.
    pub branch_x0_subject: Vec<Vector>,
    #[serde(skip)]
    pub consensus: Option<Vector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TraceRecord>,
}

impl TrajectoryLog {
    /// One JSON object per line:
    /// `{"t", "phase", "sync", "disagreement", "branch_x0_subject"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn sync_events(&self) -> usize {
        self.records.iter().filter(|r| r.sync_applied).count()
    }

    pub fn heating_records(&self) -> usize {
        self.records.iter().filter(|r| r.phase.is_heating()).count()
    }

    /// Number of distinct main cooling passes.
    pub fn cooling_passes(&self) -> usize {
        let mut passes: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.phase == Phase::Cool)
            .map(|r| r.pass)
            .collect();
        passes.dedup();
        passes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub canonical_subject: Vector,
    pub per_branch_final: Vec<Vector>,
    pub uncond_final: Option<Vector>,
    /// Max pairwise L∞ distance between the final branch subjects.
    pub disagreement: f64,
    pub trace: Option<TrajectoryLog>,
}

/// Mutable per-run state: branch states plus their noise streams.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub branches: Vec<Vector>,
    pub uncond: Option<Vector>,
    rngs: Vec<RngStream>,
    uncond_rng: RngStream,
    subject_rng: RngStream,
}

impl EnsembleState {
    /// Draws `x_T ~ N(0, I)` for every branch from stream `split(k)` of the
    /// run seed; clamped contexts are set to a forward-noised observation.
    /// The unconditional branch uses `split(N)` and shared subject noise
    /// `split(N + 1)`, which also supplies a common initial subject.
    pub fn initialize(cfg: &EnsembleConfig) -> Result<Self> {
        let root = RngStream::new(cfg.seed);
        let steps = cfg.sched.steps();
        let mut rngs: Vec<RngStream> = (0..cfg.branches.len())
            .map(|k| root.split(k as u64))
            .collect();
        let mut uncond_rng = root.split(cfg.branches.len() as u64);
        let mut branches = Vec::with_capacity(cfg.branches.len());
        for (b, rng) in cfg.branches.iter().zip(rngs.iter_mut()) {
            let mut x = rng.normal_vec(b.model.dim());
            clamp_context(b, &mut x, steps, &cfg.sched, rng)?;
            branches.push(x);
        }
        let mut uncond = cfg
            .uncond_model
            .as_ref()
            .map(|u| uncond_rng.normal_vec(u.dim()));
        let mut subject_rng = root.split(cfg.branches.len() as u64 + 1);
        if cfg.noise == NoiseCoupling::SharedSubject {
            let s0 = subject_rng.normal_vec(cfg.subject_dim());
            for (b, x) in cfg.branches.iter().zip(branches.iter_mut()) {
                b.partition.write_subject(x, &s0);
            }
            if let Some(u) = uncond.as_mut() {
                u.clone_from(&s0);
            }
        }
        Ok(Self {
            branches,
            uncond,
            rngs,
            uncond_rng,
            subject_rng,
        })
    }

    pub fn subjects(&self, cfg: &EnsembleConfig) -> Vec<Vector> {
        self.branches
            .iter()
            .zip(&cfg.branches)
            .map(|(x, b)| b.partition.extract_subject(x))
            .collect()
    }
}

fn clamp_context(
    branch: &Branch,
    x: &mut [f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<()> {
    if let ContextMode::Clamp(obs) = &branch.mode {
        let noised = forward_noise(obs, t, sched, rng)?;
        branch.partition.write_context(x, &noised);
    }
    Ok(())
}

fn max_pairwise_linf(vs: &[Vector]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            for (a, b) in vs[i].iter().zip(&vs[j]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// What one synchronized step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub sync_applied: bool,
    pub disagreement: f64,
    pub x0_subjects: Vec<Vector>,
    pub consensus: Option<Vector>,
}

/// One reverse transition `t → t−1` of every branch.
///
/// 1. Each branch (and the unconditional branch) predicts `x̂0` by Tweedie.
/// 2. If the sync policy fires at `t`, the subject blocks are aggregated and
///    the consensus is written back into every prediction.
/// 3. Each branch takes an ancestral step; subject coordinates share one
///    noise draw unless the coupling is [`NoiseCoupling::Independent`].
/// 4. Clamped contexts are replaced by a forward-noised observation at `t−1`.
pub fn synchronized_step(
    state: &mut EnsembleState,
    t: usize,
    cfg: &EnsembleConfig,
    tracker: &mut VisitTracker,
) -> Result<StepReport> {
    let sched = &cfg.sched;
    if t == 0 || t > sched.steps() {
        return Err(Error::StepOutOfRange {
            t,
            max: sched.steps(),
        });
    }
    let sync = sync_indicator(&cfg.preset.sync, t, tracker);

    let mut x0s = Vec::with_capacity(cfg.branches.len());
    for (b, x) in cfg.branches.iter().zip(&state.branches) {
        let s = b.model.score(x, t, sched)?;
        x0s.push(tweedie_x0(x, &s, t, sched)?);
    }
    let mut u0 = match (&cfg.uncond_model, &state.uncond) {
        (Some(m), Some(u)) => Some(tweedie_x0(u, &m.score(u, t, sched)?, t, sched)?),
        _ => None,
    };

    let mut subjects: Vec<Vector> = cfg
        .branches
        .iter()
        .zip(&x0s)
        .map(|(b, x0)| b.partition.extract_subject(x0))
        .collect();
    let disagreement = max_pairwise_linf(&subjects);

    let consensus = if sync {
        let canon = aggregate(&subjects, u0.as_deref(), &cfg.consensus)?;
        for ((b, x0), s) in cfg
            .branches
            .iter()
            .zip(x0s.iter_mut())
            .zip(subjects.iter_mut())
        {
            b.partition.write_subject(x0, &canon);
            s.clone_from(&canon);
        }
        if let Some(u) = u0.as_mut() {
            u.clone_from(&canon);
        }
        Some(canon)
    } else {
        None
    };

    let shared = match cfg.noise {
        NoiseCoupling::SharedSubject => Some(state.subject_rng.normal_vec(cfg.subject_dim())),
        NoiseCoupling::Independent => None,
    };
    let (c0, ct, var) = posterior_coefficients(t, sched)?;
    let sd = var.sqrt();
    let shared_step = |x: &[f64], x0: &[f64], eps: &[f64]| -> Vector {
        x0.iter()
            .zip(x)
            .zip(eps)
            .map(|((a, b), e)| c0 * a + ct * b + sd * e)
            .collect()
    };
    for (k, b) in cfg.branches.iter().enumerate() {
        let rng = &mut state.rngs[k];
        let mut next = posterior_step(&state.branches[k], &x0s[k], t, sched, rng)?;
        if let Some(eps) = &shared {
            let s = shared_step(
                &b.partition.extract_subject(&state.branches[k]),
                &b.partition.extract_subject(&x0s[k]),
                eps,
            );
            b.partition.write_subject(&mut next, &s);
        }
        clamp_context(b, &mut next, t - 1, sched, rng)?;
        state.branches[k] = next;
    }
    if let (Some(u), Some(u0)) = (state.uncond.as_mut(), u0.as_ref()) {
        *u = match &shared {
            Some(eps) => shared_step(u, u0, eps),
            None => posterior_step(u, u0, t, sched, &mut state.uncond_rng)?,
        };
    }

    Ok(StepReport {
        sync_applied: sync,
        disagreement,
        x0_subjects: subjects,
        consensus,
    })
}

/// Jumps every branch from level `from` to `to` with heat height `h`;
/// clamped contexts are re-clamped at `to`.
pub fn reheat_all(
    state: &mut EnsembleState,
    from: usize,
    to: usize,
    h: f64,
    cfg: &EnsembleConfig,
) -> Result<()> {
    if to <= from {
        return Err(Error::InvalidRange(format!(
            "reheat {from} -> {to} must go up"
        )));
    }
    let sched = &cfg.sched;
    let shared = match cfg.noise {
        NoiseCoupling::SharedSubject => Some(state.subject_rng.normal_vec(cfg.subject_dim())),
        NoiseCoupling::Independent => None,
    };
    let ratio = sched.alpha_bar(to)? / sched.alpha_bar(from)?;
    let (a, sd) = (ratio.sqrt(), h * (1.0 - ratio).sqrt());
    let shared_heat = |x: &[f64], eps: &[f64]| -> Vector {
        x.iter().zip(eps).map(|(v, e)| a * v + sd * e).collect()
    };
    for (k, b) in cfg.branches.iter().enumerate() {
        let rng = &mut state.rngs[k];
        let mut next = renoise(&state.branches[k], from, to - from, h, sched, rng)?;
        if let Some(eps) = &shared {
            let s = shared_heat(&b.partition.extract_subject(&state.branches[k]), eps);
            b.partition.write_subject(&mut next, &s);
        }
        clamp_context(b, &mut next, to, sched, rng)?;
        state.branches[k] = next;
    }
    if let Some(u) = state.uncond.as_mut() {
        *u = match &shared {
            Some(eps) => shared_heat(u, eps),
            None => renoise(u, from, to - from, h, sched, &mut state.uncond_rng)?,
        };
    }
    Ok(())
}

struct Executor<'a> {
    cfg: &'a EnsembleConfig,
    state: EnsembleState,
    tracker: VisitTracker,
    trace: Option<TrajectoryLog>,
    pass: usize,
}

impl Executor<'_> {
    fn cool(&mut self, from: usize, to: usize, phase: Phase) -> Result<()> {
        for t in ((to + 1)..=from).rev() {
            let report = synchronized_step(&mut self.state, t, self.cfg, &mut self.tracker)?;
            if let Some(trace) = self.trace.as_mut() {
                trace.records.push(TraceRecord {
                    t,
                    phase,
                    pass: self.pass,
                    sync_applied: report.sync_applied,
                    disagreement: report.disagreement,
                    branch_x0_subject: report.x0_subjects,
                    consensus: report.consensus,
                });
            }
        }
        Ok(())
    }

    fn heat(&mut self, from: usize, to: usize, h: f64, phase: Phase) -> Result<()> {
        reheat_all(&mut self.state, from, to, h, self.cfg)?;
        if let Some(trace) = self.trace.as_mut() {
            trace.records.push(TraceRecord {
                t: to,
                phase,
                pass: self.pass,
                sync_applied: false,
                disagreement: 0.0,
                branch_x0_subject: Vec::new(),
                consensus: None,
            });
        }
        Ok(())
    }

    fn run(mut self) -> Result<RunResult> {
        let steps = self.cfg.sched.steps();
        for seg in plan_trajectory(&self.cfg.preset, steps) {
            match seg {
                Segment::Cool { from, to } => self.cool(from, to, Phase::Cool)?,
                Segment::Reheat { from, to, h } => {
                    self.pass += 1;
                    self.heat(from, to, h, Phase::Reheat)?;
                }
                Segment::ResampleLoop { t, j, k, h } => {
                    for _ in 0..k {
                        self.heat(t, t + j, h, Phase::ResampleReheat)?;
                        self.cool(t + j, t, Phase::ResampleCool)?;
                    }
                }
            }
        }

        let cfg = self.cfg;
        let subjects = self.state.subjects(cfg);
        let uncond_subject = self.state.uncond.clone();
        let canonical_subject = if cfg.preset.name == PresetName::IndependentOracle {
            subjects[0].clone()
        } else {
            aggregate(&subjects, uncond_subject.as_deref(), &cfg.consensus)?
        };
        Ok(RunResult {
            canonical_subject,
            disagreement: max_pairwise_linf(&subjects),
            per_branch_final: self.state.branches,
            uncond_final: uncond_subject,
            trace: self.trace,
        })
    }
}

fn execute(cfg: &EnsembleConfig) -> Result<RunResult> {
    cfg.validate()?;
    Executor {
        cfg,
        state: EnsembleState::initialize(cfg)?,
        tracker: VisitTracker::new(),
        trace: cfg.record_trace.then(TrajectoryLog::default),
        pass: 0,
    }
    .run()
}

/// Runs the configured preset to `t = 0` and aggregates the final subjects.
///
/// `IndependentOracle` reports the first branch's subject without consensus.
pub fn run_acg(cfg: &EnsembleConfig) -> Result<RunResult> {
    execute(cfg)
}

/// Sawtooth run: full cool, then reheat to each target and cool again.
pub fn run_posthoc(cfg: &EnsembleConfig) -> Result<RunResult> {
    if !cfg.preset.name.is_posthoc() {
        return Err(Error::UnknownPreset(format!(
            "{} is not a post-hoc preset",
            cfg.preset.name
        )));
    }
    execute(cfg)
}

/// Same configuration with a different seed.
pub fn run_with_seed(cfg: &EnsembleConfig, seed: u64) -> Result<RunResult> {
    let mut c = cfg.clone();
    c.seed = seed;
    execute(&c)
}

/// `log q_k(context_k ⊕ canonical_subject)` for every branch under its clean law.
pub fn within_pair_loglik(result: &RunResult, cfg: &EnsembleConfig) -> Result<Vec<f64>> {
    cfg.branches
        .iter()
        .zip(&result.per_branch_final)
        .map(|(b, x)| {
            let mut full = x.clone();
            if let ContextMode::Clamp(obs) = &b.mode {
                b.partition.write_context(&mut full, obs);
            }
            b.partition
                .write_subject(&mut full, &result.canonical_subject);
            b.model.exact_logpdf0(&full)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, MultivariateGaussian};
    use crate::schedules::{preset, SyncPolicy};
    use crate::scoremodels::GaussianScoreModel;

    fn pair(rho: f64) -> Arc<dyn ScoreModel> {
        let cov = Matrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]).unwrap();
        Arc::new(GaussianScoreModel::new(
            MultivariateGaussian::new(vec![0.5, -0.5], cov).unwrap(),
        ))
    }

    fn two_branch(name: PresetName, steps: usize) -> EnsembleConfig {
        let part = IndexPartition::context_then_subject(1, 1).unwrap();
        EnsembleConfig {
            branches: vec![
                Branch::new(pair(0.6), part.clone(), ContextMode::CoGenerate, "ab").unwrap(),
                Branch::new(pair(0.3), part, ContextMode::CoGenerate, "cb").unwrap(),
            ],
            uncond_model: None,
            consensus: ConsensusOperator::Mean,
            preset: preset(name, steps),
            sched: NoiseSchedule::linear(steps, 1e-4, 0.05).unwrap(),
            seed: 3,
            record_trace: true,
            noise: NoiseCoupling::default(),
        }
    }

    #[test]
    fn partition_validation() {
        assert!(IndexPartition::new(vec![0], vec![0], 1).is_err());
        assert!(IndexPartition::new(vec![0], vec![1], 3).is_err());
        assert!(IndexPartition::new(vec![], vec![0], 1).is_err());
        assert!(IndexPartition::new(vec![0], vec![], 1).is_ok());
        assert!(IndexPartition::new(vec![0], vec![5], 2).is_err());
        let p = IndexPartition::new(vec![2, 0], vec![1], 3).unwrap();
        assert_eq!(p.extract_subject(&[1.0, 2.0, 3.0]), vec![3.0, 1.0]);
    }

    #[test]
    fn branch_validation() {
        let part = IndexPartition::context_then_subject(1, 1).unwrap();
        assert!(Branch::new(
            pair(0.1),
            part.clone(),
            ContextMode::Clamp(vec![1.0, 2.0]),
            "x"
        )
        .is_err());
        let wide = IndexPartition::context_then_subject(2, 1).unwrap();
        assert!(Branch::new(pair(0.1), wide, ContextMode::CoGenerate, "x").is_err());
    }

    #[test]
    fn unified_without_unconditional_is_rejected() {
        let mut cfg = two_branch(PresetName::Greedy, 20);
        cfg.consensus = ConsensusOperator::Unified { lambda: 1.0 };
        assert!(matches!(run_acg(&cfg), Err(Error::MissingUnconditional)));
    }

    #[test]
    fn single_branch_sync_is_plain_step() {
        let steps = 30;
        let mut synced = two_branch(PresetName::Greedy, steps);
        synced.branches.truncate(1);
        let mut plain = synced.clone();
        plain.preset.sync = SyncPolicy::Never;
        let a = run_acg(&synced).unwrap();
        let b = run_acg(&plain).unwrap();
        assert_eq!(a.per_branch_final, b.per_branch_final);
        assert_eq!(a.canonical_subject, b.canonical_subject);
    }

    #[test]
    fn without_sync_identical_branches_diverge() {
        let mut cfg = two_branch(PresetName::IndependentOracle, 30);
        cfg.branches[1] = cfg.branches[0].clone();
        cfg.noise = NoiseCoupling::Independent;
        let r = run_acg(&cfg).unwrap();
        assert!(r.disagreement > 0.0);
    }

    #[test]
    fn shared_noise_keeps_decoupled_subjects_together() {
        let mut cfg = two_branch(PresetName::IndependentOracle, 30);
        let part = IndexPartition::context_then_subject(1, 1).unwrap();
        cfg.branches[0] = Branch::new(pair(0.0), part, ContextMode::CoGenerate, "ab").unwrap();
        cfg.branches[1] = cfg.branches[0].clone();
        let r = run_acg(&cfg).unwrap();
        assert!(r.disagreement < 1e-20);
    }

    #[test]
    fn synced_records_have_equal_subjects() {
        let cfg = two_branch(PresetName::Greedy, 25);
        let r = run_acg(&cfg).unwrap();
        let trace = r.trace.unwrap();
        assert_eq!(trace.records.len(), 25);
        for rec in &trace.records {
            assert!(rec.sync_applied);
            assert_eq!(rec.branch_x0_subject[0], rec.branch_x0_subject[1]);
        }
        assert_eq!(r.disagreement, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = two_branch(PresetName::Acg, 40);
        let a = run_acg(&cfg).unwrap();
        let b = run_acg(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.unwrap().to_jsonl(), b.trace.unwrap().to_jsonl());
        let c = run_with_seed(&cfg, 4).unwrap();
        assert_ne!(c.canonical_subject, a.canonical_subject);
    }

    #[test]
    fn posthoc_rejects_in_progress_presets() {
        let cfg = two_branch(PresetName::Acg, 20);
        assert!(matches!(run_posthoc(&cfg), Err(Error::UnknownPreset(_))));
        let cfg = two_branch(PresetName::PostHocNone, 20);
        let r = run_posthoc(&cfg).unwrap();
        assert_eq!(r.trace.unwrap().sync_events(), 0);
    }

    #[test]
    fn clamp_context_is_exact_at_zero() {
        let part = IndexPartition::context_then_subject(1, 1).unwrap();
        let cfg = EnsembleConfig {
            branches: vec![
                Branch::new(pair(0.8), part, ContextMode::Clamp(vec![1.25]), "a").unwrap(),
            ],
            uncond_model: None,
            consensus: ConsensusOperator::Mean,
            preset: preset(PresetName::Acg, 30),
            sched: NoiseSchedule::linear(30, 1e-4, 0.05).unwrap(),
            seed: 8,
            record_trace: false,
            noise: NoiseCoupling::default(),
        };
        let r = run_acg(&cfg).unwrap();
        assert_eq!(r.per_branch_final[0][0], 1.25);
    }

    #[test]
    fn jsonl_has_fixed_fields() {
        let cfg = two_branch(PresetName::Greedy, 5);
        let r = run_acg(&cfg).unwrap();
        let text = r.trace.unwrap().to_jsonl();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 5);
        for k in ["t", "phase", "sync", "disagreement", "branch_x0_subject"] {
            assert!(first.get(k).is_some(), "missing {k}");
        }
        assert_eq!(first["phase"], "cool");
        assert_eq!(first["t"], 5);
    }

    #[test]
    fn loglik_additive_for_independent_blocks() {
        let cov = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        let g = MultivariateGaussian::new(vec![1.0, -1.0], cov).unwrap();
        let model: Arc<dyn ScoreModel> = Arc::new(GaussianScoreModel::new(g.clone()));
        let part = IndexPartition::context_then_subject(1, 1).unwrap();
        let cfg = EnsembleConfig {
            branches: vec![Branch::new(model, part, ContextMode::CoGenerate, "a").unwrap()],
            uncond_model: None,
            consensus: ConsensusOperator::Mean,
            preset: preset(PresetName::Greedy, 10),
            sched: NoiseSchedule::linear(10, 1e-4, 0.1).unwrap(),
            seed: 1,
            record_trace: false,
            noise: NoiseCoupling::default(),
        };
        let r = run_acg(&cfg).unwrap();
        let ll = within_pair_loglik(&r, &cfg).unwrap()[0];
        let a = r.per_branch_final[0][0];
        let b = r.canonical_subject[0];
        let sum = g.marginal(&[0]).unwrap().logpdf(&[a]).unwrap()
            + g.marginal(&[1]).unwrap().logpdf(&[b]).unwrap();
        assert!((ll - sum).abs() < 1e-12);
    }
}
