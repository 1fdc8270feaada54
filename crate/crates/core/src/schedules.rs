//! When to heat and when to synchronize.
//!
//! A [`SchedulePreset`] pairs a heat schedule `t ↦ (j, K, H)` with a sync
//! policy, and [`plan_trajectory`] expands it into the exact sequence of
//! cooling passes, reheats and resampling loops the driver executes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatSchedule {
    /// Upper end of the heat window (`t_start ≥ t_end`).
    pub t_start: usize,
    pub t_end: usize,
    pub j_heat: usize,
    pub k: usize,
    pub h: f64,
}

impl HeatSchedule {
    pub fn none() -> Self {
        Self {
            t_start: 0,
            t_end: 0,
            j_heat: 0,
            k: 0,
            h: 1.0,
        }
    }

    pub fn new(t_start: usize, t_end: usize, j_heat: usize, k: usize, h: f64) -> Result<Self> {
        let hs = Self {
            t_start,
            t_end,
            j_heat,
            k,
            h,
        };
        hs.validate()?;
        Ok(hs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_start < self.t_end {
            return Err(Error::InvalidRange(format!(
                "heat window [{}, {}] must have t_start >= t_end",
                self.t_start, self.t_end
            )));
        }
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::InvalidRange(format!(
                "heat height must lie in (0, 1], got {}",
                self.h
            )));
        }
        Ok(())
    }

    pub fn in_window(&self, t: usize) -> bool {
        self.t_end <= t && t <= self.t_start
    }

    pub fn is_active(&self) -> bool {
        self.j_heat > 0 && self.k > 0
    }
}

/// `(j_t, K_t, H)`: the configured triple inside the window, `(0, 0, 1)` outside.
pub fn heat_params(hs: &HeatSchedule, t: usize) -> (usize, usize, f64) {
    if hs.in_window(t) {
        (hs.j_heat, hs.k, hs.h)
    } else {
        (0, 0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPolicy {
    Never,
    EveryStep,
    FirstVisitOnly,
    /// Inclusive `[t_lo, t_hi]`.
    Window(usize, usize),
}

impl SyncPolicy {
    pub fn window(t_lo: usize, t_hi: usize) -> Result<Self> {
        if t_lo > t_hi {
            return Err(Error::InvalidRange(format!(
                "sync window [{t_lo}, {t_hi}] is empty"
            )));
        }
        Ok(SyncPolicy::Window(t_lo, t_hi))
    }
}

impl fmt::Display for SyncPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncPolicy::Never => f.write_str("never"),
            SyncPolicy::EveryStep => f.write_str("every-step"),
            SyncPolicy::FirstVisitOnly => f.write_str("first-visit"),
            SyncPolicy::Window(lo, hi) => write!(f, "window:{lo}:{hi}"),
        }
    }
}

impl FromStr for SyncPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "never" => Ok(SyncPolicy::Never),
            "every-step" => Ok(SyncPolicy::EveryStep),
            "first-visit" => Ok(SyncPolicy::FirstVisitOnly),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                if let ["window", lo, hi] = parts.as_slice() {
                    let lo = lo.parse().map_err(|_| Error::Parse(s.into()))?;
                    let hi = hi.parse().map_err(|_| Error::Parse(s.into()))?;
                    return SyncPolicy::window(lo, hi);
                }
                Err(Error::Parse(format!("unknown sync policy `{s}`")))
            }
        }
    }
}

/// Per-run record of which cooling steps have been visited.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisitTracker {
    counts: BTreeMap<usize, u32>,
}

impl VisitTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn visited(&self, t: usize) -> bool {
        self.counts.contains_key(&t)
    }

    pub fn visits(&self, t: usize) -> u32 {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    fn record(&mut self, t: usize) {
        *self.counts.entry(t).or_insert(0) += 1;
    }
}

/// Evaluates the sync indicator at `t`, then records the visit.
pub fn sync_indicator(policy: &SyncPolicy, t: usize, tracker: &mut VisitTracker) -> bool {
    let on = match *policy {
        SyncPolicy::Never => false,
        SyncPolicy::EveryStep => true,
        SyncPolicy::FirstVisitOnly => !tracker.visited(t),
        SyncPolicy::Window(lo, hi) => lo <= t && t <= hi,
    };
    tracker.record(t);
    on
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PresetName {
    IndependentOracle,
    Greedy,
    Consistent,
    Acg,
    PostHocNone,
    PostHocFull,
    PostHocWindowed,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::IndependentOracle,
        PresetName::Greedy,
        PresetName::Consistent,
        PresetName::Acg,
        PresetName::PostHocNone,
        PresetName::PostHocFull,
        PresetName::PostHocWindowed,
    ];

    pub fn is_posthoc(self) -> bool {
        matches!(
            self,
            PresetName::PostHocNone | PresetName::PostHocFull | PresetName::PostHocWindowed
        )
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetName::IndependentOracle => "IndependentOracle",
            PresetName::Greedy => "Greedy",
            PresetName::Consistent => "Consistent",
            PresetName::Acg => "ACG",
            PresetName::PostHocNone => "PostHocNone",
            PresetName::PostHocFull => "PostHocFull",
            PresetName::PostHocWindowed => "PostHocWindowed",
        })
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "independentoracle" | "independent" | "oracle" => PresetName::IndependentOracle,
            "greedy" => PresetName::Greedy,
            "consistent" => PresetName::Consistent,
            "acg" => PresetName::Acg,
            "posthocnone" => PresetName::PostHocNone,
            "posthocfull" => PresetName::PostHocFull,
            "posthocwindowed" => PresetName::PostHocWindowed,
            _ => return Err(Error::UnknownPreset(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePreset {
    pub name: PresetName,
    pub heat: HeatSchedule,
    pub sync: SyncPolicy,
    /// Reheat targets of the sawtooth; empty for in-progress presets.
    pub sawtooth_targets: Vec<usize>,
}

/// Reference sawtooth targets, quoted at `T = 200`.
pub const SAWTOOTH_REFERENCE: [usize; 3] = [100, 50, 25];
const SAWTOOTH_REFERENCE_T: usize = 200;

pub const DEFAULT_J_HEAT: usize = 3;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_H: f64 = 1.0;

fn scale_step(value: usize, steps: usize) -> usize {
    ((value * steps) as f64 / SAWTOOTH_REFERENCE_T as f64).round() as usize
}

/// Default heat window `[0.75·T, 0.25·T]` with `J=3, K=2, H=1`.
pub fn default_heat(steps: usize) -> HeatSchedule {
    HeatSchedule {
        t_start: (0.75 * steps as f64).round() as usize,
        t_end: (0.25 * steps as f64).round() as usize,
        j_heat: DEFAULT_J_HEAT,
        k: DEFAULT_K,
        h: DEFAULT_H,
    }
}

/// Sawtooth targets scaled linearly with `T`, clamped to `1..=T`.
pub fn scaled_sawtooth(steps: usize) -> Vec<usize> {
    SAWTOOTH_REFERENCE
        .iter()
        .map(|&u| scale_step(u, steps).clamp(1, steps))
        .collect()
}

impl SchedulePreset {
    pub fn validate(&self, steps: usize) -> Result<()> {
        self.heat.validate()?;
        if let SyncPolicy::Window(lo, hi) = self.sync {
            SyncPolicy::window(lo, hi)?;
        }
        if self.name.is_posthoc() {
            if self.sawtooth_targets.is_empty() {
                return Err(Error::InvalidConfig(
                    "post-hoc presets need sawtooth targets".into(),
                ));
            }
            if let Some(&u) = self.sawtooth_targets.iter().find(|&&u| u == 0 || u > steps) {
                return Err(Error::StepOutOfRange { t: u, max: steps });
            }
        }
        Ok(())
    }
}

/// Fully populated preset for a run of `steps` diffusion steps.
pub fn preset(name: PresetName, steps: usize) -> SchedulePreset {
    let (heat, sync, sawtooth_targets) = match name {
        PresetName::IndependentOracle => (HeatSchedule::none(), SyncPolicy::Never, vec![]),
        PresetName::Greedy => (HeatSchedule::none(), SyncPolicy::EveryStep, vec![]),
        PresetName::Consistent => (default_heat(steps), SyncPolicy::EveryStep, vec![]),
        PresetName::Acg => (default_heat(steps), SyncPolicy::FirstVisitOnly, vec![]),
        PresetName::PostHocNone => (
            HeatSchedule::none(),
            SyncPolicy::Never,
            scaled_sawtooth(steps),
        ),
        PresetName::PostHocFull => (
            HeatSchedule::none(),
            SyncPolicy::EveryStep,
            scaled_sawtooth(steps),
        ),
        PresetName::PostHocWindowed => {
            let targets = scaled_sawtooth(steps);
            let lowest = targets.iter().copied().min().unwrap_or(0);
            (HeatSchedule::none(), SyncPolicy::Window(0, lowest), targets)
        }
    };
    SchedulePreset {
        name,
        heat,
        sync,
        sawtooth_targets,
    }
}

/// Looks a preset up by name.
pub fn preset_by_name(name: &str, steps: usize) -> Result<SchedulePreset> {
    Ok(preset(name.parse()?, steps))
}

/// One entry of an expanded execution plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// Reverse steps from level `from` down to level `to` (`from > to`).
    Cool { from: usize, to: usize },
    /// Jump from level `from` up to level `to` with heat height `h`.
    Reheat { from: usize, to: usize, h: f64 },
    /// `k` iterations of {reheat `t → t+j`, cool `t+j → t`} at level `t`.
    ResampleLoop {
        t: usize,
        j: usize,
        k: usize,
        h: f64,
    },
}

/// Expands a preset into its execution plan.
///
/// Post-hoc presets cool fully, then for each sawtooth target `u` reheat
/// `0 → u` and cool `u → 0` again. In-progress presets cool once from `T`,
/// placing a resampling loop every `J_heat` steps inside the heat window
/// (starting at `t_start`); jumps are clipped so that `t + j ≤ T`.
pub fn plan_trajectory(preset: &SchedulePreset, steps: usize) -> Vec<Segment> {
    let mut plan = Vec::new();
    if preset.name.is_posthoc() {
        plan.push(Segment::Cool { from: steps, to: 0 });
        for &u in &preset.sawtooth_targets {
            plan.push(Segment::Reheat {
                from: 0,
                to: u,
                h: preset.heat.h,
            });
            plan.push(Segment::Cool { from: u, to: 0 });
        }
        return plan;
    }

    let hs = &preset.heat;
    let mut cur = steps;
    if hs.is_active() {
        let top = hs.t_start.min(steps);
        let mut t = top;
        loop {
            if t < hs.t_end {
                break;
            }
            let (j, k, h) = heat_params(hs, t);
            let j = j.min(steps - t);
            if j > 0 && k > 0 && t > 0 {
                if cur > t {
                    plan.push(Segment::Cool { from: cur, to: t });
                    cur = t;
                }
                plan.push(Segment::ResampleLoop { t, j, k, h });
            }
            if t < hs.j_heat {
                break;
            }
            t -= hs.j_heat;
        }
    }
    if cur > 0 {
        plan.push(Segment::Cool { from: cur, to: 0 });
    }
    plan
}

/// Schedule block of a configuration file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(rename = "J_heat", default, skip_serializing_if = "Option::is_none")]
    pub j_heat: Option<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sawtooth: Option<Vec<usize>>,
}

pub const DEFAULT_STEPS: usize = 200;

impl ScheduleConfig {
    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(DEFAULT_STEPS)
    }

    /// Applies the overrides in this block to the named preset.
    pub fn build_for(&self, name: PresetName) -> Result<SchedulePreset> {
        let steps = self.steps();
        let mut p = preset(name, steps);
        let in_progress_heated = matches!(name, PresetName::Acg | PresetName::Consistent);
        if in_progress_heated {
            if let Some(j) = self.j_heat {
                p.heat.j_heat = j;
            }
            if let Some(k) = self.k {
                p.heat.k = k;
            }
            if let Some([start, end]) = self.window {
                p.heat.t_start = start;
                p.heat.t_end = end;
            }
        }
        if let Some(h) = self.h {
            p.heat.h = h;
        }
        if name.is_posthoc() {
            if let Some(targets) = &self.sawtooth {
                p.sawtooth_targets = targets.clone();
                if name == PresetName::PostHocWindowed {
                    let lowest = targets.iter().copied().min().unwrap_or(0);
                    p.sync = SyncPolicy::Window(0, lowest);
                }
            }
        }
        p.validate(steps)?;
        Ok(p)
    }

    pub fn build(&self) -> Result<SchedulePreset> {
        let name = self.preset.as_deref().unwrap_or("acg").parse()?;
        self.build_for(name)
    }
}
