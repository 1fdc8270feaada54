//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use acg::consensus::ConsensusConfig;
use acg::diffusion::NoiseSchedule;
use acg::driver::NoiseCoupling;
use acg::flowfield::{GrfSpec, Pattern};
use acg::numerics::{MultivariateGaussian, RngStream};
use acg::oracle::{compose_tree_joint, random_consistent_pairs, TreeGaussian};
use acg::schedules::{PresetName, ScheduleConfig};
use acg::scoremodels::{GaussianScoreModel, LoadedModel, MixtureScoreModel, ModelSpec, ScoreModel};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    GaussTree,
    Ablate,
    Inpaint,
    Check,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::GaussTree => "gauss-tree",
            Kind::Ablate => "ablate",
            Kind::Inpaint => "inpaint",
            Kind::Check => "check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Pair models for `gauss-tree` and `ablate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    /// Field, layout and corruption patterns for `inpaint`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// One or more consensus blocks; every preset runs under each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<Vec<ConsensusConfig>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub seeds: Vec<u64>,
    /// Sampler runs per seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseCoupling,
    /// Write a JSON-lines trace of the first run of every configuration.
    #[serde(default)]
    pub trace: bool,
}

/// `{"dims": [dA, dB, dC], "random_seed": s}` or explicit `pair_ab` / `pair_bc`
/// model specifications ordered `A ⊕ B` and `B ⊕ C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_ab: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_bc: Option<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default)]
    pub grf: GrfSpec,
    pub height: usize,
    pub width: usize,
    pub patch_width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub patterns: Vec<Pattern>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn one() -> usize {
    1
}

fn default_draws() -> usize {
    16
}

fn default_methods() -> Vec<String> {
    ["oracle", "single", "acg"].map(String::from).to_vec()
}

/// Ablation axes. A missing axis keeps the preset's own value; an empty one
/// is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "J_heat", default, skip_serializing_if = "Option::is_none")]
    pub j_heat: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<String>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Built-in configuration used when no `--config` is given.
    pub fn default_for(kind: Kind) -> Self {
        let mut cfg = Self {
            kind,
            target: None,
            field: None,
            schedule: ScheduleConfig::default(),
            consensus: None,
            presets: Vec::new(),
            grid: None,
            seeds: vec![0],
            n_samples: None,
            out_dir: None,
            noise: NoiseCoupling::default(),
            trace: false,
        };
        match kind {
            Kind::GaussTree => {
                cfg.target = Some(TargetConfig {
                    dims: [2, 2, 2],
                    random_seed: Some(0),
                    pair_ab: None,
                    pair_bc: None,
                });
                cfg.n_samples = Some(2000);
            }
            Kind::Ablate => {
                cfg.target = Some(TargetConfig {
                    dims: [2, 2, 2],
                    random_seed: Some(0),
                    pair_ab: None,
                    pair_bc: None,
                });
                cfg.presets = vec!["acg".into()];
                cfg.grid = Some(GridConfig {
                    k: Some(vec![1, 2, 3, 4]),
                    ..GridConfig::default()
                });
                cfg.seeds = (0..4).collect();
                cfg.n_samples = Some(50);
            }
            Kind::Inpaint => {
                cfg.field = Some(FieldConfig {
                    grf: GrfSpec::default(),
                    height: 16,
                    width: 40,
                    patch_width: 8,
                    channels: 1,
                    patterns: vec![Pattern::Stripe(16, 24)],
                    methods: default_methods(),
                    draws: default_draws(),
                });
                cfg.seeds = (0..4).collect();
            }
            Kind::Check => {}
        }
        cfg
    }

    /// Checks everything that can be checked before any sampling.
    pub fn validate(&self, expected: Kind) -> CliResult<()> {
        if self.kind != expected {
            return Err(invalid(format!(
                "config kind is `{}` but the command is `{}`",
                self.kind.as_str(),
                expected.as_str()
            )));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be non-empty"));
        }
        if self.n_samples == Some(0) {
            return Err(invalid("n_samples must be positive"));
        }
        NoiseSchedule::desk_with_steps(self.schedule.steps()).map_err(core_invalid)?;
        for c in self.consensus_blocks() {
            c.build(2).map_err(core_invalid)?;
        }
        for p in self.preset_names()? {
            self.schedule.build_for(p).map_err(core_invalid)?;
        }
        match expected {
            Kind::GaussTree | Kind::Ablate => {
                self.target()?;
            }
            Kind::Inpaint => {
                let f = self.field()?;
                f.grf.validate().map_err(core_invalid)?;
                if f.patterns.is_empty() || f.methods.is_empty() {
                    return Err(invalid("field needs at least one pattern and one method"));
                }
                if f.draws == 0 || f.channels == 0 {
                    return Err(invalid("draws and channels must be positive"));
                }
            }
            Kind::Check => {}
        }
        if let Some(g) = &self.grid {
            let empty = g.k.as_ref().is_some_and(Vec::is_empty)
                || g.h.as_ref().is_some_and(Vec::is_empty)
                || g.j_heat.as_ref().is_some_and(Vec::is_empty)
                || g.policy.as_ref().is_some_and(Vec::is_empty);
            if empty {
                return Err(invalid("grid axes must be non-empty"));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples.unwrap_or(match self.kind {
            Kind::GaussTree => 2000,
            _ => 1,
        })
    }

    pub fn noise_schedule(&self) -> CliResult<NoiseSchedule> {
        NoiseSchedule::desk_with_steps(self.schedule.steps()).map_err(core_invalid)
    }

    pub fn consensus_blocks(&self) -> Vec<ConsensusConfig> {
        match &self.consensus {
            Some(list) => list.clone(),
            None if self.kind == Kind::Inpaint => vec![ConsensusConfig {
                variant: "unified".into(),
                weights: None,
                lambda: None,
            }],
            None => vec![ConsensusConfig::default()],
        }
    }

    pub fn preset_names(&self) -> CliResult<Vec<PresetName>> {
        let names: Vec<String> = if !self.presets.is_empty() {
            self.presets.clone()
        } else if let Some(p) = &self.schedule.preset {
            vec![p.clone()]
        } else if self.kind == Kind::GaussTree {
            return Ok(PresetName::ALL.to_vec());
        } else {
            vec!["acg".into()]
        };
        names
            .iter()
            .map(|n| n.parse().map_err(core_invalid))
            .collect()
    }

    pub fn field(&self) -> CliResult<&FieldConfig> {
        self.field
            .as_ref()
            .ok_or_else(|| invalid("inpaint needs a `field` block"))
    }

    pub fn target(&self) -> CliResult<Target> {
        let t = self
            .target
            .as_ref()
            .ok_or_else(|| invalid("this command needs a `target` block"))?;
        Target::build(t)
    }
}

pub(crate) fn core_invalid(e: acg::Error) -> CliError {
    invalid(e.to_string())
}

/// Pair models ready for the driver.
#[derive(Debug, Clone)]
pub struct Target {
    pub dims: (usize, usize, usize),
    pub ab: Arc<dyn ScoreModel>,
    pub bc: Arc<dyn ScoreModel>,
    /// `B` marginal of the `A ⊕ B` model, used by unified consensus.
    pub b_marginal: Arc<dyn ScoreModel>,
    /// Analytic joint when both pairs are Gaussian with matching `B` marginals.
    pub tree: Option<TreeGaussian>,
}

impl Target {
    fn build(cfg: &TargetConfig) -> CliResult<Self> {
        let [da, db, dc] = cfg.dims;
        if da == 0 || db == 0 || dc == 0 {
            return Err(invalid("target dims must be positive"));
        }
        let dims = (da, db, dc);
        let (ab, bc) = match (cfg.random_seed, &cfg.pair_ab, &cfg.pair_bc) {
            (Some(seed), None, None) => {
                let (ab, bc) = random_consistent_pairs(dims, &mut RngStream::new(seed))
                    .map_err(core_invalid)?;
                (
                    LoadedModel::Gaussian(GaussianScoreModel::new(ab)),
                    LoadedModel::Gaussian(GaussianScoreModel::new(bc)),
                )
            }
            (None, Some(ab), Some(bc)) => (
                ab.build().map_err(core_invalid)?,
                bc.build().map_err(core_invalid)?,
            ),
            _ => {
                return Err(invalid(
                    "target needs either `random_seed` or both `pair_ab` and `pair_bc`",
                ))
            }
        };
        if ab.dim() != da + db || bc.dim() != db + dc {
            return Err(invalid(format!(
                "pair dimensions {} and {} do not match dims {:?}",
                ab.dim(),
                bc.dim(),
                cfg.dims
            )));
        }
        let b_idx: Vec<usize> = (da..da + db).collect();
        let b_marginal: Arc<dyn ScoreModel> = match &ab {
            LoadedModel::Gaussian(g) => Arc::new(GaussianScoreModel::new(
                g.base().marginal(&b_idx).map_err(core_invalid)?,
            )),
            LoadedModel::Mixture(m) => {
                let comps = m
                    .components()
                    .map(|c| c.marginal(&b_idx))
                    .collect::<acg::Result<Vec<MultivariateGaussian>>>()
                    .map_err(core_invalid)?;
                Arc::new(MixtureScoreModel::new(m.weights().to_vec(), comps).map_err(core_invalid)?)
            }
        };
        let tree = match (&ab, &bc) {
            (LoadedModel::Gaussian(a), LoadedModel::Gaussian(b)) => {
                compose_tree_joint(a.base(), b.base(), dims).ok()
            }
            _ => None,
        };
        Ok(Self {
            dims,
            ab: ab.into_shared(),
            bc: bc.into_shared(),
            b_marginal,
            tree,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [Kind::GaussTree, Kind::Ablate, Kind::Inpaint] {
            ExperimentConfig::default_for(kind).validate(kind).unwrap();
        }
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::default_for(Kind::Ablate);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_blocks() {
        let mut cfg = ExperimentConfig::default_for(Kind::GaussTree);
        cfg.n_samples = Some(0);
        assert!(matches!(
            cfg.validate(Kind::GaussTree),
            Err(CliError::ConfigInvalid(_))
        ));

        let mut cfg = ExperimentConfig::default_for(Kind::GaussTree);
        cfg.seeds.clear();
        assert!(cfg.validate(Kind::GaussTree).is_err());

        let cfg = ExperimentConfig::default_for(Kind::Ablate);
        assert!(cfg.validate(Kind::GaussTree).is_err());

        let mut cfg = ExperimentConfig::default_for(Kind::Ablate);
        cfg.grid.as_mut().unwrap().h = Some(vec![]);
        assert!(cfg.validate(Kind::Ablate).is_err());

        let mut cfg = ExperimentConfig::default_for(Kind::Ablate);
        cfg.presets = vec!["warm-start".into()];
        assert!(cfg.validate(Kind::Ablate).is_err());

        assert!(
            ExperimentConfig::from_json(r#"{"kind": "ablate", "seeds": [1], "extra": 2}"#).is_err()
        );
    }

    #[test]
    fn mixture_target_has_mixture_b_marginal() {
        let text = r#"{
            "kind": "ablate", "seeds": [0],
            "target": {"dims": [1, 1, 1],
              "pair_ab": {"type": "mixture", "weights": [0.5, 0.5], "components": [
                 {"mean": [-1, -1], "cov": [[1, 0.5], [0.5, 1]]},
                 {"mean": [1, 1], "cov": [[1, 0.5], [0.5, 1]]}]},
              "pair_bc": {"type": "gaussian", "mean": [0, 0], "cov": [[1, 0], [0, 1]]}}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let t = cfg.target().unwrap();
        assert!(t.tree.is_none());
        let lp = t.b_marginal.exact_logpdf0(&[1.0]).unwrap();
        let expect = 0.5 * (-0.5 * 4.0f64).exp() + 0.5;
        let expect = (expect / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((lp - expect).abs() < 1e-12);
    }
}
