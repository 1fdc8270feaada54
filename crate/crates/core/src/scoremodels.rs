//! Score-model interface and exact Gaussian / Gaussian-mixture implementations.
//!
//! Scores are always those of the noised marginal `p_t`, which is what the
//! reverse step consumes. Clean-state predictions go through Tweedie
//! ([`crate::diffusion::tweedie_x0`]) and never through a model-specific path.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{sub, Matrix, MultivariateGaussian, Vector};

pub trait ScoreModel: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    /// `∇ₓ log p_t(x)`.
    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vector>;

    /// `log p_t(x)`, when the model has a closed-form noised density.
    fn noised_logpdf(&self, _x: &[f64], _t: usize, _sched: &NoiseSchedule) -> Result<f64> {
        Err(Error::NoExactDensity)
    }

    /// `log p_0(x)` under the clean law.
    fn exact_logpdf0(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::NoExactDensity)
    }
}

/// `N(√ᾱ_t·μ, ᾱ_t·Σ + (1−ᾱ_t)·I)`.
pub fn noised_marginal(
    g: &MultivariateGaussian,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<MultivariateGaussian> {
    let ab = sched.alpha_bar(t)?;
    noised_at(g, ab)
}

fn noised_at(g: &MultivariateGaussian, alpha_bar: f64) -> Result<MultivariateGaussian> {
    if alpha_bar == 1.0 {
        return Ok(g.clone());
    }
    let a = alpha_bar.sqrt();
    let mean = g.mean().iter().map(|m| a * m).collect();
    let mut cov = g.cov().scale(alpha_bar);
    cov.add_diagonal(1.0 - alpha_bar);
    MultivariateGaussian::new(mean, cov)
}

/// Exact score model for a Gaussian clean law.
///
/// Noised covariances are factorized once per distinct `ᾱ_t` and cached.
/// The cache holds centred laws, so models that differ only in their mean
/// (see [`GaussianScoreModel::with_mean`]) share it.
#[derive(Debug)]
pub struct GaussianScoreModel {
    base: MultivariateGaussian,
    cache: Arc<RwLock<HashMap<u64, Arc<MultivariateGaussian>>>>,
}

impl Clone for GaussianScoreModel {
    fn clone(&self) -> Self {
        Self {
            base: self.base.clone(),
            cache: Arc::clone(&self.cache),
        }
    }
}

impl GaussianScoreModel {
    pub fn new(base: MultivariateGaussian) -> Self {
        Self {
            base,
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    pub fn base(&self) -> &MultivariateGaussian {
        &self.base
    }

    /// Same covariance, new mean; shares the factorization cache.
    pub fn with_mean(&self, mean: Vector) -> Result<Self> {
        Ok(Self {
            base: self.base.with_mean(mean)?,
            cache: Arc::clone(&self.cache),
        })
    }

    fn centred(&self, ab: f64) -> Result<Arc<MultivariateGaussian>> {
        let key = ab.to_bits();
        if let Some(g) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(g));
        }
        let zero = self.base.with_mean(vec![0.0; self.base.dim()])?;
        let g = Arc::new(noised_at(&zero, ab)?);
        Ok(Arc::clone(
            self.cache
                .write()
                .expect("cache poisoned")
                .entry(key)
                .or_insert(g),
        ))
    }

    fn noised_mean(&self, ab: f64) -> Vector {
        let a = ab.sqrt();
        self.base.mean().iter().map(|m| a * m).collect()
    }

    /// Noised marginal at step `t`.
    pub fn noised(&self, t: usize, sched: &NoiseSchedule) -> Result<MultivariateGaussian> {
        let ab = sched.alpha_bar(t)?;
        self.centred(ab)?.with_mean(self.noised_mean(ab))
    }
}

impl ScoreModel for GaussianScoreModel {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vector> {
        let ab = sched.alpha_bar(t)?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.centred(ab)?.score(&sub(x, &self.noised_mean(ab)))
    }

    fn noised_logpdf(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<f64> {
        let ab = sched.alpha_bar(t)?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.centred(ab)?.logpdf(&sub(x, &self.noised_mean(ab)))
    }

    fn exact_logpdf0(&self, x: &[f64]) -> Result<f64> {
        self.base.logpdf(x)
    }
}

pub fn gaussian_score(
    m: &GaussianScoreModel,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    m.score(x, t, sched)
}

/// Finite Gaussian mixture.
#[derive(Debug, Clone)]
pub struct MixtureScoreModel {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<GaussianScoreModel>,
}

impl MixtureScoreModel {
    pub fn new(weights: Vec<f64>, components: Vec<MultivariateGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidRange(
                "mixture needs at least one component".into(),
            ));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::BadWeights("mixture weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadWeights(format!("mixture weights sum to {total}")));
        }
        let dim = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.dim(),
            });
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components: components
                .into_iter()
                .map(GaussianScoreModel::new)
                .collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> impl Iterator<Item = &MultivariateGaussian> {
        self.components.iter().map(GaussianScoreModel::base)
    }

    /// Per-component `log w_k + log p_{k,t}(x)`; zero-weight components are skipped.
    fn joint_logs(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<Option<f64>>> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, &lw)| {
                if lw == f64::NEG_INFINITY {
                    Ok(None)
                } else {
                    Ok(Some(lw + c.noised_logpdf(x, t, sched)?))
                }
            })
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl ScoreModel for MixtureScoreModel {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vector> {
        self.check_dim(x)?;
        let logs = self.joint_logs(x, t, sched)?;
        let norm = log_sum_exp(logs.iter().flatten().copied());
        let mut out = vec![0.0; self.dim()];
        for (c, l) in self.components.iter().zip(&logs) {
            let Some(l) = l else { continue };
            let r = (l - norm).exp();
            if r == 0.0 {
                continue;
            }
            let s = c.score(x, t, sched)?;
            for (o, v) in out.iter_mut().zip(s) {
                *o += r * v;
            }
        }
        Ok(out)
    }

    fn noised_logpdf(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<f64> {
        self.check_dim(x)?;
        let logs = self.joint_logs(x, t, sched)?;
        Ok(log_sum_exp(logs.iter().flatten().copied()))
    }

    fn exact_logpdf0(&self, x: &[f64]) -> Result<f64> {
        self.noised_logpdf(x, 0, &NoiseSchedule::desk())
    }
}

pub fn mixture_score(
    m: &MixtureScoreModel,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    m.score(x, t, sched)
}

/// Gaussian model over the concatenation `A ⊕ B`.
pub fn pair_model(mu_a: &[f64], mu_b: &[f64], sigma_ab: &Matrix) -> Result<GaussianScoreModel> {
    let d = mu_a.len() + mu_b.len();
    if sigma_ab.rows() != d || sigma_ab.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma_ab.rows(),
        });
    }
    let mean = mu_a.iter().chain(mu_b).copied().collect();
    Ok(GaussianScoreModel::new(MultivariateGaussian::new(
        mean,
        sigma_ab.clone(),
    )?))
}

/// Mean/covariance block of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianSpec {
    pub fn build(&self) -> Result<MultivariateGaussian> {
        MultivariateGaussian::new(self.mean.clone(), Matrix::from_rows(&self.cov)?)
    }

    pub fn from_gaussian(g: &MultivariateGaussian) -> Self {
        Self {
            mean: g.mean().to_vec(),
            cov: g.cov().to_rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gaussian,
    Mixture,
}

/// Model specification file:
/// `{"type": "gaussian"|"mixture", "mean", "cov", "weights", "components"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "type")]
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<GaussianSpec>>,
}

/// A parsed model, kept concrete so callers can still reach Gaussian internals.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Gaussian(GaussianScoreModel),
    Mixture(MixtureScoreModel),
}

impl LoadedModel {
    pub fn into_shared(self) -> Arc<dyn ScoreModel> {
        match self {
            LoadedModel::Gaussian(g) => Arc::new(g),
            LoadedModel::Mixture(m) => Arc::new(m),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LoadedModel::Gaussian(g) => g.dim(),
            LoadedModel::Mixture(m) => m.dim(),
        }
    }
}

impl ModelSpec {
    pub fn gaussian(g: &MultivariateGaussian) -> Self {
        Self {
            kind: ModelKind::Gaussian,
            mean: Some(g.mean().to_vec()),
            cov: Some(g.cov().to_rows()),
            weights: None,
            components: None,
        }
    }

    pub fn mixture(weights: Vec<f64>, comps: &[MultivariateGaussian]) -> Self {
        Self {
            kind: ModelKind::Mixture,
            mean: None,
            cov: None,
            weights: Some(weights),
            components: Some(comps.iter().map(GaussianSpec::from_gaussian).collect()),
        }
    }

    pub fn build(&self) -> Result<LoadedModel> {
        match self.kind {
            ModelKind::Gaussian => {
                let (Some(mean), Some(cov)) = (&self.mean, &self.cov) else {
                    return Err(Error::InvalidConfig(
                        "gaussian model needs `mean` and `cov`".into(),
                    ));
                };
                let g = MultivariateGaussian::new(mean.clone(), Matrix::from_rows(cov)?)?;
                Ok(LoadedModel::Gaussian(GaussianScoreModel::new(g)))
            }
            ModelKind::Mixture => {
                let (Some(weights), Some(comps)) = (&self.weights, &self.components) else {
                    return Err(Error::InvalidConfig(
                        "mixture model needs `weights` and `components`".into(),
                    ));
                };
                let comps = comps
                    .iter()
                    .map(GaussianSpec::build)
                    .collect::<Result<_>>()?;
                Ok(LoadedModel::Mixture(MixtureScoreModel::new(
                    weights.clone(),
                    comps,
                )?))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}
