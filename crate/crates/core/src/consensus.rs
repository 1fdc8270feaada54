//! Consensus operators over per-branch clean-state subject predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Debug, Clone, PartialEq)]
pub enum ConsensusOperator {
    /// Plain average of the branch predictions.
    Mean,
    /// Convex combination with fixed per-branch weights.
    Weighted(Vec<f64>),
    /// `μ + λ·(μ − B∅)` with `μ` the mean and `B∅` the unconditional prediction.
    Unified { lambda: f64 },
}

impl ConsensusOperator {
    /// Unified operator with `λ = N − 1` (overlap factorization).
    pub fn overlap_factorization(n: usize) -> Self {
        ConsensusOperator::Unified {
            lambda: n.saturating_sub(1) as f64,
        }
    }

    pub fn needs_unconditional(&self) -> bool {
        matches!(self, ConsensusOperator::Unified { lambda } if *lambda != 0.0)
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            ConsensusOperator::Mean => "mean".into(),
            ConsensusOperator::Weighted(w) => {
                let parts: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
                format!("weighted[{}]", parts.join(";"))
            }
            ConsensusOperator::Unified { lambda } => format!("unified[{lambda}]"),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ConsensusOperator::Mean => Ok(()),
            ConsensusOperator::Weighted(w) => check_weights(w, n),
            ConsensusOperator::Unified { lambda } => {
                if lambda.is_finite() && *lambda >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::BadWeights(format!(
                        "lambda must be >= 0, got {lambda}"
                    )))
                }
            }
        }
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::BadWeights(format!(
            "{} weights for {n} predictions",
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::BadWeights("weights must be finite and >= 0".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::BadWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Uniform weights `1/N`.
pub fn weighted_balanced(n: usize) -> ConsensusOperator {
    ConsensusOperator::Weighted(vec![1.0 / n.max(1) as f64; n.max(1)])
}

fn mean_of(predictions: &[Vector]) -> Vector {
    let n = predictions.len() as f64;
    let mut acc = vec![0.0; predictions[0].len()];
    for p in predictions {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Canonical subject from `N` branch predictions.
pub fn aggregate(
    predictions: &[Vector],
    uncond: Option<&[f64]>,
    op: &ConsensusOperator,
) -> Result<Vector> {
    let Some(first) = predictions.first() else {
        return Err(Error::InvalidRange(
            "aggregate needs at least one prediction".into(),
        ));
    };
    let dim = first.len();
    if let Some(p) = predictions.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    op.validate(predictions.len())?;
    match op {
        ConsensusOperator::Mean => Ok(mean_of(predictions)),
        ConsensusOperator::Weighted(w) => {
            let mut acc = vec![0.0; dim];
            for (p, &wk) in predictions.iter().zip(w) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += wk * v;
                }
            }
            Ok(acc)
        }
        ConsensusOperator::Unified { lambda } => {
            let mu = mean_of(predictions);
            if *lambda == 0.0 {
                return Ok(mu);
            }
            let b0 = uncond.ok_or(Error::MissingUnconditional)?;
            if b0.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b0.len(),
                });
            }
            Ok(mu
                .iter()
                .zip(b0)
                .map(|(m, u)| m + lambda * (m - u))
                .collect())
        }
    }
}

/// Consensus block of a configuration file:
/// `{"variant": "mean"|"weighted"|"unified", "weights": [...], "lambda": x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            variant: "mean".into(),
            weights: None,
            lambda: None,
        }
    }
}

impl ConsensusConfig {
    /// Resolves the operator for `n` branches. `weighted` without explicit
    /// weights is the balanced choice; `unified` without `lambda` uses `N − 1`.
    pub fn build(&self, n: usize) -> Result<ConsensusOperator> {
        let op = match self.variant.as_str() {
            "mean" => ConsensusOperator::Mean,
            "weighted" => match &self.weights {
                Some(w) => ConsensusOperator::Weighted(w.clone()),
                None => weighted_balanced(n),
            },
            "unified" => ConsensusOperator::Unified {
                lambda: self.lambda.unwrap_or(n.saturating_sub(1) as f64),
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown consensus variant `{other}`"
                )))
            }
        };
        op.validate(n)?;
        Ok(op)
    }
}
