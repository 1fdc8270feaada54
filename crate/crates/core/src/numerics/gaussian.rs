use std::f64::consts::PI;

use super::linalg::{dot, sub, Cholesky, Matrix, Vector};
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Multivariate normal with a cached Cholesky factor of its covariance.
///
/// The covariance is symmetrized on construction.
#[derive(Debug, Clone)]
pub struct MultivariateGaussian {
    mean: Vector,
    cov: Matrix,
    chol: Cholesky,
}

impl PartialEq for MultivariateGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl MultivariateGaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.rows(),
            });
        }
        if !cov.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("non-finite Gaussian parameters".into()));
        }
        let cov = cov.symmetrized();
        let chol = Cholesky::new(&cov)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], Matrix::identity(dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Precision matrix `Σ⁻¹`.
    pub fn precision(&self) -> Result<Matrix> {
        self.chol
            .solve_matrix(&Matrix::identity(self.dim()))
            .map(|p| p.symmetrized())
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vector {
        let z = rng.normal_vec(self.dim());
        let lz = self.chol.mul_lower(&z);
        self.mean.iter().zip(lz).map(|(m, v)| m + v).collect()
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let y = self.chol.solve_lower(&sub(x, &self.mean))?;
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * PI).ln() + self.chol.log_det() + dot(&y, &y)))
    }

    /// Same covariance and factor, different mean.
    pub fn with_mean(&self, mean: Vector) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidRange("mean must be finite".into()));
        }
        Ok(Self {
            mean,
            cov: self.cov.clone(),
            chol: self.chol.clone(),
        })
    }

    /// `∇ₓ log N(x; μ, Σ) = −Σ⁻¹(x − μ)`.
    pub fn score(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self
            .chol
            .solve(&sub(x, &self.mean))?
            .into_iter()
            .map(|v| -v)
            .collect())
    }

    pub fn marginal(&self, idx: &[usize]) -> Result<Self> {
        let mean = idx
            .iter()
            .map(|&i| {
                self.mean.get(i).copied().ok_or(Error::IndexOutOfRange {
                    index: i,
                    dim: self.dim(),
                })
            })
            .collect::<Result<Vector>>()?;
        let cov = self.cov.select(idx, idx)?;
        Self::new(mean, cov)
    }

    /// Conditional law of the unobserved coordinates (ascending order) given
    /// `x[obs_idx] = obs_vals`. A nugget of `1e-10·trace/d` is added to the
    /// observed block before factorization.
    pub fn condition(&self, obs_idx: &[usize], obs_vals: &[f64]) -> Result<Self> {
        let d = self.dim();
        if obs_idx.len() != obs_vals.len() {
            return Err(Error::DimensionMismatch {
                expected: obs_idx.len(),
                got: obs_vals.len(),
            });
        }
        let mut observed = vec![false; d];
        for &i in obs_idx {
            if i >= d {
                return Err(Error::IndexOutOfRange { index: i, dim: d });
            }
            if observed[i] {
                return Err(Error::InvalidRange(format!("index {i} observed twice")));
            }
            observed[i] = true;
        }
        let hidden: Vec<usize> = (0..d).filter(|&i| !observed[i]).collect();
        if hidden.is_empty() {
            return Err(Error::InvalidRange(
                "conditioning needs at least one unobserved coordinate".into(),
            ));
        }
        if obs_idx.is_empty() {
            return self.marginal(&hidden);
        }
        let mut s_oo = self.cov.select(obs_idx, obs_idx)?;
        let nugget = 1e-10 * s_oo.trace() / obs_idx.len() as f64;
        s_oo.add_diagonal(nugget);
        let chol_oo = Cholesky::new(&s_oo)?;
        let s_oh = self.cov.select(obs_idx, &hidden)?;
        let s_hh = self.cov.select(&hidden, &hidden)?;

        let resid: Vector = obs_idx
            .iter()
            .zip(obs_vals)
            .map(|(&i, v)| v - self.mean[i])
            .collect();
        let w = chol_oo.solve(&resid)?;
        let mean: Vector = hidden
            .iter()
            .enumerate()
            .map(|(c, &h)| {
                self.mean[h] + (0..obs_idx.len()).map(|r| s_oh[(r, c)] * w[r]).sum::<f64>()
            })
            .collect();
        // Σ_hh − Σ_ho Σ_oo⁻¹ Σ_oh via the whitened block L⁻¹ Σ_oh.
        let mut white = Matrix::zeros(obs_idx.len(), hidden.len());
        let s_ho = s_oh.transpose();
        for c in 0..hidden.len() {
            let col = chol_oo.solve_lower(s_ho.row(c))?;
            for (r, v) in col.into_iter().enumerate() {
                white[(r, c)] = v;
            }
        }
        let reduction = white.transpose().matmul(&white)?;
        Self::new(mean, s_hh.sub(&reduction)?)
    }
}

pub fn mvn_sample(g: &MultivariateGaussian, rng: &mut RngStream) -> Vector {
    g.sample(rng)
}

pub fn mvn_logpdf(g: &MultivariateGaussian, x: &[f64]) -> Result<f64> {
    g.logpdf(x)
}

pub fn mvn_marginal(g: &MultivariateGaussian, idx: &[usize]) -> Result<MultivariateGaussian> {
    g.marginal(idx)
}

pub fn mvn_condition(
    g: &MultivariateGaussian,
    obs_idx: &[usize],
    obs_vals: &[f64],
) -> Result<MultivariateGaussian> {
    g.condition(obs_idx, obs_vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: &[f64], rows: &[&[f64]]) -> MultivariateGaussian {
        let cov = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        MultivariateGaussian::new(mean.to_vec(), cov).unwrap()
    }

    #[test]
    fn logpdf_closed_forms() {
        let ln2pi = (2.0 * PI).ln();
        let g1 = MultivariateGaussian::standard(1);
        assert!((g1.logpdf(&[0.0]).unwrap() + 0.5 * ln2pi).abs() < 1e-15);
        let g2 = MultivariateGaussian::standard(2);
        assert!((g2.logpdf(&[0.0, 0.0]).unwrap() + ln2pi).abs() < 1e-15);
        let g = gauss(&[1.0], &[&[4.0]]);
        let expected = -0.5 * (8.0 * PI).ln() - 0.5;
        assert!((g.logpdf(&[3.0]).unwrap() - expected).abs() < 1e-14);
        assert!(matches!(
            g.logpdf(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn marginal_examples() {
        let g = gauss(&[1.0, -2.0], &[&[1.0, 0.5], &[0.5, 2.0]]);
        assert_eq!(g.marginal(&[0, 1]).unwrap(), g);
        let m = g.marginal(&[1]).unwrap();
        assert_eq!(m.mean(), &[-2.0]);
        assert_eq!(m.cov()[(0, 0)], 2.0);
        assert!(matches!(
            g.marginal(&[2]),
            Err(Error::IndexOutOfRange { .. })
        ));

        let blocks = gauss(
            &[0.0, 1.0, 2.0],
            &[&[2.0, 0.3, 0.0], &[0.3, 1.0, 0.0], &[0.0, 0.0, 5.0]],
        );
        let b = blocks.marginal(&[0, 1]).unwrap();
        assert_eq!(b.cov().to_rows(), vec![vec![2.0, 0.3], vec![0.3, 1.0]]);
    }

    #[test]
    fn condition_schur_example() {
        let g = gauss(&[0.0, 0.0], &[&[1.0, 0.5], &[0.5, 1.0]]);
        let c = g.condition(&[1], &[1.0]).unwrap();
        assert!((c.mean()[0] - 0.5).abs() < 1e-9);
        assert!((c.cov()[(0, 0)] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn condition_independent_is_marginal() {
        let g = gauss(&[1.0, 3.0], &[&[2.0, 0.0], &[0.0, 1.0]]);
        let c = g.condition(&[1], &[10.0]).unwrap();
        assert!((c.mean()[0] - 1.0).abs() < 1e-12);
        assert!((c.cov()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn condition_on_mean_keeps_mean() {
        let g = gauss(&[1.0, 3.0], &[&[2.0, 0.7], &[0.7, 1.0]]);
        let c = g.condition(&[1], &[3.0]).unwrap();
        assert!((c.mean()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn condition_rejects_bad_indices() {
        let g = MultivariateGaussian::standard(2);
        assert!(matches!(
            g.condition(&[2], &[0.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(g.condition(&[0, 1], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let g = gauss(&[1.0, 2.0], &[&[1.0, 0.2], &[0.2, 3.0]]);
        let a = g.sample(&mut RngStream::new(9));
        let b = g.sample(&mut RngStream::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn construction_rejects_indefinite() {
        let cov = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            MultivariateGaussian::new(vec![0.0, 0.0], cov),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
