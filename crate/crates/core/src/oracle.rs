//! Exact references for checking the sampler: the tree joint implied by two
//! consistent pair Gaussians, Gaussian 2-Wasserstein distances, moment fits
//! and finite-difference score checks.

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{
    norm_inf, sqrtm_psd, sub, Cholesky, Matrix, MultivariateGaussian, RngStream, Vector,
};
use crate::scoremodels::ScoreModel;

/// Block sizes `(d_A, d_B, d_C)`.
pub type TreeDims = (usize, usize, usize);

/// Joint Gaussian over `A ⊕ B ⊕ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGaussian {
    pub joint: MultivariateGaussian,
    pub dims: TreeDims,
}

impl TreeGaussian {
    fn ranges(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let (da, db, dc) = self.dims;
        (
            (0..da).collect(),
            (da..da + db).collect(),
            (da + db..da + db + dc).collect(),
        )
    }

    pub fn marginal_ab(&self) -> Result<MultivariateGaussian> {
        let (a, b, _) = self.ranges();
        self.joint.marginal(&[a, b].concat())
    }

    pub fn marginal_bc(&self) -> Result<MultivariateGaussian> {
        let (_, b, c) = self.ranges();
        self.joint.marginal(&[b, c].concat())
    }

    pub fn marginal_b(&self) -> Result<MultivariateGaussian> {
        let (_, b, _) = self.ranges();
        self.joint.marginal(&b)
    }
}

fn b_block_of_ab(q_ab: &MultivariateGaussian, dims: TreeDims) -> Result<MultivariateGaussian> {
    q_ab.marginal(&(dims.0..dims.0 + dims.1).collect::<Vec<_>>())
}

fn b_block_of_bc(q_bc: &MultivariateGaussian, dims: TreeDims) -> Result<MultivariateGaussian> {
    q_bc.marginal(&(0..dims.1).collect::<Vec<_>>())
}

fn check_dims(
    q_ab: &MultivariateGaussian,
    q_bc: &MultivariateGaussian,
    dims: TreeDims,
) -> Result<()> {
    let (da, db, dc) = dims;
    if q_ab.dim() != da + db {
        return Err(Error::DimensionMismatch {
            expected: da + db,
            got: q_ab.dim(),
        });
    }
    if q_bc.dim() != db + dc {
        return Err(Error::DimensionMismatch {
            expected: db + dc,
            got: q_bc.dim(),
        });
    }
    Ok(())
}

/// Composes `q(A,B)·q(B,C)/q(B)` in precision form.
///
/// `q_ab` is ordered `A ⊕ B` and `q_bc` is ordered `B ⊕ C`; their `B`
/// marginals must agree to `1e-8` in every mean and covariance entry.
pub fn compose_tree_joint(
    q_ab: &MultivariateGaussian,
    q_bc: &MultivariateGaussian,
    dims: TreeDims,
) -> Result<TreeGaussian> {
    check_dims(q_ab, q_bc, dims)?;
    let (da, db, dc) = dims;
    let n = da + db + dc;
    let b_ab = b_block_of_ab(q_ab, dims)?;
    let b_bc = b_block_of_bc(q_bc, dims)?;
    let gap = norm_inf(&sub(b_ab.mean(), b_bc.mean())).max(b_ab.cov().sub(b_bc.cov())?.max_abs());
    if gap > 1e-8 {
        return Err(Error::InconsistentBMarginal(gap));
    }

    let mut prec = Matrix::zeros(n, n);
    let mut shift = vec![0.0; n];
    let mut embed = |g: &MultivariateGaussian, offset: usize, sign: f64| -> Result<()> {
        let j = g.precision()?;
        let h = j.matvec(g.mean())?;
        for r in 0..g.dim() {
            shift[offset + r] += sign * h[r];
            for c in 0..g.dim() {
                prec[(offset + r, offset + c)] += sign * j[(r, c)];
            }
        }
        Ok(())
    };
    embed(q_ab, 0, 1.0)?;
    embed(q_bc, da, 1.0)?;
    embed(&b_ab, da, -1.0)?;

    let prec = prec.symmetrized();
    let chol = Cholesky::new(&prec)?;
    let cov = chol.solve_matrix(&Matrix::identity(n))?;
    let mean = chol.solve(&shift)?;
    Ok(TreeGaussian {
        joint: MultivariateGaussian::new(mean, cov)?,
        dims,
    })
}

/// `max |log q(A,B,C) − log q(A,B) − log q(B,C) + log q(B)|` over `points`.
pub fn factorization_check(
    tg: &TreeGaussian,
    q_ab: &MultivariateGaussian,
    q_bc: &MultivariateGaussian,
    points: &[Vector],
) -> Result<f64> {
    check_dims(q_ab, q_bc, tg.dims)?;
    let (da, db, _) = tg.dims;
    let q_b = b_block_of_ab(q_ab, tg.dims)?;
    let mut worst: f64 = 0.0;
    for p in points {
        if p.len() != tg.joint.dim() {
            return Err(Error::DimensionMismatch {
                expected: tg.joint.dim(),
                got: p.len(),
            });
        }
        let lhs = tg.joint.logpdf(p)?;
        let rhs =
            q_ab.logpdf(&p[..da + db])? + q_bc.logpdf(&p[da..])? - q_b.logpdf(&p[da..da + db])?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `W2(N(μ1,Σ1), N(μ2,Σ2))` with matrix roots from symmetric eigendecompositions.
pub fn wasserstein2_gaussian(g1: &MultivariateGaussian, g2: &MultivariateGaussian) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    let mean_term: f64 = sub(g1.mean(), g2.mean()).iter().map(|v| v * v).sum();
    let root2 = sqrtm_psd(g2.cov())?;
    let inner = root2.matmul(g1.cov())?.matmul(&root2)?;
    let cross = sqrtm_psd(&inner)?;
    let trace_term = g1.cov().trace() + g2.cov().trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term.max(0.0)).sqrt())
}

/// Sample mean and unbiased covariance, plus a nugget of
/// `max(1e-10·trace/d, 1e-12)` on the diagonal.
pub fn empirical_moments(samples: &[Vector]) -> Result<MultivariateGaussian> {
    let d = samples.first().map_or(0, Vec::len);
    if samples.len() < d + 1 || d == 0 {
        return Err(Error::TooFewSamples {
            needed: d + 1,
            got: samples.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s.len(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(d, d);
    for s in samples {
        let c = sub(s, &mean);
        for r in 0..d {
            for k in r..d {
                cov[(r, k)] += c[r] * c[k];
            }
        }
    }
    for r in 0..d {
        for k in r..d {
            let v = cov[(r, k)] / (n - 1.0);
            cov[(r, k)] = v;
            cov[(k, r)] = v;
        }
    }
    let jitter = (1e-10 * cov.trace() / d as f64).max(1e-12);
    cov.add_diagonal(jitter);
    MultivariateGaussian::new(mean, cov)
}

/// Largest relative gap `‖s − FD‖∞ / (1 + ‖s‖∞)` between the analytic score and
/// a central finite difference of the noised log-density, over `n_points`
/// standard-normal points. Step `h = 1e-5·(1 + |x_i|)`.
pub fn score_fd_check(
    model: &dyn ScoreModel,
    t: usize,
    sched: &NoiseSchedule,
    n_points: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let d = model.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..n_points {
        let x = rng.normal_vec(d);
        let s = model.score(&x, t, sched)?;
        let mut fd = vec![0.0; d];
        for i in 0..d {
            let h = 1e-5 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (model.noised_logpdf(&xp, t, sched)? - model.noised_logpdf(&xm, t, sched)?)
                / (2.0 * h);
        }
        worst = worst.max(norm_inf(&sub(&s, &fd)) / (1.0 + norm_inf(&s)));
    }
    Ok(worst)
}

/// Random SPD matrix `A Aᵀ / d + ε I`.
pub fn random_spd(d: usize, eps: f64, rng: &mut RngStream) -> Matrix {
    let a = Matrix::from_row_major(d, d, rng.normal_vec(d * d)).expect("square");
    let mut m = a
        .matmul(&a.transpose())
        .expect("square")
        .scale(1.0 / d as f64);
    m.add_diagonal(eps);
    m.symmetrized()
}

/// Two pair Gaussians with identical `B` marginals, taken as the `A⊕B` and
/// `B⊕C` marginals of a random joint.
pub fn random_consistent_pairs(
    dims: TreeDims,
    rng: &mut RngStream,
) -> Result<(MultivariateGaussian, MultivariateGaussian)> {
    let (da, db, dc) = dims;
    let n = da + db + dc;
    let joint = MultivariateGaussian::new(rng.normal_vec(n), random_spd(n, 0.3, rng))?;
    let ab: Vec<usize> = (0..da + db).collect();
    let bc: Vec<usize> = (da..n).collect();
    Ok((joint.marginal(&ab)?, joint.marginal(&bc)?))
}
