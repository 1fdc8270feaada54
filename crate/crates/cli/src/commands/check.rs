//! Self-test of the library's exact identities.

use acg::consensus::{aggregate, ConsensusOperator};
use acg::diffusion::{forward_noise, renoise, tweedie_x0, NoiseSchedule};
use acg::flowfield::{corrupt, exact_posterior, grf_covariance, sample_grf, GrfSpec, Pattern};
use acg::numerics::{norm_inf, sub, Cholesky, Matrix, MultivariateGaussian, RngStream};
use acg::oracle::{
    compose_tree_joint, factorization_check, random_consistent_pairs, random_spd, score_fd_check,
};
use acg::scoremodels::{GaussianScoreModel, MixtureScoreModel, ScoreModel};

use crate::output::Artifacts;

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        format!("CHECK {} {verdict} {:.3e}", self.name, self.value)
    }
}

type Check = (&'static str, fn() -> acg::Result<f64>, f64);

const SCORE_STEPS: [usize; 5] = [1, 20, 60, 120, 200];

fn score_fd_gaussian() -> acg::Result<f64> {
    let mut rng = RngStream::new(11);
    let sched = NoiseSchedule::desk();
    let g = MultivariateGaussian::new(rng.normal_vec(4), random_spd(4, 0.3, &mut rng))?;
    let model = GaussianScoreModel::new(g);
    SCORE_STEPS.iter().try_fold(0.0f64, |w, &t| {
        Ok(w.max(score_fd_check(&model, t, &sched, 20, &mut rng)?))
    })
}

fn score_fd_gmm() -> acg::Result<f64> {
    let mut rng = RngStream::new(12);
    let sched = NoiseSchedule::desk();
    let comps = (0..3)
        .map(|_| {
            let mean = rng.normal_vec(3).iter().map(|v| 2.0 * v).collect();
            MultivariateGaussian::new(mean, random_spd(3, 0.3, &mut rng))
        })
        .collect::<acg::Result<Vec<_>>>()?;
    let model = MixtureScoreModel::new(vec![0.2, 0.3, 0.5], comps)?;
    SCORE_STEPS.iter().try_fold(0.0f64, |w, &t| {
        Ok(w.max(score_fd_check(&model, t, &sched, 20, &mut rng)?))
    })
}

fn factorization() -> acg::Result<f64> {
    let mut rng = RngStream::new(13);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (ab, bc) = random_consistent_pairs((2, 2, 2), &mut rng)?;
        let tree = compose_tree_joint(&ab, &bc, (2, 2, 2))?;
        let pts: Vec<_> = (0..100).map(|_| rng.normal_vec(6)).collect();
        worst = worst.max(factorization_check(&tree, &ab, &bc, &pts)?);
    }
    Ok(worst)
}

/// `E[x0 | x_t]` from the joint of `(x0, x_t)`, compared with Tweedie.
fn tweedie() -> acg::Result<f64> {
    let mut rng = RngStream::new(14);
    let sched = NoiseSchedule::desk();
    let d = 3;
    let g = MultivariateGaussian::new(rng.normal_vec(d), random_spd(d, 0.3, &mut rng))?;
    let model = GaussianScoreModel::new(g.clone());
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let t = 1 + (i * 37) % sched.steps();
        let ab = sched.alpha_bar(t)?;
        let a = ab.sqrt();
        let mut joint = Matrix::zeros(2 * d, 2 * d);
        for r in 0..d {
            for c in 0..d {
                let s = g.cov()[(r, c)];
                joint[(r, c)] = s;
                joint[(r, d + c)] = a * s;
                joint[(d + r, c)] = a * s;
                joint[(d + r, d + c)] = ab * s + if r == c { 1.0 - ab } else { 0.0 };
            }
        }
        let mut mean = g.mean().to_vec();
        mean.extend(g.mean().iter().map(|m| a * m));
        let jg = MultivariateGaussian::new(mean, joint)?;
        let x = rng.normal_vec(d);
        let obs: Vec<usize> = (d..2 * d).collect();
        let exact = conditional_mean(&jg, &obs, &x)?;
        let est = tweedie_x0(&x, &model.score(&x, t, &sched)?, t, &sched)?;
        worst = worst.max(norm_inf(&sub(&est, &exact)));
    }
    Ok(worst)
}

/// Plain Schur complement, without the jitter `condition` applies.
fn conditional_mean(g: &MultivariateGaussian, obs: &[usize], x: &[f64]) -> acg::Result<Vec<f64>> {
    let free: Vec<usize> = (0..g.dim()).filter(|i| !obs.contains(i)).collect();
    let s_oo = g.cov().select(obs, obs)?;
    let s_fo = g.cov().select(&free, obs)?;
    let resid: Vec<f64> = obs.iter().zip(x).map(|(&i, v)| v - g.mean()[i]).collect();
    let w = Cholesky::new(&s_oo)?.solve(&resid)?;
    let shift = s_fo.matvec(&w)?;
    Ok(free
        .iter()
        .zip(shift)
        .map(|(&i, s)| g.mean()[i] + s)
        .collect())
}

fn lambda_limits() -> acg::Result<f64> {
    let mut rng = RngStream::new(15);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let preds = vec![rng.normal_vec(4), rng.normal_vec(4)];
        let u = rng.normal_vec(4);
        let mean = aggregate(&preds, None, &ConsensusOperator::Mean)?;
        let zero = aggregate(
            &preds,
            Some(&u),
            &ConsensusOperator::Unified { lambda: 0.0 },
        )?;
        if zero != mean {
            return Ok(f64::INFINITY);
        }
        let one = aggregate(
            &preds,
            Some(&u),
            &ConsensusOperator::Unified { lambda: 1.0 },
        )?;
        let direct: Vec<f64> = (0..4).map(|i| preds[0][i] + preds[1][i] - u[i]).collect();
        worst = worst.max(norm_inf(&sub(&one, &direct)));
    }
    Ok(worst)
}

/// Relative error of the re-noised kernel's moments against the direct
/// forward kernel, worst over coordinates.
fn kernel_consistency() -> acg::Result<f64> {
    let sched = NoiseSchedule::desk();
    let mut rng = RngStream::new(16);
    let x0 = [2.0, -1.5];
    let (t, j) = (40, 30);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let xt = forward_noise(&x0, t, &sched, &mut rng)?;
        let x = renoise(&xt, t, j, 1.0, &sched, &mut rng)?;
        for i in 0..2 {
            sum[i] += x[i];
            sq[i] += x[i] * x[i];
        }
    }
    let ab = sched.alpha_bar(t + j)?;
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let m = sum[i] / n as f64;
        let v = sq[i] / n as f64 - m * m;
        let m_ref = ab.sqrt() * x0[i];
        worst = worst
            .max(((m - m_ref) / m_ref).abs())
            .max(((v - (1.0 - ab)) / (1.0 - ab)).abs());
    }
    Ok(worst)
}

/// Mirroring field and mask mirrors the posterior mean.
fn grf_mirror() -> acg::Result<f64> {
    let spec = GrfSpec::default();
    let field = sample_grf(&spec, 8, 16, &mut RngStream::new(17))?;
    let (obs, mask) = corrupt(&field, &Pattern::Block(3, 2, 4, 5))?;
    let a = exact_posterior(&obs, &mask, &spec)?.mirrored();
    let b = exact_posterior(&obs.mirrored(), &mask.mirrored(), &spec)?;
    Ok(norm_inf(&sub(a.values(), b.values())))
}

/// Kernel matrix symmetry and positive definiteness.
fn grf_covariance_check() -> acg::Result<f64> {
    let k = grf_covariance(&GrfSpec::default(), 8, 8)?;
    Cholesky::new(&k)?;
    Ok(k.sub(&k.transpose())?.max_abs())
}

pub fn run_checks() -> Vec<CheckResult> {
    let suite: [Check; 8] = [
        ("score_fd_gaussian", score_fd_gaussian, 1e-6),
        ("score_fd_gmm", score_fd_gmm, 1e-5),
        ("factorization", factorization, 1e-8),
        ("tweedie", tweedie, 1e-10),
        ("lambda_limits", lambda_limits, 1e-12),
        ("kernel_consistency", kernel_consistency, 0.02),
        ("grf_mirror", grf_mirror, 1e-9),
        ("grf_covariance", grf_covariance_check, 0.0),
    ];
    suite
        .iter()
        .map(|&(name, f, threshold)| CheckResult {
            name,
            value: f().unwrap_or(f64::INFINITY),
            threshold,
        })
        .collect()
}

pub fn cmd_check() -> Artifacts {
    let results = run_checks();
    let mut art = Artifacts {
        report: results.iter().map(CheckResult::line).collect(),
        failed: results.iter().any(|r| !r.passed()),
        ..Artifacts::default()
    };
    art.add("check.txt", art.report.join("\n") + "\n");
    art
}
