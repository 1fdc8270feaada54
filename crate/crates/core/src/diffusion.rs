//! Variance-preserving diffusion timeline and its elementary transitions.
//!
//! Steps are indexed `t ∈ 1..=T` for noise levels; `t = 0` is the clean state
//! with `ᾱ_0 = 1`.

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_min` to `beta_max`, both endpoints included.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidRange(format!("need T >= 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let denom = (steps - 1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / denom)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidRange("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars.iter().any(|&a| a <= 0.0) {
            return Err(Error::InvalidRange(
                "alpha_bar must be strictly decreasing and positive".into(),
            ));
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// T=1000, β ∈ [1e-4, 0.02].
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid constants")
    }

    /// Desk-scale default: T=200 with the standard endpoints scaled by
    /// 1000/200, so the run ends at the same `ᾱ_T` (about 4e-5) as the
    /// 1000-step schedule.
    pub fn desk() -> Self {
        Self::linear(200, 5e-4, 0.1).expect("valid constants")
    }

    /// Standard endpoints scaled by `1000/steps`; `desk_with_steps(200) == desk()`.
    pub fn desk_with_steps(steps: usize) -> Result<Self> {
        if steps < 10 {
            return Err(Error::InvalidRange(format!(
                "need at least 10 steps, got {steps}"
            )));
        }
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, 1e-4 * scale, (0.02 * scale).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_noisy(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(t - 1)
    }

    fn check_any(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check_noisy(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check_noisy(t)?])
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_any(t)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bars[t - 1] })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

pub fn linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_min, beta_max)
}

/// Draws `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`. `t = 0` returns `x0` unchanged.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Vector> {
    let ab = sched.alpha_bar(t)?;
    if t == 0 {
        return Ok(x0.to_vec());
    }
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().map(|v| a * v + s * rng.normal()).collect())
}

/// Tweedie estimate `x̂0 = (x_t + (1−ᾱ_t)·score)/√ᾱ_t`.
pub fn tweedie_x0(x_t: &[f64], score: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vector> {
    if x_t.len() != score.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            got: score.len(),
        });
    }
    let ab = sched.alpha_bar(t)?;
    let inv = 1.0 / ab.sqrt();
    let k = 1.0 - ab;
    Ok(x_t
        .iter()
        .zip(score)
        .map(|(x, s)| (x + k * s) * inv)
        .collect())
}

/// Coefficients `(c_x0, c_xt, variance)` of the DDPM posterior `q(x_{t−1} | x_t, x̂0)`.
pub fn posterior_coefficients(t: usize, sched: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar(t - 1)?;
    let denom = 1.0 - ab;
    let c_x0 = ab_prev.sqrt() * beta / denom;
    let c_xt = alpha.sqrt() * (1.0 - ab_prev) / denom;
    let var = if t == 1 {
        0.0
    } else {
        (1.0 - ab_prev) / denom * beta
    };
    Ok((c_x0, c_xt, var))
}

/// One ancestral step `t → t−1`. The step at `t = 1` is deterministic.
pub fn posterior_step(
    x_t: &[f64],
    x0_hat: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Vector> {
    if x_t.len() != x0_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            got: x0_hat.len(),
        });
    }
    let (c0, ct, var) = posterior_coefficients(t, sched)?;
    let mean = x0_hat.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b);
    if var == 0.0 {
        return Ok(mean.collect());
    }
    let sd = var.sqrt();
    Ok(mean.map(|m| m + sd * rng.normal()).collect())
}

/// Re-noises from level `t` to `t + j`:
/// `√(ᾱ_{t+j}/ᾱ_t)·x_t + H·√(1 − ᾱ_{t+j}/ᾱ_t)·ε`.
pub fn renoise(
    x_t: &[f64],
    t: usize,
    jump: usize,
    heat_height: f64,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Vector> {
    if jump == 0 {
        return Err(Error::InvalidRange("jump must be >= 1".into()));
    }
    if !(heat_height > 0.0 && heat_height <= 1.0) {
        return Err(Error::InvalidRange(format!(
            "heat height must lie in (0, 1], got {heat_height}"
        )));
    }
    let target = t + jump;
    let ratio = sched.alpha_bar(target)? / sched.alpha_bar(t)?;
    let (a, s) = (ratio.sqrt(), heat_height * (1.0 - ratio).sqrt());
    Ok(x_t.iter().map(|v| a * v + s * rng.normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_beta_alpha_bar() {
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1).unwrap() - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2).unwrap() - 0.81).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn standard_schedule_ends_near_zero() {
        let s = NoiseSchedule::standard();
        assert!(s.alpha_bar(1000).unwrap() < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 0.02).abs() < 1e-17);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(
            NoiseSchedule::linear(1, 1e-4, 0.02),
            Err(Error::InvalidRange(_))
        ));
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn terminal_levels() {
        assert!(NoiseSchedule::standard().alpha_bar(1000).unwrap() < 1e-4);
        let d = NoiseSchedule::desk();
        let ratio = d.alpha_bar(200).unwrap() / NoiseSchedule::standard().alpha_bar(1000).unwrap();
        assert!((0.5..2.0).contains(&ratio));
        let d2 = NoiseSchedule::desk_with_steps(200).unwrap();
        for (x, y) in d.alpha_bars().iter().zip(d2.alpha_bars()) {
            assert!((x - y).abs() < 1e-12);
        }
        let d100 = NoiseSchedule::desk_with_steps(100).unwrap();
        assert!(d100.alpha_bar(100).unwrap() < 1e-3);
        assert!(NoiseSchedule::desk_with_steps(5).is_err());
    }

    #[test]
    fn step_bounds() {
        let s = NoiseSchedule::desk();
        let mut rng = RngStream::new(1);
        assert!(matches!(
            forward_noise(&[0.0], 201, &s, &mut rng),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(tweedie_x0(&[0.0], &[0.0], 0, &s).is_ok());
        assert!(posterior_step(&[0.0], &[0.0], 0, &s, &mut rng).is_err());
        assert!(matches!(
            renoise(&[0.0], 199, 2, 1.0, &s, &mut rng),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn tweedie_identity_when_noise_free() {
        let s = NoiseSchedule::desk();
        let x = tweedie_x0(&[1.5, -2.0], &[0.0, 0.0], 0, &s).unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_is_deterministic_posterior_mean() {
        let s = NoiseSchedule::desk();
        let x_t = [0.3, -1.0];
        let x0 = [1.0, 2.0];
        let a = posterior_step(&x_t, &x0, 1, &s, &mut RngStream::new(1)).unwrap();
        let b = posterior_step(&x_t, &x0, 1, &s, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, b);
        // at t=1 the x̂0 coefficient is 1 and the x_t coefficient is 0
        assert!(a.iter().zip(&x0).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn posterior_coefficient_identity() {
        let s = NoiseSchedule::desk();
        for t in [2usize, 10, 100, 200] {
            let (c0, ct, var) = posterior_coefficients(t, &s).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let abp = s.alpha_bar(t - 1).unwrap();
            let beta = s.beta(t).unwrap();
            let alpha = s.alpha(t).unwrap();
            let expected = (abp.sqrt() * beta + alpha.sqrt() * (1.0 - abp)) / (1.0 - ab);
            assert!((c0 + ct - expected).abs() < 1e-14);
            assert!((var - (1.0 - abp) / (1.0 - ab) * beta).abs() < 1e-16);
        }
    }

    #[test]
    fn renoise_without_heat_is_a_shrink() {
        let s = NoiseSchedule::desk();
        let x = [1.0, -1.0];
        let y = renoise(&x, 10, 5, 1e-300, &s, &mut RngStream::new(3)).unwrap();
        let r = (s.alpha_bar(15).unwrap() / s.alpha_bar(10).unwrap()).sqrt();
        assert!((y[0] - r).abs() < 1e-12 && (y[1] + r).abs() < 1e-12);
    }

    #[test]
    fn forward_noise_small_t_stays_close() {
        let s = NoiseSchedule::desk();
        let x0 = [2.0, -3.0];
        let y = forward_noise(&x0, 1, &s, &mut RngStream::new(5)).unwrap();
        let sd = (1.0 - s.alpha_bar(1).unwrap()).sqrt();
        for (a, b) in x0.iter().zip(&y) {
            assert!((a - b).abs() < 3.0 * sd + 1e-3);
        }
    }
}
