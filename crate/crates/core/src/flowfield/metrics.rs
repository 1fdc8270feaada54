use serde::Serialize;

use super::grid::FieldGrid;
use crate::error::{Error, Result};

/// Reconstruction quality against a reference field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    /// `+∞` when the fields are identical.
    pub psnr: f64,
    pub ssim: f64,
}

const WIN: usize = 7;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// MSE, PSNR and SSIM. The peak `R` is the reference's value range; SSIM uses a
/// 7×7 Gaussian window (σ = 1.5), shrunk to fit small grids, over valid
/// positions, averaged over channels.
pub fn metrics(reference: &FieldGrid, estimate: &FieldGrid) -> Result<Metrics> {
    if reference.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    let n = reference.values().len() as f64;
    let mse = reference
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let (lo, hi) = reference
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let range = hi - lo;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    };
    let ssim = (0..reference.channels())
        .map(|c| ssim_channel(reference, estimate, c, range))
        .sum::<f64>()
        / reference.channels() as f64;
    Ok(Metrics { mse, psnr, ssim })
}

fn gaussian_window(len: usize) -> Vec<f64> {
    let mid = (len as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn ssim_channel(a: &FieldGrid, b: &FieldGrid, c: usize, range: f64) -> f64 {
    let (h, w) = (a.height(), a.width());
    let (wh, ww) = (WIN.min(h), WIN.min(w));
    let (gy, gx) = (gaussian_window(wh), gaussian_window(ww));
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - wh {
        for x0 in 0..=w - ww {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, wy) in gy.iter().enumerate() {
                for (j, wx) in gx.iter().enumerate() {
                    let wt = wy * wx;
                    let va = a.get(y0 + i, x0 + j, c);
                    let vb = b.get(y0 + i, x0 + j, c);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    total / count as f64
}
