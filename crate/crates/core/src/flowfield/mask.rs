use serde::{Deserialize, Serialize};

use super::grid::FieldGrid;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Corruption pattern. Masked pixels are zeroed in every channel.
///
/// In configuration files: `"none"`, `{"block": [x0, y0, w, h]}`,
/// `{"random_rects": [n, seed]}` or `{"stripe": [col_lo, col_hi]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    None,
    Block(usize, usize, usize, usize),
    RandomRects(usize, u64),
    /// Columns `[col_lo, col_hi)`.
    Stripe(usize, usize),
}

/// `true` marks a corrupted pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl CorruptionMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} entries, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&m| m).count()
    }

    pub fn any(&self) -> bool {
        self.values.iter().any(|&m| m)
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.values[y * self.width + x] = true;
            }
        }
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.values[y * self.width + self.width - 1 - x] = self.is_masked(y, x);
            }
        }
        out
    }
}

/// Applies `pattern`, returning the zeroed field and its mask.
pub fn corrupt(field: &FieldGrid, pattern: &Pattern) -> Result<(FieldGrid, CorruptionMask)> {
    let (h, w, ch) = field.shape();
    let mut mask = CorruptionMask::empty(h, w);
    match *pattern {
        Pattern::None => {}
        Pattern::Block(x0, y0, bw, bh) => {
            if x0 + bw > w || y0 + bh > h {
                return Err(Error::OutOfBounds(format!(
                    "block at ({x0}, {y0}) of size {bw}x{bh} exceeds {h}x{w} grid"
                )));
            }
            mask.fill_rect(x0, y0, bw, bh);
        }
        Pattern::RandomRects(n, seed) => {
            let mut rng = RngStream::new(seed);
            for _ in 0..n {
                let rw = rng.range(1, (w / 4).max(1) + 1);
                let rh = rng.range(1, (h / 2).max(1) + 1);
                let x0 = rng.range(0, w - rw + 1);
                let y0 = rng.range(0, h - rh + 1);
                mask.fill_rect(x0, y0, rw, rh);
            }
        }
        Pattern::Stripe(lo, hi) => {
            if lo > hi || hi > w {
                return Err(Error::OutOfBounds(format!(
                    "stripe [{lo}, {hi}) does not fit width {w}"
                )));
            }
            mask.fill_rect(lo, 0, hi - lo, h);
        }
    }
    let mut out = field.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.is_masked(y, x) {
                for c in 0..ch {
                    out.set(y, x, c, 0.0);
                }
            }
        }
    }
    Ok((out, mask))
}
