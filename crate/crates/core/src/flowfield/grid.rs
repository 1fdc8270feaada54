use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Cholesky, Matrix, MultivariateGaussian, RngStream, Vector};
use crate::scoremodels::GaussianScoreModel;

/// Largest grid (in pixels) for which dense covariances are built.
pub const MAX_PIXELS: usize = 4096;

/// `H × W × C` field, row-major with channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(
                "field dimensions must be positive".into(),
            ));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} field needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("field values must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.offset(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let o = self.offset(y, x, c);
        self.values[o] = v;
    }

    /// One channel as a flat `y·W + x` vector.
    pub fn channel(&self, c: usize) -> Vector {
        (0..self.height * self.width)
            .map(|p| self.values[p * self.channels + c])
            .collect()
    }

    /// Mirror image along the horizontal axis.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, self.width - 1 - x, c, self.get(y, x, c));
                }
            }
        }
        out
    }
}

/// Squared-exponential Gaussian random field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub length_scale: f64,
    pub variance: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self {
            length_scale: 3.0,
            variance: 1.0,
            nugget: 1e-3,
        }
    }
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.length_scale, self.variance, self.nugget]
            .iter()
            .any(|v| v.is_nan())
            || self.length_scale <= 0.0
            || self.variance <= 0.0
            || self.nugget < 0.0
        {
            return Err(Error::InvalidRange(format!(
                "GRF needs length_scale > 0, variance > 0, nugget >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Kernel between two pixels given as `(y, x)`.
    pub fn kernel(&self, p: (usize, usize), q: (usize, usize)) -> f64 {
        let dy = p.0 as f64 - q.0 as f64;
        let dx = p.1 as f64 - q.1 as f64;
        let k = self.variance * (-(dy * dy + dx * dx) / (2.0 * self.length_scale.powi(2))).exp();
        if p == q {
            k + self.nugget
        } else {
            k
        }
    }

    fn covariance_of(&self, coords: &[(usize, usize)]) -> Matrix {
        let n = coords.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.kernel(coords[i], coords[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

fn check_cap(height: usize, width: usize) -> Result<()> {
    let pixels = height * width;
    if pixels > MAX_PIXELS {
        return Err(Error::SizeCap {
            pixels,
            cap: MAX_PIXELS,
        });
    }
    Ok(())
}

fn grid_coords(height: usize, width: usize) -> Vec<(usize, usize)> {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (y, x)))
        .collect()
}

/// `K[p,q] = σ²·exp(−‖p−q‖²/(2ℓ²)) + nugget·[p = q]` over all `H·W` pixels.
pub fn grf_covariance(spec: &GrfSpec, height: usize, width: usize) -> Result<Matrix> {
    spec.validate()?;
    check_cap(height, width)?;
    Ok(spec.covariance_of(&grid_coords(height, width)))
}

/// Zero-mean GRF restricted to the given pixels, in the given order.
pub fn grf_gaussian(spec: &GrfSpec, coords: &[(usize, usize)]) -> Result<MultivariateGaussian> {
    spec.validate()?;
    MultivariateGaussian::new(vec![0.0; coords.len()], spec.covariance_of(coords))
}

/// Factorized full-grid GRF for repeated draws.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    height: usize,
    width: usize,
    chol: Cholesky,
}

impl GrfSampler {
    pub fn new(spec: &GrfSpec, height: usize, width: usize) -> Result<Self> {
        let k = grf_covariance(spec, height, width)?;
        Ok(Self {
            height,
            width,
            chol: Cholesky::new(&k)?,
        })
    }

    /// Independent draw per channel.
    pub fn sample(&self, channels: usize, rng: &mut RngStream) -> FieldGrid {
        let mut out = FieldGrid::zeros(self.height, self.width, channels);
        for c in 0..channels {
            let z = rng.normal_vec(self.height * self.width);
            let v = self.chol.mul_lower(&z);
            for (p, val) in v.into_iter().enumerate() {
                out.values[p * channels + c] = val;
            }
        }
        out
    }
}

/// One draw of a `height × width` single-channel field.
pub fn sample_grf(
    spec: &GrfSpec,
    height: usize,
    width: usize,
    rng: &mut RngStream,
) -> Result<FieldGrid> {
    Ok(GrfSampler::new(spec, height, width)?.sample(1, rng))
}

/// Equal-width vertical patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    width: usize,
    patch_w: usize,
}

impl PatchLayout {
    pub fn new(width: usize, patch_w: usize) -> Result<Self> {
        if patch_w == 0 || !width.is_multiple_of(patch_w) {
            return Err(Error::InvalidRange(format!(
                "width {width} is not divisible by patch width {patch_w}"
            )));
        }
        if width / patch_w < 2 {
            return Err(Error::InvalidRange(
                "layout needs at least two patches".into(),
            ));
        }
        Ok(Self { width, patch_w })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_width(&self) -> usize {
        self.patch_w
    }

    pub fn count(&self) -> usize {
        self.width / self.patch_w
    }

    pub fn pairs(&self) -> usize {
        self.count() - 1
    }

    pub fn patch_of(&self, x: usize) -> usize {
        x / self.patch_w
    }

    /// `(y, x)` of the pixels of patch `p`, row-major.
    pub fn patch_coords(&self, p: usize, height: usize) -> Vec<(usize, usize)> {
        let x0 = p * self.patch_w;
        (0..height)
            .flat_map(|y| (x0..x0 + self.patch_w).map(move |x| (y, x)))
            .collect()
    }
}

/// Which patch of a pair plays the context role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairOrientation {
    /// Left patch is the context, right patch the subject.
    #[default]
    LeftContext,
    /// Right patch is the context, left patch the subject.
    RightContext,
}

/// Flat pixel indices `(context, subject)` of pair `(i, i+1)`.
pub fn pair_pixels(
    layout: &PatchLayout,
    pair_index: usize,
    height: usize,
    orientation: PairOrientation,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if pair_index >= layout.pairs() {
        return Err(Error::IndexOutOfRange {
            index: pair_index,
            dim: layout.pairs(),
        });
    }
    let flat = |p: usize| -> Vec<usize> {
        layout
            .patch_coords(p, height)
            .into_iter()
            .map(|(y, x)| y * layout.width() + x)
            .collect()
    };
    let (left, right) = (flat(pair_index), flat(pair_index + 1));
    Ok(match orientation {
        PairOrientation::LeftContext => (left, right),
        PairOrientation::RightContext => (right, left),
    })
}

/// Exact Gaussian over the pixels of patches `(i, i+1)`, context patch first.
pub fn pair_joint(
    spec: &GrfSpec,
    layout: &PatchLayout,
    pair_index: usize,
    height: usize,
    orientation: PairOrientation,
) -> Result<GaussianScoreModel> {
    check_cap(height, layout.width())?;
    let (ctx, subj) = pair_pixels(layout, pair_index, height, orientation)?;
    let w = layout.width();
    let coords: Vec<(usize, usize)> = ctx.iter().chain(&subj).map(|&p| (p / w, p % w)).collect();
    Ok(GaussianScoreModel::new(grf_gaussian(spec, &coords)?))
}

/// Summary of one patch pair's joint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDiagnostic {
    pub pair: usize,
    pub min_cross_corr: f64,
    pub max_cross_corr: f64,
    /// Max entry gap between this pair's right-patch marginal and the next
    /// pair's left-patch marginal (zero for the last pair).
    pub shared_marginal_gap: f64,
}

pub fn pair_diagnostics(
    spec: &GrfSpec,
    layout: &PatchLayout,
    height: usize,
) -> Result<Vec<PairDiagnostic>> {
    let n = height * layout.patch_width();
    let ctx_idx: Vec<usize> = (0..n).collect();
    let subj_idx: Vec<usize> = (n..2 * n).collect();
    let mut out = Vec::with_capacity(layout.pairs());
    for i in 0..layout.pairs() {
        let m = pair_joint(spec, layout, i, height, PairOrientation::LeftContext)?;
        let cov = m.base().cov();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in 0..n {
            for c in n..2 * n {
                let corr = cov[(r, c)] / (cov[(r, r)] * cov[(c, c)]).sqrt();
                lo = lo.min(corr);
                hi = hi.max(corr);
            }
        }
        let gap = if i + 1 < layout.pairs() {
            let next = pair_joint(spec, layout, i + 1, height, PairOrientation::LeftContext)?;
            let right = m.base().marginal(&subj_idx)?;
            let left_next = next.base().marginal(&ctx_idx)?;
            right.cov().sub(left_next.cov())?.max_abs()
        } else {
            0.0
        };
        out.push(PairDiagnostic {
            pair: i,
            min_cross_corr: lo,
            max_cross_corr: hi,
            shared_marginal_gap: gap,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let spec = GrfSpec {
            length_scale: 1.0,
            variance: 1.0,
            nugget: 0.0,
        };
        let k = grf_covariance(&spec, 2, 2).unwrap();
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.60653).abs() < 1e-5);
        assert!((k[(0, 3)] - (-1.0f64).exp()).abs() < 1e-15);

        let tiny = GrfSpec {
            length_scale: 0.01,
            variance: 2.0,
            nugget: 0.0,
        };
        let k = grf_covariance(&tiny, 3, 3).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                if r == c {
                    assert_eq!(k[(r, c)], 2.0);
                } else {
                    assert!(k[(r, c)] < 1e-300);
                }
            }
        }

        let nug = GrfSpec {
            length_scale: 2.0,
            variance: 1.5,
            nugget: 0.25,
        };
        let k = grf_covariance(&nug, 3, 4).unwrap();
        assert_eq!(k, k.transpose());
        assert!(k.diagonal().iter().all(|&d| d == 1.75));
    }

    #[test]
    fn size_cap() {
        assert!(matches!(
            grf_covariance(&GrfSpec::default(), 65, 64),
            Err(Error::SizeCap { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GrfSpec::default();
        let a = sample_grf(&spec, 4, 6, &mut RngStream::new(1)).unwrap();
        let b = sample_grf(&spec, 4, 6, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layout_validation() {
        assert!(PatchLayout::new(40, 8).is_ok());
        assert!(PatchLayout::new(40, 7).is_err());
        assert!(PatchLayout::new(8, 8).is_err());
        let l = PatchLayout::new(40, 8).unwrap();
        assert_eq!((l.count(), l.pairs()), (5, 4));
    }

    #[test]
    fn pair_joint_structure() {
        let layout = PatchLayout::new(12, 4).unwrap();
        let strong = GrfSpec {
            length_scale: 8.0,
            variance: 1.0,
            nugget: 1e-3,
        };
        let d = pair_diagnostics(&strong, &layout, 3).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|p| p.min_cross_corr > 0.5));
        assert!(d.iter().all(|p| p.shared_marginal_gap == 0.0));

        let weak = GrfSpec {
            length_scale: 0.01,
            variance: 1.0,
            nugget: 0.0,
        };
        let d = pair_diagnostics(&weak, &layout, 3).unwrap();
        assert!(d.iter().all(|p| p.max_cross_corr.abs() < 1e-300));
        assert!(matches!(
            pair_joint(&weak, &layout, 2, 3, PairOrientation::LeftContext),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn orientation_swaps_roles() {
        let layout = PatchLayout::new(6, 3).unwrap();
        let (c, s) = pair_pixels(&layout, 0, 1, PairOrientation::RightContext).unwrap();
        assert_eq!(c, vec![3, 4, 5]);
        assert_eq!(s, vec![0, 1, 2]);
    }
}
