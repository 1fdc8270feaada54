//! Patch-pair inpainting on Gaussian random fields.
//!
//! A field is cut into `P` vertical patches of equal width. Every adjacent
//! pair of patches has an exactly Gaussian joint, which plays the role of a
//! pretrained pairwise model; corrupted patches are reconstructed by running
//! the ensemble driver with one branch per usable neighbour.

mod grid;
mod inpaint;
mod io;
mod mask;
mod metrics;

pub use grid::{
    grf_covariance, grf_gaussian, pair_diagnostics, pair_joint, pair_pixels, sample_grf, FieldGrid,
    GrfSampler, GrfSpec, PairDiagnostic, PairOrientation, PatchLayout, MAX_PIXELS,
};
pub use inpaint::{
    exact_posterior, inpaint_acg, Conditioning, InpaintOptions, Inpainter, NeighborMode,
};
pub use io::{parse_fgrid, parse_fmask, read_fgrid, read_fmask, write_fgrid, write_fmask};
pub use mask::{corrupt, CorruptionMask, Pattern};
pub use metrics::{metrics, Metrics};
