//! Annealed co-generation: coupling pairwise diffusion models through a
//! shared subject at sampling time.
//!
//! The crate ships closed-form Gaussian and Gaussian-mixture score models so
//! that every sampler output can be checked against an exact answer:
//!
//! * [`numerics`] – dense linear algebra, Gaussians, seeded random streams
//! * [`diffusion`] – variance-preserving schedule and its transitions
//! * [`scoremodels`] – the score-model interface and exact implementations
//! * [`consensus`] – aggregation of per-branch subject predictions
//! * [`schedules`] – heat schedules, sync policies and execution plans
//! * [`driver`] – the N-branch engine
//! * [`oracle`] – analytic tree joints, distances and finite-difference checks
//! * [`flowfield`] – patch-pair inpainting on Gaussian random fields

pub mod consensus;
pub mod diffusion;
pub mod driver;
pub mod error;
pub mod flowfield;
pub mod numerics;
pub mod oracle;
pub mod schedules;
pub mod scoremodels;

pub use error::{Error, Result};
