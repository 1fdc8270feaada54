//! Dense linear algebra, exact Gaussian utilities and seeded random streams.

mod gaussian;
mod linalg;
mod rng;

pub use gaussian::{mvn_condition, mvn_logpdf, mvn_marginal, mvn_sample, MultivariateGaussian};
pub use linalg::{
    add, cholesky, dot, norm2, norm_inf, solve_spd, sqrtm_psd, sub, symmetric_eigen, Cholesky,
    Matrix, Vector,
};
pub use rng::{mix_seed, RngStream};
