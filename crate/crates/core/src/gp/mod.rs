//! Exact Gaussian-process regression.

pub mod exact;
pub mod kernel;
pub mod single;

pub use exact::{ExactGp, FitOptions, FitReport};
pub use kernel::{kernel_eval, CovKernel, KernelFamily, SpatialCov, SpatialKernelParams};
pub use single::{
    fit_gp, mean_squared_error, total_nll, FittedGp, GpConfig, LooPoint, PosteriorGaussian,
    Standardizer, TrainingSet,
};
