//! Bayesian model averaging for least-squares fits.
//!
//! Models are fit by minimizing an augmented chi-squared (data plus Gaussian
//! priors). Each fit receives an information-criterion weight that counts
//! parameters and cut data points, and a common parameter is averaged over
//! the model set with its variance split into statistical and model-choice
//! parts.
//!
//! ```no_run
//! use bma_core::prelude::*;
//!
//! let data = generate(&GeneratorSpec::polynomial_benchmark(160, 1)).unwrap();
//! let est = estimate_covariance(&data, DEFAULT_SVD_CUTOFF).unwrap();
//! let model = ModelInstance::new(
//!     ModelFamily::Polynomial { degree: 2, x_scale: None },
//!     SubsetSelector::keep_all(data.dim()),
//!     PriorSpec::uniform(3, 0.0, 10.0).unwrap(),
//!     "m2",
//! )
//! .unwrap();
//! let fit = fit(&model, &data, &est, &FitOptions::default()).unwrap();
//! println!("a0 = {:?}", fit.param("a0"));
//! ```

pub mod averaging;
pub mod data;
pub mod error;
pub mod fitter;
pub mod models;
pub mod synth;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::averaging::{
        average, criterion_value, extract_parameter, full_width_systematic, normalize_weights, two_model_expansion,
        AveragedEstimate, Contribution, Criterion, FullWidth, FullWidthEntry, LogDets, WeightRecord,
    };
    pub use crate::data::{
        chi2_mean_based, chi2_sample_sum, estimate_covariance, restrict, CovarianceEstimate, RestrictMode, SampleSet,
        SubsetSelector, DEFAULT_SVD_CUTOFF,
    };
    pub use crate::error::{Error, Result};
    pub use crate::fitter::{
        bias_matrices, fit, hessian_chi2aug, minimize, p_value, BiasMatrices, FitOptions, FitProblem, FitResult,
        StartPoint,
    };
    pub use crate::models::{
        apply_cut, chi2_aug, chi2_prior, predict, Chi2Breakdown, ModelFamily, ModelInstance, PriorSpec,
    };
    pub use crate::synth::{effective_mass, generate, truth_curve, GeneratorKind, GeneratorSpec};
}
