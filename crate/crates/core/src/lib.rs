//! Joint modelling of the grid points and the response values of replicated
//! functional data.
//!
//! Each subject contributes a set of time points, modelled as a log-Gaussian
//! Cox process, and a response at every point, modelled as a Karhunen-Loève
//! process observed with noise. The latent scores of the two processes are
//! jointly Gaussian and their cross-covariance is the quantity of interest.
//!
//! Module map:
//!
//! * [`basis`]: cubic B-splines, Gram and roughness matrices, quadrature.
//! * [`model`]: the parameter vector, its constraints and data containers.
//! * [`likelihood`]: Laplace-approximated marginal likelihood and gradients.
//! * [`estimation`]: penalized maximum likelihood fitting.
//! * [`inference`]: asymptotic and bootstrap standard deviations.
//! * [`simulate`]: data generation and the Monte Carlo harness.
//! * [`modelselect`]: cross-validation and component-count selection.

pub mod basis;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod modelselect;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod simulate;

pub use basis::{BasisSpec, BasisSystem, Interval};
pub use error::{Error, Result};
pub use estimation::{fit, fit_from, initialize, FitConfig, FitResult};
pub use inference::{asymptotic_covariance, bootstrap_sd, InferenceResult};
pub use likelihood::{
    laplace_loglik, log_joint, penalized_loglik, posterior_mode, predict_scores, PosteriorMode,
};
pub use model::{Dataset, MarkedRealization, Theta};
pub use simulate::{McReport, PaperDesign, Scenario, StudyConfig};
