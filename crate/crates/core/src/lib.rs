//! Meta-learning of linear quadratic regulators over heterogeneous task sets.
//!
//! [`lqr`] holds the closed-form cost, gradient and Hessian of a static
//! state-feedback gain; [`zo`] estimates the same quantities from cost
//! queries; [`maml`] runs the meta-learning loops; [`theory`] and
//! [`heterogeneity`] evaluate the accompanying bounds; [`taskgen`] builds
//! task sets and [`harness`] runs the experiments.

pub mod error;
pub mod harness;
pub mod heterogeneity;
pub mod linalg;
pub mod lqr;
pub mod maml;
pub mod summary;
pub mod taskgen;
pub mod theory;
pub mod zo;

pub use error::{Error, Result};
pub use lqr::{Gain, LqrTask};
