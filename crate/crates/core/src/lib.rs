//! Simulation laboratory for mean-field (McKean–Vlasov) interacting particle
//! systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds drift/noise coefficients `b(x, μ) = b₁(x) + (b₀ ∗ μ)(x)`,
//!   particle ensembles and hypothesis diagnostics.
//! * [`paths`] produces reproducible, index-addressable Brownian increments.
//! * [`schemes`] contains the explicit, backward, tamed, adaptive and delay
//!   Euler–Maruyama integrators and the trajectory driver [`schemes::simulate`].
//! * [`coupling`] implements the asymptotic reflection coupling of two
//!   particle systems.
//! * [`contraction`] evaluates the Lyapunov distance `f` and its constants.
//! * [`metrics`] estimates Wasserstein-1 distances, moments and rates.
//! * [`harness`] wires everything into rate experiments with JSON/CSV reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod contraction;
pub mod coupling;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod paths;
pub mod schemes;

pub use contraction::{lyapunov_constants, verify_contraction, ContractionReport, LyapunovConstants};
pub use coupling::{CoupledState, CouplingConfig};
pub use error::{Error, Result};
pub use metrics::{RateFit, SampleSet};
pub use model::{Constants, Ensemble, ModelSpec};
pub use paths::{MotionTag, NoiseStream, StreamId};
pub use schemes::{simulate, InitialLaw, SchemeConfig, SchemeKind, TamingMode, Trajectory};
