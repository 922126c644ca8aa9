//! Large deviations for random walks on the stochastic matrix group
//! `S(d,ℝ)`: matrix Lie primitives, BCH-type estimates, walk simulation,
//! Legendre transforms, path rate functionals and Monte Carlo checks.

pub mod bch;
pub mod error;
pub mod ldp;
pub mod lie_core;
pub mod mc;
pub mod quadrature;
pub mod rate;
pub mod rng;
pub mod stochastic_group;
pub mod walk;

pub use error::{Error, Result};
pub use mc::{BallEvent, RateCurve, TiltPolicy};
pub use rate::{PathSpec, RateOptions};
pub use ldp::{domain_check, legendre, log_mgf, Conjugate, Domain, IncrementDistribution, LegendreResult};
pub use lie_core::{AlgebraVector, Basis, GroupElement, LinearOperator};
pub use stochastic_group::ExampleModel;
