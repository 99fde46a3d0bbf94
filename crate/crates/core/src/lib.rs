pub mod ar_laplace;
pub mod error;
pub mod finite_spectral;
pub mod linalg;
pub mod mvn_prob;
pub mod probit_rj;
pub mod quadrature;
pub mod rng_dist;
pub mod scalar;
pub mod uq;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FiniteChain = finite_spectral::FiniteTransChain<f64>;
pub type TraceF64 = uq::Trace<f64>;
