//! Exact balanced random imputation for sample survey data.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical core:
//!
//! * [`linalg`]: Jacobi eigendecomposition, kernel bases, spectral norms.
//! * [`population`]: finite-population frames and the synthetic ratio-model generator.
//! * [`sampling`]: SRSWOR, π-ps inclusion probabilities with capping, Poisson and
//!   rejective (conditional Poisson) sampling.
//! * [`cube`]: the flight phase of the cube method.
//! * [`regression`]: the regularized weighted least-squares fit and observed residuals.
//! * [`imputation`]: response mechanisms and the DRI / RRI / EBRI imputation methods.
//! * [`estimators`]: Horvitz–Thompson and imputed estimators of totals and
//!   distribution functions, population quantiles.
//!
//! IO, the Monte Carlo harness and the command-line tool live in the `ebri` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod cube;
pub mod error;
pub mod estimators;
pub mod imputation;
pub mod linalg;
pub mod population;
pub mod regression;
pub mod sampling;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
