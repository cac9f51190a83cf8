//! Numerical laboratory for the quadratic system
//!
//! ```text
//! dz/dt = -nu z + alpha z w
//! dw/dt = -nu w + beta  z w
//! ```
//!
//! on C^2 and its stochastic perturbations. The crate maps explosive
//! initial conditions, shows how Brownian forcing removes blow-up, checks
//! the change-of-measure reduction to a one-dimensional complex SDE, and
//! estimates the invariant density two independent ways (ergodic time
//! averages and a stationary Fokker-Planck solve).
//!
//! Modules, bottom-up:
//!
//! * [`dynamics`]: parameters, coordinate frames, drifts, fixed points.
//! * [`rng`]: reproducible Gaussian streams keyed by `(seed, stream_id)`.
//! * [`integrate`]: Euler, RK4 and exact-flow steppers with blow-up detection,
//!   plus closed-form Riccati oracles.
//! * [`sweep`]: grids of initial conditions, explosion maps, survival fractions.
//! * [`girsanov`]: the exponential martingale and law-equivalence checks.
//! * [`ergodic`]: occupation histograms and time averages.
//! * [`fokker_planck`]: the stationary adjoint equation on a disk.
//! * [`cli`]: the command-line front end used by the `blowuplab` binary.

pub mod cli;
pub mod dynamics;
pub mod ergodic;
mod error;
pub mod fokker_planck;
pub mod girsanov;
pub mod integrate;
pub(crate) mod io;
pub mod rng;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use num_complex::Complex64;
