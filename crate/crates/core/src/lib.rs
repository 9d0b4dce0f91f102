//! Stability of invariant measures of diffusions: coupled SDE simulation,
//! truncated and logarithmic transport costs, moment-map Stein kernels,
//! Lusin–Lipschitz witnesses, and evaluators for explicit stability bounds.

pub mod bounds;
pub mod error;
pub mod expr;
pub mod harness;
pub mod lusin;
pub mod measures;
pub mod moment_map;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stein;
pub mod stats;
pub mod testfn;
pub mod transport;

pub use error::{Error, Result};
