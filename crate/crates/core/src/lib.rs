//! Generalized and reflected backward SDEs driven by a divergence-form
//! diffusion, the matching parabolic obstacle problem, and cross-checks
//! between the probabilistic and analytic solutions.

pub mod bridge;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gbsde;
pub mod grid;
pub mod infconv;
pub mod model;
pub mod pde;
pub mod plot;
pub mod rbsde;

pub use error::{Error, Result};
