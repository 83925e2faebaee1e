//! Repro-samples inference for high-dimensional binary classification.
//!
//! The crate covers model candidate sets built from synthetic noise, Wald-type confidence
//! sets for linear combinations of working-GLM coefficients, Monte-Carlo model confidence
//! sets, and the simulation designs used to check them.

pub mod candidate;
pub mod coef;
pub mod error;
pub mod glm;
pub mod model_cs;
pub mod rng;
pub mod solvers;
pub mod special;
pub mod synthetic;

pub use error::{ReproError, Result};
pub use glm::{Dataset, Support, WorkingModel};

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is enabled.
///
/// Output order always follows the index, so results do not depend on scheduling.
pub fn par_map<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
