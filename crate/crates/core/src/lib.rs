//! Probabilistic ensemble dynamics models trained with a contrastive
//! (UDUC) objective, CEM model-predictive control, and a cart-pole
//! robustness harness.

pub mod cem;
pub mod cli;
pub mod config;
pub mod diffnum;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod losses;
pub mod rng;
pub mod robust;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
