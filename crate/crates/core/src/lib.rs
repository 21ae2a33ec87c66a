//! Markov jump processes and continuous-time Bayesian networks, with
//! posterior path sampling by particle Gibbs with ancestor sampling over a
//! thinned (uniformized or homogeneously augmented) skeleton.

pub mod cli;
pub mod ctbn;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod lotka_volterra;
pub mod mcmc;
pub mod observation;
pub mod presets;
pub mod process;
pub mod rates;
pub mod simulate;
pub mod smc;
pub mod trajectory;

pub use error::{Error, Result};
