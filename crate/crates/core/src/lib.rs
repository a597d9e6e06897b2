//! t-SNE in the proportional-perplexity regime `Perp = ρ n`, together with
//! the population objects that describe its large-`n` limit.

pub mod affinities;
pub mod commands;
pub mod distance;
pub mod error;
pub mod experiments;
pub mod figure;
pub mod io;
pub mod kernel;
pub mod optimizer;
pub mod population;
pub mod quadrature;
pub mod stationarity;
pub mod tail;
pub mod types;

pub use error::{Error, Result};
