pub mod cli;
pub mod dataset;
pub mod enhance;
pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod mifn;
pub mod pick;
pub mod pipeline;
pub mod rng;
pub mod sgs;
pub mod spectrum;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
