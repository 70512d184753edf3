pub mod attention;
pub mod ablate;
pub mod agr;
pub mod autograd;
pub mod backbone;
pub mod cge;
pub mod config;
pub mod data;
pub mod error;
pub mod graph_ops;
pub mod heads;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
