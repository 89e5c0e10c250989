pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod dynimg;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod heads;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod optim;
pub mod rank;
pub mod train;

pub use error::{FdpError, Result};
