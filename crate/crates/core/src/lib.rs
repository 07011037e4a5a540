//! Continual graph-convolutional text classification over a document-token
//! graph whose statistics are updated incrementally.

mod codec;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod omm;
pub mod run_config;
pub mod synthetic;
pub mod train;
pub mod vocab;

pub use codec::atomic_write;
pub use error::{Error, Result};
