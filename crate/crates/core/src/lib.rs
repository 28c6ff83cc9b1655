//! Joint embeddings of users, texts and images in one space.

pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod nnindex;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};
