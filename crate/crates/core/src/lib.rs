pub mod datagen;
pub mod encode;
pub mod error;
pub mod evalharness;
pub mod hostmatch;
pub mod mlcore;
pub mod pipelines;
pub mod rng;
pub mod scanmodel;
pub mod service;
pub mod triage;

pub use error::{Error, Result};
