//! Synthetic visual question answering lab: a small autodiff engine, an
//! emulated region detector, an attention-based VQA reasoner and a
//! question-conditioned object selector, with the experiment drivers that
//! compare them.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod grounding;
pub mod harness;
pub mod io;
pub mod manifest;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod updn;
pub mod world;

pub use error::{LabError, Result};
pub use tensor::Tensor;
