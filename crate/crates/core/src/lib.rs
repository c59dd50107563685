//! Video super-resolution lab: frame sequences and patch grids, a seeded
//! degradation pipeline, generator and discriminator networks, the loss
//! family, a patch-grid cascaded trainer and an evaluation harness.

pub mod error;
pub mod resample;
pub mod rng;
pub mod seqcore;
pub mod degrade;
pub mod nn;
pub mod loss;
pub mod gen;
pub mod disc;
pub mod dataset;
pub mod trainer;
pub mod eval;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
pub use seqcore::{FrameSequence, PatchGrid};
