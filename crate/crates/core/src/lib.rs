pub mod envs;
pub mod error;
pub mod harness;
pub mod learners;
pub mod measures;
pub mod policies;
pub mod transport;
pub mod wgf;

pub use error::{Error, Result};
pub use measures::{DominanceVerdict, ParticleSet};
