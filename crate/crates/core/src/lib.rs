//! Online learning of slow-feature abstractions from a set of observation
//! streams, driven by intrinsic (curiosity + expert) rewards.
//!
//! An agent explores `n` streams with two actions (stay on the current
//! stream, or switch to a uniformly random other one), receiving `tau`
//! consecutive samples per decision. A single adaptive slow-feature
//! extractor is updated online from novel batches; a gating system freezes
//! it once its slowness measure settles and uses the frozen copies to
//! filter already-encoded streams. A tabular reinforcement learner over
//! (stream, action) turns the extractor's learning progress into rewards
//! and converges on the stay/switch policy that seeks out the easiest
//! not-yet-encoded stream first.

pub mod agent;
pub mod cdrl;
pub mod config;
pub mod error;
pub mod gating;
pub mod harness;
pub mod incsfa;
pub mod stream_env;

pub use error::Error;
