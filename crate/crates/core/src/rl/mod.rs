//! Function approximation and actor-critic machinery: MLPs with hand-written
//! backpropagation, Adam, replay storage, soft actor-critic and the
//! conservative Q penalty.

pub mod adam;
pub mod agent;
pub mod buffer;
pub mod losses;
pub mod mlp;
pub mod policy;

pub use agent::{Agent, TrainConfig, UpdateStats};
pub use buffer::{Batch, ReplayBuffer, Transition, TransitionSource};
pub use policy::{Actor, SampleMode};
