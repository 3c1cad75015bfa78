//! Mean-field approximation of cooperative multi-agent reinforcement learning
//! with non-uniform agent interactions.

pub mod error;
pub mod harness;
pub mod interaction;
pub mod meanfield;
pub mod model;
pub mod nagent;
pub mod npg;
pub mod policy;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
pub use interaction::InteractionMatrix;
pub use model::{EnvModel, FirmEnv, FirmModelConfig};
pub use policy::{Policy, PolicyConfig, PolicyParams, SoftmaxPolicy, TabularPolicy};
pub use simplex::Simplex;
