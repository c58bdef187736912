//! Function-approximation agents with a categorical value head.

pub mod agent;
pub mod checkpoint;
pub mod head;
pub mod net;
pub mod optim;
pub mod replay;

pub use agent::{
    demo_samples, demo_transitions, evaluate, train_cold, train_mixed_baseline, train_soda, AgentMode, EvalPoint,
    SodaAgent, SodaConfig, SodaRecord, SodaRun,
};
pub use head::{cross_entropy, softmax, CategoricalHead, DEFAULT_BINS};
pub use net::{Activation, Gradients, LossBatch, ValueNet};
pub use optim::{Adam, AdamConfig};
pub use replay::{DemoBuffer, DemoSample, ReplayBuffer, Transition};
