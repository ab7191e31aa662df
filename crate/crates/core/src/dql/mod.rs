//! From-scratch deep Q-learning.

mod agent;
mod network;
mod replay;
mod state;

pub use agent::{
    masked_argmax, reward, select_action, sync_target, td_loss, td_loss_and_gradients, td_update,
    AgentConfig, AgentPool, QAgent, RewardWeights, NUM_ACTIONS,
};
pub use network::{Adam, Dense, Gradients, QNetwork, Trace};
pub use replay::{ReplayBuffer, Transition};
pub use state::{
    DestinationEncoding, LocalObservation, StateEncoder, StateVector, GEOGRAPHIC_DIM, PORT_FEATURES,
};
