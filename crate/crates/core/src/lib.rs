//! Simulator and learning stack for LLM-assisted multi-agent service
//! migration on UAV-satellite networks.
//!
//! * [`topology`]: circular-orbit constellation and per-epoch link graph
//! * [`netsim`]: time-slotted packet and migration simulator
//! * [`graphstate`]: node observations and recurrent message passing
//! * [`neural`]: dense tensors, reverse-mode gradients, Adam, checkpoints
//! * [`dqn`]: shared-parameter DQN agents with replay
//! * [`reward`]: extrinsic and intrinsic reward
//! * [`llm`]: prompt rendering, representation specs, topology codec,
//!   action guidance, stub and HTTP clients

pub mod dqn;
pub mod graphstate;
pub mod llm;
pub mod netsim;
pub mod neural;
pub mod reward;
pub mod rng;
pub mod topology;
