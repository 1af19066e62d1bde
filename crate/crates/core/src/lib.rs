//! Event-driven simulation of a recurrent spiking network whose E→E
//! synapses are bistable, stochastic and Hebbian. The crate covers the full
//! pipeline: single-neuron gain, LTP/LTD probability maps, effective
//! transfer functions, unsupervised learning of visual patterns into
//! attractors, and pattern completion from degraded input.

pub mod error;
pub mod characterization;
pub mod event;
pub mod learning;
pub mod network;
pub mod neuron;
pub mod stimulus;
pub mod synapse;

pub use error::{Result, SimError};
