//! Distributed soundscape generator for a care unit: catalog, world model,
//! composer, scheduler, datagram protocol, player nodes, a deterministic
//! simulation harness and the caregiver console API.

pub mod catalog;
pub mod composer;
pub mod environment;
pub mod fixtures;
pub mod level;
pub mod rng;
pub mod time;
pub mod wire;
pub mod player;
pub mod scheduler;
pub mod sim;
pub mod console;
