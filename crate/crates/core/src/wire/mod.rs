//! The two channels between generator and players: idempotent control
//! datagrams and the reliable asset channel. Also the shared log formats.

pub mod codec;
pub mod log;
pub mod replay;
pub mod sync;

pub use codec::{decode, encode, random_message, Body, ControlMessage, DecodeError, EncodeError, Gain, Kind, Play, Stop, StopSelector, SynthParam};
pub use log::{payload_digest, DispatchLine, LogRecord};
pub use replay::{Freshness, ReplayWindow};
pub use sync::{plan_sync, synchronize, AssetEntry, AssetSink, AssetSource, AssetSyncPlan, SyncReport};
