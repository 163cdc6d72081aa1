//! Sequence composition and the landmark generators.

pub mod envelope;
pub mod gaps;
pub mod landmarks;
pub mod sequence;
pub mod zone;

pub use envelope::{make_envelope, Envelope, EnvelopeParams, EnvelopeShape, Section, SectionLabel};
pub use gaps::silence_gaps;
pub use landmarks::{
    bell_groups_between, bell_level, bell_schedule, bell_timbre, pendulum_track, strokes_for_hour, waterfall_params,
    BellEvent, BellParams, GrainParams, PendulumError,
};
pub use sequence::{compose_sequence, ComposerConfig, Sequence, SoundEvent};
pub use zone::{Feature, LevelBudget, Topology, TopologyError, ZoneClass, ZoneConfig};
