//! Deterministic whole-unit simulation: scenario files, a lossy virtual
//! network, the run loop, merged traces and the check battery.

pub mod check;
pub mod network;
pub mod run;
pub mod scenario;
pub mod trace;

pub use check::{check, equivalence, CheckResult, Report};
pub use network::{NetStats, VirtualNetwork};
pub use run::{replay_dispatch, run, SimError, Simulation};
pub use scenario::{parse_duration_ms, FaultPlan, PlayerOptions, Resolved, Scenario, ScenarioError};
pub use trace::{field, LevelSample, Trace, TraceHeader, TraceParseError, TraceRecord};
