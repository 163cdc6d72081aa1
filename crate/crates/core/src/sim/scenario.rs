//! Scenario files: everything a run depends on, in one TOML document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{parse_manifest, Catalog};
use crate::composer::Topology;
use crate::environment::{CareActivitySchedule, WeatherTrace};
use crate::fixtures;
use crate::scheduler::{ConsoleOverride, SchedulerConfig};
use crate::time::{iso, Timestamp, MS_PER_DAY, MS_PER_HOUR, MS_PER_MINUTE, MS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlan {
    pub loss_pct: f64,
    /// Maximum extra delay of a held-back datagram.
    pub reorder_ms: i64,
    /// Share of datagrams held back when `reorder_ms > 0`.
    pub reorder_pct: f64,
    /// Base one-way latency range.
    pub latency_ms: (i64, i64),
    /// Transfer attempts (1-based, per player) that fail during asset sync.
    pub transfer_failures: Vec<u32>,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan { loss_pct: 0.0, reorder_ms: 0, reorder_pct: 25.0, latency_ms: (1, 4), transfer_failures: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlayerOptions {
    /// Start players with empty inventories and sync over the asset channel.
    pub asset_sync: bool,
    /// Local clock offsets, by player id.
    pub clock_skew_ms: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(with = "iso")]
    pub start: Timestamp,
    /// `<n>d`, `<n>h`, `<n>m` or `<n>s`.
    pub duration: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Pacing cap for live runs; batch runs go as fast as they can.
    #[serde(default = "default_acceleration")]
    pub acceleration: f64,
    #[serde(default = "default_preroll")]
    pub preroll_s: i64,
    #[serde(default = "bundled_ref")]
    pub topology: String,
    #[serde(default = "bundled_ref")]
    pub catalog: String,
    #[serde(default = "bundled_ref")]
    pub schedule: String,
    #[serde(default)]
    pub weather: Option<String>,
    /// Rooms whose consent gate is open from the start.
    #[serde(default)]
    pub consent: Vec<String>,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default)]
    pub players: PlayerOptions,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub overrides: Vec<ConsoleOverride>,
}

fn default_seed() -> u64 {
    1
}

fn default_acceleration() -> f64 {
    600.0
}

fn default_preroll() -> i64 {
    120
}

fn bundled_ref() -> String {
    "bundled".to_string()
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario: cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario: {0}")]
    Invalid(String),
}

pub fn parse_duration_ms(s: &str) -> Option<i64> {
    let s = s.trim();
    let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit())?);
    let n: i64 = num.parse().ok()?;
    let scale = match unit {
        "d" => MS_PER_DAY,
        "h" => MS_PER_HOUR,
        "m" => MS_PER_MINUTE,
        "s" => MS_PER_SECOND,
        _ => return None,
    };
    Some(n * scale)
}

/// A scenario with every referenced resource loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub topology: Arc<Topology>,
    pub catalog: Arc<Catalog>,
    pub schedule: CareActivitySchedule,
    pub weather: WeatherTrace,
}

impl Resolved {
    pub fn window(&self) -> (Timestamp, Timestamp) {
        let s = &self.scenario;
        (s.start, s.start + parse_duration_ms(&s.duration).expect("validated"))
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: path.into(), source: e })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn text(reference: &str, default: &'static str, base: Option<&Path>) -> Result<String, ScenarioError> {
        if reference == "bundled" {
            return Ok(default.to_string());
        }
        if let Some(name) = reference.strip_prefix("bundled:") {
            return fixtures::bundled(name)
                .map(str::to_string)
                .ok_or_else(|| ScenarioError::Invalid(format!("no bundled resource {name:?}")));
        }
        let path = base.map_or_else(|| PathBuf::from(reference), |b| b.join(reference));
        std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io { path, source: e })
    }

    /// Load resources; relative paths resolve against `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Resolved, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        let duration = parse_duration_ms(&self.duration).ok_or_else(|| invalid(format!("bad duration {:?}", self.duration)))?;
        if duration <= 0 {
            return Err(invalid("duration must be positive".into()));
        }
        if !self.acceleration.is_finite() || self.acceleration < 1.0 {
            return Err(invalid(format!("acceleration {} below 1", self.acceleration)));
        }
        if self.preroll_s < 0 {
            return Err(invalid("negative preroll".into()));
        }
        let f = &self.faults;
        if !(0.0..=100.0).contains(&f.loss_pct) || !(0.0..=100.0).contains(&f.reorder_pct) {
            return Err(invalid("fault percentages must lie in [0, 100]".into()));
        }
        if f.reorder_ms < 0 || f.latency_ms.0 < 1 || f.latency_ms.1 < f.latency_ms.0 {
            return Err(invalid("latency must be at least 1 ms and ordered".into()));
        }
        self.scheduler.validate().map_err(|e| invalid(e.to_string()))?;

        let topology = Topology::parse(&Self::text(&self.topology, fixtures::TOPOLOGY, base)?).map_err(|e| invalid(e.to_string()))?;
        let catalog = parse_manifest(&Self::text(&self.catalog, fixtures::CATALOG, base)?).map_err(|e| invalid(e.to_string()))?;
        let schedule = CareActivitySchedule::parse(&Self::text(&self.schedule, fixtures::CARE_SCHEDULE, base)?).map_err(|e| invalid(e.to_string()))?;
        let weather = match &self.weather {
            None => WeatherTrace::default(),
            Some(r) => WeatherTrace::parse(&Self::text(r, "", base)?).map_err(|e| invalid(e.to_string()))?,
        };
        for room in &self.consent {
            if !topology.zone(room).is_some_and(|z| z.is_bedroom()) {
                return Err(invalid(format!("consent for unknown room {room}")));
            }
        }
        for o in &self.overrides {
            o.validate(&topology).map_err(|e| invalid(format!("override at {}: {e}", o.timestamp)))?;
        }
        for p in self.players.clock_skew_ms.keys() {
            if topology.zone_of_player(p).is_none() {
                return Err(invalid(format!("clock skew for unknown player {p}")));
            }
        }
        Ok(Resolved { scenario: self.clone(), topology: Arc::new(topology), catalog: Arc::new(catalog), schedule, weather })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
start = "2026-01-12T00:00:00"
duration = "2h"
"#;

    #[test]
    fn minimal_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.seed, 1);
        assert_eq!(s.acceleration, 600.0);
        let r = s.resolve(None).unwrap();
        assert_eq!(r.topology.zones.len(), 18);
        assert_eq!(r.catalog.len(), 24);
        assert_eq!(r.window().1 - r.window().0, 2 * MS_PER_HOUR);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = Scenario::parse(MINIMAL).unwrap();
        s.faults.loss_pct = 20.0;
        s.overrides.push(ConsoleOverride::new(
            crate::scheduler::OverrideAction::Trim { db: -3.0 },
            "patio",
            "nurse_a",
            Timestamp::from_ymd_hms(2026, 1, 12, 1, 0, 0),
        ));
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        let with = |extra: &str| Scenario::parse(&format!("{MINIMAL}{extra}")).and_then(|s| s.resolve(None).map(|_| ()));
        assert!(with("consent = [\"patio\"]\n").is_err());
        assert!(with("[faults]\nloss_pct = 120.0\n").is_err());
        assert!(with("weather = \"bundled:nowhere\"\n").is_err());
        assert!(with("colour = 3\n").is_err());
        assert!(Scenario::parse(&MINIMAL.replace("2h", "2 weeks")).unwrap().resolve(None).is_err());
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration_ms("7d"), Some(7 * MS_PER_DAY));
        assert_eq!(parse_duration_ms("90s"), Some(90_000));
        assert_eq!(parse_duration_ms("h"), None);
        assert_eq!(parse_duration_ms("3w"), None);
    }
}
