//! Caregiver overrides entering the generator through its inbox.

use serde::{Deserialize, Serialize};

use crate::composer::{EnvelopeShape, Topology};
use crate::time::{iso, Timestamp};

/// Care-team trim range in dB.
pub const OVERRIDE_TRIM_RANGE_DB: (f64, f64) = (-12.0, 12.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OverrideAction {
    Mute,
    Unmute,
    Trim { db: f64 },
    ConsentSet { granted: bool },
    /// Start a fresh sequence now; `template` forces the envelope shape.
    TriggerSequence {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template: Option<String>,
    },
    StopSequence,
}

impl OverrideAction {
    pub fn name(&self) -> &'static str {
        match self {
            OverrideAction::Mute => "mute",
            OverrideAction::Unmute => "unmute",
            OverrideAction::Trim { .. } => "trim",
            OverrideAction::ConsentSet { .. } => "consent_set",
            OverrideAction::TriggerSequence { .. } => "trigger_sequence",
            OverrideAction::StopSequence => "stop_sequence",
        }
    }

    pub fn value(&self) -> String {
        match self {
            OverrideAction::Trim { db } => format!("{db}"),
            OverrideAction::ConsentSet { granted } => granted.to_string(),
            OverrideAction::TriggerSequence { template: Some(t) } => t.clone(),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleOverride {
    #[serde(flatten)]
    pub action: OverrideAction,
    /// Zone id; bedroom zones double as room ids.
    pub target: String,
    pub author: String,
    #[serde(with = "iso")]
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OverrideError {
    #[error("unknown zone {0}")]
    UnknownZone(String),
    #[error("{0} is not a bedroom")]
    NotABedroom(String),
    #[error("trim {0} dB outside [-12, +12]")]
    TrimOutOfRange(f64),
    #[error("unknown sequence template {0}")]
    UnknownTemplate(String),
    #[error("override without author")]
    MissingAuthor,
    #[error("generator unavailable")]
    Unavailable,
}

impl ConsoleOverride {
    pub fn new(action: OverrideAction, target: &str, author: &str, timestamp: Timestamp) -> Self {
        ConsoleOverride { action, target: target.to_string(), author: author.to_string(), timestamp }
    }

    pub fn validate(&self, topology: &Topology) -> Result<(), OverrideError> {
        if self.author.trim().is_empty() {
            return Err(OverrideError::MissingAuthor);
        }
        let zone = topology.zone(&self.target).ok_or_else(|| OverrideError::UnknownZone(self.target.clone()))?;
        match &self.action {
            OverrideAction::Trim { db } => {
                let (lo, hi) = OVERRIDE_TRIM_RANGE_DB;
                if !(lo..=hi).contains(db) {
                    return Err(OverrideError::TrimOutOfRange(*db));
                }
            }
            OverrideAction::ConsentSet { .. } if !zone.is_bedroom() => {
                return Err(OverrideError::NotABedroom(self.target.clone()));
            }
            OverrideAction::TriggerSequence { template: Some(t) } => {
                t.parse::<EnvelopeShape>().map_err(|_| OverrideError::UnknownTemplate(t.clone()))?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at() -> Timestamp {
        Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0)
    }

    #[test]
    fn trim_range() {
        let t = Topology::bundled();
        let ok = ConsoleOverride::new(OverrideAction::Trim { db: 12.0 }, "north_room", "nurse_a", at());
        assert!(ok.validate(&t).is_ok());
        let bad = ConsoleOverride::new(OverrideAction::Trim { db: 13.0 }, "north_room", "nurse_a", at());
        assert_eq!(bad.validate(&t), Err(OverrideError::TrimOutOfRange(13.0)));
    }

    #[test]
    fn targets_checked() {
        let t = Topology::bundled();
        let o = ConsoleOverride::new(OverrideAction::Mute, "kitchen", "nurse_a", at());
        assert!(matches!(o.validate(&t), Err(OverrideError::UnknownZone(_))));
        let o = ConsoleOverride::new(OverrideAction::ConsentSet { granted: true }, "patio", "nurse_a", at());
        assert!(matches!(o.validate(&t), Err(OverrideError::NotABedroom(_))));
        let o = ConsoleOverride::new(OverrideAction::Mute, "patio", " ", at());
        assert_eq!(o.validate(&t), Err(OverrideError::MissingAuthor));
    }

    #[test]
    fn json_shape() {
        let o = ConsoleOverride::new(OverrideAction::ConsentSet { granted: true }, "room_4", "nurse_a", at());
        let j = serde_json::to_string(&o).unwrap();
        assert_eq!(
            j,
            r#"{"kind":"consent_set","granted":true,"target":"room_4","author":"nurse_a","timestamp":"2026-01-12T10:00:00.000"}"#
        );
        assert_eq!(serde_json::from_str::<ConsoleOverride>(&j).unwrap(), o);
    }
}
