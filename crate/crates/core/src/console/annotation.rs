//! Caregiver reaction notes: anonymous, immutable, exportable.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::composer::Topology;
use crate::time::{iso, Timestamp};

use super::store::{JsonLog, StoreError};

pub const MAX_TEXT_CHARS: usize = 500;
pub const DEFAULT_RESIDENT_PATTERN: &str = r"^R[0-9]{3}$";
pub const FORBIDDEN_NAMES: &str = include_str!("../../fixtures/forbidden_names.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionTag {
    Calm,
    Conversation,
    Distress,
    Indifference,
    Other,
}

/// What a client submits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDraft {
    /// Defaults to the generator's current time.
    #[serde(default, with = "iso::option")]
    pub timestamp: Option<Timestamp>,
    pub room: String,
    pub resident_code: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tag: Option<ReactionTag>,
    /// Defaults to what was sounding in the room.
    #[serde(default)]
    pub samples: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionAnnotation {
    pub id: String,
    #[serde(with = "iso")]
    pub timestamp: Timestamp,
    pub room: String,
    pub resident_code: String,
    pub text: String,
    pub tag: Option<ReactionTag>,
    pub samples: Vec<String>,
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown zone {0}")]
    UnknownZone(String),
    #[error("resident code does not match the anonymization pattern")]
    ResidentCode,
    #[error("text is {0} characters, at most {MAX_TEXT_CHARS}")]
    TooLong(usize),
    #[error("{0} contains a personal name")]
    ForbiddenName(&'static str),
    #[error("annotation needs a tag or text")]
    Empty,
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::UnknownZone(_) => "unknown_zone",
            AnnotationError::ResidentCode => "bad_resident_code",
            AnnotationError::TooLong(_) => "text_too_long",
            AnnotationError::ForbiddenName(_) => "forbidden_name",
            AnnotationError::Empty => "empty_annotation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationPolicy {
    resident_code: Regex,
    forbidden: Vec<Regex>,
}

#[derive(Debug, thiserror::Error)]
#[error("annotation policy line {line}: {source}")]
pub struct PolicyError {
    line: usize,
    source: regex::Error,
}

impl AnnotationPolicy {
    /// `forbidden`: one pattern per line, `#` comments.
    pub fn new(resident_pattern: &str, forbidden: &str) -> Result<Self, PolicyError> {
        let resident_code = Regex::new(resident_pattern).map_err(|e| PolicyError { line: 0, source: e })?;
        let forbidden = forbidden
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| Regex::new(&format!(r"(?i)\b(?:{})\b", l.trim())).map_err(|e| PolicyError { line: i + 1, source: e }))
            .collect::<Result<_, _>>()?;
        Ok(AnnotationPolicy { resident_code, forbidden })
    }

    pub fn validate(&self, d: &AnnotationDraft, topology: &Topology) -> Result<(), AnnotationError> {
        if topology.zone(&d.room).is_none() {
            return Err(AnnotationError::UnknownZone(d.room.clone()));
        }
        if !self.resident_code.is_match(&d.resident_code) {
            return Err(AnnotationError::ResidentCode);
        }
        let n = d.text.chars().count();
        if n > MAX_TEXT_CHARS {
            return Err(AnnotationError::TooLong(n));
        }
        if d.text.trim().is_empty() && d.tag.is_none() {
            return Err(AnnotationError::Empty);
        }
        if self.forbidden.iter().any(|r| r.is_match(&d.text)) {
            return Err(AnnotationError::ForbiddenName("text"));
        }
        if self.forbidden.iter().any(|r| r.is_match(&d.resident_code)) {
            return Err(AnnotationError::ForbiddenName("resident code"));
        }
        Ok(())
    }
}

impl Default for AnnotationPolicy {
    fn default() -> Self {
        AnnotationPolicy::new(DEFAULT_RESIDENT_PATTERN, FORBIDDEN_NAMES).expect("bundled policy compiles")
    }
}

pub struct AnnotationStore {
    log: JsonLog<ReactionAnnotation>,
    items: Vec<ReactionAnnotation>,
}

impl AnnotationStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let (log, items) = JsonLog::open(path)?;
        Ok(AnnotationStore { log, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Store a validated draft; ids are sequential and never reused.
    pub fn add(&mut self, d: AnnotationDraft, at: Timestamp, sounding: Vec<String>, author: &str) -> Result<ReactionAnnotation, StoreError> {
        let a = ReactionAnnotation {
            id: format!("a{:06}", self.items.len() + 1),
            timestamp: d.timestamp.unwrap_or(at),
            room: d.room,
            resident_code: d.resident_code,
            text: d.text,
            tag: d.tag,
            samples: d.samples.unwrap_or(sounding),
            author: author.to_string(),
        };
        self.log.append(&a)?;
        self.items.push(a.clone());
        Ok(a)
    }

    /// Time-ordered, optionally by room and `[from, to)`.
    pub fn query(&self, room: Option<&str>, from: Option<Timestamp>, to: Option<Timestamp>) -> Vec<ReactionAnnotation> {
        let mut out: Vec<_> = self
            .items
            .iter()
            .filter(|a| room.is_none_or(|r| a.room == r))
            .filter(|a| from.is_none_or(|f| a.timestamp >= f) && to.is_none_or(|t| a.timestamp < t))
            .cloned()
            .collect();
        out.sort_by_key(|a| a.timestamp);
        out
    }

    /// Line-delimited JSON, time-ordered.
    pub fn export(&self) -> String {
        self.query(None, None, None).iter().map(|a| serde_json::to_string(a).expect("serializes") + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(text: &str) -> AnnotationDraft {
        AnnotationDraft {
            timestamp: None,
            room: "room_4".into(),
            resident_code: "R014".into(),
            text: text.into(),
            tag: Some(ReactionTag::Calm),
            samples: None,
        }
    }

    #[test]
    fn policy_gate() {
        let p = AnnotationPolicy::default();
        let topo = Topology::bundled();
        assert!(p.validate(&draft("hummed along with the blackbird"), &topo).is_ok());
        assert_eq!(p.validate(&draft("Madame Leroy smiled"), &topo), Err(AnnotationError::ForbiddenName("text")));
        assert_eq!(p.validate(&draft("asked for MARIE"), &topo), Err(AnnotationError::ForbiddenName("text")));
        // Word boundaries: "martingale" is not "martin".
        assert!(p.validate(&draft("martingale"), &topo).is_ok());
        assert_eq!(p.validate(&AnnotationDraft { resident_code: "jeanne".into(), ..draft("") }, &topo), Err(AnnotationError::ResidentCode));
        assert_eq!(p.validate(&draft(&"x".repeat(501)), &topo), Err(AnnotationError::TooLong(501)));
        assert_eq!(p.validate(&AnnotationDraft { tag: None, ..draft(" ") }, &topo), Err(AnnotationError::Empty));
        assert!(matches!(p.validate(&AnnotationDraft { room: "attic".into(), ..draft("x") }, &topo), Err(AnnotationError::UnknownZone(_))));
    }

    #[test]
    fn store_orders_export_by_time() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = AnnotationStore::open(&dir.path().join("a.jsonl")).unwrap();
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0);
        s.add(AnnotationDraft { timestamp: Some(t + 5000), ..draft("late") }, t, vec![], "nurse_a").unwrap();
        let a = s.add(draft("now"), t, vec!["crow_01".into()], "nurse_a").unwrap();
        assert_eq!(a.id, "a000002");
        assert_eq!(a.samples, vec!["crow_01"]);
        let lines: Vec<_> = s.export().lines().map(|l| serde_json::from_str::<ReactionAnnotation>(l).unwrap().text).collect();
        assert_eq!(lines, vec!["now", "late"]);
        assert_eq!(s.query(Some("room_1"), None, None).len(), 0);
        assert_eq!(s.query(Some("room_4"), Some(t + 1), None).len(), 1);
    }
}
