//! Append-only log lines shared by the generator and the players.
//!
//! Dispatch log: `epoch;virtual_time;player;msg_type;msg_digest`.
//! Node log: `timestamp;node;kind;digest;summary`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::time::Timestamp;

/// Short content digest used in logs: the first 16 hex digits of SHA-256.
pub fn payload_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed log line: {0}")]
pub struct LogParseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchLine {
    pub epoch: u64,
    pub virtual_time: Timestamp,
    pub player: String,
    pub msg_type: String,
    pub msg_digest: String,
}

impl fmt::Display for DispatchLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{};{};{};{}", self.epoch, self.virtual_time, self.player, self.msg_type, self.msg_digest)
    }
}

impl FromStr for DispatchLine {
    type Err = LogParseError;
    fn from_str(s: &str) -> Result<Self, LogParseError> {
        let f: Vec<&str> = s.split(';').collect();
        let bad = || LogParseError(s.to_string());
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(DispatchLine {
            epoch: f[0].parse().map_err(|_| bad())?,
            virtual_time: f[1].parse().map_err(|_| bad())?,
            player: f[2].to_string(),
            msg_type: f[3].to_string(),
            msg_digest: f[4].to_string(),
        })
    }
}

/// One entry in a node's local log. Summaries carry ids and levels only,
/// never free text from caregivers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: Timestamp,
    pub node: String,
    pub kind: String,
    pub digest: String,
    pub summary: String,
}

impl LogRecord {
    pub fn new(timestamp: Timestamp, node: &str, kind: &str, digest: impl Into<String>, summary: impl Into<String>) -> Self {
        let summary: String = summary.into();
        LogRecord {
            timestamp,
            node: node.to_string(),
            kind: kind.to_string(),
            digest: digest.into(),
            summary: summary.replace([';', '\n', '\r'], " "),
        }
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{};{};{};{}", self.timestamp, self.node, self.kind, self.digest, self.summary)
    }
}

impl FromStr for LogRecord {
    type Err = LogParseError;
    fn from_str(s: &str) -> Result<Self, LogParseError> {
        let f: Vec<&str> = s.splitn(5, ';').collect();
        if f.len() != 5 {
            return Err(LogParseError(s.to_string()));
        }
        Ok(LogRecord {
            timestamp: f[0].parse().map_err(|_| LogParseError(s.to_string()))?,
            node: f[1].to_string(),
            kind: f[2].to_string(),
            digest: f[3].to_string(),
            summary: f[4].to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_line_round_trip() {
        let l = DispatchLine {
            epoch: 42,
            virtual_time: Timestamp::from_ymd_hms(2026, 1, 12, 14, 59, 30),
            player: "p01".into(),
            msg_type: "SYNTH_PARAM".into(),
            msg_digest: payload_digest(b"x"),
        };
        let s = l.to_string();
        assert_eq!(s, format!("42;2026-01-12T14:59:30.000;p01;SYNTH_PARAM;{}", payload_digest(b"x")));
        assert_eq!(s.parse::<DispatchLine>().unwrap(), l);
    }

    #[test]
    fn summaries_cannot_break_framing() {
        let r = LogRecord::new(Timestamp(0), "p01", "play", "ab", "a;b\nc");
        let back: LogRecord = r.to_string().parse().unwrap();
        assert_eq!(back, r);
        assert_eq!(back.summary, "a b c");
    }
}
