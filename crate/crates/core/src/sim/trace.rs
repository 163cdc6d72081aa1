//! Merged run log: dispatch lines, node logs and per-zone level changes.
//!
//! Text form, one record per line:
//!
//! ```text
//! #trace name=<n> seed=<s> start=<t> end=<t>
//! D;<epoch>;<virtual_time>;<player>;<msg_type>;<digest>
//! N;<timestamp>;<node>;<kind>;<digest>;<summary>
//! V;<timestamp>;<zone>;<level_dba>;<voices>
//! ```

use std::fmt::{self, Write as _};

use crate::time::Timestamp;
use crate::wire::log::{DispatchLine, LogRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSample {
    pub timestamp: Timestamp,
    pub zone: String,
    pub level_dba: f64,
    pub voices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Dispatch(DispatchLine),
    Log(LogRecord),
    Level(LevelSample),
}

impl TraceRecord {
    pub fn timestamp(&self) -> Timestamp {
        match self {
            TraceRecord::Dispatch(d) => d.virtual_time,
            TraceRecord::Log(l) => l.timestamp,
            TraceRecord::Level(v) => v.timestamp,
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRecord::Dispatch(d) => write!(f, "D;{d}"),
            TraceRecord::Log(l) => write!(f, "N;{l}"),
            TraceRecord::Level(v) => write!(f, "V;{};{};{:.3};{}", v.timestamp, v.zone, v.level_dba, v.voices),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub name: String,
    pub seed: u64,
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64);
        let h = &self.header;
        let _ = writeln!(out, "#trace name={} seed={} start={} end={}", h.name, h.seed, h.start, h.end);
        for r in &self.records {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceParseError> {
        let err = |line: usize, message: &str| TraceParseError { line, message: message.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty trace"))?;
        let fields: Vec<(&str, &str)> =
            head.strip_prefix("#trace ").ok_or_else(|| err(1, "missing header"))?.split(' ').filter_map(|kv| kv.split_once('=')).collect();
        let get = |k: &str| fields.iter().find(|(key, _)| *key == k).map(|(_, v)| *v).ok_or_else(|| err(1, &format!("header lacks {k}")));
        let header = TraceHeader {
            name: get("name")?.to_string(),
            seed: get("seed")?.parse().map_err(|_| err(1, "bad seed"))?,
            start: get("start")?.parse().map_err(|_| err(1, "bad start"))?,
            end: get("end")?.parse().map_err(|_| err(1, "bad end"))?,
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (tag, rest) = line.split_once(';').ok_or_else(|| err(n, "missing record tag"))?;
            let rec = match tag {
                "D" => TraceRecord::Dispatch(rest.parse().map_err(|e: crate::wire::log::LogParseError| err(n, &e.to_string()))?),
                "N" => TraceRecord::Log(rest.parse().map_err(|e: crate::wire::log::LogParseError| err(n, &e.to_string()))?),
                "V" => {
                    let f: Vec<&str> = rest.split(';').collect();
                    if f.len() != 4 {
                        return Err(err(n, "level record needs 4 fields"));
                    }
                    TraceRecord::Level(LevelSample {
                        timestamp: f[0].parse().map_err(|_| err(n, "bad timestamp"))?,
                        zone: f[1].to_string(),
                        level_dba: f[2].parse().map_err(|_| err(n, "bad level"))?,
                        voices: f[3].parse().map_err(|_| err(n, "bad voice count"))?,
                    })
                }
                other => return Err(err(n, &format!("unknown record tag {other:?}"))),
            };
            records.push(rec);
        }
        Ok(Trace { header, records })
    }

    pub fn dispatches(&self) -> impl Iterator<Item = &DispatchLine> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Dispatch(d) => Some(d),
            _ => None,
        })
    }

    pub fn logs(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Log(l) => Some(l),
            _ => None,
        })
    }

    pub fn levels(&self) -> impl Iterator<Item = &LevelSample> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Level(v) => Some(v),
            _ => None,
        })
    }

    /// The dispatch log alone, in its own line format.
    pub fn dispatch_log(&self) -> String {
        self.dispatches().map(|d| format!("{d}\n")).collect()
    }
}

/// Value of `key=` in a space-separated summary.
pub fn field<'a>(summary: &'a str, key: &str) -> Option<&'a str> {
    summary.split(' ').find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t0 = Timestamp::from_ymd_hms(2026, 1, 12, 0, 0, 0);
        let trace = Trace {
            header: TraceHeader { name: "x".into(), seed: 3, start: t0, end: t0 + 1000 },
            records: vec![
                TraceRecord::Dispatch(DispatchLine {
                    epoch: 1,
                    virtual_time: t0,
                    player: "p01".into(),
                    msg_type: "PLAY".into(),
                    msg_digest: "00ff".into(),
                }),
                TraceRecord::Log(LogRecord::new(t0 + 5, "p01", "voice_on", "00ff", "voice=1 src=crow_01")),
                TraceRecord::Level(LevelSample { timestamp: t0 + 5, zone: "bells_east".into(), level_dba: 61.25, voices: 1 }),
            ],
        };
        let text = trace.render();
        assert_eq!(Trace::parse(&text).unwrap(), trace);
        assert!(Trace::parse("V;1;2").is_err());
    }

    #[test]
    fn summary_fields() {
        assert_eq!(field("voice=3 src=crow_01", "src"), Some("crow_01"));
        assert_eq!(field("voice=3 src=crow_01", "sr"), None);
    }
}
