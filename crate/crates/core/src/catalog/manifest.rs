//! Manifest text format.
//!
//! One record per line, `key=value` pairs separated by `;`, list values
//! comma-separated:
//!
//! ```text
//! id=crow_03;path=bio/crow_03.wav;dur=12.5;cat=biophony;species=crow;seasons=winter,autumn;weather=any;hours=day,dawn;zones=north_room,garden;lvl=62
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. List order is kept
//! as written so a canonical file survives load and save unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Catalog, SampleRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManifestError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id {id:?} (lines {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("{} invalid record(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: usize,
    pub id: String,
    pub reasons: Vec<String>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {} ({}): {}", self.line, self.id, self.reasons.join(", "))
    }
}

const KNOWN_KEYS: &[&str] =
    &["id", "path", "dur", "cat", "species", "seasons", "weather", "hours", "zones", "lvl", "era", "emo", "menu", "sha"];

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for item in v.split(',') {
        out.push(item.trim().parse::<T>().map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<SampleRecord, String> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in line.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part.split_once('=').ok_or_else(|| format!("field {part:?} is not key=value"))?;
        let k = k.trim();
        if !KNOWN_KEYS.contains(&k) {
            return Err(format!("unknown key {k:?}"));
        }
        if fields.insert(k, v.trim()).is_some() {
            return Err(format!("key {k:?} repeated"));
        }
    }
    let req = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing key {k:?}"));
    let num = |k: &str| -> Result<f64, String> {
        let v = req(k)?;
        let x: f64 = v.parse().map_err(|_| format!("{k}={v:?} is not a number"))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("{k}={v:?} is not finite"))
        }
    };
    let strings = |k: &str| -> Vec<String> {
        fields
            .get(k)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    };
    Ok(SampleRecord {
        id: req("id")?.to_string(),
        path: req("path")?.to_string(),
        duration_s: num("dur")?,
        category: req("cat")?.parse().map_err(|e: super::UnknownTag| e.to_string())?,
        species: fields.get("species").filter(|s| !s.is_empty()).map(|s| s.to_string()),
        seasons: list(req("seasons")?)?,
        weather_tags: list(fields.get("weather").copied().unwrap_or("any"))?,
        hour_bands: list(req("hours")?)?,
        zone_affinity: strings("zones"),
        ref_level_dba: num("lvl")?,
        era_tags: strings("era"),
        emotion_tags: strings("emo"),
        menu_tags: strings("menu"),
        digest: fields.get("sha").filter(|s| !s.is_empty()).map(|s| s.to_ascii_lowercase()),
    })
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, x)| v[..i].contains(x))
}

pub(super) fn validate(lines: Vec<(usize, SampleRecord)>) -> Result<Catalog, ManifestError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut records = BTreeMap::new();
    for (line, rec) in lines {
        if let Some(first) = seen.get(&rec.id) {
            return Err(ManifestError::DuplicateId { id: rec.id, first: *first, second: line });
        }
        seen.insert(rec.id.clone(), line);
        let mut reasons = rec.violations();
        if has_duplicates(&rec.seasons)
            || has_duplicates(&rec.hour_bands)
            || has_duplicates(&rec.weather_tags)
            || has_duplicates(&rec.zone_affinity)
        {
            reasons.push("repeated tag in a list".to_string());
        }
        if !reasons.is_empty() {
            violations.push(Violation { line, id: rec.id.clone(), reasons });
        }
        records.insert(rec.id.clone(), rec);
    }
    if violations.is_empty() {
        Ok(Catalog::from_validated(records))
    } else {
        Err(ManifestError::Validation(violations))
    }
}

/// Parse and validate manifest text.
pub fn parse_manifest(text: &str) -> Result<Catalog, ManifestError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = parse_line(line).map_err(|message| ManifestError::Parse { line: i + 1, message })?;
        lines.push((i + 1, rec));
    }
    validate(lines)
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical single-line form of one record.
pub fn render_record(r: &SampleRecord) -> String {
    let mut s = String::new();
    write!(s, "id={};path={};dur={};cat={}", r.id, r.path, r.duration_s, r.category).unwrap();
    if let Some(sp) = &r.species {
        write!(s, ";species={sp}").unwrap();
    }
    write!(
        s,
        ";seasons={};weather={};hours={};zones={};lvl={}",
        join(&r.seasons),
        join(&r.weather_tags),
        join(&r.hour_bands),
        r.zone_affinity.join(","),
        r.ref_level_dba
    )
    .unwrap();
    for (key, v) in [("era", &r.era_tags), ("emo", &r.emotion_tags), ("menu", &r.menu_tags)] {
        if !v.is_empty() {
            write!(s, ";{key}={}", v.join(",")).unwrap();
        }
    }
    if let Some(d) = &r.digest {
        write!(s, ";sha={d}").unwrap();
    }
    s
}

/// Manifest text, one canonical line per record in id order.
pub fn render_manifest(c: &Catalog) -> String {
    let mut out = String::new();
    for r in c.records() {
        out.push_str(&render_record(r));
        out.push('\n');
    }
    out
}
