//! Indexed sample database.
//!
//! A [`Catalog`] is loaded from a line-delimited manifest (see [`manifest`]),
//! validated once, and is immutable afterwards. Queries return records in id
//! order so every downstream choice is reproducible.

pub mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use manifest::{parse_manifest, render_manifest, ManifestError, Violation};

macro_rules! tag_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownTag;
            fn from_str(s: &str) -> Result<Self, UnknownTag> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(UnknownTag { kind: stringify!($name), value: other.to_string() }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} tag {value:?}")]
pub struct UnknownTag {
    pub kind: &'static str,
    pub value: String,
}

tag_enum!(
    /// Soundscape-ecology source class.
    Category { Geophony => "geophony", Biophony => "biophony", Anthropophony => "anthropophony", Landmark => "landmark" }
);

tag_enum!(
    /// Meteorological season, northern hemisphere.
    Season { Winter => "winter", Spring => "spring", Summer => "summer", Autumn => "autumn" }
);

tag_enum!(
    WeatherTag { Rain => "rain", Wind => "wind", Dry => "dry", Humid => "humid", Cold => "cold", Warm => "warm", Any => "any" }
);

tag_enum!(
    /// Partition of the day used for scheduling.
    HourBand { Night => "night", Dawn => "dawn", Day => "day", Dusk => "dusk" }
);

/// One catalog item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Relative path of the 16-bit mono PCM asset.
    pub path: String,
    pub duration_s: f64,
    pub category: Category,
    pub species: Option<String>,
    pub seasons: Vec<Season>,
    pub weather_tags: Vec<WeatherTag>,
    pub hour_bands: Vec<HourBand>,
    /// Zone ids or zone-class names the sample may be broadcast in.
    pub zone_affinity: Vec<String>,
    /// Calibrated playback level at unity gain.
    pub ref_level_dba: f64,
    pub era_tags: Vec<String>,
    pub emotion_tags: Vec<String>,
    pub menu_tags: Vec<String>,
    /// Content digest of the asset (hex SHA-256), when indexed.
    pub digest: Option<String>,
}

pub const MIN_DURATION_S: f64 = 1.0;
pub const MAX_DURATION_S: f64 = 120.0;
pub const MIN_REF_LEVEL_DBA: f64 = 20.0;
pub const MAX_REF_LEVEL_DBA: f64 = 90.0;

impl SampleRecord {
    /// All invariant violations of this record, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push("empty id".to_string());
        }
        if self.path.is_empty() {
            out.push("empty path".to_string());
        }
        if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&self.duration_s) {
            out.push(format!("duration {} s outside [{MIN_DURATION_S}, {MAX_DURATION_S}]", self.duration_s));
        }
        if !(MIN_REF_LEVEL_DBA..=MAX_REF_LEVEL_DBA).contains(&self.ref_level_dba) {
            out.push(format!(
                "reference level {} dBA outside [{MIN_REF_LEVEL_DBA}, {MAX_REF_LEVEL_DBA}]",
                self.ref_level_dba
            ));
        }
        if self.seasons.is_empty() {
            out.push("no seasons".to_string());
        }
        if self.hour_bands.is_empty() {
            out.push("no hour bands".to_string());
        }
        if self.zone_affinity.is_empty() {
            out.push("no zone affinity".to_string());
        }
        if self.weather_tags.is_empty() {
            out.push("no weather tags".to_string());
        }
        if self.species.is_some() && self.category != Category::Biophony {
            out.push("species set on a non-biophony record".to_string());
        }
        if let Some(d) = &self.digest {
            if d.len() != 64 || !d.bytes().all(|b| b.is_ascii_hexdigit()) {
                out.push("digest is not 64 hex characters".to_string());
            }
        }
        out
    }

    pub fn duration_ms(&self) -> i64 {
        (self.duration_s * 1000.0).round() as i64
    }

    /// True when the record may sound under the given weather conditions.
    pub fn suits_weather(&self, conditions: &[WeatherTag]) -> bool {
        self.weather_tags.contains(&WeatherTag::Any) || self.weather_tags.iter().any(|t| conditions.contains(t))
    }
}

/// Constraints over the record tag dimensions. `TagFilter::default()` matches everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagFilter {
    /// Record category must be one of these.
    pub categories: Option<Vec<Category>>,
    pub species: Option<String>,
    pub season: Option<Season>,
    pub hour_band: Option<HourBand>,
    /// Current weather conditions; a record matches when tagged `any` or
    /// sharing at least one condition.
    pub weather: Option<Vec<WeatherTag>>,
    /// Record affinity must contain at least one of these.
    pub zone_tags: Option<Vec<String>>,
    pub max_duration_s: Option<f64>,
    pub era: Option<String>,
    pub emotion: Option<String>,
}

impl TagFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn category(mut self, c: Category) -> Self {
        self.categories = Some(vec![c]);
        self
    }

    pub fn categories(mut self, cs: &[Category]) -> Self {
        self.categories = Some(cs.to_vec());
        self
    }

    pub fn species(mut self, s: impl Into<String>) -> Self {
        self.species = Some(s.into());
        self
    }

    pub fn season(mut self, s: Season) -> Self {
        self.season = Some(s);
        self
    }

    pub fn hour_band(mut self, b: HourBand) -> Self {
        self.hour_band = Some(b);
        self
    }

    pub fn weather(mut self, w: &[WeatherTag]) -> Self {
        self.weather = Some(w.to_vec());
        self
    }

    pub fn zone(mut self, z: impl Into<String>) -> Self {
        self.zone_tags.get_or_insert_with(Vec::new).push(z.into());
        self
    }

    pub fn max_duration(mut self, s: f64) -> Self {
        self.max_duration_s = Some(s);
        self
    }

    pub fn matches(&self, r: &SampleRecord) -> bool {
        if let Some(cs) = &self.categories {
            if !cs.contains(&r.category) {
                return false;
            }
        }
        if let Some(sp) = &self.species {
            if r.species.as_deref() != Some(sp.as_str()) {
                return false;
            }
        }
        if let Some(s) = self.season {
            if !r.seasons.contains(&s) {
                return false;
            }
        }
        if let Some(b) = self.hour_band {
            if !r.hour_bands.contains(&b) {
                return false;
            }
        }
        if let Some(w) = &self.weather {
            if !r.suits_weather(w) {
                return false;
            }
        }
        if let Some(zs) = &self.zone_tags {
            if !zs.iter().any(|z| r.zone_affinity.contains(z)) {
                return false;
            }
        }
        if let Some(max) = self.max_duration_s {
            if r.duration_s > max {
                return false;
            }
        }
        if let Some(e) = &self.era {
            if !r.era_tags.contains(e) {
                return false;
            }
        }
        if let Some(e) = &self.emotion {
            if !r.emotion_tags.contains(e) {
                return false;
            }
        }
        true
    }
}

/// Validated, immutable sample index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    records: BTreeMap<String, SampleRecord>,
    manifest_hash: String,
}

impl Catalog {
    /// Build from records, enforcing id uniqueness and record invariants.
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self, ManifestError> {
        let lines: Vec<(usize, SampleRecord)> = records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        manifest::validate(lines)
    }

    pub(crate) fn from_validated(records: BTreeMap<String, SampleRecord>) -> Self {
        let manifest_hash = content_hash(records.values().map(|r| (r.id.as_str(), r.digest.as_deref().unwrap_or(""))));
        Catalog { records, manifest_hash }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.get(id)
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.values()
    }

    /// Digest over the sorted `(id, asset digest)` pairs; independent of
    /// manifest line order.
    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    /// Exactly the records matching `filter`, id-ascending.
    pub fn query(&self, filter: &TagFilter) -> Vec<&SampleRecord> {
        self.records.values().filter(|r| filter.matches(r)).collect()
    }

    pub fn species(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.records.values().filter_map(|r| r.species.as_deref()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Hash over sorted `(id, digest)` pairs. Shared by catalogs and player
/// inventories so the two can be compared directly.
pub fn content_hash<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(pairs: I) -> String {
    let mut v: Vec<(&str, &str)> = pairs.into_iter().collect();
    v.sort_unstable();
    let mut h = Sha256::new();
    for (id, digest) in v {
        h.update(id.as_bytes());
        h.update(b"\t");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Catalog, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io(path.display().to_string(), e.to_string()))?;
    parse_manifest(&text)
}

pub fn save_manifest(catalog: &Catalog, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    std::fs::write(path, render_manifest(catalog)).map_err(|e| ManifestError::Io(path.display().to_string(), e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PickError {
    #[error("no candidates to pick from")]
    Empty,
    #[error("{candidates} candidates but {weights} weights")]
    LengthMismatch { candidates: usize, weights: usize },
    #[error("weights must be finite and non-negative with at least one positive")]
    NoMass,
}

/// Draw one candidate with probability `w_i / Σw`.
pub fn weighted_pick<'a, T, R: Rng + ?Sized>(candidates: &'a [T], weights: &[f64], rng: &mut R) -> Result<&'a T, PickError> {
    weighted_index(weights, rng).and_then(|i| {
        if candidates.is_empty() {
            Err(PickError::Empty)
        } else if candidates.len() != weights.len() {
            Err(PickError::LengthMismatch { candidates: candidates.len(), weights: weights.len() })
        } else {
            Ok(&candidates[i])
        }
    })
}

pub fn weighted_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize, PickError> {
    if weights.is_empty() {
        return Err(PickError::Empty);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(PickError::NoMass);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(PickError::NoMass);
    }
    let mut x = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        last_positive = i;
        if x < *w {
            return Ok(i);
        }
        x -= w;
    }
    Ok(last_positive)
}
