//! Broadcast zones and the topology file.
//!
//! ```text
//! unit=alzheimer_unit;residents=14
//! zone=patio;class=landmark_point;players=p03;voices=4;floor=30;min=40;active=60;peak=70;features=waterfall;neighbors=dining_a;pos=9,6
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Category, UnknownTag};
use crate::level::HARDWARE_CAP_DBA;

pub const MAX_VOICES_PER_ZONE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneClass {
    /// Bells and waterfall points; may also carry geophony and biophony.
    LandmarkPoint,
    /// Geophony, biophony and occasional human activity from outside.
    OutdoorPoint,
    /// Human activity, mostly from inside.
    HumanActivityPoint,
    BedroomPoint,
}

impl ZoneClass {
    pub const ALL: &'static [ZoneClass] =
        &[ZoneClass::LandmarkPoint, ZoneClass::OutdoorPoint, ZoneClass::HumanActivityPoint, ZoneClass::BedroomPoint];

    pub fn as_str(self) -> &'static str {
        match self {
            ZoneClass::LandmarkPoint => "landmark_point",
            ZoneClass::OutdoorPoint => "outdoor_point",
            ZoneClass::HumanActivityPoint => "human_activity_point",
            ZoneClass::BedroomPoint => "bedroom_point",
        }
    }

    /// Sample categories an ambient sequence may draw from in this class.
    pub fn allowed_categories(self) -> &'static [Category] {
        match self {
            ZoneClass::LandmarkPoint => &[Category::Geophony, Category::Biophony, Category::Landmark],
            ZoneClass::OutdoorPoint => &[Category::Geophony, Category::Biophony, Category::Anthropophony],
            ZoneClass::HumanActivityPoint => &[Category::Anthropophony],
            ZoneClass::BedroomPoint => &[Category::Geophony, Category::Biophony, Category::Anthropophony],
        }
    }

    pub fn is_common_space(self) -> bool {
        self != ZoneClass::BedroomPoint
    }
}

impl fmt::Display for ZoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZoneClass {
    type Err = UnknownTag;
    fn from_str(s: &str) -> Result<Self, UnknownTag> {
        ZoneClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownTag { kind: "ZoneClass", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Bells,
    Waterfall,
    Pendulum,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Bells => "bells",
            Feature::Waterfall => "waterfall",
            Feature::Pendulum => "pendulum",
        }
    }
}

impl FromStr for Feature {
    type Err = UnknownTag;
    fn from_str(s: &str) -> Result<Self, UnknownTag> {
        match s {
            "bells" => Ok(Feature::Bells),
            "waterfall" => Ok(Feature::Waterfall),
            "pendulum" => Ok(Feature::Pendulum),
            _ => Err(UnknownTag { kind: "Feature", value: s.to_string() }),
        }
    }
}

/// dBA budget of a zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBudget {
    pub silence_floor_dba: f64,
    /// Level continuous sources must never fall below.
    pub min_dba: Option<f64>,
    pub active_dba: f64,
    pub peak_dba: f64,
}

impl LevelBudget {
    pub fn validate(&self) -> Result<(), String> {
        let min = self.min_dba.unwrap_or(self.silence_floor_dba);
        let ordered = self.silence_floor_dba <= min
            && min <= self.active_dba
            && self.active_dba <= self.peak_dba
            && self.peak_dba <= HARDWARE_CAP_DBA;
        if ordered {
            Ok(())
        } else {
            Err(format!(
                "budget must satisfy floor <= min <= active <= peak <= {HARDWARE_CAP_DBA}: {}/{:?}/{}/{}",
                self.silence_floor_dba, self.min_dba, self.active_dba, self.peak_dba
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneConfig {
    pub zone_id: String,
    pub zone_class: ZoneClass,
    pub player_ids: Vec<String>,
    pub max_voices: u8,
    pub budget: LevelBudget,
    pub neighbor_zones: Vec<String>,
    pub features: Vec<Feature>,
    /// Bedroom night window `[start, end)` in minutes after midnight, may wrap.
    pub bedtime: Option<(u32, u32)>,
    /// Floor-map position.
    pub position: Option<(f64, f64)>,
}

impl ZoneConfig {
    pub fn has(&self, f: Feature) -> bool {
        self.features.contains(&f)
    }

    pub fn is_bedroom(&self) -> bool {
        self.zone_class == ZoneClass::BedroomPoint
    }

    /// Voices held by landmark tracks (bell synth, waterfall synth, one
    /// pendulum voice per bedroom player).
    pub fn reserved_voices(&self) -> u8 {
        let mut n = 0;
        if self.has(Feature::Bells) {
            n += 1;
        }
        if self.has(Feature::Waterfall) {
            n += 1;
        }
        if self.has(Feature::Pendulum) {
            n += self.player_ids.len() as u8;
        }
        n
    }

    /// Simultaneous ambient events allowed next to the landmark tracks.
    pub fn ambient_voice_limit(&self) -> u8 {
        self.max_voices.saturating_sub(self.reserved_voices()).max(1)
    }

    pub fn in_bedtime(&self, minute_of_day: u32) -> bool {
        match self.bedtime {
            None => false,
            Some((a, b)) if a <= b => (a..b).contains(&minute_of_day),
            Some((a, b)) => minute_of_day >= a || minute_of_day < b,
        }
    }

    /// Affinity tags under which catalog records may target this zone.
    pub fn affinity_tags(&self) -> Vec<String> {
        vec![self.zone_id.clone(), self.zone_class.as_str().to_string()]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.zone_id.is_empty() {
            return Err("empty zone id".into());
        }
        if self.player_ids.is_empty() {
            return Err(format!("{}: no players", self.zone_id));
        }
        if self.is_bedroom() && self.player_ids.len() != 2 {
            return Err(format!("{}: bedrooms need exactly 2 players, found {}", self.zone_id, self.player_ids.len()));
        }
        if self.max_voices == 0 || self.max_voices > MAX_VOICES_PER_ZONE {
            return Err(format!("{}: max_voices {} outside [1, {MAX_VOICES_PER_ZONE}]", self.zone_id, self.max_voices));
        }
        if self.reserved_voices() >= self.max_voices {
            return Err(format!("{}: landmark tracks leave no voice for ambience", self.zone_id));
        }
        if self.has(Feature::Pendulum) && !self.is_bedroom() {
            return Err(format!("{}: pendulum only in bedrooms", self.zone_id));
        }
        self.budget.validate().map_err(|e| format!("{}: {e}", self.zone_id))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub unit: String,
    pub residents: u32,
    pub zones: Vec<ZoneConfig>,
}

fn hhmm(s: &str) -> Result<u32, String> {
    let (h, m) = s.split_once(':').ok_or_else(|| format!("bad time {s:?}"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad time {s:?}"))?;
    let m: u32 = m.parse().map_err(|_| format!("bad time {s:?}"))?;
    if h > 23 || m > 59 {
        return Err(format!("bad time {s:?}"));
    }
    Ok(h * 60 + m)
}

fn parse_zone(fields: &[(&str, &str)]) -> Result<ZoneConfig, String> {
    let get = |k: &str| fields.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
    let req = |k: &str| get(k).ok_or_else(|| format!("missing key {k:?}"));
    let num = |k: &str| -> Result<f64, String> { req(k)?.parse().map_err(|_| format!("{k} is not a number")) };
    let list = |k: &str| -> Vec<String> {
        get(k).map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()).unwrap_or_default()
    };
    for (k, _) in fields {
        if !["zone", "class", "players", "voices", "floor", "min", "active", "peak", "features", "neighbors", "bedtime", "pos"]
            .contains(k)
        {
            return Err(format!("unknown key {k:?}"));
        }
    }
    let features = list("features")
        .iter()
        .map(|f| f.parse::<Feature>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let bedtime = match get("bedtime") {
        None => None,
        Some(v) => {
            let (a, b) = v.split_once('-').ok_or_else(|| format!("bad bedtime {v:?}"))?;
            Some((hhmm(a)?, hhmm(b)?))
        }
    };
    let position = match get("pos") {
        None => None,
        Some(v) => {
            let (x, y) = v.split_once(',').ok_or_else(|| format!("bad pos {v:?}"))?;
            Some((x.trim().parse().map_err(|_| "bad pos")?, y.trim().parse().map_err(|_| "bad pos")?))
        }
    };
    Ok(ZoneConfig {
        zone_id: req("zone")?.to_string(),
        zone_class: req("class")?.parse().map_err(|e: UnknownTag| e.to_string())?,
        player_ids: list("players"),
        max_voices: req("voices")?.parse().map_err(|_| "voices is not an integer")?,
        budget: LevelBudget {
            silence_floor_dba: num("floor")?,
            min_dba: get("min").map(|v| v.parse().map_err(|_| "min is not a number")).transpose()?,
            active_dba: num("active")?,
            peak_dba: num("peak")?,
        },
        neighbor_zones: list("neighbors"),
        features,
        bedtime,
        position,
    })
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut unit = String::from("unit");
        let mut residents = 0;
        let mut zones = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| TopologyError::Parse { line: i + 1, message: m };
            let mut fields = Vec::new();
            for part in line.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let (k, v) = part.split_once('=').ok_or_else(|| err(format!("field {part:?} is not key=value")))?;
                fields.push((k.trim(), v.trim()));
            }
            match fields.first().map(|(k, _)| *k) {
                Some("unit") => {
                    for (k, v) in &fields {
                        match *k {
                            "unit" => unit = v.to_string(),
                            "residents" => residents = v.parse().map_err(|_| err("residents is not an integer".into()))?,
                            other => return Err(err(format!("unknown key {other:?}"))),
                        }
                    }
                }
                Some("zone") => zones.push(parse_zone(&fields).map_err(err)?),
                _ => return Err(err("line must start with zone= or unit=".into())),
            }
        }
        let t = Topology { unit, residents, zones };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| TopologyError::Io(p.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn bundled() -> Self {
        Self::parse(crate::fixtures::TOPOLOGY).expect("bundled topology")
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut ids = BTreeSet::new();
        let mut players = BTreeSet::new();
        for z in &self.zones {
            z.validate().map_err(TopologyError::Invalid)?;
            if !ids.insert(z.zone_id.as_str()) {
                return Err(TopologyError::Invalid(format!("duplicate zone id {:?}", z.zone_id)));
            }
            for p in &z.player_ids {
                if !players.insert(p.as_str()) {
                    return Err(TopologyError::Invalid(format!("player {p:?} assigned twice")));
                }
            }
        }
        for z in &self.zones {
            for n in &z.neighbor_zones {
                if !ids.contains(n.as_str()) {
                    return Err(TopologyError::Invalid(format!("{}: unknown neighbor {n:?}", z.zone_id)));
                }
            }
        }
        Ok(())
    }

    pub fn zone(&self, id: &str) -> Option<&ZoneConfig> {
        self.zones.iter().find(|z| z.zone_id == id)
    }

    pub fn zone_of_player(&self, player: &str) -> Option<&ZoneConfig> {
        self.zones.iter().find(|z| z.player_ids.iter().any(|p| p == player))
    }

    pub fn player_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.zones.iter().flat_map(|z| z.player_ids.iter().cloned()).collect();
        v.sort();
        v
    }

    pub fn are_neighbors(&self, a: &str, b: &str) -> bool {
        let adj = |x: &str, y: &str| self.zone(x).is_some_and(|z| z.neighbor_zones.iter().any(|n| n == y));
        adj(a, b) || adj(b, a)
    }
}
