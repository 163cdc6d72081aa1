use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{HourBand, Season, UnknownTag};

use super::weather::Precipitation;
use super::EnvError;

pub type EthologyKey = (Season, HourBand, Precipitation);

/// Per-species activity weights keyed by (season, hour band, precipitation).
///
/// Text form, one assignment per line, `*` expanding over a dimension and
/// later lines overriding earlier ones:
///
/// ```text
/// crow;winter;*;*;3.0
/// crow;winter;night;*;0
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EthologyTable {
    species: BTreeMap<String, BTreeMap<String, f64>>,
}

fn key_string((s, b, p): EthologyKey) -> String {
    format!("{s}/{b}/{p}")
}

fn expand<T: Copy + std::str::FromStr<Err = UnknownTag>>(s: &str, all: &[T]) -> Result<Vec<T>, String> {
    if s == "*" {
        Ok(all.to_vec())
    } else {
        s.parse::<T>().map(|v| vec![v]).map_err(|e| e.to_string())
    }
}

impl EthologyTable {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut t = EthologyTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| EnvError::Parse { line: i + 1, message: m };
            let f: Vec<&str> = line.split(';').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let w: f64 = f[4].parse().map_err(|_| err(format!("bad weight {:?}", f[4])))?;
            if !w.is_finite() || w < 0.0 {
                return Err(err(format!("weight {w} must be finite and >= 0")));
            }
            for s in expand(f[1], Season::ALL).map_err(err)? {
                for b in expand(f[2], HourBand::ALL).map_err(err)? {
                    for p in expand(f[3], Precipitation::ALL).map_err(err)? {
                        t.set(f[0], (s, b, p), w);
                    }
                }
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn set(&mut self, species: &str, key: EthologyKey, weight: f64) {
        self.species.entry(species.to_string()).or_default().insert(key_string(key), weight);
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for (sp, m) in &self.species {
            if m.values().any(|w| *w < 0.0) {
                return Err(EnvError::Invalid(format!("negative weight for {sp}")));
            }
            if !m.values().any(|w| *w > 0.0) {
                return Err(EnvError::Invalid(format!("species {sp} has no positive weight")));
            }
        }
        Ok(())
    }

    pub fn species(&self) -> impl Iterator<Item = &str> {
        self.species.keys().map(String::as_str)
    }

    pub fn contains(&self, species: &str) -> bool {
        self.species.contains_key(species)
    }

    /// Weight for `species` under `key`; unknown species or absent keys give 0.
    pub fn weight(&self, species: &str, key: EthologyKey) -> f64 {
        self.species.get(species).and_then(|m| m.get(&key_string(key))).copied().unwrap_or(0.0)
    }
}

impl EthologyTable {
    pub fn bundled() -> Self {
        EthologyTable::parse(crate::fixtures::ETHOLOGY).expect("bundled ethology table")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcard_then_override() {
        let t = EthologyTable::parse("owl;*;*;*;0.1\nowl;*;night;*;2\n").unwrap();
        assert_eq!(t.weight("owl", (Season::Spring, HourBand::Night, Precipitation::Rain)), 2.0);
        assert_eq!(t.weight("owl", (Season::Spring, HourBand::Day, Precipitation::Rain)), 0.1);
        assert_eq!(t.weight("bat", (Season::Spring, HourBand::Day, Precipitation::Rain)), 0.0);
    }

    #[test]
    fn absent_key_is_zero() {
        let t = EthologyTable::parse("lark;spring;day;none;1\n").unwrap();
        assert_eq!(t.weight("lark", (Season::Spring, HourBand::Day, Precipitation::None)), 1.0);
        assert_eq!(t.weight("lark", (Season::Winter, HourBand::Day, Precipitation::None)), 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(EthologyTable::parse("lark;spring;day;none;-1\n").is_err());
        assert!(EthologyTable::parse("lark;spring;day;none;0\n").is_err());
        assert!(EthologyTable::parse("lark;spring;noon;none;1\n").is_err());
    }

    #[test]
    fn bundled_table_never_structurally_empty_by_dry_weather() {
        let t = EthologyTable::bundled();
        for s in Season::ALL {
            for b in HourBand::ALL {
                let sum: f64 = t.species().map(|sp| t.weight(sp, (*s, *b, Precipitation::None))).sum();
                assert!(sum > 0.0, "{s}/{b}");
            }
        }
    }

    #[test]
    fn bundled_table_orders_crows_and_tits_by_season() {
        let t = EthologyTable::bundled();
        let k = |s| (s, HourBand::Day, Precipitation::None);
        assert!(t.weight("crow", k(Season::Winter)) > t.weight("tit", k(Season::Winter)));
        assert!(t.weight("tit", k(Season::Spring)) > t.weight("crow", k(Season::Spring)));
    }
}
