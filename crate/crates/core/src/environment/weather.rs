use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Season, UnknownTag, WeatherTag};
use crate::time::Timestamp;

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precipitation {
    None,
    Drizzle,
    Rain,
    Storm,
}

impl Precipitation {
    pub const ALL: &'static [Precipitation] =
        &[Precipitation::None, Precipitation::Drizzle, Precipitation::Rain, Precipitation::Storm];

    pub fn as_str(self) -> &'static str {
        match self {
            Precipitation::None => "none",
            Precipitation::Drizzle => "drizzle",
            Precipitation::Rain => "rain",
            Precipitation::Storm => "storm",
        }
    }
}

impl fmt::Display for Precipitation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precipitation {
    type Err = UnknownTag;
    fn from_str(s: &str) -> Result<Self, UnknownTag> {
        Precipitation::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownTag { kind: "Precipitation", value: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherReading {
    pub timestamp: Timestamp,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub precipitation: Precipitation,
    pub wind_mps: f64,
}

/// Wind speed above which `wind`-tagged samples become eligible.
pub const WINDY_MPS: f64 = 6.0;

impl WeatherReading {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=100.0).contains(&self.humidity_pct) {
            return Err(EnvError::Invalid(format!("humidity {} outside [0,100]", self.humidity_pct)));
        }
        if !self.wind_mps.is_finite() || self.wind_mps < 0.0 {
            return Err(EnvError::Invalid(format!("wind {} must be >= 0", self.wind_mps)));
        }
        if !self.temperature_c.is_finite() {
            return Err(EnvError::Invalid("temperature not finite".into()));
        }
        Ok(())
    }

    /// Catalog weather tags describing this reading.
    pub fn conditions(&self) -> Vec<WeatherTag> {
        let mut out = Vec::new();
        match self.precipitation {
            Precipitation::None => out.push(WeatherTag::Dry),
            _ => out.push(WeatherTag::Rain),
        }
        if self.wind_mps >= WINDY_MPS {
            out.push(WeatherTag::Wind);
        }
        if self.humidity_pct >= 70.0 {
            out.push(WeatherTag::Humid);
        }
        if self.temperature_c <= 5.0 {
            out.push(WeatherTag::Cold);
        } else if self.temperature_c >= 22.0 {
            out.push(WeatherTag::Warm);
        }
        out
    }

    /// `iso_timestamp;temp_c;humidity;precip;wind_mps`
    pub fn to_line(&self) -> String {
        format!(
            "{};{};{};{};{}",
            self.timestamp.datetime().format("%Y-%m-%dT%H:%M:%S"),
            self.temperature_c,
            self.humidity_pct,
            self.precipitation,
            self.wind_mps
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(';').map(str::trim).collect();
        if f.len() != 5 {
            return Err(format!("expected 5 fields, found {}", f.len()));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| format!("bad {what} {s:?}"));
        let r = WeatherReading {
            timestamp: f[0].parse().map_err(|e: crate::time::TimestampParseError| e.to_string())?,
            temperature_c: num(f[1], "temperature")?,
            humidity_pct: num(f[2], "humidity")?,
            precipitation: f[3].parse().map_err(|e: UnknownTag| e.to_string())?,
            wind_mps: num(f[4], "wind")?,
        };
        r.validate().map_err(|e| e.to_string())?;
        Ok(r)
    }
}

/// Time-ordered scripted weather feed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeatherTrace {
    readings: Vec<WeatherReading>,
}

impl WeatherTrace {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut readings: Vec<WeatherReading> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let r = WeatherReading::parse_line(line).map_err(|m| EnvError::Parse { line: i + 1, message: m })?;
            if let Some(prev) = readings.last() {
                if r.timestamp < prev.timestamp {
                    return Err(EnvError::Parse { line: i + 1, message: "readings out of order".into() });
                }
            }
            readings.push(r);
        }
        Ok(WeatherTrace { readings })
    }

    pub fn from_readings(mut readings: Vec<WeatherReading>) -> Self {
        readings.sort_by_key(|r| r.timestamp);
        WeatherTrace { readings }
    }

    pub fn readings(&self) -> &[WeatherReading] {
        &self.readings
    }

    /// Readings with timestamp in `(after, until]`.
    pub fn between(&self, after: Option<Timestamp>, until: Timestamp) -> impl Iterator<Item = &WeatherReading> {
        self.readings.iter().filter(move |r| after.is_none_or(|a| r.timestamp > a) && r.timestamp <= until)
    }

    pub fn render(&self) -> String {
        self.readings.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// Weather assumed when the feed has gone stale.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalDefaults {
    table: BTreeMap<Season, (f64, f64, Precipitation, f64)>,
}

impl SeasonalDefaults {
    /// Lines `season;temp_c;humidity;precip;wind_mps`; all four seasons required.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut table = BTreeMap::new();
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
            let season: Season = f[0].parse().map_err(|e: UnknownTag| err(e.to_string()))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            let precip: Precipitation = f[3].parse().map_err(|e: UnknownTag| err(e.to_string()))?;
            table.insert(season, (num(f[1])?, num(f[2])?, precip, num(f[4])?));
        }
        for s in Season::ALL {
            if !table.contains_key(s) {
                return Err(EnvError::Invalid(format!("no default weather for {s}")));
            }
        }
        Ok(SeasonalDefaults { table })
    }

    pub fn reading(&self, season: Season, at: Timestamp) -> WeatherReading {
        let (t, h, p, w) = self.table[&season];
        WeatherReading { timestamp: at, temperature_c: t, humidity_pct: h, precipitation: p, wind_mps: w }
    }
}

impl Default for SeasonalDefaults {
    fn default() -> Self {
        SeasonalDefaults::parse(crate::fixtures::WEATHER_DEFAULTS).expect("bundled weather defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let line = "2026-01-05T06:00:00;3.5;85;drizzle;4";
        let r = WeatherReading::parse_line(line).unwrap();
        assert_eq!(r.precipitation, Precipitation::Drizzle);
        assert_eq!(r.to_line(), line);
    }

    #[test]
    fn rejects_bad_readings() {
        assert!(WeatherReading::parse_line("2026-01-05T06:00:00;3.5;120;none;4").is_err());
        assert!(WeatherReading::parse_line("2026-01-05T06:00:00;3.5;50;hail;4").is_err());
        assert!(WeatherReading::parse_line("2026-01-05T06:00:00;3.5;50;none;-1").is_err());
    }

    #[test]
    fn trace_must_be_ordered() {
        let text = "2026-01-05T06:00:00;3;80;none;2\n2026-01-05T05:00:00;3;80;none;2\n";
        assert!(matches!(WeatherTrace::parse(text), Err(EnvError::Parse { line: 2, .. })));
    }

    #[test]
    fn conditions_from_reading() {
        let r = WeatherReading::parse_line("2026-01-05T06:00:00;2;90;rain;8").unwrap();
        assert_eq!(r.conditions(), vec![WeatherTag::Rain, WeatherTag::Wind, WeatherTag::Humid, WeatherTag::Cold]);
    }

    #[test]
    fn bundled_defaults_cover_seasons() {
        let d = SeasonalDefaults::default();
        let w = d.reading(Season::Winter, Timestamp(0));
        assert_eq!((w.temperature_c, w.humidity_pct, w.precipitation, w.wind_mps), (3.0, 85.0, Precipitation::None, 4.0));
    }
}
