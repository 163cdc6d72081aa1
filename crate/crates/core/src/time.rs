//! Virtual timestamps.
//!
//! Every component of the system runs on virtual time: milliseconds since the
//! Unix epoch, interpreted as local wall-clock time of the care unit (no time
//! zone arithmetic). Calendar questions (date, hour of day) go through chrono.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

pub const MS_PER_SECOND: i64 = 1_000;
pub const MS_PER_MINUTE: i64 = 60 * MS_PER_SECOND;
pub const MS_PER_HOUR: i64 = 60 * MS_PER_MINUTE;
pub const MS_PER_DAY: i64 = 24 * MS_PER_HOUR;

/// A point in virtual time, millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        Timestamp(dt.and_utc().timestamp_millis())
    }

    pub fn from_ymd_hms(y: i32, m: u32, d: u32, hh: u32, mm: u32, ss: u32) -> Self {
        let dt = NaiveDate::from_ymd_opt(y, m, d)
            .and_then(|d| d.and_hms_opt(hh, mm, ss))
            .expect("valid calendar time");
        Self::from_datetime(dt)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub fn datetime(self) -> NaiveDateTime {
        chrono::DateTime::from_timestamp_millis(self.0)
            .expect("timestamp in chrono range")
            .naive_utc()
    }

    pub fn date(self) -> NaiveDate {
        self.datetime().date()
    }

    /// Milliseconds elapsed since local midnight.
    pub fn ms_of_day(self) -> i64 {
        self.0.rem_euclid(MS_PER_DAY)
    }

    pub fn minute_of_day(self) -> u32 {
        (self.ms_of_day() / MS_PER_MINUTE) as u32
    }

    pub fn hour(self) -> u32 {
        self.datetime().hour()
    }

    pub fn midnight(self) -> Timestamp {
        Timestamp(self.0 - self.ms_of_day())
    }

    pub fn weekday_index(self) -> u32 {
        self.date().weekday().num_days_from_monday()
    }

    /// Round up to the next multiple of `step_ms` (identity when aligned).
    pub fn ceil_to(self, step_ms: i64) -> Timestamp {
        let r = self.0.rem_euclid(step_ms);
        if r == 0 {
            self
        } else {
            Timestamp(self.0 + step_ms - r)
        }
    }

    pub fn floor_to(self, step_ms: i64) -> Timestamp {
        Timestamp(self.0 - self.0.rem_euclid(step_ms))
    }

    pub fn seconds_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, ms: i64) -> Timestamp {
        Timestamp(self.0 + ms)
    }
}

impl Sub<i64> for Timestamp {
    type Output = Timestamp;
    fn sub(self, ms: i64) -> Timestamp {
        Timestamp(self.0 - ms)
    }
}

impl Sub<Timestamp> for Timestamp {
    type Output = i64;
    fn sub(self, other: Timestamp) -> i64 {
        self.0 - other.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format("%Y-%m-%dT%H:%M:%S%.3f"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid timestamp {0:?}")]
pub struct TimestampParseError(String);

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    /// Accepts `YYYY-MM-DDTHH:MM[:SS[.fff]]` or `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp::from_datetime(dt));
            }
        }
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Timestamp::from_datetime(d.and_hms_opt(0, 0, 0).unwrap()));
        }
        Err(TimestampParseError(s.to_string()))
    }
}

/// Serde adapter writing timestamps as ISO local date-times.
pub mod iso {
    use super::Timestamp;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(t)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::Timestamp;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(t: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => s.collect_str(t),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            Option::<String>::deserialize(d)?.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_agree() {
        let t = Timestamp::from_ymd_hms(2026, 1, 15, 14, 59, 30) + 250;
        let s = t.to_string();
        assert_eq!(s, "2026-01-15T14:59:30.250");
        assert_eq!(s.parse::<Timestamp>().unwrap(), t);
        assert_eq!("2026-01-15".parse::<Timestamp>().unwrap(), t.midnight());
    }

    #[test]
    fn rounding() {
        let t = Timestamp(12_345);
        assert_eq!(t.ceil_to(1000), Timestamp(13_000));
        assert_eq!(t.floor_to(1000), Timestamp(12_000));
        assert_eq!(Timestamp(13_000).ceil_to(1000), Timestamp(13_000));
    }

    #[test]
    fn calendar_fields() {
        let t = Timestamp::from_ymd_hms(2026, 4, 1, 8, 30, 0);
        assert_eq!(t.hour(), 8);
        assert_eq!(t.minute_of_day(), 8 * 60 + 30);
        // 2026-04-01 is a Wednesday.
        assert_eq!(t.weekday_index(), 2);
    }
}
