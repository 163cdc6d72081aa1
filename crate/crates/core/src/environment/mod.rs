//! World model the generator maps from: virtual clock, season and hour band,
//! weather, care-activity rhythm, species activity and room consent.

pub mod clock;
pub mod ethology;
pub mod menu;
pub mod schedule;
pub mod weather;

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};

use crate::catalog::{HourBand, Season};
use crate::time::{Timestamp, MS_PER_HOUR, MS_PER_MINUTE};

pub use clock::{ClockError, VirtualClock};
pub use ethology::EthologyTable;
pub use menu::WeeklyMenu;
pub use schedule::{ActivityLevel, ActivityWindow, CareActivitySchedule};
pub use weather::{Precipitation, SeasonalDefaults, WeatherReading, WeatherTrace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("out-of-order weather reading at {got}, current reading is from {current}")]
    StaleReading { got: Timestamp, current: Timestamp },
}

/// Readings older than this fall back to the seasonal defaults.
pub const WEATHER_STALE_AFTER_MS: i64 = 2 * MS_PER_HOUR;

/// Meteorological season, northern hemisphere.
pub fn season_of(date: NaiveDate) -> Season {
    match date.month() {
        12 | 1 | 2 => Season::Winter,
        3..=5 => Season::Spring,
        6..=8 => Season::Summer,
        _ => Season::Autumn,
    }
}

/// Fixed sunrise/sunset per season, minutes after midnight.
pub fn sun_table(season: Season) -> (u32, u32) {
    match season {
        Season::Winter => (8 * 60, 17 * 60),
        Season::Spring => (7 * 60, 20 * 60),
        Season::Summer => (6 * 60, 21 * 60 + 30),
        Season::Autumn => (7 * 60 + 30, 19 * 60),
    }
}

/// Dawn and dusk are the two hours centred on sunrise and sunset.
pub fn hour_band_of(minute_of_day: u32, date: NaiveDate) -> HourBand {
    let (rise, set) = sun_table(season_of(date));
    let m = minute_of_day as i64;
    let (rise, set) = (rise as i64, set as i64);
    if (rise - 60..rise + 60).contains(&m) {
        HourBand::Dawn
    } else if (set - 60..set + 60).contains(&m) {
        HourBand::Dusk
    } else if m >= rise + 60 && m < set - 60 {
        HourBand::Day
    } else {
        HourBand::Night
    }
}

pub fn hour_band_at(t: Timestamp) -> HourBand {
    hour_band_of(t.minute_of_day(), t.date())
}

/// Snapshot of the world as seen by the composer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentState {
    pub clock: VirtualClock,
    pub weather: Option<WeatherReading>,
    pub defaults: SeasonalDefaults,
    pub schedule: CareActivitySchedule,
    pub ethology: EthologyTable,
    pub menu: WeeklyMenu,
    /// Opt-in per room; absent means no consent.
    pub room_consent: BTreeMap<String, bool>,
}

impl EnvironmentState {
    pub fn new(clock: VirtualClock, schedule: CareActivitySchedule, ethology: EthologyTable) -> Self {
        EnvironmentState {
            clock,
            weather: None,
            defaults: SeasonalDefaults::default(),
            schedule,
            ethology,
            menu: WeeklyMenu::bundled(),
            room_consent: BTreeMap::new(),
        }
    }

    /// Bundled schedule and ethology, clock at `start`, real-time pace.
    pub fn bundled(start: Timestamp) -> Self {
        Self::new(
            VirtualClock::new(start, 1.0).expect("unit acceleration"),
            CareActivitySchedule::default(),
            EthologyTable::bundled(),
        )
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn season(&self) -> Season {
        season_of(self.now().date())
    }

    pub fn hour_band(&self) -> HourBand {
        hour_band_at(self.now())
    }

    /// Replace the current reading. Readings older than the current one are
    /// rejected and leave the state untouched.
    pub fn ingest_weather(&mut self, reading: WeatherReading) -> Result<(), EnvError> {
        reading.validate()?;
        if let Some(cur) = &self.weather {
            if reading.timestamp < cur.timestamp {
                return Err(EnvError::StaleReading { got: reading.timestamp, current: cur.timestamp });
            }
        }
        self.weather = Some(reading);
        Ok(())
    }

    /// Current reading, or the seasonal default when the feed is silent or stale.
    pub fn effective_weather(&self) -> WeatherReading {
        let now = self.now();
        match &self.weather {
            Some(r) if now - r.timestamp <= WEATHER_STALE_AFTER_MS => r.clone(),
            _ => self.defaults.reading(self.season(), now),
        }
    }

    pub fn activity_level(&self) -> ActivityLevel {
        self.schedule.level_at_minute(self.now().minute_of_day())
    }

    /// Minutes until the next meal window opens.
    pub fn minutes_until_meal(&self) -> Option<u32> {
        self.schedule.minutes_until_meal(self.now().minute_of_day())
    }

    /// Activity weight of `species` now; 0 for species missing from the table.
    pub fn species_weight(&self, species: &str) -> f64 {
        let key = (self.season(), self.hour_band(), self.effective_weather().precipitation);
        self.ethology.weight(species, key)
    }

    pub fn consent(&self, room: &str) -> bool {
        self.room_consent.get(room).copied().unwrap_or(false)
    }

    pub fn set_consent(&mut self, room: &str, granted: bool) {
        self.room_consent.insert(room.to_string(), granted);
    }

    /// Clone with the clock moved to `t` (composition at a future start time).
    pub fn at(&self, t: Timestamp) -> Self {
        let mut s = self.clone();
        if t > s.clock.now() {
            s.clock.advance_to(t).expect("forward");
        }
        s
    }

    pub fn minute(&self) -> i64 {
        self.now().millis() / MS_PER_MINUTE
    }
}
