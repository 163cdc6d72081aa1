use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::UnknownTag;

use super::EnvError;

pub const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLevel {
    Quiet,
    Routine,
    MealPrep,
    Meal,
    Visit,
    NightRound,
}

impl ActivityLevel {
    pub const ALL: &'static [ActivityLevel] = &[
        ActivityLevel::Quiet,
        ActivityLevel::Routine,
        ActivityLevel::MealPrep,
        ActivityLevel::Meal,
        ActivityLevel::Visit,
        ActivityLevel::NightRound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLevel::Quiet => "quiet",
            ActivityLevel::Routine => "routine",
            ActivityLevel::MealPrep => "meal_prep",
            ActivityLevel::Meal => "meal",
            ActivityLevel::Visit => "visit",
            ActivityLevel::NightRound => "night_round",
        }
    }

    /// Relative loudness/density the soundscape may take during this activity.
    pub fn intensity(self) -> f64 {
        match self {
            ActivityLevel::Quiet => 0.6,
            ActivityLevel::NightRound => 0.5,
            ActivityLevel::Routine => 1.0,
            ActivityLevel::Visit => 1.1,
            ActivityLevel::MealPrep => 1.2,
            ActivityLevel::Meal => 0.9,
        }
    }
}

impl fmt::Display for ActivityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityLevel {
    type Err = UnknownTag;
    fn from_str(s: &str) -> Result<Self, UnknownTag> {
        ActivityLevel::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| UnknownTag { kind: "ActivityLevel", value: s.to_string() })
    }
}

/// Half-open daily window `[start, end)` in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityWindow {
    pub start_min: u32,
    pub end_min: u32,
    pub level: ActivityLevel,
}

/// Daily care rhythm. Windows tile the day exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareActivitySchedule {
    windows: Vec<ActivityWindow>,
}

fn parse_hhmm(s: &str) -> Result<u32, String> {
    let (h, m) = s.split_once(':').ok_or_else(|| format!("bad time {s:?}"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad hour in {s:?}"))?;
    let m: u32 = m.parse().map_err(|_| format!("bad minute in {s:?}"))?;
    if h > 24 || m > 59 || (h == 24 && m != 0) {
        return Err(format!("time {s:?} out of range"));
    }
    Ok(h * 60 + m)
}

impl CareActivitySchedule {
    pub fn new(mut windows: Vec<ActivityWindow>) -> Result<Self, EnvError> {
        windows.sort_by_key(|w| w.start_min);
        let mut cursor = 0;
        for w in &windows {
            if w.start_min >= w.end_min {
                return Err(EnvError::Invalid(format!("empty or inverted window at minute {}", w.start_min)));
            }
            if w.start_min < cursor {
                return Err(EnvError::Invalid(format!("windows overlap at minute {}", w.start_min)));
            }
            if w.start_min > cursor {
                return Err(EnvError::Invalid(format!("gap in schedule between minute {cursor} and {}", w.start_min)));
            }
            cursor = w.end_min;
        }
        if cursor != MINUTES_PER_DAY {
            return Err(EnvError::Invalid(format!("schedule ends at minute {cursor}, not 24:00")));
        }
        Ok(CareActivitySchedule { windows })
    }

    /// Lines `HH:MM-HH:MM level`. Hours not covered by any line default to
    /// `quiet`.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut given = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| EnvError::Parse { line: i + 1, message: m };
            let (range, level) = line.split_once(char::is_whitespace).ok_or_else(|| err("expected `HH:MM-HH:MM level`".into()))?;
            let (a, b) = range.split_once('-').ok_or_else(|| err(format!("bad range {range:?}")))?;
            given.push(ActivityWindow {
                start_min: parse_hhmm(a).map_err(err)?,
                end_min: parse_hhmm(b).map_err(err)?,
                level: level.trim().parse().map_err(|e: UnknownTag| err(e.to_string()))?,
            });
        }
        given.sort_by_key(|w| w.start_min);
        let mut windows = Vec::new();
        let mut cursor = 0;
        for w in given {
            if w.start_min > cursor {
                windows.push(ActivityWindow { start_min: cursor, end_min: w.start_min, level: ActivityLevel::Quiet });
            }
            cursor = cursor.max(w.end_min);
            windows.push(w);
        }
        if cursor < MINUTES_PER_DAY {
            windows.push(ActivityWindow { start_min: cursor, end_min: MINUTES_PER_DAY, level: ActivityLevel::Quiet });
        }
        Self::new(windows)
    }

    pub fn windows(&self) -> &[ActivityWindow] {
        &self.windows
    }

    pub fn level_at_minute(&self, minute_of_day: u32) -> ActivityLevel {
        let m = minute_of_day % MINUTES_PER_DAY;
        self.windows
            .iter()
            .find(|w| w.start_min <= m && m < w.end_min)
            .map(|w| w.level)
            .unwrap_or(ActivityLevel::Quiet)
    }

    /// Minutes from `minute_of_day` until the next `meal` window opens, looking
    /// across midnight. `None` if the schedule has no meals.
    pub fn minutes_until_meal(&self, minute_of_day: u32) -> Option<u32> {
        let m = minute_of_day % MINUTES_PER_DAY;
        self.windows
            .iter()
            .filter(|w| w.level == ActivityLevel::Meal)
            .map(|w| if w.start_min >= m { w.start_min - m } else { w.start_min + MINUTES_PER_DAY - m })
            .min()
    }
}

impl Default for CareActivitySchedule {
    fn default() -> Self {
        CareActivitySchedule::parse(crate::fixtures::CARE_SCHEDULE).expect("bundled care schedule")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> CareActivitySchedule {
        CareActivitySchedule::default()
    }

    #[test]
    fn fixture_levels() {
        let s = fixture();
        assert_eq!(s.level_at_minute(11 * 60 + 30), ActivityLevel::MealPrep);
        assert_eq!(s.level_at_minute(3 * 60), ActivityLevel::Quiet);
        // 12:00 closes meal_prep and opens the meal window.
        assert_eq!(s.level_at_minute(12 * 60 - 1), ActivityLevel::MealPrep);
        assert_eq!(s.level_at_minute(12 * 60), ActivityLevel::Meal);
    }

    #[test]
    fn uncovered_hours_default_to_quiet() {
        let s = CareActivitySchedule::parse("08:00-09:00 meal\n").unwrap();
        assert_eq!(s.windows().len(), 3);
        assert_eq!(s.level_at_minute(2 * 60), ActivityLevel::Quiet);
        assert_eq!(s.level_at_minute(23 * 60), ActivityLevel::Quiet);
        assert_eq!(s.minutes_until_meal(7 * 60 + 30), Some(30));
        assert_eq!(s.minutes_until_meal(10 * 60), Some(22 * 60));
    }

    #[test]
    fn overlaps_rejected() {
        assert!(CareActivitySchedule::parse("08:00-09:00 meal\n08:30-10:00 routine\n").is_err());
        assert!(CareActivitySchedule::parse("09:00-08:00 meal\n").is_err());
        assert!(CareActivitySchedule::parse("08:00-09:00 brunch\n").is_err());
    }

    #[test]
    fn windows_tile_the_day() {
        let s = fixture();
        let total: u32 = s.windows().iter().map(|w| w.end_min - w.start_min).sum();
        assert_eq!(total, MINUTES_PER_DAY);
    }
}
