//! Weekly menu tags shared with the kitchen.
//!
//! ```text
//! mon;lunch;soup
//! ```

use std::collections::BTreeMap;

use super::EnvError;
use crate::time::Timestamp;

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Meal {
    Lunch,
    Dinner,
}

/// Lunch is the next meal until 15:00, dinner afterwards.
pub const LUNCH_UNTIL_MINUTE: u32 = 15 * 60;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeeklyMenu {
    entries: BTreeMap<(u32, Meal), Vec<String>>,
}

impl WeeklyMenu {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut entries: BTreeMap<(u32, Meal), Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| EnvError::Parse { line: i + 1, message: m };
            let f: Vec<&str> = line.split(';').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let day = WEEKDAYS.iter().position(|d| *d == f[0]).ok_or_else(|| err(format!("unknown weekday {:?}", f[0])))?;
            let meal = match f[1] {
                "lunch" => Meal::Lunch,
                "dinner" => Meal::Dinner,
                other => return Err(err(format!("unknown meal {other:?}"))),
            };
            entries.entry((day as u32, meal)).or_default().extend(f[2].split(',').map(|s| s.trim().to_string()));
        }
        Ok(WeeklyMenu { entries })
    }

    /// Tags of the next meal as seen from `t`.
    pub fn next_meal_tags(&self, t: Timestamp) -> &[String] {
        let meal = if t.minute_of_day() < LUNCH_UNTIL_MINUTE { Meal::Lunch } else { Meal::Dinner };
        self.entries.get(&(t.weekday_index(), meal)).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl WeeklyMenu {
    pub fn bundled() -> Self {
        WeeklyMenu::parse(crate::fixtures::MENU).expect("bundled menu")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monday_lunch_and_dinner() {
        let m = WeeklyMenu::bundled();
        // 2026-01-12 is a Monday.
        assert_eq!(m.next_meal_tags(Timestamp::from_ymd_hms(2026, 1, 12, 11, 0, 0)), ["soup"]);
        assert_eq!(m.next_meal_tags(Timestamp::from_ymd_hms(2026, 1, 12, 17, 0, 0)), ["stew"]);
        assert_eq!(m.next_meal_tags(Timestamp::from_ymd_hms(2026, 1, 16, 11, 0, 0)), ["fish"]);
    }

    #[test]
    fn rejects_unknown_day() {
        assert!(matches!(WeeklyMenu::parse("xyz;lunch;soup"), Err(EnvError::Parse { line: 1, .. })));
        assert!(WeeklyMenu::parse("mon;brunch;soup").is_err());
    }
}
