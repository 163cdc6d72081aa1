//! Deterministic landmark generators: hour bells, the patio waterfall and the
//! bedroom pendulum. These produce parameters; the players realise the sound.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::catalog::HourBand;
use crate::environment::{ActivityLevel, EnvironmentState, Precipitation, WeatherReading};
use crate::time::{Timestamp, MS_PER_HOUR, MS_PER_MINUTE};

use super::sequence::SoundEvent;
use super::zone::{Feature, ZoneConfig};

// ---------------------------------------------------------------- bells

/// Minutes after the hour at which the strike group repeats.
pub const BELL_REPEAT_OFFSET_MS: i64 = 2 * MS_PER_MINUTE;
pub const BELL_STROKE_INTERVAL_MS: i64 = 2_500;
pub const BELL_MAX_LEVEL_DBA: f64 = 72.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BellEvent {
    pub time: Timestamp,
    pub hour: u32,
    pub strokes: u8,
    /// 0 on the hour, 1 for the repeat two minutes later.
    pub repeat: u8,
}

/// 12-hour striking convention: 00:00 and 12:00 strike 12, 15:00 strikes 3.
pub fn strokes_for_hour(hour: u32) -> u8 {
    (((hour + 11) % 12) + 1) as u8
}

/// The 48 strike groups of one day, time-ordered. `night_cap` limits stroke
/// counts during night hours when set.
pub fn bell_schedule(day: NaiveDate, night_cap: Option<u8>) -> Vec<BellEvent> {
    let midnight = Timestamp::from_datetime(day.and_hms_opt(0, 0, 0).unwrap());
    let mut out = Vec::with_capacity(48);
    for hour in 0..24u32 {
        let on_hour = midnight + hour as i64 * MS_PER_HOUR;
        let mut strokes = strokes_for_hour(hour);
        if let Some(cap) = night_cap {
            if crate::environment::hour_band_at(on_hour) == HourBand::Night {
                strokes = strokes.min(cap.max(1));
            }
        }
        for repeat in 0..2u8 {
            out.push(BellEvent { time: on_hour + repeat as i64 * BELL_REPEAT_OFFSET_MS, hour, strokes, repeat });
        }
    }
    out
}

/// Strike groups with `after < time <= until`, spanning day boundaries.
pub fn bell_groups_between(after: Timestamp, until: Timestamp, night_cap: Option<u8>) -> Vec<BellEvent> {
    if until <= after {
        return Vec::new();
    }
    let mut day = after.date();
    let last = until.date();
    let mut out = Vec::new();
    while day <= last {
        out.extend(bell_schedule(day, night_cap).into_iter().filter(|b| b.time > after && b.time <= until));
        day = day.succ_opt().expect("date in range");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellParams {
    pub decay_s: f64,
    pub brightness: f64,
    pub detune_cents: f64,
}

pub const BELL_TEMP_RANGE: (f64, f64) = (-10.0, 35.0);
pub const BELL_DECAY_RANGE: (f64, f64) = (2.0, 8.0);

/// Warmer air gives a brighter bell, damper air a shorter ring.
pub fn bell_timbre(weather: &WeatherReading) -> BellParams {
    let (tlo, thi) = BELL_TEMP_RANGE;
    let t = weather.temperature_c.clamp(tlo, thi);
    let h = weather.humidity_pct.clamp(0.0, 100.0);
    let (dmin, dmax) = BELL_DECAY_RANGE;
    BellParams {
        decay_s: dmax - (dmax - dmin) * h / 100.0,
        brightness: (t - tlo) / (thi - tlo),
        detune_cents: ((t - 15.0) * 0.3).clamp(-8.0, 8.0),
    }
}

/// Bell loudness follows the care rhythm and the day/night cycle.
pub fn bell_level(activity: ActivityLevel, band: HourBand) -> f64 {
    let base = 64.0 + 6.0 * (activity.intensity() - 0.5) / 0.7;
    let band_offset = match band {
        HourBand::Night => -4.0,
        HourBand::Dawn | HourBand::Dusk => -1.0,
        HourBand::Day => 0.0,
    };
    (base + band_offset).clamp(56.0, BELL_MAX_LEVEL_DBA)
}

pub fn bell_group_duration_ms(strokes: u8, decay_s: f64) -> i64 {
    (strokes.max(1) as i64 - 1) * BELL_STROKE_INTERVAL_MS + (decay_s * 1000.0).round() as i64
}

// ------------------------------------------------------------ waterfall

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrainParams {
    pub grain_rate_hz: f64,
    pub grain_dur_ms: f64,
    pub level_dba: f64,
    /// dB per octave, negative tilts towards the low end.
    pub spectral_tilt: f64,
}

pub const WATERFALL_MIN_LEVEL_DBA: f64 = 41.0;
pub const WATERFALL_MAX_LEVEL_DBA: f64 = 56.0;
pub const WATERFALL_MAX_LEVEL_STEP_DB: f64 = 1.0;

fn precipitation_boost(p: Precipitation) -> f64 {
    match p {
        Precipitation::None => 0.0,
        Precipitation::Drizzle => 1.0,
        Precipitation::Rain => 2.0,
        Precipitation::Storm => 3.0,
    }
}

/// Unsmoothed waterfall parameters for the current world state.
pub fn waterfall_target(env: &EnvironmentState) -> GrainParams {
    let w = env.effective_weather();
    let intensity = env.activity_level().intensity();
    let level = 42.0 + 8.0 * (intensity - 0.5) / 0.7 + precipitation_boost(w.precipitation) + (w.wind_mps / 4.0).min(2.0);
    let t = w.temperature_c.clamp(BELL_TEMP_RANGE.0, BELL_TEMP_RANGE.1);
    let brightness = (t - BELL_TEMP_RANGE.0) / (BELL_TEMP_RANGE.1 - BELL_TEMP_RANGE.0);
    GrainParams {
        grain_rate_hz: (30.0 + 0.5 * w.humidity_pct + 10.0 * precipitation_boost(w.precipitation)).clamp(20.0, 120.0),
        grain_dur_ms: 80.0 - t,
        level_dba: level.clamp(WATERFALL_MIN_LEVEL_DBA, WATERFALL_MAX_LEVEL_DBA),
        spectral_tilt: -6.0 + 4.0 * brightness,
    }
}

fn slew(prev: f64, target: f64, step: f64) -> f64 {
    prev + (target - prev).clamp(-step, step)
}

/// Waterfall parameters moved from `previous` towards the target by at most
/// one bounded step (1 dB level per call). Never below the patio minimum.
pub fn waterfall_params(env: &EnvironmentState, previous: Option<&GrainParams>) -> GrainParams {
    let target = waterfall_target(env);
    match previous {
        None => target,
        Some(p) => GrainParams {
            grain_rate_hz: slew(p.grain_rate_hz, target.grain_rate_hz, 5.0),
            grain_dur_ms: slew(p.grain_dur_ms, target.grain_dur_ms, 5.0),
            level_dba: slew(p.level_dba, target.level_dba, WATERFALL_MAX_LEVEL_STEP_DB)
                .clamp(WATERFALL_MIN_LEVEL_DBA, WATERFALL_MAX_LEVEL_DBA),
            spectral_tilt: slew(p.spectral_tilt, target.spectral_tilt, 0.5),
        },
    }
}

// ------------------------------------------------------------- pendulum

/// Onset period of the pendulum across a room (alternating players).
pub const PENDULUM_PERIOD_MS: i64 = 2_000;
pub const PENDULUM_LEVEL_DBA: f64 = 38.0;
pub const PENDULUM_IMPULSE_MS: i64 = 120;
pub const PENDULUM_TICK: &str = "synth:pendulum:tick";
pub const PENDULUM_TOCK: &str = "synth:pendulum:tock";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PendulumError {
    #[error("zone {0} is not a bedroom")]
    NotBedroom(String),
    #[error("pendulum not enabled in the profile of {0}")]
    NotEnabled(String),
}

/// Impulses on the global 2 s grid within `[from, to)`. Impulse `k` (counted
/// from the epoch) plays on the room's first player when `k` is even and on
/// the second when odd. Onsets are relative to `from`.
pub fn pendulum_track(
    room: &ZoneConfig,
    env: &EnvironmentState,
    from: Timestamp,
    to: Timestamp,
) -> Result<Vec<SoundEvent>, PendulumError> {
    if !room.is_bedroom() {
        return Err(PendulumError::NotBedroom(room.zone_id.clone()));
    }
    if !room.has(Feature::Pendulum) {
        return Err(PendulumError::NotEnabled(room.zone_id.clone()));
    }
    if !env.consent(&room.zone_id) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut t = from.ceil_to(PENDULUM_PERIOD_MS);
    while t < to {
        let k = t.millis() / PENDULUM_PERIOD_MS;
        let even = k % 2 == 0;
        out.push(SoundEvent {
            sample_id: if even { PENDULUM_TICK } else { PENDULUM_TOCK }.to_string(),
            onset_ms: t - from,
            duration_ms: PENDULUM_IMPULSE_MS,
            gain_db: 0.0,
            fade_in_ms: 0,
            fade_out_ms: 0,
            target_player: room.player_ids[if even { 0 } else { 1 }].clone(),
            ref_level_dba: PENDULUM_LEVEL_DBA,
            level_dba: PENDULUM_LEVEL_DBA,
            category: None,
            species: None,
            section: None,
            recall: false,
        });
        t = t + PENDULUM_PERIOD_MS;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::zone::Topology;
    use crate::environment::{SeasonalDefaults, WeatherTrace};
    use crate::catalog::Season;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2026, 1, 12).unwrap()
    }

    #[test]
    fn three_oclock() {
        let s = bell_schedule(day(), None);
        let at15: Vec<&BellEvent> = s.iter().filter(|b| b.hour == 15).collect();
        assert_eq!(at15.len(), 2);
        assert!(at15.iter().all(|b| b.strokes == 3));
        assert_eq!(at15[0].time, Timestamp::from_ymd_hms(2026, 1, 12, 15, 0, 0));
        assert_eq!(at15[1].time, Timestamp::from_ymd_hms(2026, 1, 12, 15, 2, 0));
    }

    #[test]
    fn midnight_strikes_twelve() {
        let s = bell_schedule(day(), None);
        assert_eq!(s[0].strokes, 12);
        assert_eq!(s[1].strokes, 12);
        assert_eq!(s[1].time - s[0].time, 120_000);
    }

    #[test]
    fn full_day_arithmetic() {
        let s = bell_schedule(day(), None);
        assert_eq!(s.len(), 48);
        // Each count 1..=12 occurs in two hours of the day, and each hour strikes twice.
        let oracle: u32 = 2 * (1..=12u32).sum::<u32>() * 2;
        assert_eq!(oracle, 312);
        assert_eq!(s.iter().map(|b| b.strokes as u32).sum::<u32>(), oracle);
    }

    #[test]
    fn night_cap() {
        let s = bell_schedule(day(), Some(1));
        assert_eq!(s[0].strokes, 1);
        assert_eq!(s.iter().find(|b| b.hour == 15).unwrap().strokes, 3);
    }

    #[test]
    fn groups_between_cross_midnight() {
        let a = Timestamp::from_ymd_hms(2026, 1, 12, 23, 59, 0);
        let b = Timestamp::from_ymd_hms(2026, 1, 13, 0, 2, 0);
        let g = bell_groups_between(a, b, None);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].strokes, 12);
    }

    fn reading(t: f64, h: f64) -> WeatherReading {
        WeatherReading { timestamp: Timestamp(0), temperature_c: t, humidity_pct: h, precipitation: Precipitation::None, wind_mps: 0.0 }
    }

    #[test]
    fn timbre_monotone_and_clamped() {
        assert!(bell_timbre(&reading(30.0, 50.0)).brightness > bell_timbre(&reading(0.0, 50.0)).brightness);
        assert!(bell_timbre(&reading(10.0, 100.0)).decay_s < bell_timbre(&reading(10.0, 20.0)).decay_s);
        assert_eq!(bell_timbre(&reading(50.0, 50.0)), bell_timbre(&reading(35.0, 50.0)));
        assert_eq!(bell_timbre(&reading(-30.0, 50.0)).brightness, 0.0);
        let p = bell_timbre(&reading(10.0, 130.0));
        assert_eq!(p.decay_s, 2.0);
        assert_eq!(bell_timbre(&reading(10.0, 0.0)).decay_s, 8.0);
    }

    #[test]
    fn bell_fits_between_repeats() {
        assert!(bell_group_duration_ms(12, 8.0) < BELL_REPEAT_OFFSET_MS);
    }

    #[test]
    fn waterfall_never_below_minimum() {
        let t0 = Timestamp::from_ymd_hms(2026, 1, 12, 0, 0, 0);
        for h in 0..24 {
            let env = EnvironmentState::bundled(t0 + h * MS_PER_HOUR);
            assert!(waterfall_params(&env, None).level_dba >= 40.0);
        }
    }

    #[test]
    fn waterfall_follows_care_activity() {
        let night = EnvironmentState::bundled(Timestamp::from_ymd_hms(2026, 1, 12, 3, 0, 0));
        let prep = EnvironmentState::bundled(Timestamp::from_ymd_hms(2026, 1, 12, 11, 30, 0));
        assert_eq!(night.activity_level(), ActivityLevel::Quiet);
        assert_eq!(prep.activity_level(), ActivityLevel::MealPrep);
        assert!(waterfall_params(&night, None).level_dba <= waterfall_params(&prep, None).level_dba);
    }

    #[test]
    fn waterfall_smooth_over_a_week() {
        // Harsh synthetic weather: alternating storm and calm every hour.
        let t0 = Timestamp::from_ymd_hms(2026, 1, 5, 0, 0, 0);
        let readings = (0..7 * 24)
            .map(|h| WeatherReading {
                timestamp: t0 + h * MS_PER_HOUR,
                temperature_c: if h % 2 == 0 { -5.0 } else { 30.0 },
                humidity_pct: if h % 2 == 0 { 100.0 } else { 10.0 },
                precipitation: if h % 2 == 0 { Precipitation::Storm } else { Precipitation::None },
                wind_mps: if h % 2 == 0 { 20.0 } else { 0.0 },
            })
            .collect();
        let trace = WeatherTrace::from_readings(readings);
        let mut env = EnvironmentState::bundled(t0);
        let mut prev: Option<GrainParams> = None;
        let mut fed = None;
        let mut t = t0;
        while t < t0 + 7 * 24 * MS_PER_HOUR {
            env.clock.advance_to(t).unwrap();
            for r in trace.between(fed, t) {
                env.ingest_weather(r.clone()).unwrap();
            }
            fed = Some(t);
            let p = waterfall_params(&env, prev.as_ref());
            if let Some(q) = prev {
                assert!((p.level_dba - q.level_dba).abs() <= 1.0 + 1e-12);
            }
            assert!(p.level_dba >= 40.0);
            prev = Some(p);
            t = t + 10_000;
        }
    }

    #[test]
    fn pendulum_counts_and_alternates() {
        let topo = Topology::bundled();
        let room = topo.zone("room_4").unwrap();
        let t0 = Timestamp::from_ymd_hms(2026, 1, 12, 22, 0, 0);
        let mut env = EnvironmentState::bundled(t0);
        assert!(pendulum_track(room, &env, t0, t0 + 60_000).unwrap().is_empty());
        env.set_consent("room_4", true);
        let ev = pendulum_track(room, &env, t0, t0 + 60_000).unwrap();
        assert_eq!(ev.len(), 30);
        for (k, e) in ev.iter().enumerate() {
            assert_eq!(e.onset_ms, k as i64 * 2000);
            let expected = if (t0.millis() / 2000 + k as i64) % 2 == 0 { "p19" } else { "p20" };
            assert_eq!(e.target_player, expected);
            assert_eq!(e.gain_db, 0.0);
        }
        assert!(ev.windows(2).all(|w| w[1].onset_ms - w[0].onset_ms == 2000));
    }

    #[test]
    fn pendulum_refused_outside_bedrooms() {
        let topo = Topology::bundled();
        let env = EnvironmentState::bundled(Timestamp(0));
        assert!(matches!(
            pendulum_track(topo.zone("patio").unwrap(), &env, Timestamp(0), Timestamp(60_000)),
            Err(PendulumError::NotBedroom(_))
        ));
        assert!(matches!(
            pendulum_track(topo.zone("room_1").unwrap(), &env, Timestamp(0), Timestamp(60_000)),
            Err(PendulumError::NotEnabled(_))
        ));
    }

    #[test]
    fn default_weather_is_seasonal() {
        let d = SeasonalDefaults::default();
        assert!(d.reading(Season::Summer, Timestamp(0)).temperature_c > d.reading(Season::Winter, Timestamp(0)).temperature_c);
    }
}
