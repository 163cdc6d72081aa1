//! Declarative sound-pressure model.
//!
//! Levels are dBA budgets computed from calibrated reference levels, not
//! measurements. Concurrent sources add energetically:
//! `L = 10·log10(Σ 10^(Li/10))`, with a constant background floor.

/// Background level of an empty room.
pub const SILENCE_FLOOR_DBA: f64 = 30.0;

/// Maximum pressure the player hardware can produce.
pub const HARDWARE_CAP_DBA: f64 = 90.0;

/// Floor applied to envelope amplitude before converting to dB.
pub const ENVELOPE_AMPLITUDE_FLOOR: f64 = 0.05;

pub fn db_to_energy(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn energy_to_db(energy: f64) -> f64 {
    if energy <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * energy.log10()
    }
}

/// Energetic sum of any number of levels. Empty input yields `-inf`.
pub fn energetic_sum<I: IntoIterator<Item = f64>>(levels: I) -> f64 {
    energy_to_db(levels.into_iter().filter(|l| l.is_finite()).map(db_to_energy).sum())
}

/// `a ⊕ b`.
pub fn energetic_add(a: f64, b: f64) -> f64 {
    energetic_sum([a, b])
}

/// Level in dB that must be added to `existing` to reach `total`, or `None`
/// when `existing` already meets or exceeds it.
pub fn headroom(existing_db: f64, total_db: f64) -> Option<f64> {
    let rest = db_to_energy(total_db) - if existing_db.is_finite() { db_to_energy(existing_db) } else { 0.0 };
    (rest > 0.0).then(|| energy_to_db(rest))
}

pub fn amplitude_to_db(amplitude: f64) -> f64 {
    20.0 * amplitude.max(ENVELOPE_AMPLITUDE_FLOOR).log10()
}

pub fn linear_gain_to_db(gain: f64) -> f64 {
    if gain <= 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * gain.log10()
    }
}

pub fn db_to_linear_gain(db: f64) -> f64 {
    if db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(db / 20.0)
    }
}

/// Playback level of a scheduled event under the mix model.
pub fn event_level(ref_level_dba: f64, gain_db: f64, envelope_amplitude: f64) -> f64 {
    ref_level_dba + gain_db + amplitude_to_db(envelope_amplitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voice_over_floor() {
        // 10·log10(10^6.7 + 10^3) computed by hand: 67 + 10·log10(1 + 10^-3.7).
        let oracle = 67.0 + 10.0 * (1.0 + 10f64.powf(-3.7)).log10();
        let l = energetic_add(67.0, SILENCE_FLOOR_DBA);
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 67.004).abs() < 0.005);
    }

    #[test]
    fn equal_sources_add_three_db() {
        let l = energetic_sum([67.0, 67.0, SILENCE_FLOOR_DBA]);
        assert!((l - 70.01).abs() < 0.005, "{l}");
        assert!((energetic_add(50.0, 50.0) - 50.0 - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn empty_sum_is_silent() {
        assert_eq!(energetic_sum(std::iter::empty()), f64::NEG_INFINITY);
        assert_eq!(energetic_sum([SILENCE_FLOOR_DBA]), SILENCE_FLOOR_DBA);
    }

    #[test]
    fn headroom_inverts_addition() {
        let h = headroom(60.0, 70.0).unwrap();
        assert!((energetic_add(60.0, h) - 70.0).abs() < 1e-9);
        assert!(headroom(71.0, 70.0).is_none());
        assert_eq!(headroom(f64::NEG_INFINITY, 70.0), Some(70.0));
    }

    #[test]
    fn amplitude_floor() {
        assert_eq!(amplitude_to_db(0.0), amplitude_to_db(0.05));
        assert!((amplitude_to_db(1.0)).abs() < 1e-12);
    }
}
