//! Irregular silences between events.

use rand::Rng;

pub const MIN_GAP_MS: i64 = 2_000;
pub const MAX_GAP_MS: i64 = 180_000;

/// One gap for an event density given in events per minute.
///
/// `MIN_GAP + Exp(mean − MIN_GAP)` truncated at `MAX_GAP` by resampling, so
/// the mean stays close to `60 / density` s whenever that lies well inside
/// the bounds. Millisecond resolution.
pub fn draw_gap_ms<R: Rng + ?Sized>(density_per_min: f64, rng: &mut R) -> i64 {
    assert!(density_per_min > 0.0, "density must be positive");
    let mean_ms = (60_000.0 / density_per_min).clamp(MIN_GAP_MS as f64 + 1.0, MAX_GAP_MS as f64);
    let scale = mean_ms - MIN_GAP_MS as f64;
    for _ in 0..16 {
        let u: f64 = rng.random::<f64>();
        let g = MIN_GAP_MS as f64 - scale * (1.0 - u).ln();
        if g <= MAX_GAP_MS as f64 {
            return g.round() as i64;
        }
    }
    MAX_GAP_MS
}

/// Nudge `gap` so it never equals the previous gap to the millisecond.
pub fn irregular(gap_ms: i64, previous: Option<i64>) -> i64 {
    match previous {
        Some(p) if p == gap_ms => {
            if gap_ms < MAX_GAP_MS {
                gap_ms + 1
            } else {
                gap_ms - 1
            }
        }
        _ => gap_ms,
    }
}

/// Gap lengths in seconds filling at least `duration_s`.
pub fn silence_gaps<R: Rng + ?Sized>(density_per_min: f64, duration_s: f64, rng: &mut R) -> Vec<f64> {
    let total_ms = (duration_s * 1000.0).round() as i64;
    let mut out = Vec::new();
    let mut prev = None;
    let mut acc = 0;
    while acc < total_ms {
        let g = irregular(draw_gap_ms(density_per_min, rng), prev);
        prev = Some(g);
        acc += g;
        out.push(g as f64 / 1000.0);
    }
    out
}
