//! Synth stubs realising landmark parameters. Fidelity is not the point;
//! timing, decay and grain density are.

use std::f64::consts::PI;

pub const BELL_PARTIALS: [(f64, f64); 4] = [(1.0, 1.0), (2.0, 0.6), (2.76, 0.45), (5.4, 0.3)];
pub const BELL_FUNDAMENTAL_HZ: f64 = 440.0;
pub const PENDULUM_IMPULSE_MS: i64 = 120;

/// ln(1000): amplitude falls by 60 dB after one decay time.
const LN_1000: f64 = 6.907_755_278_982_137;

/// Clamp ranges for incoming synth parameters.
pub const DECAY_RANGE: (f64, f64) = (2.0, 8.0);
pub const DETUNE_RANGE: (f64, f64) = (-50.0, 50.0);
pub const GRAIN_RATE_RANGE: (f64, f64) = (1.0, 200.0);
pub const GRAIN_DUR_RANGE: (f64, f64) = (5.0, 200.0);
pub const TILT_RANGE: (f64, f64) = (-12.0, 0.0);

/// Clamp into `range`, reporting whether the value moved.
pub fn clamp_param(v: f64, range: (f64, f64)) -> (f64, bool) {
    let c = v.clamp(range.0, range.1);
    (c, c != v)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in `[-1, 1)` from a counter-based hash.
fn noise(seed: u64, a: u64, b: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(a ^ splitmix(b)));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// One bell stroke: four exponentially decaying partials. The fundamental
/// reaches −60 dB after `decay_s`, upper partials sooner. Brightness scales
/// the upper partials.
pub fn bell_stroke(t_s: f64, decay_s: f64, brightness: f64, detune_cents: f64) -> f64 {
    if t_s < 0.0 {
        return 0.0;
    }
    let f0 = BELL_FUNDAMENTAL_HZ * 2f64.powf(detune_cents / 1200.0);
    BELL_PARTIALS
        .iter()
        .enumerate()
        .map(|(k, (ratio, amp))| {
            let a = if k == 0 { *amp } else { amp * brightness };
            let t60 = decay_s / (1.0 + 0.5 * k as f64);
            0.25 * a * (-LN_1000 * t_s / t60).exp() * (2.0 * PI * f0 * ratio * t_s).sin()
        })
        .sum()
}

/// Sum of `strokes` bell strokes spaced `interval_ms` apart.
pub fn bell_group(t_s: f64, strokes: u8, interval_ms: u32, decay_s: f64, brightness: f64, detune_cents: f64) -> f64 {
    (0..strokes.max(1))
        .map(|k| bell_stroke(t_s - k as f64 * interval_ms as f64 / 1000.0, decay_s, brightness, detune_cents))
        .sum()
}

/// Grain onsets (ms since epoch) within `[t0, t1)`: one grain per period,
/// jittered by up to a quarter period from a per-grain hash.
pub fn grain_onsets(rate_hz: f64, seed: u64, t0_ms: f64, t1_ms: f64) -> Vec<f64> {
    let period = 1000.0 / rate_hz;
    let first = (t0_ms / period).floor() as i64 - 1;
    let last = (t1_ms / period).ceil() as i64 + 1;
    (first..=last)
        .map(|k| k as f64 * period + 0.25 * period * noise(seed, k as u64, 0))
        .filter(|t| *t >= t0_ms && *t < t1_ms)
        .collect()
}

/// Second-order low-pass section (RBJ cookbook).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    pub fn lowpass(cutoff_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz.clamp(10.0, sample_rate * 0.45) / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Steeper negative tilt, darker water.
pub fn tilt_cutoff_hz(tilt_db_per_oct: f64) -> f64 {
    8_000.0 * 2f64.powf(tilt_db_per_oct / 3.0)
}

/// Waterfall as Hann-windowed, low-passed noise grains.
pub fn waterfall_block(
    t0_ms: f64,
    frames: usize,
    sample_rate: f64,
    rate_hz: f64,
    grain_dur_ms: f64,
    tilt: f64,
    seed: u64,
) -> Vec<f64> {
    let mut out = vec![0.0; frames];
    let span_ms = frames as f64 * 1000.0 / sample_rate;
    let grain_frames = (grain_dur_ms * sample_rate / 1000.0).round().max(1.0) as usize;
    for onset in grain_onsets(rate_hz, seed, t0_ms - grain_dur_ms, t0_ms + span_ms) {
        let start = ((onset - t0_ms) * sample_rate / 1000.0).round() as i64;
        let gid = (onset * 1000.0) as u64;
        for i in 0..grain_frames {
            let f = start + i as i64;
            if f < 0 || f as usize >= frames {
                continue;
            }
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / grain_frames as f64).cos();
            out[f as usize] += 0.2 * w * noise(seed, gid, i as u64);
        }
    }
    let mut lp = Biquad::lowpass(tilt_cutoff_hz(tilt), 0.707, sample_rate);
    out.iter_mut().for_each(|x| *x = lp.process(*x));
    out
}

/// Short damped transient; tick and tock differ in pitch.
pub fn pendulum_impulse(t_s: f64, variant: u8) -> f64 {
    if !(0.0..PENDULUM_IMPULSE_MS as f64 / 1000.0).contains(&t_s) {
        return 0.0;
    }
    let f = if variant == 0 { 900.0 } else { 640.0 };
    0.5 * (-35.0 * t_s).exp() * (2.0 * PI * f * t_s).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_decay_reaches_minus_60_db() {
        let sr = 44_100.0;
        let decay = 4.0;
        let rms = |from: f64| {
            let n = (0.02 * sr) as usize;
            let s: f64 = (0..n).map(|i| bell_stroke(from + i as f64 / sr, decay, 0.5, 0.0).powi(2)).sum();
            (s / n as f64).sqrt()
        };
        let r0 = rms(0.0);
        let mut t = 0.0;
        while 20.0 * (rms(t) / r0).log10() > -60.0 {
            t += 0.02;
        }
        assert!((t - decay).abs() <= 0.1 * decay, "crossed -60 dB at {t} s");
    }

    #[test]
    fn grain_count_matches_rate() {
        for seed in 0..20 {
            let n = grain_onsets(80.0, seed, 10_000.0, 11_000.0).len();
            assert!((78..=82).contains(&n), "{n}");
        }
    }

    #[test]
    fn grains_deterministic_across_windows() {
        let whole = grain_onsets(50.0, 3, 0.0, 1000.0);
        let mut split = grain_onsets(50.0, 3, 0.0, 400.0);
        split.extend(grain_onsets(50.0, 3, 400.0, 1000.0));
        assert_eq!(whole, split);
    }

    #[test]
    fn pendulum_impulse_is_short() {
        assert_eq!(pendulum_impulse(0.2, 0), 0.0);
        assert!(pendulum_impulse(0.001, 1).abs() > 0.0);
    }

    #[test]
    fn clamp_reports() {
        assert_eq!(clamp_param(9.0, DECAY_RANGE), (8.0, true));
        assert_eq!(clamp_param(3.0, DECAY_RANGE), (3.0, false));
    }

    #[test]
    fn lowpass_passes_dc() {
        let mut f = Biquad::lowpass(1000.0, 0.707, 44_100.0);
        let mut y = 0.0;
        for _ in 0..10_000 {
            y = f.process(1.0);
        }
        assert!((y - 1.0).abs() < 1e-6);
    }
}
