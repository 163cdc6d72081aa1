//! Intensity envelopes of a sequence.
//!
//! An envelope is a piecewise-linear curve over the normalised sequence time
//! `[0, 1]`. Breakpoints are jittered from a seeded stream so no two
//! sequences share exactly the same profile.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::UnknownTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeShape {
    U,
    InvertedJ,
    Aba,
}

impl EnvelopeShape {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeShape::U => "u",
            EnvelopeShape::InvertedJ => "inverted_j",
            EnvelopeShape::Aba => "aba",
        }
    }
}

impl fmt::Display for EnvelopeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvelopeShape {
    type Err = UnknownTag;
    fn from_str(s: &str) -> Result<Self, UnknownTag> {
        match s {
            "u" | "U" => Ok(EnvelopeShape::U),
            "inverted_j" => Ok(EnvelopeShape::InvertedJ),
            "aba" | "ABA" => Ok(EnvelopeShape::Aba),
            _ => Err(UnknownTag { kind: "EnvelopeShape", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectionLabel {
    A,
    B,
    APrime,
}

impl SectionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionLabel::A => "A",
            SectionLabel::B => "B",
            SectionLabel::APrime => "A'",
        }
    }
}

/// One formal section `[start, end)` of an ABA′ envelope, in fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub label: SectionLabel,
    pub start: f64,
    pub end: f64,
    /// A′ restates A with variation.
    pub variation: bool,
}

/// Shape thresholds. Defaults: U edges ≥ 0.6, U trough ≤ 0.3 somewhere in
/// `[0.4, 0.6]`, inverted-J ending in `[0.4, start)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeParams {
    pub u_edge_min: f64,
    pub u_trough_max: f64,
    pub trough_window: (f64, f64),
    pub j_end_min: f64,
    /// Nominal end of section A and of section B.
    pub aba_sections: (f64, f64),
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            u_edge_min: 0.6,
            u_trough_max: 0.3,
            trough_window: (0.4, 0.6),
            j_end_min: 0.4,
            aba_sections: (0.3, 0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub shape: EnvelopeShape,
    pub duration_s: f64,
    /// `(t_fraction, amplitude)`, strictly increasing in `t`.
    pub breakpoints: Vec<(f64, f64)>,
    pub sections: Vec<Section>,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Seeded envelope of the requested shape.
pub fn make_envelope<R: Rng + ?Sized>(shape: EnvelopeShape, duration_s: f64, rng: &mut R, p: &EnvelopeParams) -> Envelope {
    assert!(duration_s > 0.0, "envelope duration must be positive");
    let edge = |rng: &mut R| jitter(rng, p.u_edge_min + 0.08, (p.u_edge_min + 0.35).min(1.0));
    let trough = |rng: &mut R| jitter(rng, p.u_trough_max * 0.3, p.u_trough_max * 0.85);
    let (w0, w1) = p.trough_window;
    let (breakpoints, sections) = match shape {
        EnvelopeShape::U => {
            let a0 = edge(rng);
            let f1 = jitter(rng, 0.15, w0 - 0.1);
            let m1 = jitter(rng, 0.35, 0.55);
            let t1 = jitter(rng, w0 + 0.01, w0 + 0.05);
            let t2 = jitter(rng, w1 - 0.05, w1 - 0.01);
            let lo1 = trough(rng);
            let lo2 = trough(rng);
            let f4 = jitter(rng, w1 + 0.1, 0.85);
            let m4 = jitter(rng, 0.35, 0.6);
            let a1 = edge(rng);
            (vec![(0.0, a0), (f1, m1), (t1, lo1), (t2, lo2), (f4, m4), (1.0, a1)], Vec::new())
        }
        EnvelopeShape::InvertedJ => {
            let a0 = jitter(rng, 0.75, 0.95);
            let f1 = jitter(rng, 0.3, 0.45);
            let lo = jitter(rng, 0.1, 0.25);
            let f2 = jitter(rng, 0.65, 0.8);
            let mid = jitter(rng, 0.3, 0.42);
            let end_hi = (a0 - 0.05).min(0.72);
            let a1 = jitter(rng, p.j_end_min + 0.02, end_hi);
            (vec![(0.0, a0), (f1, lo), (f2, mid), (1.0, a1)], Vec::new())
        }
        EnvelopeShape::Aba => {
            let (na, nb) = p.aba_sections;
            let a_end = jitter(rng, na - 0.05, na + 0.02);
            let b_end = jitter(rng, nb - 0.02, nb + 0.05);
            let a_hi = jitter(rng, 0.75, 0.9);
            let a_hold = jitter(rng, 0.65, 0.85);
            let b_lo = jitter(rng, 0.28, 0.42);
            let b_lo2 = jitter(rng, 0.28, 0.42);
            let ap_hi = jitter(rng, 0.65, 0.85);
            let ap_end = jitter(rng, 0.6, 0.8);
            let bp = vec![
                (0.0, a_hi),
                (a_end - 0.03, a_hold),
                (a_end + 0.03, b_lo),
                (b_end - 0.03, b_lo2),
                (b_end + 0.03, ap_hi),
                (1.0, ap_end),
            ];
            let sections = vec![
                Section { label: SectionLabel::A, start: 0.0, end: a_end, variation: false },
                Section { label: SectionLabel::B, start: a_end, end: b_end, variation: false },
                Section { label: SectionLabel::APrime, start: b_end, end: 1.0, variation: true },
            ];
            (bp, sections)
        }
    };
    Envelope { shape, duration_s, breakpoints, sections }
}

impl Envelope {
    /// Amplitude at normalised time, linear between breakpoints, clamped outside.
    pub fn amplitude_at_fraction(&self, f: f64) -> f64 {
        let bp = &self.breakpoints;
        if f <= bp[0].0 {
            return bp[0].1;
        }
        for w in bp.windows(2) {
            let ((t0, a0), (t1, a1)) = (w[0], w[1]);
            if f <= t1 {
                if f == t1 || t1 == t0 {
                    return a1;
                }
                return a0 + (a1 - a0) * (f - t0) / (t1 - t0);
            }
        }
        bp[bp.len() - 1].1
    }

    pub fn amplitude_at(&self, t_s: f64) -> f64 {
        self.amplitude_at_fraction(t_s / self.duration_s)
    }

    pub fn section_at_fraction(&self, f: f64) -> Option<&Section> {
        self.sections.iter().find(|s| f >= s.start && (f < s.end || (s.end >= 1.0 && f <= 1.0)))
    }

    /// Checks the structural and shape invariants.
    pub fn check(&self, p: &EnvelopeParams) -> Result<(), String> {
        let bp = &self.breakpoints;
        if bp.len() < 2 || bp[0].0 != 0.0 || bp[bp.len() - 1].0 != 1.0 {
            return Err("breakpoints must start at t=0 and end at t=1".into());
        }
        if bp.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("breakpoint times must increase".into());
        }
        if bp.iter().any(|(_, a)| !(0.0..=1.0).contains(a)) {
            return Err("amplitudes must lie in [0, 1]".into());
        }
        let first = bp[0].1;
        let last = bp[bp.len() - 1].1;
        match self.shape {
            EnvelopeShape::U => {
                if first < p.u_edge_min || last < p.u_edge_min {
                    return Err(format!("U edges {first:.3}/{last:.3} below {}", p.u_edge_min));
                }
                let (w0, w1) = p.trough_window;
                let min_in_window = (0..=100)
                    .map(|i| w0 + (w1 - w0) * i as f64 / 100.0)
                    .chain(bp.iter().map(|(t, _)| *t).filter(|t| (w0..=w1).contains(t)))
                    .map(|f| self.amplitude_at_fraction(f))
                    .fold(f64::INFINITY, f64::min);
                if min_in_window > p.u_trough_max {
                    return Err(format!("U trough {min_in_window:.3} above {}", p.u_trough_max));
                }
            }
            EnvelopeShape::InvertedJ => {
                if !(last >= p.j_end_min && last < first) {
                    return Err(format!("inverted J must end in [{}, {first:.3}), ends at {last:.3}", p.j_end_min));
                }
            }
            EnvelopeShape::Aba => {
                let labels: Vec<SectionLabel> = self.sections.iter().map(|s| s.label).collect();
                if labels != [SectionLabel::A, SectionLabel::B, SectionLabel::APrime] {
                    return Err("ABA envelope needs sections A, B, A'".into());
                }
                if !self.sections[2].variation {
                    return Err("A' must carry the variation flag".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn u_shape_seed_1() {
        let p = EnvelopeParams::default();
        let e = make_envelope(EnvelopeShape::U, 1200.0, &mut seeded(1), &p);
        assert!(e.amplitude_at(0.0) >= 0.6);
        assert!(e.amplitude_at(600.0) <= 0.3);
        assert!(e.amplitude_at(1200.0) >= 0.6);
        e.check(&p).unwrap();
    }

    #[test]
    fn aba_has_three_sections() {
        let p = EnvelopeParams::default();
        let e = make_envelope(EnvelopeShape::Aba, 1200.0, &mut seeded(1), &p);
        assert_eq!(e.sections.len(), 3);
        assert!(e.sections[2].variation);
        assert_eq!(e.section_at_fraction(0.0).unwrap().label, SectionLabel::A);
        assert_eq!(e.section_at_fraction(0.5).unwrap().label, SectionLabel::B);
        assert_eq!(e.section_at_fraction(1.0).unwrap().label, SectionLabel::APrime);
    }

    #[test]
    fn breakpoints_are_exact() {
        let p = EnvelopeParams::default();
        for shape in [EnvelopeShape::U, EnvelopeShape::InvertedJ, EnvelopeShape::Aba] {
            let e = make_envelope(shape, 900.0, &mut seeded(5), &p);
            for (t, a) in &e.breakpoints {
                assert_eq!(e.amplitude_at_fraction(*t), *a);
            }
        }
    }

    #[test]
    fn jitter_differs_between_seeds() {
        let p = EnvelopeParams::default();
        let a = make_envelope(EnvelopeShape::U, 1200.0, &mut seeded(1), &p);
        let b = make_envelope(EnvelopeShape::U, 1200.0, &mut seeded(2), &p);
        assert_ne!(a.breakpoints, b.breakpoints);
    }

    proptest! {
        #[test]
        fn every_shape_satisfies_invariants(seed in any::<u64>(), dur in 60.0f64..3000.0, k in 0usize..3) {
            let p = EnvelopeParams::default();
            let shape = [EnvelopeShape::U, EnvelopeShape::InvertedJ, EnvelopeShape::Aba][k];
            let e = make_envelope(shape, dur, &mut seeded(seed), &p);
            prop_assert!(e.check(&p).is_ok(), "{:?}", e.check(&p));
            if shape == EnvelopeShape::InvertedJ {
                prop_assert!(e.amplitude_at(dur) >= 0.4 && e.amplitude_at(dur) < e.amplitude_at(0.0));
            }
        }
    }
}
