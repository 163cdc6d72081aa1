use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soundscape_core::time::Timestamp;
use soundscape_core::wire::{decode, encode, random_message, Body, ControlMessage, Gain, Play, Stop, StopSelector, SynthParam};

const GOLDEN: &str = include_str!("../fixtures/wire_golden.txt");

fn golden_messages() -> Vec<(&'static str, ControlMessage)> {
    let t0 = Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0);
    let m = |seq, body| ControlMessage::new(seq, t0, body);
    vec![
        ("ping", m(1, Body::Ping)),
        ("time_sync", m((1 << 63) + 4, Body::TimeSync { generator_clock: t0 })),
        (
            "play",
            m(
                42,
                Body::Play(Play {
                    voice_id: 77,
                    sample_id: "crow_01".into(),
                    due: t0 + 120_000,
                    gain_db: -3.5,
                    fade_in_ms: 1500,
                    fade_out_ms: 2500,
                    duration_ms: 9000,
                    level_dba: 55.25,
                }),
            ),
        ),
        ("stop_all", m(43, Body::Stop(Stop { selector: StopSelector::All, due: t0 + 1000, fade_out_ms: 2000 }))),
        ("stop_voice", m(44, Body::Stop(Stop { selector: StopSelector::Voice(77), due: t0 + 1000, fade_out_ms: 2000 }))),
        ("gain", m(45, Body::Gain(Gain { due: t0, trim_db: -6.0, ceiling_dba: 66.0 }))),
        (
            "bell",
            m(
                46,
                Body::SynthParam(SynthParam::Bell {
                    voice_id: 78,
                    due: t0 + 3_600_000,
                    strokes: 11,
                    interval_ms: 2500,
                    decay_s: 4.5,
                    brightness: 0.75,
                    detune_cents: -8.0,
                    level_dba: 72.0,
                }),
            ),
        ),
        (
            "waterfall",
            m(
                47,
                Body::SynthParam(SynthParam::Waterfall { due: t0, grain_rate_hz: 18.0, grain_dur_ms: 90.0, level_dba: 43.0, spectral_tilt: -0.5 }),
            ),
        ),
        (
            "pendulum",
            m(
                48,
                Body::SynthParam(SynthParam::Pendulum {
                    voice_id: 79,
                    start: t0 + 11 * 3_600_000,
                    end: t0 + 21 * 3_600_000,
                    period_ms: 4000,
                    phase_ms: 2000,
                    variant: 1,
                    level_dba: 38.0,
                }),
            ),
        ),
    ]
}

#[test]
fn golden_vectors_match_byte_for_byte() {
    let expected: Vec<(&str, &str)> =
        GOLDEN.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).map(|l| l.split_once(';').unwrap()).collect();
    let msgs = golden_messages();
    assert_eq!(expected.len(), msgs.len());
    for ((name, hex), (mname, msg)) in expected.into_iter().zip(msgs) {
        assert_eq!(name, mname);
        let bytes = encode(&msg).unwrap();
        assert_eq!(hex::encode(&bytes), hex, "{name}");
        assert_eq!(decode(&bytes).unwrap(), msg, "{name}");
    }
}

#[test]
fn hundred_thousand_random_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let msg = random_message(&mut rng);
        let bytes = encode(&msg).unwrap();
        let back = decode(&bytes).unwrap();
        // Compare re-encoded bytes too: f32 NaN-free, but -0.0 == 0.0 under PartialEq.
        if back != msg || encode(&back).unwrap() != bytes {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn random_corruption_never_panics() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20_000 {
        let mut bytes = encode(&random_message(&mut rng)).unwrap();
        let i = rand::Rng::random_range(&mut rng, 0..bytes.len());
        bytes[i] ^= rand::Rng::random_range(&mut rng, 1..=255u8);
        if let Ok(m) = decode(&bytes) {
            // A flip inside a payload value is still a well-formed message.
            assert_eq!(encode(&m).unwrap(), bytes);
        }
    }
}
