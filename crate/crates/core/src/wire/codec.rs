//! Canonical datagram encoding of control messages.
//!
//! ```text
//! 0      2   3    4        12             18         20
//! | 4D 53 | v | kind | seq u64 | sent_at u48 | body_len u16 | body ...
//! ```
//!
//! Integers and `f32` values are little-endian. Strings carry a `u8` length
//! prefix. Timestamps inside bodies are `i64` milliseconds.

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

pub const MAGIC: [u8; 2] = [0x4D, 0x53];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const MAX_DATAGRAM: usize = 512;
const MAX_U48: i64 = (1 << 48) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    Play = 1,
    Stop = 2,
    Gain = 3,
    SynthParam = 4,
    Ping = 5,
    TimeSync = 6,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::Play, Kind::Stop, Kind::Gain, Kind::SynthParam, Kind::Ping, Kind::TimeSync];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Play => "PLAY",
            Kind::Stop => "STOP",
            Kind::Gain => "GAIN",
            Kind::SynthParam => "SYNTH_PARAM",
            Kind::Ping => "PING",
            Kind::TimeSync => "TIME_SYNC",
        }
    }

    fn from_u8(b: u8) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| *k as u8 == b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Play {
    /// Idempotence key on the player.
    pub voice_id: u64,
    pub sample_id: String,
    pub due: Timestamp,
    pub gain_db: f32,
    pub fade_in_ms: u32,
    pub fade_out_ms: u32,
    pub duration_ms: u32,
    /// Planned playback level at unity trim.
    pub level_dba: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopSelector {
    All,
    Voice(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub selector: StopSelector,
    pub due: Timestamp,
    pub fade_out_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub due: Timestamp,
    /// Caregiver trim for the zone.
    pub trim_db: f32,
    /// Player output limit, derived from the zone peak budget.
    pub ceiling_dba: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SynthParam {
    Bell {
        voice_id: u64,
        due: Timestamp,
        strokes: u8,
        interval_ms: u32,
        decay_s: f32,
        brightness: f32,
        detune_cents: f32,
        level_dba: f32,
    },
    Waterfall {
        due: Timestamp,
        grain_rate_hz: f32,
        grain_dur_ms: f32,
        level_dba: f32,
        spectral_tilt: f32,
    },
    /// Impulses at `t` in `[start, end)` with `(t - phase) mod period == 0`.
    Pendulum {
        voice_id: u64,
        start: Timestamp,
        end: Timestamp,
        period_ms: u32,
        phase_ms: u32,
        /// 0 tick, 1 tock.
        variant: u8,
        level_dba: f32,
    },
}

impl SynthParam {
    fn tag(&self) -> u8 {
        match self {
            SynthParam::Bell { .. } => 1,
            SynthParam::Waterfall { .. } => 2,
            SynthParam::Pendulum { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Body {
    Play(Play),
    Stop(Stop),
    Gain(Gain),
    SynthParam(SynthParam),
    Ping,
    TimeSync { generator_clock: Timestamp },
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Play(_) => Kind::Play,
            Body::Stop(_) => Kind::Stop,
            Body::Gain(_) => Kind::Gain,
            Body::SynthParam(_) => Kind::SynthParam,
            Body::Ping => Kind::Ping,
            Body::TimeSync { .. } => Kind::TimeSync,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub version: u8,
    /// Per sender, monotone.
    pub seq: u64,
    pub sent_at: Timestamp,
    pub body: Body,
}

impl ControlMessage {
    pub fn new(seq: u64, sent_at: Timestamp, body: Body) -> Self {
        ControlMessage { version: VERSION, seq, sent_at, body }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("encoded message is {0} bytes, over the {MAX_DATAGRAM}-byte datagram budget")]
    TooLarge(usize),
    #[error("sample id is {0} bytes, at most 255 fit")]
    StringTooLong(usize),
    #[error("field {0} is not finite")]
    NonFinite(&'static str),
    #[error("sent_at {0} outside the 48-bit range")]
    TimestampRange(i64),
    #[error("unsupported version {0}")]
    Version(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("datagram truncated: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown kind {0}")]
    UnknownKind(u8),
    #[error("declared body length {declared}, actual {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid UTF-8 in string field")]
    BadUtf8,
    #[error("invalid tag {0} for {1}")]
    BadTag(u8, &'static str),
    #[error("non-finite float field")]
    NonFinite,
    #[error("{0} trailing bytes in body")]
    Trailing(usize),
    #[error("datagram of {0} bytes exceeds {MAX_DATAGRAM}")]
    TooLarge(usize),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn ts(&mut self, t: Timestamp) {
        self.buf.extend_from_slice(&t.millis().to_le_bytes());
    }
    fn f32(&mut self, name: &'static str, v: f32) -> Result<(), EncodeError> {
        if !v.is_finite() {
            return Err(EncodeError::NonFinite(name));
        }
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<(), EncodeError> {
        let len = u8::try_from(s.len()).map_err(|_| EncodeError::StringTooLong(s.len()))?;
        self.u8(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

fn encode_body(body: &Body, w: &mut Writer) -> Result<(), EncodeError> {
    match body {
        Body::Play(p) => {
            w.u64(p.voice_id);
            w.str(&p.sample_id)?;
            w.ts(p.due);
            w.f32("gain_db", p.gain_db)?;
            w.u32(p.fade_in_ms);
            w.u32(p.fade_out_ms);
            w.u32(p.duration_ms);
            w.f32("level_dba", p.level_dba)?;
        }
        Body::Stop(s) => {
            match s.selector {
                StopSelector::All => {
                    w.u8(0);
                    w.u64(0);
                }
                StopSelector::Voice(v) => {
                    w.u8(1);
                    w.u64(v);
                }
            }
            w.ts(s.due);
            w.u32(s.fade_out_ms);
        }
        Body::Gain(g) => {
            w.ts(g.due);
            w.f32("trim_db", g.trim_db)?;
            w.f32("ceiling_dba", g.ceiling_dba)?;
        }
        Body::SynthParam(sp) => {
            w.u8(sp.tag());
            match sp {
                SynthParam::Bell { voice_id, due, strokes, interval_ms, decay_s, brightness, detune_cents, level_dba } => {
                    w.u64(*voice_id);
                    w.ts(*due);
                    w.u8(*strokes);
                    w.u32(*interval_ms);
                    w.f32("decay_s", *decay_s)?;
                    w.f32("brightness", *brightness)?;
                    w.f32("detune_cents", *detune_cents)?;
                    w.f32("level_dba", *level_dba)?;
                }
                SynthParam::Waterfall { due, grain_rate_hz, grain_dur_ms, level_dba, spectral_tilt } => {
                    w.ts(*due);
                    w.f32("grain_rate_hz", *grain_rate_hz)?;
                    w.f32("grain_dur_ms", *grain_dur_ms)?;
                    w.f32("level_dba", *level_dba)?;
                    w.f32("spectral_tilt", *spectral_tilt)?;
                }
                SynthParam::Pendulum { voice_id, start, end, period_ms, phase_ms, variant, level_dba } => {
                    w.u64(*voice_id);
                    w.ts(*start);
                    w.ts(*end);
                    w.u32(*period_ms);
                    w.u32(*phase_ms);
                    w.u8(*variant);
                    w.f32("level_dba", *level_dba)?;
                }
            }
        }
        Body::Ping => {}
        Body::TimeSync { generator_clock } => w.ts(*generator_clock),
    }
    Ok(())
}

/// Canonical bytes of `msg`; deterministic across platforms.
pub fn encode(msg: &ControlMessage) -> Result<Vec<u8>, EncodeError> {
    if msg.version != VERSION {
        return Err(EncodeError::Version(msg.version));
    }
    let sent = msg.sent_at.millis();
    if !(0..=MAX_U48).contains(&sent) {
        return Err(EncodeError::TimestampRange(sent));
    }
    let mut body = Writer { buf: Vec::with_capacity(64) };
    encode_body(&msg.body, &mut body)?;
    let total = HEADER_LEN + body.buf.len();
    if total > MAX_DATAGRAM {
        return Err(EncodeError::TooLarge(total));
    }
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.push(msg.version);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&sent.to_le_bytes()[..6]);
    out.extend_from_slice(&(body.buf.len() as u16).to_le_bytes());
    out.extend_from_slice(&body.buf);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.pos + n > self.buf.len() {
            return Err(DecodeError::Truncated { needed: self.pos + n, have: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn ts(&mut self) -> Result<Timestamp, DecodeError> {
        Ok(Timestamp(i64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }
    fn f32(&mut self) -> Result<f32, DecodeError> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(DecodeError::NonFinite);
        }
        Ok(v)
    }
    fn str(&mut self) -> Result<String, DecodeError> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DecodeError::BadUtf8)
    }
}

fn decode_body(kind: Kind, r: &mut Reader<'_>) -> Result<Body, DecodeError> {
    Ok(match kind {
        Kind::Play => Body::Play(Play {
            voice_id: r.u64()?,
            sample_id: r.str()?,
            due: r.ts()?,
            gain_db: r.f32()?,
            fade_in_ms: r.u32()?,
            fade_out_ms: r.u32()?,
            duration_ms: r.u32()?,
            level_dba: r.f32()?,
        }),
        Kind::Stop => {
            let tag = r.u8()?;
            let v = r.u64()?;
            let selector = match tag {
                0 if v == 0 => StopSelector::All,
                1 => StopSelector::Voice(v),
                t => return Err(DecodeError::BadTag(t, "stop selector")),
            };
            Body::Stop(Stop { selector, due: r.ts()?, fade_out_ms: r.u32()? })
        }
        Kind::Gain => Body::Gain(Gain { due: r.ts()?, trim_db: r.f32()?, ceiling_dba: r.f32()? }),
        Kind::SynthParam => Body::SynthParam(match r.u8()? {
            1 => SynthParam::Bell {
                voice_id: r.u64()?,
                due: r.ts()?,
                strokes: r.u8()?,
                interval_ms: r.u32()?,
                decay_s: r.f32()?,
                brightness: r.f32()?,
                detune_cents: r.f32()?,
                level_dba: r.f32()?,
            },
            2 => SynthParam::Waterfall {
                due: r.ts()?,
                grain_rate_hz: r.f32()?,
                grain_dur_ms: r.f32()?,
                level_dba: r.f32()?,
                spectral_tilt: r.f32()?,
            },
            3 => SynthParam::Pendulum {
                voice_id: r.u64()?,
                start: r.ts()?,
                end: r.ts()?,
                period_ms: r.u32()?,
                phase_ms: r.u32()?,
                variant: r.u8()?,
                level_dba: r.f32()?,
            },
            t => return Err(DecodeError::BadTag(t, "synth kind")),
        }),
        Kind::Ping => Body::Ping,
        Kind::TimeSync => Body::TimeSync { generator_clock: r.ts()? },
    })
}

/// Parse one datagram. Never returns a partial message.
pub fn decode(bytes: &[u8]) -> Result<ControlMessage, DecodeError> {
    if bytes.len() > MAX_DATAGRAM {
        return Err(DecodeError::TooLarge(bytes.len()));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(2)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let kb = r.u8()?;
    let kind = Kind::from_u8(kb).ok_or(DecodeError::UnknownKind(kb))?;
    let seq = r.u64()?;
    let mut ts = [0u8; 8];
    ts[..6].copy_from_slice(r.take(6)?);
    let sent_at = Timestamp(i64::from_le_bytes(ts));
    let declared = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
    let actual = bytes.len() - HEADER_LEN;
    if declared != actual {
        return Err(DecodeError::LengthMismatch { declared, actual });
    }
    let body = decode_body(kind, &mut r)?;
    if r.pos != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - r.pos));
    }
    Ok(ControlMessage { version, seq, sent_at, body })
}

/// Arbitrary well-formed messages for round-trip testing.
pub fn random_message<R: rand::Rng>(rng: &mut R) -> ControlMessage {
    fn ts<R: rand::Rng>(rng: &mut R) -> Timestamp {
        Timestamp(rng.random_range(0..=MAX_U48))
    }
    fn f<R: rand::Rng>(rng: &mut R) -> f32 {
        // Finite only, including subnormals and signed zero.
        loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                return v;
            }
        }
    }
    let body = match rng.random_range(0..8) {
        0 => Body::Play(Play {
            voice_id: rng.random(),
            sample_id: (0..rng.random_range(0..=255usize)).map(|_| rng.random_range(' '..='~')).collect(),
            due: ts(rng),
            gain_db: f(rng),
            fade_in_ms: rng.random(),
            fade_out_ms: rng.random(),
            duration_ms: rng.random(),
            level_dba: f(rng),
        }),
        1 => Body::Stop(Stop {
            selector: if rng.random() { StopSelector::All } else { StopSelector::Voice(rng.random()) },
            due: ts(rng),
            fade_out_ms: rng.random(),
        }),
        2 => Body::Gain(Gain { due: ts(rng), trim_db: f(rng), ceiling_dba: f(rng) }),
        3 => Body::SynthParam(SynthParam::Bell {
            voice_id: rng.random(),
            due: ts(rng),
            strokes: rng.random(),
            interval_ms: rng.random(),
            decay_s: f(rng),
            brightness: f(rng),
            detune_cents: f(rng),
            level_dba: f(rng),
        }),
        4 => Body::SynthParam(SynthParam::Waterfall {
            due: ts(rng),
            grain_rate_hz: f(rng),
            grain_dur_ms: f(rng),
            level_dba: f(rng),
            spectral_tilt: f(rng),
        }),
        5 => Body::SynthParam(SynthParam::Pendulum {
            voice_id: rng.random(),
            start: ts(rng),
            end: ts(rng),
            period_ms: rng.random(),
            phase_ms: rng.random(),
            variant: rng.random(),
            level_dba: f(rng),
        }),
        6 => Body::Ping,
        _ => Body::TimeSync { generator_clock: ts(rng) },
    };
    ControlMessage::new(rng.random(), ts(rng), body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_golden_vector() {
        let bytes = encode(&ControlMessage::new(0, Timestamp(0), Body::Ping)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], &[0x4D, 0x53, 0x01, 0x05]);
        assert_eq!(hex::encode(&bytes), "4d53010500000000000000000000000000000000");
    }

    #[test]
    fn play_golden_vector() {
        let msg = ControlMessage::new(
            7,
            Timestamp(1_767_225_600_000),
            Body::Play(Play {
                voice_id: 0x0102,
                sample_id: "crow_01".into(),
                due: Timestamp(1_767_225_660_000),
                gain_db: -6.0,
                fade_in_ms: 2000,
                fade_out_ms: 3000,
                duration_ms: 8500,
                level_dba: 57.0,
            }),
        );
        let bytes = encode(&msg).unwrap();
        assert_eq!(
            hex::encode(&bytes),
            concat!(
                "4d530101070000000000000000a8da769b012c00",
                "0201000000000000",
                "0763726f775f3031",
                "6092db769b010000",
                "0000c0c0",
                "d0070000b80b000034210000",
                "00006442",
            )
        );
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = encode(&ControlMessage::new(
            3,
            Timestamp(5),
            Body::Stop(Stop { selector: StopSelector::Voice(9), due: Timestamp(10), fade_out_ms: 2000 }),
        ))
        .unwrap();
        for n in 0..bytes.len() {
            assert!(decode(&bytes[..n]).is_err(), "prefix {n} decoded");
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&ControlMessage::new(1, Timestamp(0), Body::Ping)).unwrap();
        bytes[0] = 0;
        assert_eq!(decode(&bytes), Err(DecodeError::BadMagic));
        bytes[0] = 0x4D;
        bytes[3] = 9;
        assert_eq!(decode(&bytes), Err(DecodeError::UnknownKind(9)));
        bytes[3] = 5;
        bytes[2] = 2;
        assert_eq!(decode(&bytes), Err(DecodeError::BadVersion(2)));
        bytes[2] = 1;
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(DecodeError::LengthMismatch { .. })));
    }

    #[test]
    fn encode_rejects_oversize_and_non_finite() {
        let mut p = Play {
            voice_id: 1,
            sample_id: "x".repeat(256),
            due: Timestamp(0),
            gain_db: 0.0,
            fade_in_ms: 0,
            fade_out_ms: 0,
            duration_ms: 1,
            level_dba: 50.0,
        };
        assert_eq!(encode(&ControlMessage::new(0, Timestamp(0), Body::Play(p.clone()))), Err(EncodeError::StringTooLong(256)));
        p.sample_id = "ok".into();
        p.gain_db = f32::NAN;
        assert_eq!(encode(&ControlMessage::new(0, Timestamp(0), Body::Play(p))), Err(EncodeError::NonFinite("gain_db")));
        assert!(matches!(encode(&ControlMessage::new(0, Timestamp(-1), Body::Ping)), Err(EncodeError::TimestampRange(-1))));
    }
}
