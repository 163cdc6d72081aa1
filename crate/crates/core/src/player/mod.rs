//! On-board player node: applies control messages, keeps voices, estimates
//! its emitted level and renders PCM.
//!
//! Voice transitions are evaluated lazily from start and end times, so the
//! state at any instant is a pure function of the messages received.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::composer::landmarks::bell_group_duration_ms;
use crate::level::{db_to_linear_gain, energetic_sum, energetic_add, HARDWARE_CAP_DBA, SILENCE_FLOOR_DBA};
use crate::time::Timestamp;
use crate::wire::codec::{encode, Body, ControlMessage, Gain, Play, Stop, StopSelector, SynthParam};
use crate::wire::log::{payload_digest, LogRecord};
use crate::wire::replay::{Freshness, ReplayWindow};
use crate::wire::sync::AssetSink;

pub const RENDER_RATE: u32 = 44_100;
pub const QUANTUM_MS: i64 = 50;
pub const MAX_VOICES: usize = 8;
/// PLAY whose due time lies further in the past is dropped.
pub const STALE_PLAY_MS: i64 = 5_000;
pub const TRIM_RANGE_DB: (f64, f64) = (-60.0, 12.0);
pub const LEVEL_HISTORY_S: usize = 600;
pub const MAX_SYNC_STEP_MS: i64 = 100;
/// TIME_SYNC samples kept for the minimum-delay filter.
/// Offset errors this small are left alone so latency jitter never moves
/// onsets; well under one render quantum.
pub const SYNC_DEADBAND_MS: i64 = 10;
pub const SYNC_FILTER_LEN: usize = 32;

/// Decoded PCM assets held by a player, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    digests: BTreeMap<String, String>,
    pcm: BTreeMap<String, Arc<[i16]>>,
    /// Already-decoded PCM by content digest; spares repeated decoding when
    /// many simulated players receive the same verified bytes.
    shared: Option<Arc<BTreeMap<String, Arc<[i16]>>>>,
}

impl AssetStore {
    /// A store already holding every catalog asset, sharing `decoded`.
    pub fn preloaded(catalog: &Catalog, decoded: &BTreeMap<String, Arc<[i16]>>) -> Self {
        let mut s = AssetStore::default();
        for r in catalog.records() {
            if let (Some(d), Some(p)) = (&r.digest, decoded.get(&r.id)) {
                s.digests.insert(r.id.clone(), d.clone());
                s.pcm.insert(r.id.clone(), p.clone());
            }
        }
        s
    }

    /// An empty store that reuses `shared` decodes for matching digests.
    pub fn with_shared(shared: Arc<BTreeMap<String, Arc<[i16]>>>) -> Self {
        AssetStore { shared: Some(shared), ..AssetStore::default() }
    }

    pub fn has(&self, id: &str) -> bool {
        self.pcm.contains_key(id)
    }

    pub fn pcm(&self, id: &str) -> Option<&Arc<[i16]>> {
        self.pcm.get(id)
    }

    pub fn len(&self) -> usize {
        self.pcm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pcm.is_empty()
    }
}

impl AssetSink for AssetStore {
    fn inventory(&self) -> BTreeMap<String, String> {
        self.digests.clone()
    }

    fn install(&mut self, id: &str, digest: &str, bytes: Vec<u8>) {
        if let Some(pcm) = self.shared.as_ref().and_then(|m| m.get(digest)) {
            self.digests.insert(id.to_string(), digest.to_string());
            self.pcm.insert(id.to_string(), pcm.clone());
        } else if let Ok((_, samples)) = crate::fixtures::decode_wav(&bytes) {
            self.digests.insert(id.to_string(), digest.to_string());
            self.pcm.insert(id.to_string(), samples.into());
        }
    }

    fn remove(&mut self, id: &str) {
        self.digests.remove(id);
        self.pcm.remove(id);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VoiceSource {
    Sample { sample_id: String },
    Bell { strokes: u8, interval_ms: u32, decay_s: f64, brightness: f64, detune_cents: f64 },
}

impl VoiceSource {
    pub fn label(&self) -> String {
        match self {
            VoiceSource::Sample { sample_id } => sample_id.clone(),
            VoiceSource::Bell { strokes, .. } => format!("bell:{strokes}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoiceState {
    Scheduled,
    Playing,
    Releasing,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub voice_id: u64,
    pub source: VoiceSource,
    pub sent_at: Timestamp,
    pub start: Timestamp,
    pub duration_ms: i64,
    pub gain_db: f64,
    pub fade_in_ms: i64,
    pub fade_out_ms: i64,
    pub level_dba: f64,
    /// Release start and fade length.
    pub release: Option<(Timestamp, i64)>,
    pub digest: String,
    on_logged: bool,
}

impl Voice {
    pub fn natural_end(&self) -> Timestamp {
        self.start + self.duration_ms
    }

    pub fn end(&self) -> Timestamp {
        match self.release {
            Some((r, _)) if r <= self.start => self.start,
            Some((r, f)) => self.natural_end().min(r + f),
            None => self.natural_end(),
        }
    }

    pub fn state_at(&self, t: Timestamp) -> VoiceState {
        if t >= self.end() {
            VoiceState::Done
        } else if t < self.start {
            VoiceState::Scheduled
        } else if matches!(self.release, Some((r, _)) if r <= t) {
            VoiceState::Releasing
        } else {
            VoiceState::Playing
        }
    }

    pub fn sounding_at(&self, t: Timestamp) -> bool {
        matches!(self.state_at(t), VoiceState::Playing | VoiceState::Releasing)
    }

    /// Linear gain automation in `[0, 1]`: fade-in, fade-out, release ramp.
    pub fn automation_at(&self, t: Timestamp) -> f64 {
        if !self.sounding_at(t) {
            return 0.0;
        }
        let since = (t - self.start) as f64;
        let until = (self.natural_end() - t) as f64;
        let mut g: f64 = 1.0;
        if self.fade_in_ms > 0 {
            g = g.min(since / self.fade_in_ms as f64);
        }
        if self.fade_out_ms > 0 {
            g = g.min(until / self.fade_out_ms as f64);
        }
        if let Some((r, f)) = self.release {
            if t >= r {
                g *= if f > 0 { (1.0 - (t - r) as f64 / f as f64).max(0.0) } else { 0.0 };
            }
        }
        g.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumTrack {
    pub voice_id: u64,
    pub sent_at: Timestamp,
    pub start: Timestamp,
    pub end: Timestamp,
    pub period_ms: i64,
    pub phase_ms: i64,
    pub variant: u8,
    pub level_dba: f64,
    next_pulse: Timestamp,
    on_logged: bool,
}

impl PendulumTrack {
    pub fn active_at(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    /// First pulse at or after `t`.
    fn pulse_at_or_after(&self, t: Timestamp) -> Timestamp {
        let t = t.max(self.start);
        let k = (t.millis() - self.phase_ms).div_euclid(self.period_ms);
        let mut p = Timestamp(k * self.period_ms + self.phase_ms);
        if p < t {
            p = p + self.period_ms;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallSetting {
    pub seq: u64,
    pub sent_at: Timestamp,
    pub due: Timestamp,
    pub grain_rate_hz: f64,
    pub grain_dur_ms: f64,
    pub level_dba: f64,
    pub spectral_tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSetting {
    pub seq: u64,
    pub due: Timestamp,
    pub trim_db: f64,
    pub ceiling_dba: f64,
}

/// A STOP-all: cuts everything sent at or before `sent_at`, from `due`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Barrier {
    pub sent_at: Timestamp,
    pub due: Timestamp,
    pub fade_ms: i64,
}

#[derive(Debug, Clone)]
pub struct PlayerState {
    pub player_id: String,
    /// True offset of the local clock from generator time (simulation only).
    pub clock_skew_ms: i64,
    pub offset_estimate_ms: i64,
    sync_samples: VecDeque<i64>,
    pub voices: Vec<Voice>,
    pub pendulums: Vec<PendulumTrack>,
    waterfall: Vec<WaterfallSetting>,
    waterfall_on: bool,
    last_advance: Timestamp,
    gains: Vec<GainSetting>,
    barriers: Vec<Barrier>,
    voice_stops: BTreeMap<u64, (Timestamp, i64)>,
    known_voices: BTreeSet<u64>,
    reported: BTreeSet<(u64, &'static str)>,
    pub assets: AssetStore,
    replay: ReplayWindow,
    level_history: VecDeque<(Timestamp, f64)>,
    /// Grain noise seed.
    pub seed: u64,
}

fn f(v: f32) -> f64 {
    v as f64
}

impl PlayerState {
    pub fn new(player_id: &str, assets: AssetStore) -> Self {
        PlayerState {
            player_id: player_id.to_string(),
            clock_skew_ms: 0,
            offset_estimate_ms: 0,
            sync_samples: VecDeque::new(),
            voices: Vec::new(),
            pendulums: Vec::new(),
            waterfall: Vec::new(),
            waterfall_on: false,
            last_advance: Timestamp(i64::MIN),
            gains: Vec::new(),
            barriers: Vec::new(),
            voice_stops: BTreeMap::new(),
            known_voices: BTreeSet::new(),
            reported: BTreeSet::new(),
            assets,
            replay: ReplayWindow::default(),
            level_history: VecDeque::with_capacity(LEVEL_HISTORY_S),
            seed: crate::rng::derive_seed(0, &[player_id.as_bytes()]),
        }
    }

    fn log(&self, t: Timestamp, kind: &str, digest: &str, summary: String) -> LogRecord {
        LogRecord::new(t, &self.player_id, kind, digest, summary)
    }

    /// Report an anomaly about `voice_id` once.
    fn report(&mut self, voice_id: u64, kind: &'static str, t: Timestamp, digest: &str, summary: String) -> Vec<LogRecord> {
        if self.reported.insert((voice_id, kind)) {
            vec![self.log(t, kind, digest, summary)]
        } else {
            Vec::new()
        }
    }

    /// Generator time to local playback time under the current offset estimate.
    fn local_start(&self, due: Timestamp) -> Timestamp {
        due + (self.offset_estimate_ms - self.clock_skew_ms)
    }

    /// Decode, dedupe and apply one datagram.
    pub fn receive(&mut self, sender: &str, bytes: &[u8], now: Timestamp) -> Vec<LogRecord> {
        match crate::wire::codec::decode(bytes) {
            Err(e) => vec![self.log(now, "decode_error", &payload_digest(bytes), e.to_string())],
            Ok(msg) => match self.replay.dedupe(sender, msg.seq, now) {
                Freshness::Duplicate => Vec::new(),
                Freshness::Fresh => self.handle_message(&msg, now),
            },
        }
    }

    fn barrier_cut(&self, sent_at: Timestamp) -> Option<Barrier> {
        self.barriers.iter().filter(|b| b.sent_at >= sent_at).min_by_key(|b| b.due).copied()
    }

    fn overlap_at(&self, start: Timestamp, end: Timestamp) -> usize {
        let mut edges: Vec<(Timestamp, i32)> = self
            .voices
            .iter()
            .filter(|v| v.start < end && v.end() > start)
            .flat_map(|v| [(v.start.max(start), 1), (v.end(), -1)])
            .collect();
        edges.sort();
        let (mut cur, mut max) = (0, 0);
        for (_, d) in edges {
            cur += d;
            max = max.max(cur);
        }
        max as usize
    }

    /// Apply a decoded message that passed dedupe. Anomalies are logged, never raised.
    pub fn handle_message(&mut self, msg: &ControlMessage, now: Timestamp) -> Vec<LogRecord> {
        let digest = encode(msg).map(|b| payload_digest(&b)).unwrap_or_default();
        match &msg.body {
            Body::Play(p) => self.on_play(p, msg.sent_at, now, &digest),
            Body::Stop(s) => self.on_stop(s, msg.sent_at),
            Body::Gain(g) => self.on_gain(g, msg.seq, now, &digest),
            Body::SynthParam(sp) => self.on_synth(sp, msg.seq, msg.sent_at, now, &digest),
            Body::Ping => Vec::new(),
            Body::TimeSync { generator_clock } => {
                self.on_time_sync(*generator_clock, now);
                Vec::new()
            }
        }
    }

    fn add_voice(&mut self, mut v: Voice, now: Timestamp) -> Vec<LogRecord> {
        let id = v.voice_id;
        if now - v.start > STALE_PLAY_MS {
            return self.report(id, "stale_play", now, &v.digest.clone(), format!("voice={id} due={}", v.start));
        }
        if let Some(b) = self.barrier_cut(v.sent_at) {
            if b.due <= v.start {
                self.known_voices.insert(id);
                return Vec::new();
            }
            v.release = Some((b.due, b.fade_ms));
        }
        if self.overlap_at(v.start, v.end()) >= MAX_VOICES {
            self.known_voices.insert(id);
            return vec![self.log(now, "voice_limit", &v.digest, format!("voice={id}"))];
        }
        if let Some((due, fade)) = self.voice_stops.remove(&id) {
            v.release = Some(match v.release {
                Some((r, rf)) if r <= due => (r, rf),
                _ => (due, fade),
            });
        }
        self.known_voices.insert(id);
        self.voices.push(v);
        Vec::new()
    }

    fn on_play(&mut self, p: &Play, sent_at: Timestamp, now: Timestamp, digest: &str) -> Vec<LogRecord> {
        if self.known_voices.contains(&p.voice_id) {
            return Vec::new();
        }
        if !self.assets.has(&p.sample_id) {
            return self.report(p.voice_id, "missing_asset", now, digest, format!("voice={} sample={}", p.voice_id, p.sample_id));
        }
        let fade_in = p.fade_in_ms as i64;
        let fade_out = p.fade_out_ms as i64;
        let duration = p.duration_ms as i64;
        let v = Voice {
            voice_id: p.voice_id,
            source: VoiceSource::Sample { sample_id: p.sample_id.clone() },
            sent_at,
            start: self.local_start(p.due),
            duration_ms: duration,
            gain_db: f(p.gain_db).min(0.0),
            fade_in_ms: fade_in.min(duration / 2),
            fade_out_ms: fade_out.min(duration - fade_in.min(duration / 2)),
            level_dba: f(p.level_dba),
            release: None,
            digest: digest.to_string(),
            on_logged: false,
        };
        self.add_voice(v, now)
    }

    fn on_stop(&mut self, s: &Stop, sent_at: Timestamp) -> Vec<LogRecord> {
        let due = self.local_start(s.due);
        let fade = s.fade_out_ms as i64;
        match s.selector {
            StopSelector::All => {
                let b = Barrier { sent_at, due, fade_ms: fade };
                if self.barriers.contains(&b) {
                    return Vec::new();
                }
                self.barriers.push(b);
                for v in self.voices.iter_mut().filter(|v| v.sent_at <= sent_at) {
                    if v.release.is_none_or(|(r, _)| r > due) {
                        v.release = Some((due, fade));
                    }
                }
                for p in self.pendulums.iter_mut().filter(|p| p.sent_at <= sent_at) {
                    p.end = p.end.min(due.max(p.start));
                }
            }
            StopSelector::Voice(id) => {
                if let Some(v) = self.voices.iter_mut().find(|v| v.voice_id == id) {
                    if v.release.is_none_or(|(r, _)| r > due) {
                        v.release = Some((due, fade));
                    }
                } else if let Some(p) = self.pendulums.iter_mut().find(|p| p.voice_id == id) {
                    p.end = p.end.min(due.max(p.start));
                } else {
                    let e = self.voice_stops.entry(id).or_insert((due, fade));
                    if due < e.0 {
                        *e = (due, fade);
                    }
                }
            }
        }
        Vec::new()
    }

    fn on_gain(&mut self, g: &Gain, seq: u64, now: Timestamp, digest: &str) -> Vec<LogRecord> {
        let mut logs = Vec::new();
        let (trim, clamped) = synth::clamp_param(f(g.trim_db), TRIM_RANGE_DB);
        if clamped {
            logs.push(self.log(now, "param_clamped", digest, format!("trim={}", g.trim_db)));
        }
        let s = GainSetting { seq, due: self.local_start(g.due), trim_db: trim, ceiling_dba: f(g.ceiling_dba).min(HARDWARE_CAP_DBA) };
        if !self.gains.iter().any(|x| x.seq == seq) {
            self.gains.push(s);
            self.gains.sort_by_key(|x| (x.due, x.seq));
        }
        logs
    }

    fn on_synth(&mut self, sp: &SynthParam, seq: u64, sent_at: Timestamp, now: Timestamp, digest: &str) -> Vec<LogRecord> {
        let mut clamped = false;
        let mut c = |v: f32, r: (f64, f64)| {
            let (x, moved) = synth::clamp_param(f(v), r);
            clamped |= moved;
            x
        };
        let mut logs = Vec::new();
        match sp {
            SynthParam::Bell { voice_id, due, strokes, interval_ms, decay_s, brightness, detune_cents, level_dba } => {
                if self.known_voices.contains(voice_id) {
                    return logs;
                }
                let decay = c(*decay_s, synth::DECAY_RANGE);
                let bright = c(*brightness, (0.0, 1.0));
                let detune = c(*detune_cents, synth::DETUNE_RANGE);
                let level = c(*level_dba, (0.0, HARDWARE_CAP_DBA));
                let strokes = (*strokes).clamp(1, 12);
                let v = Voice {
                    voice_id: *voice_id,
                    source: VoiceSource::Bell { strokes, interval_ms: *interval_ms, decay_s: decay, brightness: bright, detune_cents: detune },
                    sent_at,
                    start: self.local_start(*due),
                    duration_ms: bell_group_duration_ms(strokes, decay),
                    gain_db: 0.0,
                    fade_in_ms: 0,
                    fade_out_ms: 0,
                    level_dba: level,
                    release: None,
                    digest: digest.to_string(),
                    on_logged: false,
                };
                logs.extend(self.add_voice(v, now));
            }
            SynthParam::Waterfall { due, grain_rate_hz, grain_dur_ms, level_dba, spectral_tilt } => {
                let s = WaterfallSetting {
                    seq,
                    sent_at,
                    due: self.local_start(*due),
                    grain_rate_hz: c(*grain_rate_hz, synth::GRAIN_RATE_RANGE),
                    grain_dur_ms: c(*grain_dur_ms, synth::GRAIN_DUR_RANGE),
                    level_dba: c(*level_dba, (0.0, HARDWARE_CAP_DBA)),
                    spectral_tilt: c(*spectral_tilt, synth::TILT_RANGE),
                };
                if !self.waterfall.iter().any(|w| w.seq == s.seq) {
                    self.waterfall.push(s);
                    self.waterfall.sort_by_key(|w| (w.due, w.seq));
                }
            }
            SynthParam::Pendulum { voice_id, start, end, period_ms, phase_ms, variant, level_dba } => {
                if self.known_voices.insert(*voice_id) {
                    let level = c(*level_dba, (0.0, HARDWARE_CAP_DBA));
                    let period = (*period_ms as i64).max(100);
                    // A late track starts on receipt; pulses are never back-dated.
                    let start = self.local_start(*start).max(now);
                    let mut end = self.local_start(*end);
                    if let Some(b) = self.barrier_cut(sent_at) {
                        end = end.min(b.due.max(start));
                    }
                    let mut t = PendulumTrack {
                        voice_id: *voice_id,
                        sent_at,
                        start,
                        end,
                        period_ms: period,
                        phase_ms: (*phase_ms as i64 + self.offset_estimate_ms - self.clock_skew_ms).rem_euclid(period),
                        variant: *variant,
                        level_dba: level,
                        next_pulse: start,
                        on_logged: false,
                    };
                    t.next_pulse = t.pulse_at_or_after(start);
                    self.pendulums.push(t);
                }
            }
        }
        if clamped {
            logs.push(self.log(now, "param_clamped", digest, format!("seq={seq}")));
        }
        logs
    }

    /// Minimum-delay filter over recent samples, then a bounded step.
    fn on_time_sync(&mut self, generator_clock: Timestamp, now: Timestamp) {
        let local_now = now + self.clock_skew_ms;
        self.sync_samples.push_back(local_now - generator_clock);
        if self.sync_samples.len() > SYNC_FILTER_LEN {
            self.sync_samples.pop_front();
        }
        let target = *self.sync_samples.iter().min().expect("just pushed");
        let error = target - self.offset_estimate_ms;
        if error.abs() > SYNC_DEADBAND_MS {
            self.offset_estimate_ms += error.clamp(-MAX_SYNC_STEP_MS, MAX_SYNC_STEP_MS);
        }
    }

    fn waterfall_at(&self, t: Timestamp) -> Option<&WaterfallSetting> {
        let w = self.waterfall.iter().rev().find(|w| w.due <= t)?;
        match self.barrier_cut(w.sent_at) {
            Some(b) if b.due <= t => None,
            _ => Some(w),
        }
    }

    pub fn gain_at(&self, t: Timestamp) -> Option<&GainSetting> {
        self.gains.iter().rev().find(|g| g.due <= t)
    }

    pub fn trim_at(&self, t: Timestamp) -> f64 {
        self.gain_at(t).map_or(0.0, |g| g.trim_db)
    }

    /// Sounding voices and synth tracks at `t`.
    pub fn voice_count_at(&self, t: Timestamp) -> usize {
        self.voices.iter().filter(|v| v.sounding_at(t)).count()
            + self.pendulums.iter().filter(|p| p.active_at(t)).count()
            + usize::from(self.waterfall_at(t).is_some())
    }

    /// Emitted level at `t` before limiting, without the room floor.
    fn raw_level_at(&self, t: Timestamp) -> f64 {
        let trim = self.trim_at(t);
        let voices = self.voices.iter().filter(|v| v.sounding_at(t)).map(|v| v.level_dba);
        let tracks = self.pendulums.iter().filter(|p| p.active_at(t)).map(|p| p.level_dba);
        let water = self.waterfall_at(t).map(|w| w.level_dba);
        energetic_sum(voices.chain(tracks).chain(water)) + trim
    }

    /// Emitted level at `t` after the output limiter; `-inf` when silent.
    pub fn level_at(&self, t: Timestamp) -> f64 {
        let raw = self.raw_level_at(t);
        let ceiling = self.gain_at(t).map_or(HARDWARE_CAP_DBA, |g| g.ceiling_dba);
        raw.min(ceiling)
    }

    /// Room estimate: floor ⊕ emitted level.
    pub fn level_estimate(&self, t: Timestamp) -> f64 {
        energetic_add(SILENCE_FLOOR_DBA, self.level_at(t))
    }

    /// Limiter gain reduction in dB at `t` (≤ 0).
    fn limiter_db(&self, t: Timestamp) -> f64 {
        let ceiling = self.gain_at(t).map_or(HARDWARE_CAP_DBA, |g| g.ceiling_dba);
        (ceiling - self.raw_level_at(t)).min(0.0)
    }

    pub fn record_level(&mut self, t: Timestamp) {
        if self.level_history.len() == LEVEL_HISTORY_S {
            self.level_history.pop_front();
        }
        let l = self.level_estimate(t);
        self.level_history.push_back((t, l));
    }

    pub fn level_history(&self) -> impl Iterator<Item = &(Timestamp, f64)> {
        self.level_history.iter()
    }

    /// Instants in `(a, b]` at which the level model may change.
    pub fn transitions_between(&self, a: Timestamp, b: Timestamp, out: &mut Vec<Timestamp>) {
        let mut push = |t: Timestamp| {
            if a < t && t <= b {
                out.push(t);
            }
        };
        for v in &self.voices {
            push(v.start);
            push(v.end());
        }
        for p in &self.pendulums {
            push(p.start);
            push(p.end);
        }
        for w in &self.waterfall {
            push(w.due);
        }
        for b in &self.barriers {
            push(b.due);
        }
        for g in &self.gains {
            push(g.due);
        }
    }

    /// Emit logs for every transition up to `now` and drop finished voices.
    pub fn advance(&mut self, now: Timestamp) -> Vec<LogRecord> {
        let mut logs = Vec::new();
        for v in self.voices.iter_mut() {
            if !v.on_logged && v.start <= now && v.end() > v.start {
                v.on_logged = true;
                logs.push(LogRecord::new(
                    v.start,
                    &self.player_id,
                    "voice_on",
                    v.digest.clone(),
                    format!("voice={} src={} level={:.2} end={}", v.voice_id, v.source.label(), v.level_dba, v.natural_end().millis()),
                ));
            }
        }
        if self.voices.iter().any(|v| v.end() <= now) {
            let (done, keep): (Vec<Voice>, Vec<Voice>) = std::mem::take(&mut self.voices).into_iter().partition(|v| v.end() <= now);
            self.voices = keep;
            for v in done.into_iter().filter(|v| v.on_logged) {
                logs.push(LogRecord::new(v.end(), &self.player_id, "voice_off", v.digest, format!("voice={}", v.voice_id)));
            }
        }
        for p in self.pendulums.iter_mut() {
            if !p.on_logged && p.start <= now && p.end > p.start {
                p.on_logged = true;
                logs.push(LogRecord::new(p.start, &self.player_id, "track_on", "", format!("voice={} src=pendulum level={:.2}", p.voice_id, p.level_dba)));
            }
            while p.next_pulse <= now && p.next_pulse < p.end {
                logs.push(LogRecord::new(p.next_pulse, &self.player_id, "pulse", "", format!("voice={} variant={}", p.voice_id, p.variant)));
                p.next_pulse = p.next_pulse + p.period_ms;
            }
        }
        if self.pendulums.iter().any(|p| p.end <= now) {
            let (ended, live): (Vec<PendulumTrack>, Vec<PendulumTrack>) =
                std::mem::take(&mut self.pendulums).into_iter().partition(|p| p.end <= now);
            self.pendulums = live;
            for p in ended.into_iter().filter(|p| p.on_logged) {
                logs.push(LogRecord::new(p.end, &self.player_id, "track_off", "", format!("voice={}", p.voice_id)));
            }
        }
        let current = self.waterfall_at(now).map(|w| w.due);
        if current.is_some() != self.waterfall_on {
            self.waterfall_on = current.is_some();
            let (kind, at) = match current {
                Some(due) => ("track_on", due),
                None => {
                    let last = self.waterfall.iter().rev().find(|w| w.due <= now);
                    ("track_off", last.and_then(|w| self.barrier_cut(w.sent_at)).map_or(now, |b| b.due))
                }
            };
            let at = at.max(self.last_advance).min(now);
            logs.push(LogRecord::new(at, &self.player_id, kind, "", "voice=0 src=waterfall".to_string()));
        }
        self.last_advance = now;
        // Superseded settings are never consulted again.
        if let Some(i) = self.waterfall.iter().rposition(|w| w.due <= now) {
            self.waterfall.drain(..i);
        }
        if let Some(i) = self.gains.iter().rposition(|g| g.due <= now) {
            self.gains.drain(..i);
        }
        logs.sort_by(|a, b| (a.timestamp, &a.kind, &a.summary).cmp(&(b.timestamp, &b.kind, &b.summary)));
        logs
    }

    /// Render one quantum `[t0, t1)` at 44.1 kHz. Pure given the state.
    pub fn render_window(&self, t0: Timestamp, t1: Timestamp) -> RenderBlock {
        let sr = RENDER_RATE as f64;
        let frames = ((t1 - t0) as f64 * sr / 1000.0).round() as usize;
        let mut out = vec![0f64; frames];
        let frame_time = |i: usize| t0.millis() as f64 + i as f64 * 1000.0 / sr;
        let trim_gain = db_to_linear_gain(self.trim_at(t0) + self.limiter_db(t0));
        for v in &self.voices {
            if v.end() <= t0 || v.start >= t1 {
                continue;
            }
            let base = db_to_linear_gain(v.gain_db);
            for (i, o) in out.iter_mut().enumerate() {
                let tm = frame_time(i);
                let t = Timestamp(tm.floor() as i64);
                if !v.sounding_at(t) {
                    continue;
                }
                let since_s = (tm - v.start.millis() as f64) / 1000.0;
                let x = match &v.source {
                    VoiceSource::Sample { sample_id } => match self.assets.pcm(sample_id) {
                        Some(pcm) => {
                            let idx = (since_s * sr).round() as usize;
                            pcm.get(idx).map_or(0.0, |s| *s as f64 / i16::MAX as f64)
                        }
                        None => 0.0,
                    },
                    VoiceSource::Bell { strokes, interval_ms, decay_s, brightness, detune_cents } => {
                        synth::bell_group(since_s, *strokes, *interval_ms, *decay_s, *brightness, *detune_cents)
                    }
                };
                *o += x * base * v.automation_at(t);
            }
        }
        for p in &self.pendulums {
            if p.end <= t0 || p.start >= t1 {
                continue;
            }
            let first = p.pulse_at_or_after(t0 - synth::PENDULUM_IMPULSE_MS);
            let mut pulse = first;
            while pulse < t1 && pulse < p.end {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += synth::pendulum_impulse((frame_time(i) - pulse.millis() as f64) / 1000.0, p.variant);
                }
                pulse = pulse + p.period_ms;
            }
        }
        if let Some(w) = self.waterfall_at(t0) {
            let block = synth::waterfall_block(t0.millis() as f64, frames, sr, w.grain_rate_hz, w.grain_dur_ms, w.spectral_tilt, self.seed);
            out.iter_mut().zip(block).for_each(|(o, b)| *o += b);
        }
        let mut clipped = 0;
        let frames = out
            .iter()
            .map(|x| {
                let y = x * trim_gain;
                if y.abs() > 1.0 {
                    clipped += 1;
                }
                (y.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16
            })
            .collect();
        RenderBlock { frames, level_dba: self.level_estimate(t0), clipped }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBlock {
    pub frames: Vec<i16>,
    pub level_dba: f64,
    pub clipped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::wire::codec::{Body, ControlMessage};

    fn player() -> PlayerState {
        PlayerState::new("p04", AssetStore::preloaded(fixtures::catalog(), fixtures::decoded_assets()))
    }

    fn play(voice: u64, sample: &str, due: i64, level: f32) -> ControlMessage {
        ControlMessage::new(
            voice,
            Timestamp(0),
            Body::Play(Play {
                voice_id: voice,
                sample_id: sample.into(),
                due: Timestamp(due),
                gain_db: 0.0,
                fade_in_ms: 100,
                fade_out_ms: 100,
                duration_ms: 6000,
                level_dba: level,
            }),
        )
    }

    #[test]
    fn silence_is_the_floor() {
        let p = player();
        let b = p.render_window(Timestamp(0), Timestamp(QUANTUM_MS));
        assert_eq!(b.frames.len(), 2205);
        assert!(b.frames.iter().all(|s| *s == 0));
        assert_eq!(b.level_dba, 30.0);
    }

    #[test]
    fn one_and_two_voices() {
        let mut p = player();
        p.handle_message(&play(1, "tit_01", 1000, 67.0), Timestamp(0));
        let one = p.level_estimate(Timestamp(2000));
        let oracle = 10.0 * (10f64.powf(6.7) + 10f64.powf(3.0)).log10();
        assert!((one - oracle).abs() < 1e-9);
        assert!((one - 67.004).abs() < 0.005);
        p.handle_message(&play(2, "tit_02", 1000, 67.0), Timestamp(0));
        let two = p.level_at(Timestamp(2000));
        assert!((two - 70.0103).abs() < 1e-3);
    }

    #[test]
    fn duplicate_play_gives_one_voice() {
        let mut p = player();
        let m = play(1, "tit_01", 3000, 60.0);
        p.handle_message(&m, Timestamp(0));
        p.handle_message(&m, Timestamp(10));
        let bytes = encode(&m).unwrap();
        p.receive("gen", &bytes, Timestamp(20));
        p.receive("gen", &bytes, Timestamp(40_000));
        assert_eq!(p.voices.len(), 1);
    }

    #[test]
    fn voice_enters_playing_at_due() {
        let mut p = player();
        p.handle_message(&play(1, "tit_01", 3000, 60.0), Timestamp(0));
        let v = &p.voices[0];
        assert_eq!(v.state_at(Timestamp(2999)), VoiceState::Scheduled);
        assert_eq!(v.state_at(Timestamp(3000)), VoiceState::Playing);
        let before = p.render_window(Timestamp(2950), Timestamp(3000));
        let after = p.render_window(Timestamp(3000), Timestamp(3050));
        assert!(before.frames.iter().all(|s| *s == 0));
        assert!(after.frames.iter().any(|s| *s != 0));
        let logs = p.advance(Timestamp(3000));
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].kind, "voice_on");
        assert_eq!(logs[0].timestamp, Timestamp(3000));
    }

    #[test]
    fn missing_asset_logged_once() {
        let mut p = PlayerState::new("p04", AssetStore::default());
        let logs = p.handle_message(&play(1, "tit_01", 3000, 60.0), Timestamp(0));
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].kind, "missing_asset");
        assert!(p.voices.is_empty());
        assert!(p.handle_message(&play(1, "tit_01", 3000, 60.0), Timestamp(5)).is_empty());
    }

    #[test]
    fn stale_play_dropped() {
        let mut p = player();
        let logs = p.handle_message(&play(1, "tit_01", 1000, 60.0), Timestamp(6001));
        assert_eq!(logs[0].kind, "stale_play");
        assert!(p.voices.is_empty());
        assert!(p.handle_message(&play(2, "tit_01", 1000, 60.0), Timestamp(6000)).is_empty());
        assert_eq!(p.voices.len(), 1);
    }

    #[test]
    fn stop_all_is_a_barrier() {
        let mut p = player();
        p.handle_message(&play(1, "tit_01", 1000, 60.0), Timestamp(0));
        let stop = ControlMessage::new(
            10,
            Timestamp(500),
            Body::Stop(Stop { selector: StopSelector::All, due: Timestamp(2000), fade_out_ms: 2000 }),
        );
        p.handle_message(&stop, Timestamp(500));
        assert_eq!(p.voices[0].end(), Timestamp(4000));
        assert_eq!(p.voices[0].state_at(Timestamp(2500)), VoiceState::Releasing);
        // Sent before the stop, arriving after it: never plays.
        p.handle_message(&play(2, "tit_02", 3000, 60.0), Timestamp(600));
        assert_eq!(p.voices.len(), 1);
        // Sent after the stop: plays.
        let mut late = play(3, "tit_02", 5000, 60.0);
        late.sent_at = Timestamp(700);
        p.handle_message(&late, Timestamp(700));
        assert_eq!(p.voices.len(), 2);
    }

    #[test]
    fn stop_before_play_under_reorder() {
        let mut p = player();
        let stop = ControlMessage::new(
            10,
            Timestamp(0),
            Body::Stop(Stop { selector: StopSelector::Voice(1), due: Timestamp(2000), fade_out_ms: 500 }),
        );
        p.handle_message(&stop, Timestamp(0));
        p.handle_message(&play(1, "tit_01", 1000, 60.0), Timestamp(10));
        assert_eq!(p.voices[0].end(), Timestamp(2500));
    }

    #[test]
    fn voices_end_by_duration_plus_fade() {
        let mut p = player();
        p.handle_message(&play(1, "tit_01", 1000, 60.0), Timestamp(0));
        assert_eq!(p.voices[0].end(), Timestamp(7000));
        p.advance(Timestamp(1000));
        let logs = p.advance(Timestamp(7000));
        assert_eq!(logs[0].kind, "voice_off");
        assert!(p.voices.is_empty());
    }

    #[test]
    fn gain_last_writer_wins_and_limiter() {
        let mut p = player();
        p.handle_message(&play(1, "tit_01", 1000, 65.0), Timestamp(0));
        let g = |seq, trim: f32| {
            ControlMessage::new(seq, Timestamp(0), Body::Gain(Gain { due: Timestamp(0), trim_db: trim, ceiling_dba: 70.0 }))
        };
        p.handle_message(&g(6, 12.0), Timestamp(0));
        p.handle_message(&g(5, -10.0), Timestamp(0));
        assert_eq!(p.trim_at(Timestamp(100)), 12.0);
        assert_eq!(p.level_at(Timestamp(2000)), 70.0);
        let logs = p.handle_message(&g(7, 20.0), Timestamp(0));
        assert_eq!(logs[0].kind, "param_clamped");
        assert_eq!(p.trim_at(Timestamp(100)), 12.0);
    }

    #[test]
    fn time_sync_steps_are_bounded() {
        let mut p = player();
        p.clock_skew_ms = 1_000;
        for i in 0..5 {
            let before = p.offset_estimate_ms;
            p.handle_message(&ControlMessage::new(i, Timestamp(0), Body::TimeSync { generator_clock: Timestamp(i as i64 * 10_000) }), Timestamp(i as i64 * 10_000));
            assert!((p.offset_estimate_ms - before).abs() <= MAX_SYNC_STEP_MS);
        }
        assert_eq!(p.offset_estimate_ms, 500);
    }

    #[test]
    fn pendulum_pulses_every_period() {
        let mut p = player();
        let msg = ControlMessage::new(
            1,
            Timestamp(0),
            Body::SynthParam(SynthParam::Pendulum {
                voice_id: 9,
                start: Timestamp(0),
                end: Timestamp(60_000),
                period_ms: 4000,
                phase_ms: 2000,
                variant: 1,
                level_dba: 38.0,
            }),
        );
        p.handle_message(&msg, Timestamp(0));
        let pulses: Vec<Timestamp> = p.advance(Timestamp(70_000)).into_iter().filter(|l| l.kind == "pulse").map(|l| l.timestamp).collect();
        assert_eq!(pulses.len(), 15);
        assert_eq!(pulses[0], Timestamp(2000));
        assert!(pulses.windows(2).all(|w| w[1] - w[0] == 4000));
    }

    #[test]
    fn render_is_deterministic() {
        let mut p = player();
        p.handle_message(&play(1, "crow_01", 0, 60.0), Timestamp(0));
        let w = ControlMessage::new(
            2,
            Timestamp(0),
            Body::SynthParam(SynthParam::Waterfall { due: Timestamp(0), grain_rate_hz: 60.0, grain_dur_ms: 40.0, level_dba: 45.0, spectral_tilt: -4.0 }),
        );
        p.handle_message(&w, Timestamp(0));
        let a = p.render_window(Timestamp(1000), Timestamp(1050));
        let b = p.clone().render_window(Timestamp(1000), Timestamp(1050));
        assert_eq!(a, b);
        assert!(a.frames.iter().any(|s| *s != 0));
    }
}
