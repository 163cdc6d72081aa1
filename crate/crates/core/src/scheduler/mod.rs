//! The generator's periodic tick: keeps every zone supplied with sequences
//! and landmark tracks, and turns them into due-timed control messages.
//!
//! Actions are dispatched once they fall inside the lookahead window and
//! then re-sent unchanged at every tick until they expire, so a lost
//! datagram costs nothing as long as one copy arrives.

pub mod overrides;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::composer::landmarks::{bell_groups_between, bell_level, bell_timbre, BELL_REPEAT_OFFSET_MS, BELL_STROKE_INTERVAL_MS, PENDULUM_LEVEL_DBA, PENDULUM_PERIOD_MS};
use crate::composer::landmarks::WATERFALL_MIN_LEVEL_DBA;
use crate::composer::{compose_sequence, waterfall_params, ComposerConfig, EnvelopeShape, Feature, GrainParams, Sequence, Topology, ZoneConfig};
use crate::environment::{hour_band_at, EnvironmentState, WeatherTrace};
use crate::rng::{derive_seed, seeded};
use crate::time::{Timestamp, MS_PER_DAY, MS_PER_MINUTE, MS_PER_SECOND};
use crate::wire::codec::{encode, Body, ControlMessage, Gain, Kind, Play, Stop, StopSelector, SynthParam};
use crate::wire::log::{payload_digest, DispatchLine, LogRecord};

pub use overrides::{ConsoleOverride, OverrideAction, OverrideError, OVERRIDE_TRIM_RANGE_DB};

pub const GENERATOR_NODE: &str = "gen";
/// TIME_SYNC uses its own sequence space so housekeeping never shifts the
/// numbering of scheduled actions.
const SYNC_SEQ_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub tick_ms: i64,
    pub lookahead_ms: i64,
    /// Minimum distance between sequence starts of adjacent zones.
    pub stagger_ms: i64,
    pub master_seed: u64,
    pub waterfall_drift_db: f64,
    pub waterfall_refresh_ms: i64,
    /// How long state-setting messages keep being re-sent after their due time.
    pub retransmit_grace_ms: i64,
    pub mute_fade_ms: i64,
    pub bell_night_cap: Option<u8>,
    pub composer: ComposerConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            tick_ms: 10 * MS_PER_SECOND,
            lookahead_ms: 120 * MS_PER_SECOND,
            stagger_ms: 60 * MS_PER_SECOND,
            master_seed: 1,
            waterfall_drift_db: 0.5,
            waterfall_refresh_ms: 30 * MS_PER_SECOND,
            retransmit_grace_ms: 60 * MS_PER_SECOND,
            mute_fade_ms: 2 * MS_PER_SECOND,
            bell_night_cap: None,
            composer: ComposerConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("scheduler config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scheduler config: {0}")]
    Invalid(String),
}

impl SchedulerConfig {
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SchedulerConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.tick_ms <= 0 || MS_PER_MINUTE % self.tick_ms != 0 {
            return bad("tick_ms must divide one minute");
        }
        if self.lookahead_ms < 2 * self.tick_ms {
            return bad("lookahead_ms must cover at least two ticks");
        }
        if self.stagger_ms < 0 || self.retransmit_grace_ms < 0 || self.mute_fade_ms < 0 {
            return bad("durations must be non-negative");
        }
        Ok(())
    }
}

/// One control message bound for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchAction {
    pub target: String,
    pub msg: ControlMessage,
    pub due: Timestamp,
    pub zone: String,
}

impl DispatchAction {
    pub fn bytes(&self) -> Vec<u8> {
        encode(&self.msg).expect("generator messages fit the datagram format")
    }

    fn plays_once(&self) -> bool {
        matches!(self.msg.body, Body::Play(_) | Body::SynthParam(SynthParam::Bell { .. }))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error("clock regression: last tick {last}, now {now}")]
    ClockRegression { last: Timestamp, now: Timestamp },
    #[error(transparent)]
    Override(#[from] OverrideError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSequence {
    pub sequence_id: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub free_at: Timestamp,
    pub shape: EnvelopeShape,
    /// Dispatched voices as (player, voice id).
    voices: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Default)]
struct ZoneRuntime {
    muted: bool,
    trim_db: f64,
    current: Option<ActiveSequence>,
    free_at: Option<Timestamp>,
    last_start: Option<Timestamp>,
    queue: VecDeque<DispatchAction>,
    bell_cursor: Option<Timestamp>,
    waterfall: Option<GrainParams>,
    waterfall_sent: Option<(GrainParams, Timestamp)>,
    pendulum_until: Option<Timestamp>,
    forced_shape: Option<EnvelopeShape>,
    trigger: bool,
}

/// Read-only view of one zone for monitoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStatus {
    pub zone_id: String,
    pub muted: bool,
    pub trim_db: f64,
    pub active_sequence: Option<String>,
    pub consent: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct GeneratorState {
    pub cfg: SchedulerConfig,
    pub topology: Arc<Topology>,
    pub catalog: Arc<Catalog>,
    pub env: EnvironmentState,
    weather: WeatherTrace,
    weather_cursor: Option<Timestamp>,
    zones: BTreeMap<String, ZoneRuntime>,
    outbox: Vec<DispatchAction>,
    inbox: Vec<ConsoleOverride>,
    pub epoch: u64,
    last_tick: Option<Timestamp>,
    next_seq: u64,
    next_sync_seq: u64,
    next_voice: u64,
    logs: Vec<LogRecord>,
    dispatch_log: Vec<DispatchLine>,
}

impl GeneratorState {
    pub fn new(cfg: SchedulerConfig, topology: Arc<Topology>, catalog: Arc<Catalog>, env: EnvironmentState, weather: WeatherTrace) -> Self {
        let zones = topology.zones.iter().map(|z| (z.zone_id.clone(), ZoneRuntime::default())).collect();
        GeneratorState {
            cfg,
            topology,
            catalog,
            env,
            weather,
            weather_cursor: None,
            zones,
            outbox: Vec::new(),
            inbox: Vec::new(),
            epoch: 0,
            last_tick: None,
            next_seq: 1,
            next_sync_seq: SYNC_SEQ_BASE,
            next_voice: 1,
            logs: Vec::new(),
            dispatch_log: Vec::new(),
        }
    }

    /// Queue a validated override; it takes effect at the first tick at or
    /// after its timestamp.
    pub fn submit(&mut self, o: ConsoleOverride) -> Result<(), OverrideError> {
        o.validate(&self.topology)?;
        self.inbox.push(o);
        Ok(())
    }

    pub fn last_tick(&self) -> Option<Timestamp> {
        self.last_tick
    }

    pub fn take_logs(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.logs)
    }

    pub fn take_dispatch_log(&mut self) -> Vec<DispatchLine> {
        std::mem::take(&mut self.dispatch_log)
    }

    pub fn outbox_len(&self) -> usize {
        self.outbox.len()
    }

    pub fn zone_status(&self) -> Vec<ZoneStatus> {
        self.topology
            .zones
            .iter()
            .map(|z| {
                let rt = &self.zones[&z.zone_id];
                ZoneStatus {
                    zone_id: z.zone_id.clone(),
                    muted: rt.muted,
                    trim_db: rt.trim_db,
                    active_sequence: rt.current.as_ref().map(|s| s.sequence_id.clone()),
                    consent: z.is_bedroom().then(|| self.env.consent(&z.zone_id)),
                }
            })
            .collect()
    }

    pub fn active_sequence(&self, zone: &str) -> Option<&ActiveSequence> {
        self.zones.get(zone)?.current.as_ref()
    }

    /// Every live outbox action, for (re)transmission at `now`.
    pub fn pending(&self) -> &[DispatchAction] {
        &self.outbox
    }

    /// One TIME_SYNC per player carrying the generator clock.
    pub fn time_sync(&mut self, now: Timestamp) -> Vec<DispatchAction> {
        let players = self.topology.player_ids();
        players
            .into_iter()
            .map(|p| {
                let seq = self.next_sync_seq;
                self.next_sync_seq += 1;
                let zone = self.topology.zone_of_player(&p).map(|z| z.zone_id.clone()).unwrap_or_default();
                DispatchAction {
                    target: p,
                    msg: ControlMessage::new(seq, now, Body::TimeSync { generator_clock: now }),
                    due: now,
                    zone,
                }
            })
            .collect()
    }

    fn message(&mut self, now: Timestamp, body: Body) -> ControlMessage {
        let seq = self.next_seq;
        self.next_seq += 1;
        ControlMessage::new(seq, now, body)
    }

    fn voice_id(&mut self) -> u64 {
        let v = self.next_voice;
        self.next_voice += 1;
        v
    }

    fn log(&mut self, t: Timestamp, kind: &str, summary: String) {
        self.logs.push(LogRecord::new(t, GENERATOR_NODE, kind, "", summary));
    }

    fn zone_cfg(&self, id: &str) -> ZoneConfig {
        self.topology.zone(id).expect("runtime zones mirror the topology").clone()
    }

    fn ceiling_dba(zone: &ZoneConfig) -> f64 {
        zone.budget.peak_dba - 10.0 * (zone.player_ids.len() as f64).log10()
    }

    fn gain_actions(&mut self, zone: &ZoneConfig, now: Timestamp, trim: f64) -> Vec<DispatchAction> {
        let ceiling = Self::ceiling_dba(zone) as f32;
        zone.player_ids
            .iter()
            .map(|p| {
                let msg = self.message(now, Body::Gain(Gain { due: now, trim_db: trim as f32, ceiling_dba: ceiling }));
                DispatchAction { target: p.clone(), msg, due: now, zone: zone.zone_id.clone() }
            })
            .collect()
    }

    fn next_second(now: Timestamp) -> Timestamp {
        (now + 1).ceil_to(MS_PER_SECOND)
    }

    /// Drop everything the zone still has in flight or planned.
    fn cancel_zone(&mut self, zone_id: &str) {
        self.outbox.retain(|a| a.zone != zone_id || !matches!(a.msg.body, Body::Play(_) | Body::SynthParam(_)));
        let rt = self.zones.get_mut(zone_id).expect("zone");
        rt.queue.clear();
        rt.current = None;
        rt.free_at = None;
        rt.waterfall = None;
        rt.waterfall_sent = None;
        rt.pendulum_until = None;
    }

    fn stop_all(&mut self, zone: &ZoneConfig, now: Timestamp) -> Vec<DispatchAction> {
        let due = Self::next_second(now);
        let fade = self.cfg.mute_fade_ms as u32;
        zone.player_ids
            .iter()
            .map(|p| {
                let msg = self.message(now, Body::Stop(Stop { selector: StopSelector::All, due, fade_out_ms: fade }));
                DispatchAction { target: p.clone(), msg, due, zone: zone.zone_id.clone() }
            })
            .collect()
    }

    fn stop_sequence(&mut self, zone_id: &str, now: Timestamp) -> Vec<DispatchAction> {
        let Some(seq) = self.zones.get_mut(zone_id).and_then(|rt| rt.current.take()) else {
            return Vec::new();
        };
        let played: Vec<u64> = seq.voices.iter().map(|(_, v)| *v).collect();
        self.outbox.retain(|a| !matches!(&a.msg.body, Body::Play(p) if played.contains(&p.voice_id)));
        let rt = self.zones.get_mut(zone_id).expect("zone");
        rt.queue.clear();
        rt.free_at = Some(now);
        let due = Self::next_second(now);
        let fade = self.cfg.mute_fade_ms as u32;
        self.log(now, "sequence_cut", format!("zone={zone_id} id={}", seq.sequence_id));
        seq.voices
            .into_iter()
            .map(|(p, v)| {
                let msg = self.message(now, Body::Stop(Stop { selector: StopSelector::Voice(v), due, fade_out_ms: fade }));
                DispatchAction { target: p, msg, due, zone: zone_id.to_string() }
            })
            .collect()
    }

    fn apply_override(&mut self, o: &ConsoleOverride, now: Timestamp) -> Vec<DispatchAction> {
        let zone = self.zone_cfg(&o.target);
        self.log(
            now,
            "override",
            format!("kind={} target={} value={} author={} at={}", o.action.name(), o.target, o.action.value(), o.author, o.timestamp),
        );
        match &o.action {
            OverrideAction::Mute => {
                if self.zones[&o.target].muted {
                    return Vec::new();
                }
                self.cancel_zone(&o.target);
                self.zones.get_mut(&o.target).expect("zone").muted = true;
                self.stop_all(&zone, now)
            }
            OverrideAction::Unmute => {
                let rt = self.zones.get_mut(&o.target).expect("zone");
                if rt.muted {
                    rt.muted = false;
                    rt.bell_cursor = Some(now);
                }
                Vec::new()
            }
            OverrideAction::Trim { db } => {
                self.zones.get_mut(&o.target).expect("zone").trim_db = *db;
                self.gain_actions(&zone, now, *db)
            }
            OverrideAction::ConsentSet { granted } => {
                let before = self.env.consent(&o.target);
                self.env.set_consent(&o.target, *granted);
                if before && !granted {
                    self.cancel_zone(&o.target);
                    self.stop_all(&zone, now)
                } else {
                    Vec::new()
                }
            }
            OverrideAction::TriggerSequence { template } => {
                let out = self.stop_sequence(&o.target, now);
                let rt = self.zones.get_mut(&o.target).expect("zone");
                rt.forced_shape = template.as_deref().and_then(|t| t.parse().ok());
                rt.trigger = true;
                rt.free_at = Some(now);
                out
            }
            OverrideAction::StopSequence => self.stop_sequence(&o.target, now),
        }
    }

    /// Start of the next ambient sequence, pushed clear of neighbours.
    fn stagger(&self, zone: &ZoneConfig, mut start: Timestamp) -> Timestamp {
        let neighbours: Vec<Timestamp> = zone
            .neighbor_zones
            .iter()
            .filter_map(|n| self.zones.get(n).and_then(|rt| rt.last_start))
            .collect();
        for _ in 0..=neighbours.len() {
            match neighbours.iter().find(|s| (start - **s).abs() < self.cfg.stagger_ms) {
                Some(s) => start = *s + self.cfg.stagger_ms,
                None => break,
            }
        }
        start
    }

    /// Compose the next sequence for an idle zone. `None` while the zone is
    /// busy, muted or behind a closed consent gate.
    pub fn plan_zone(&mut self, zone_id: &str, now: Timestamp) -> Option<Sequence> {
        let zone = self.zone_cfg(zone_id);
        let rt = &self.zones[zone_id];
        if rt.muted || (zone.is_bedroom() && !self.env.consent(zone_id)) {
            return None;
        }
        let horizon = now + self.cfg.lookahead_ms;
        if rt.free_at.is_some_and(|f| f > horizon) {
            return None;
        }
        let start = if rt.trigger {
            now + self.cfg.tick_ms
        } else {
            let earliest = now + self.cfg.lookahead_ms - self.cfg.tick_ms;
            self.stagger(&zone, rt.free_at.map_or(earliest, |f| f.max(earliest)))
        };
        let mut cfg = self.cfg.composer.clone();
        if let Some(shape) = rt.forced_shape {
            cfg.shape_weights = match shape {
                EnvelopeShape::U => [1.0, 0.0, 0.0],
                EnvelopeShape::InvertedJ => [0.0, 1.0, 0.0],
                EnvelopeShape::Aba => [0.0, 0.0, 1.0],
            };
        }
        let seed = derive_seed(self.cfg.master_seed, &[zone_id.as_bytes(), &self.epoch.to_le_bytes()]);
        let env = self.env.at(start);
        Some(compose_sequence(&zone, &env, &self.catalog, &cfg, &mut seeded(seed)))
    }

    fn schedule_sequence(&mut self, zone: &ZoneConfig, seq: Sequence, now: Timestamp) {
        let mut voices = Vec::with_capacity(seq.events.len());
        let mut actions = Vec::with_capacity(seq.events.len());
        for ev in &seq.events {
            let voice_id = self.voice_id();
            let due = seq.start_time + ev.onset_ms;
            let msg = self.message(
                now,
                Body::Play(Play {
                    voice_id,
                    sample_id: ev.sample_id.clone(),
                    due,
                    gain_db: ev.gain_db as f32,
                    fade_in_ms: ev.fade_in_ms as u32,
                    fade_out_ms: ev.fade_out_ms as u32,
                    duration_ms: ev.duration_ms as u32,
                    level_dba: ev.level_dba as f32,
                }),
            );
            voices.push((ev.target_player.clone(), voice_id));
            actions.push(DispatchAction { target: ev.target_player.clone(), msg, due, zone: zone.zone_id.clone() });
        }
        actions.sort_by_key(|a| (a.due, a.msg.seq));
        self.log(
            now,
            "sequence",
            format!(
                "zone={} id={} start={} duration_ms={} tail_ms={} events={} shape={}",
                zone.zone_id,
                seq.sequence_id,
                seq.start_time,
                seq.duration_ms,
                seq.tail_silence_ms,
                seq.events.len(),
                seq.envelope.shape
            ),
        );
        let rt = self.zones.get_mut(&zone.zone_id).expect("zone");
        rt.free_at = Some(seq.end_time());
        rt.last_start = Some(seq.start_time);
        rt.trigger = false;
        rt.forced_shape = None;
        rt.current = Some(ActiveSequence {
            sequence_id: seq.sequence_id.clone(),
            start: seq.start_time,
            end: seq.start_time + seq.duration_ms,
            free_at: seq.end_time(),
            shape: seq.envelope.shape,
            voices,
        });
        rt.queue.extend(actions);
    }

    fn bells(&mut self, zone: &ZoneConfig, now: Timestamp) -> Vec<DispatchAction> {
        let horizon = now + self.cfg.lookahead_ms;
        let cursor = self.zones[&zone.zone_id].bell_cursor.unwrap_or(now);
        self.zones.get_mut(&zone.zone_id).expect("zone").bell_cursor = Some(horizon.max(cursor));
        if self.zones[&zone.zone_id].muted {
            return Vec::new();
        }
        let timbre = bell_timbre(&self.env.effective_weather());
        let mut out = Vec::new();
        // The repeat travels with its hour group, so a pair is never split
        // by the lookahead boundary.
        let groups = bell_groups_between(cursor, horizon + BELL_REPEAT_OFFSET_MS, self.cfg.bell_night_cap);
        let hours: Vec<Timestamp> = groups.iter().filter(|g| g.repeat == 0 && g.time <= horizon).map(|g| g.time).collect();
        for g in groups.into_iter().filter(|g| hours.contains(&(g.time - g.repeat as i64 * BELL_REPEAT_OFFSET_MS))) {
            let level = bell_level(self.env.schedule.level_at_minute(g.time.minute_of_day()), hour_band_at(g.time));
            for p in &zone.player_ids {
                let voice_id = self.voice_id();
                let msg = self.message(
                    now,
                    Body::SynthParam(SynthParam::Bell {
                        voice_id,
                        due: g.time,
                        strokes: g.strokes,
                        interval_ms: BELL_STROKE_INTERVAL_MS as u32,
                        decay_s: timbre.decay_s as f32,
                        brightness: timbre.brightness as f32,
                        detune_cents: timbre.detune_cents as f32,
                        level_dba: level as f32,
                    }),
                );
                out.push(DispatchAction { target: p.clone(), msg, due: g.time, zone: zone.zone_id.clone() });
            }
        }
        out
    }

    fn waterfall(&mut self, zone: &ZoneConfig, now: Timestamp) -> Vec<DispatchAction> {
        let rt = &self.zones[&zone.zone_id];
        if rt.muted {
            return Vec::new();
        }
        let params = waterfall_params(&self.env, rt.waterfall.as_ref());
        // A negative trim must not take the zone under its floor: the
        // waterfall is sent hot enough to land at its minimum after trim.
        let mut sent_params = params;
        if zone.budget.min_dba.is_some() && rt.trim_db < 0.0 {
            sent_params.level_dba = params.level_dba.max(WATERFALL_MIN_LEVEL_DBA - rt.trim_db);
        }
        let resend = match rt.waterfall_sent {
            None => true,
            Some((sent, at)) => {
                (sent_params.level_dba - sent.level_dba).abs() > self.cfg.waterfall_drift_db || now - at >= self.cfg.waterfall_refresh_ms
            }
        };
        self.zones.get_mut(&zone.zone_id).expect("zone").waterfall = Some(params);
        if !resend {
            return Vec::new();
        }
        let params = sent_params;
        self.zones.get_mut(&zone.zone_id).expect("zone").waterfall_sent = Some((params, now));
        let mut out = Vec::new();
        for p in &zone.player_ids {
            let msg = self.message(
                now,
                Body::SynthParam(SynthParam::Waterfall {
                    due: now,
                    grain_rate_hz: params.grain_rate_hz as f32,
                    grain_dur_ms: params.grain_dur_ms as f32,
                    level_dba: params.level_dba as f32,
                    spectral_tilt: params.spectral_tilt as f32,
                }),
            );
            out.push(DispatchAction { target: p.clone(), msg, due: now, zone: zone.zone_id.clone() });
        }
        out
    }

    /// The bedtime window overlapping `[now, horizon]`, if any.
    fn bedtime_window(zone: &ZoneConfig, now: Timestamp, horizon: Timestamp) -> Option<(Timestamp, Timestamp)> {
        let (a, b) = zone.bedtime?;
        let midnight = now.midnight();
        (-1..=1)
            .map(|d| {
                let day = midnight + d * MS_PER_DAY;
                let start = day + a as i64 * MS_PER_MINUTE;
                let end = if b > a { day + b as i64 * MS_PER_MINUTE } else { day + MS_PER_DAY + b as i64 * MS_PER_MINUTE };
                (start, end)
            })
            .find(|(s, e)| *e > now && *s <= horizon)
    }

    fn pendulum(&mut self, zone: &ZoneConfig, now: Timestamp) -> Vec<DispatchAction> {
        let rt = &self.zones[&zone.zone_id];
        if rt.muted || !self.env.consent(&zone.zone_id) {
            return Vec::new();
        }
        let horizon = now + self.cfg.lookahead_ms;
        let Some((bed_start, bed_end)) = Self::bedtime_window(zone, now, horizon) else {
            return Vec::new();
        };
        if rt.pendulum_until.is_some_and(|u| u >= bed_end) {
            return Vec::new();
        }
        // A full lookahead of retransmissions lands before the first pulse.
        let start = bed_start.max(now + self.cfg.lookahead_ms);
        self.zones.get_mut(&zone.zone_id).expect("zone").pendulum_until = Some(bed_end);
        self.log(now, "pendulum", format!("zone={} start={} end={}", zone.zone_id, start, bed_end));
        let n = zone.player_ids.len() as i64;
        let mut out = Vec::new();
        for (i, p) in zone.player_ids.iter().enumerate() {
            let voice_id = self.voice_id();
            let msg = self.message(
                now,
                Body::SynthParam(SynthParam::Pendulum {
                    voice_id,
                    start,
                    end: bed_end,
                    period_ms: (PENDULUM_PERIOD_MS * n) as u32,
                    phase_ms: (PENDULUM_PERIOD_MS * i as i64) as u32,
                    variant: i as u8,
                    level_dba: PENDULUM_LEVEL_DBA as f32,
                }),
            );
            out.push(DispatchAction { target: p.clone(), msg, due: start, zone: zone.zone_id.clone() });
        }
        out
    }

    /// Advance to `now` and return the actions dispatched for the first time.
    /// Re-ticking at the same instant returns nothing.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<DispatchAction>, SchedulerError> {
        if let Some(last) = self.last_tick {
            if now < last {
                return Err(SchedulerError::ClockRegression { last, now });
            }
            if now == last {
                return Ok(Vec::new());
            }
        }
        let first = self.last_tick.is_none();
        self.last_tick = Some(now);
        self.epoch += 1;
        self.env.clock.advance_to(now).map_err(|_| SchedulerError::ClockRegression { last: self.env.now(), now })?;
        let readings: Vec<_> = self.weather.between(self.weather_cursor, now).cloned().collect();
        for r in readings {
            if let Err(e) = self.env.ingest_weather(r) {
                self.log(now, "weather_rejected", e.to_string());
            }
        }
        self.weather_cursor = Some(now);

        let mut fresh: Vec<DispatchAction> = Vec::new();
        if first {
            for zone in self.topology.clone().zones.iter() {
                fresh.extend(self.gain_actions(zone, now, 0.0));
            }
        }
        let mut inbox = std::mem::take(&mut self.inbox);
        inbox.sort_by_key(|o| o.timestamp);
        let (ready, later): (Vec<_>, Vec<_>) = inbox.into_iter().partition(|o| o.timestamp <= now);
        self.inbox = later;
        for o in &ready {
            fresh.extend(self.apply_override(o, now));
        }

        let grace = self.cfg.retransmit_grace_ms;
        self.outbox.retain(|a| if a.plays_once() { a.due >= now } else { a.due + grace >= now });

        let horizon = now + self.cfg.lookahead_ms;
        let topology = self.topology.clone();
        for zone in &topology.zones {
            if self.zones[&zone.zone_id].queue.is_empty() {
                if let Some(seq) = self.plan_zone(&zone.zone_id, now) {
                    self.schedule_sequence(zone, seq, now);
                }
            }
            let rt = self.zones.get_mut(&zone.zone_id).expect("zone");
            while rt.queue.front().is_some_and(|a| a.due <= horizon) {
                fresh.push(rt.queue.pop_front().expect("front"));
            }
            if zone.has(Feature::Bells) {
                fresh.extend(self.bells(zone, now));
            }
            if zone.has(Feature::Waterfall) {
                fresh.extend(self.waterfall(zone, now));
            }
            if zone.has(Feature::Pendulum) {
                fresh.extend(self.pendulum(zone, now));
            }
        }

        for a in &fresh {
            self.dispatch_log.push(DispatchLine {
                epoch: self.epoch,
                virtual_time: now,
                player: a.target.clone(),
                msg_type: a.msg.kind().as_str().to_string(),
                msg_digest: payload_digest(&a.bytes()),
            });
        }
        self.outbox.extend(fresh.iter().cloned());
        Ok(fresh)
    }
}

/// Sequence number of a message dispatched by `tick` (not TIME_SYNC).
pub fn is_scheduled(kind: Kind, seq: u64) -> bool {
    kind != Kind::TimeSync && seq < SYNC_SEQ_BASE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::level::headroom;

    fn generator(start: Timestamp) -> GeneratorState {
        GeneratorState::new(
            SchedulerConfig::default(),
            Arc::new(Topology::bundled()),
            Arc::new(fixtures::catalog().clone()),
            EnvironmentState::bundled(start),
            WeatherTrace::default(),
        )
    }

    fn run(g: &mut GeneratorState, from: Timestamp, to: Timestamp) -> Vec<DispatchAction> {
        let mut out = Vec::new();
        let mut t = from;
        while t <= to {
            out.extend(g.tick(t).unwrap());
            t = t + g.cfg.tick_ms;
        }
        out
    }

    #[test]
    fn bells_inside_lookahead() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 14, 59, 30);
        let mut g = generator(t);
        let acts = g.tick(t).unwrap();
        let bells: Vec<(String, Timestamp, u8)> = acts
            .iter()
            .filter_map(|a| match &a.msg.body {
                Body::SynthParam(SynthParam::Bell { due, strokes, .. }) => Some((a.zone.clone(), *due, *strokes)),
                _ => None,
            })
            .collect();
        let at = |h, m| Timestamp::from_ymd_hms(2026, 1, 12, h, m, 0);
        for zone in ["bells_east", "bells_west"] {
            let mine: Vec<_> = bells.iter().filter(|b| b.0 == zone).map(|b| (b.1, b.2)).collect();
            assert_eq!(mine, vec![(at(15, 0), 3), (at(15, 2), 3)]);
        }
        assert!(acts.iter().all(|a| a.due >= t || matches!(a.msg.body, Body::Gain(_))));
        assert!(acts.iter().all(|a| a.due <= t + g.cfg.lookahead_ms + BELL_REPEAT_OFFSET_MS));
    }

    #[test]
    fn retick_is_idempotent() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 9, 0, 0);
        let mut g = generator(t);
        assert!(!g.tick(t).unwrap().is_empty());
        assert!(g.tick(t).unwrap().is_empty());
        assert!(matches!(g.tick(t - 1), Err(SchedulerError::ClockRegression { .. })));
    }

    #[test]
    fn adjacent_zones_stagger() {
        for seed in 0..8 {
            let t = Timestamp::from_ymd_hms(2026, 4, 13, 10, 0, 0);
            let mut g = generator(t);
            g.cfg.master_seed = seed;
            run(&mut g, t, t + 3 * 3_600_000);
            let logs = g.take_logs();
            let starts: Vec<(String, Timestamp)> = logs
                .iter()
                .filter(|l| l.kind == "sequence")
                .map(|l| {
                    let f = |k: &str| l.summary.split(' ').find_map(|p| p.strip_prefix(k)).unwrap().to_string();
                    (f("zone="), f("start=").parse().unwrap())
                })
                .collect();
            let topo = Topology::bundled();
            for (i, (za, sa)) in starts.iter().enumerate() {
                for (zb, sb) in &starts[i + 1..] {
                    if topo.are_neighbors(za, zb) {
                        assert!((*sa - *sb).abs() >= 60_000, "{za} {sa} vs {zb} {sb}");
                    }
                }
            }
        }
    }

    #[test]
    fn same_epoch_same_sequence() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0);
        let mut a = generator(t);
        let mut b = generator(t);
        a.epoch = 7;
        b.epoch = 7;
        assert_eq!(a.plan_zone("north_room", t), b.plan_zone("north_room", t));
    }

    #[test]
    fn closed_consent_gate_plans_nothing() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0);
        let mut g = generator(t);
        assert!(g.plan_zone("room_1", t).is_none());
        g.env.set_consent("room_1", true);
        assert!(g.plan_zone("room_1", t).is_some());
    }

    #[test]
    fn plays_respect_budgets() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 0, 0, 0);
        let mut g = generator(t);
        for r in ["room_1", "room_2", "room_4"] {
            g.env.set_consent(r, true);
        }
        let topo = Topology::bundled();
        let acts = run(&mut g, t, t + MS_PER_DAY);
        let mut plays = 0;
        for a in &acts {
            let peak = topo.zone(&a.zone).unwrap().budget.peak_dba;
            if let Body::Play(p) = &a.msg.body {
                plays += 1;
                assert!((p.level_dba as f64) <= peak, "{p:?}");
                assert!(headroom(p.level_dba as f64, peak).is_some());
            }
        }
        assert!(plays > 100);
    }

    #[test]
    fn mute_stops_within_one_tick() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 10, 0, 0);
        let mut g = generator(t);
        run(&mut g, t, t + 600_000);
        let at = t + 605_000;
        g.submit(ConsoleOverride::new(OverrideAction::Mute, "north_room", "nurse_a", at)).unwrap();
        let acts = g.tick(t + 610_000).unwrap();
        let stops: Vec<_> = acts.iter().filter(|a| matches!(a.msg.body, Body::Stop(_))).collect();
        assert_eq!(stops.len(), 1);
        assert_eq!(stops[0].target, "p04");
        match &stops[0].msg.body {
            Body::Stop(s) => {
                assert_eq!(s.selector, StopSelector::All);
                assert_eq!(s.due, t + 611_000);
                assert_eq!(s.fade_out_ms, 2000);
            }
            _ => unreachable!(),
        }
        assert!(g.pending().iter().all(|a| a.zone != "north_room" || !matches!(a.msg.body, Body::Play(_))));
        let later = run(&mut g, t + 620_000, t + 3_600_000);
        assert!(later.iter().all(|a| a.zone != "north_room"));
        assert!(g.submit(ConsoleOverride::new(OverrideAction::Trim { db: 13.0 }, "north_room", "nurse_a", at)).is_err());
    }

    #[test]
    fn consent_opens_pendulum_at_bedtime() {
        let t = Timestamp::from_ymd_hms(2026, 1, 12, 20, 50, 0);
        let mut g = generator(t);
        g.submit(ConsoleOverride::new(OverrideAction::ConsentSet { granted: true }, "room_4", "nurse_a", t)).unwrap();
        let acts = run(&mut g, t, t + 600_000);
        let tracks: Vec<_> = acts
            .iter()
            .filter_map(|a| match &a.msg.body {
                Body::SynthParam(SynthParam::Pendulum { start, period_ms, phase_ms, .. }) => Some((a.target.clone(), *start, *period_ms, *phase_ms)),
                _ => None,
            })
            .collect();
        let nine = Timestamp::from_ymd_hms(2026, 1, 12, 21, 0, 0);
        assert_eq!(tracks, vec![("p19".to_string(), nine, 4000, 0), ("p20".to_string(), nine, 4000, 2000)]);
    }

    #[test]
    fn config_from_toml() {
        let c = SchedulerConfig::parse_toml("tick_ms = 5000\nmaster_seed = 9\n").unwrap();
        assert_eq!(c.tick_ms, 5000);
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.lookahead_ms, 120_000);
        assert!(SchedulerConfig::parse_toml("tick_ms = 7000").is_err());
        assert!(SchedulerConfig::parse_toml("tik_ms = 5000").is_err());
    }
}
