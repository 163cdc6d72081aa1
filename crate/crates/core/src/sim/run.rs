//! Discrete-event run of the whole unit at one-second resolution.

use std::collections::BTreeMap;

use crate::environment::{EnvironmentState, EthologyTable, VirtualClock};
use crate::fixtures;
use crate::level::{energetic_sum, SILENCE_FLOOR_DBA};
use crate::player::{AssetStore, PlayerState};
use crate::rng::derive_seed;
use crate::scheduler::{ConsoleOverride, GeneratorState, OverrideError, SchedulerError, GENERATOR_NODE};
use crate::time::{Timestamp, MS_PER_SECOND};
use crate::wire::log::LogRecord;
use crate::wire::sync::{synchronize, MemorySource};

use super::network::{NetStats, VirtualNetwork};
use super::scenario::{Resolved, ScenarioError};
use super::trace::{LevelSample, Trace, TraceHeader, TraceRecord};

const STEP_MS: i64 = MS_PER_SECOND;
const SYNC_BATCH: usize = 8;
const SYNC_MAX_ROUNDS: u32 = 16;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Override(#[from] OverrideError),
}

struct ZoneProbe {
    zone_id: String,
    players: Vec<usize>,
    last: Option<(String, usize)>,
}

/// A running simulation; `step` advances one second of virtual time.
pub struct Simulation {
    resolved: Resolved,
    gen: GeneratorState,
    players: Vec<PlayerState>,
    index: BTreeMap<String, usize>,
    probes: Vec<ZoneProbe>,
    net: VirtualNetwork,
    t0: Timestamp,
    now: Timestamp,
    end: Timestamp,
    started: bool,
    records: Vec<TraceRecord>,
    scratch: Vec<Timestamp>,
}

impl Simulation {
    pub fn new(resolved: Resolved) -> Result<Self, SimError> {
        let s = resolved.scenario.clone();
        let (start, end) = resolved.window();
        let tick = s.scheduler.tick_ms;
        let t0 = (start - s.preroll_s * MS_PER_SECOND).floor_to(tick);

        let mut cfg = s.scheduler.clone();
        cfg.master_seed = s.seed;
        let mut env = EnvironmentState::new(
            VirtualClock::new(t0, s.acceleration).map_err(|e| ScenarioError::Invalid(e.to_string()))?,
            resolved.schedule.clone(),
            EthologyTable::bundled(),
        );
        for room in &s.consent {
            env.set_consent(room, true);
        }
        let mut gen = GeneratorState::new(cfg, resolved.topology.clone(), resolved.catalog.clone(), env, resolved.weather.clone());
        for o in &s.overrides {
            gen.submit(o.clone())?;
        }

        let mut records: Vec<TraceRecord> = s
            .consent
            .iter()
            .map(|room| TraceRecord::Log(LogRecord::new(t0, GENERATOR_NODE, "consent", "", format!("zone={room} granted=true"))))
            .collect();
        let mut players = Vec::new();
        let mut index = BTreeMap::new();
        for (i, id) in resolved.topology.player_ids().into_iter().enumerate() {
            let assets = if s.players.asset_sync {
                let mut store = AssetStore::with_shared(fixtures::decoded_by_digest());
                let mut source = MemorySource::new(fixtures::assets(), s.faults.transfer_failures.iter().copied());
                let rep = synchronize(&mut store, &resolved.catalog, &mut source, SYNC_BATCH, SYNC_MAX_ROUNDS);
                records.push(TraceRecord::Log(LogRecord::new(
                    t0,
                    &id,
                    "asset_sync",
                    rep.final_hash.clone(),
                    format!("rounds={} transfers={} failures={} converged={}", rep.rounds, rep.transfers, rep.failures, rep.converged),
                )));
                store
            } else {
                AssetStore::preloaded(&resolved.catalog, fixtures::decoded_assets())
            };
            let mut p = PlayerState::new(&id, assets);
            p.clock_skew_ms = s.players.clock_skew_ms.get(&id).copied().unwrap_or(0);
            index.insert(id, i);
            players.push(p);
        }
        let probes = resolved
            .topology
            .zones
            .iter()
            .map(|z| ZoneProbe { zone_id: z.zone_id.clone(), players: z.player_ids.iter().map(|p| index[p]).collect(), last: None })
            .collect();
        let net = VirtualNetwork::new(s.faults.clone(), derive_seed(s.seed, &[b"network"]));
        Ok(Simulation { resolved, gen, players, index, probes, net, t0, now: t0, end, started: false, records, scratch: Vec::new() })
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn window(&self) -> (Timestamp, Timestamp) {
        self.resolved.window()
    }

    pub fn finished(&self) -> bool {
        self.started && self.now >= self.end
    }

    pub fn generator(&self) -> &GeneratorState {
        &self.gen
    }

    pub fn player(&self, id: &str) -> Option<&PlayerState> {
        self.index.get(id).map(|i| &self.players[*i])
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Hand over the records gathered so far; a long-running server streams
    /// them out instead of keeping the whole trace.
    pub fn drain_records(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.records)
    }

    /// Labels of what is sounding in `zone` right now.
    pub fn sounding(&self, zone: &str) -> Vec<String> {
        let Some(probe) = self.probes.iter().find(|p| p.zone_id == zone) else {
            return Vec::new();
        };
        let mut out: Vec<String> = probe
            .players
            .iter()
            .flat_map(|i| self.players[*i].voices.iter().filter(|v| v.sounding_at(self.now)).map(|v| v.source.label()))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn topology(&self) -> &crate::composer::Topology {
        &self.resolved.topology
    }

    pub fn net_stats(&self) -> NetStats {
        self.net.stats
    }

    /// Latest level sample per zone.
    pub fn zone_levels(&self) -> Vec<(String, f64, usize)> {
        self.probes
            .iter()
            .map(|p| {
                let (l, v) = p.last.as_ref().map_or((SILENCE_FLOOR_DBA, 0), |(l, v)| (l.parse().unwrap_or(SILENCE_FLOOR_DBA), *v));
                (p.zone_id.clone(), l, v)
            })
            .collect()
    }

    /// Hand a console override to the generator inbox. It applies at the
    /// next tick.
    pub fn submit(&mut self, mut o: ConsoleOverride) -> Result<(), OverrideError> {
        o.timestamp = o.timestamp.max(self.now);
        self.gen.submit(o)
    }

    fn zone_level(&self, probe: &ZoneProbe, t: Timestamp) -> (f64, usize) {
        let emitted = energetic_sum(probe.players.iter().map(|i| self.players[*i].level_at(t)));
        let voices = probe.players.iter().map(|i| self.players[*i].voice_count_at(t)).sum();
        (energetic_sum([SILENCE_FLOOR_DBA, emitted]), voices)
    }

    fn sample_levels(&mut self, from: Timestamp, to: Timestamp) {
        for z in 0..self.probes.len() {
            self.scratch.clear();
            for i in &self.probes[z].players {
                self.players[*i].transitions_between(from, to, &mut self.scratch);
            }
            self.scratch.push(to);
            self.scratch.sort();
            self.scratch.dedup();
            for k in 0..self.scratch.len() {
                let t = self.scratch[k];
                let (level, voices) = self.zone_level(&self.probes[z], t);
                let key = (format!("{level:.3}"), voices);
                if self.probes[z].last.as_ref() != Some(&key) {
                    self.records.push(TraceRecord::Level(LevelSample {
                        timestamp: t,
                        zone: self.probes[z].zone_id.clone(),
                        level_dba: level,
                        voices,
                    }));
                    self.probes[z].last = Some(key);
                }
            }
        }
    }

    /// Advance one step. Returns `false` once the window end is reached.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.finished() {
            return Ok(false);
        }
        let t = if self.started { self.now + STEP_MS } else { self.t0 };
        let prev = if self.started { self.now } else { t - STEP_MS };
        self.started = true;
        self.now = t;

        while let Some(d) = self.net.pop_due(t) {
            let logs = self.players[d.to].receive(GENERATOR_NODE, &d.bytes, d.at);
            self.records.extend(logs.into_iter().map(TraceRecord::Log));
        }
        if (t - self.t0) % self.resolved.scenario.scheduler.tick_ms == 0 {
            self.gen.tick(t)?;
            for a in self.gen.pending() {
                self.net.send(t, self.index[&a.target], a.bytes());
            }
            for a in self.gen.time_sync(t) {
                self.net.send(t, self.index[&a.target], a.bytes());
            }
            self.records.extend(self.gen.take_dispatch_log().into_iter().map(TraceRecord::Dispatch));
            self.records.extend(self.gen.take_logs().into_iter().map(TraceRecord::Log));
        }
        self.sample_levels(prev, t);
        for p in &mut self.players {
            let logs = p.advance(t);
            self.records.extend(logs.into_iter().map(TraceRecord::Log));
            p.record_level(t);
        }
        Ok(t < self.end)
    }

    pub fn finish(mut self) -> Trace {
        let s = &self.resolved.scenario;
        let (start, end) = self.resolved.window();
        self.records.sort_by_key(|r| r.timestamp());
        Trace { header: TraceHeader { name: s.name.clone(), seed: s.seed, start, end }, records: self.records }
    }
}

/// Run a scenario to completion as fast as possible.
pub fn run(resolved: &Resolved) -> Result<Trace, SimError> {
    let mut sim = Simulation::new(resolved.clone())?;
    while sim.step()? {}
    Ok(sim.finish())
}

/// The dispatch log the scheduler alone produces for this scenario: the
/// reference a trace's `D` records are checked against.
pub fn replay_dispatch(resolved: &Resolved) -> Result<Vec<crate::wire::log::DispatchLine>, SimError> {
    let sim = Simulation::new(resolved.clone())?;
    let mut gen = sim.gen;
    let tick = resolved.scenario.scheduler.tick_ms;
    let mut t = sim.t0;
    let mut out = Vec::new();
    while t <= sim.end {
        gen.tick(t)?;
        gen.time_sync(t);
        out.extend(gen.take_dispatch_log());
        t = t + tick;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;

    fn resolved(extra: &str) -> Resolved {
        let text = format!("name = \"t\"\nstart = \"2026-01-12T10:00:00\"\nduration = \"1h\"\n{extra}");
        Scenario::parse(&text).unwrap().resolve(None).unwrap()
    }

    #[test]
    fn runs_are_byte_identical() {
        let r = resolved("seed = 9\n");
        assert_eq!(run(&r).unwrap().render(), run(&r).unwrap().render());
    }

    #[test]
    fn seed_changes_the_program() {
        assert_ne!(run(&resolved("seed = 1\n")).unwrap().render(), run(&resolved("seed = 2\n")).unwrap().render());
    }

    #[test]
    fn trace_round_trips_through_text() {
        let trace = run(&resolved("")).unwrap();
        assert_eq!(Trace::parse(&trace.render()).unwrap().render(), trace.render());
    }

    #[test]
    fn dispatch_log_matches_replay() {
        let r = resolved("");
        let trace = run(&r).unwrap();
        let logged: Vec<_> = trace.dispatches().cloned().collect();
        assert_eq!(logged, replay_dispatch(&r).unwrap());
    }

    #[test]
    fn live_submit_mutes_within_a_tick() {
        let r = resolved("");
        let mut sim = Simulation::new(r).unwrap();
        while sim.now() < Timestamp::from_ymd_hms(2026, 1, 12, 10, 10, 3) {
            sim.step().unwrap();
        }
        let at = sim.now();
        sim.submit(ConsoleOverride::new(crate::scheduler::OverrideAction::Mute, "north_room", "nurse_a", at)).unwrap();
        while sim.now() < at + 10_000 {
            sim.step().unwrap();
        }
        let trace = sim.finish();
        assert!(trace.dispatches().any(|d| d.player == "p04" && d.msg_type == "STOP" && d.virtual_time > at && d.virtual_time <= at + 10_000));
    }

    #[test]
    fn asset_sync_from_empty_converges() {
        let r = resolved("[faults]\ntransfer_failures = [1, 4, 7]\n[players]\nasset_sync = true\n");
        let trace = run(&r).unwrap();
        let reports: Vec<_> = trace.logs().filter(|l| l.kind == "asset_sync").collect();
        assert_eq!(reports.len(), 24);
        assert!(reports.iter().all(|l| l.summary.contains("failures=3 converged=true")), "{:?}", reports[0]);
    }
}
