//! Paced simulation behind the console: one task owns the generator, the
//! HTTP side reads published snapshots and writes through the inbox.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::sync::{mpsc, oneshot, watch};

use crate::composer::{Feature, ZoneClass};
use crate::scheduler::{ConsoleOverride, OverrideError};
use crate::sim::{Simulation, TraceRecord};
use crate::time::{iso, Timestamp};

/// Seconds of level history kept per zone.
pub const LEVEL_HISTORY_S: usize = 600;
pub const DISPATCH_TAIL: usize = 500;
const BATCH_SLEEP: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPoint {
    #[serde(with = "iso")]
    pub t: Timestamp,
    pub level_dba: f64,
    pub voices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneView {
    pub zone_id: String,
    pub zone_class: ZoneClass,
    pub features: Vec<Feature>,
    pub player_ids: Vec<String>,
    pub position: Option<(f64, f64)>,
    pub muted: bool,
    pub trim_db: f64,
    /// Bedrooms only.
    pub consent: Option<bool>,
    pub active_sequence: Option<String>,
    pub level_dba: f64,
    pub voices: usize,
    pub sounding: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Snapshot {
    #[serde(with = "iso::option")]
    pub now: Option<Timestamp>,
    #[serde(with = "iso::option")]
    pub last_tick: Option<Timestamp>,
    pub finished: bool,
    pub zones: Vec<ZoneView>,
    #[serde(skip)]
    pub levels: BTreeMap<String, Vec<LevelPoint>>,
    /// Most recent dispatch lines, oldest first.
    pub recent_dispatch: Vec<String>,
}

impl Snapshot {
    pub fn zone(&self, id: &str) -> Option<&ZoneView> {
        self.zones.iter().find(|z| z.zone_id == id)
    }

    /// The last `window_s` seconds of a zone's level series.
    pub fn level_tail(&self, zone: &str, window_s: usize) -> &[LevelPoint] {
        let s = self.levels.get(zone).map(Vec::as_slice).unwrap_or(&[]);
        &s[s.len().saturating_sub(window_s)..]
    }
}

pub type Reply = oneshot::Sender<Result<(), OverrideError>>;

#[derive(Clone)]
pub struct RuntimeHandle {
    pub snapshot: watch::Receiver<Arc<Snapshot>>,
    inbox: mpsc::Sender<(ConsoleOverride, Reply)>,
}

impl RuntimeHandle {
    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    /// Queue an override; resolves once the generator has accepted it.
    pub async fn submit(&self, o: ConsoleOverride) -> Result<(), OverrideError> {
        let (tx, rx) = oneshot::channel();
        if self.inbox.send((o, tx)).await.is_err() {
            return Err(OverrideError::Unavailable);
        }
        rx.await.unwrap_or(Err(OverrideError::Unavailable))
    }
}

struct Driver {
    sim: Simulation,
    history: BTreeMap<String, VecDeque<LevelPoint>>,
    dispatch: VecDeque<String>,
    sink: Option<std::fs::File>,
}

impl Driver {
    fn step(&mut self) {
        if self.sim.finished() {
            return;
        }
        if let Err(e) = self.sim.step() {
            // Clock regressions cannot happen with a monotone step; keep serving.
            eprintln!("simulation step failed: {e}");
        }
        let now = self.sim.now();
        for (zone, level_dba, voices) in self.sim.zone_levels() {
            let h = self.history.entry(zone).or_default();
            h.push_back(LevelPoint { t: now, level_dba, voices });
            if h.len() > LEVEL_HISTORY_S {
                h.pop_front();
            }
        }
        let records = self.sim.drain_records();
        for r in &records {
            if let TraceRecord::Dispatch(d) = r {
                self.dispatch.push_back(d.to_string());
                if self.dispatch.len() > DISPATCH_TAIL {
                    self.dispatch.pop_front();
                }
            }
        }
        if let Some(f) = &mut self.sink {
            let mut text = String::new();
            for r in &records {
                text.push_str(&r.to_string());
                text.push('\n');
            }
            if f.write_all(text.as_bytes()).is_err() {
                eprintln!("trace sink write failed; no longer recording");
                self.sink = None;
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        let gen = self.sim.generator();
        let status: BTreeMap<_, _> = gen.zone_status().into_iter().map(|s| (s.zone_id.clone(), s)).collect();
        let zones = self
            .sim
            .topology()
            .zones
            .iter()
            .map(|z| {
                let s = &status[&z.zone_id];
                let last = self.history.get(&z.zone_id).and_then(|h| h.back());
                ZoneView {
                    zone_id: z.zone_id.clone(),
                    zone_class: z.zone_class,
                    features: z.features.clone(),
                    player_ids: z.player_ids.clone(),
                    position: z.position,
                    muted: s.muted,
                    trim_db: s.trim_db,
                    consent: s.consent,
                    active_sequence: s.active_sequence.clone(),
                    level_dba: last.map_or(z.budget.silence_floor_dba, |p| p.level_dba),
                    voices: last.map_or(0, |p| p.voices),
                    sounding: self.sim.sounding(&z.zone_id),
                }
            })
            .collect();
        Snapshot {
            now: Some(self.sim.now()),
            last_tick: gen.last_tick(),
            finished: self.sim.finished(),
            zones,
            levels: self.history.iter().map(|(k, v)| (k.clone(), v.iter().cloned().collect())).collect(),
            recent_dispatch: self.dispatch.iter().cloned().collect(),
        }
    }
}

/// Start the paced loop. `trace` receives every trace record as it is made.
pub fn spawn(sim: Simulation, acceleration: f64, trace: Option<std::fs::File>) -> (RuntimeHandle, tokio::task::JoinHandle<()>) {
    let mut driver = Driver { sim, history: BTreeMap::new(), dispatch: VecDeque::new(), sink: trace };
    driver.step();
    let (snap_tx, snap_rx) = watch::channel(Arc::new(driver.snapshot()));
    let (in_tx, mut in_rx) = mpsc::channel::<(ConsoleOverride, Reply)>(64);
    let task = tokio::spawn(async move {
        let began = Instant::now();
        let mut steps_done = 0u64;
        loop {
            let mut changed = false;
            while let Ok((o, reply)) = in_rx.try_recv() {
                let _ = reply.send(driver.sim.submit(o));
                changed = true;
            }
            let due = (began.elapsed().as_secs_f64() * acceleration) as u64;
            while steps_done < due && !driver.sim.finished() {
                driver.step();
                steps_done += 1;
                changed = true;
            }
            if changed {
                let _ = snap_tx.send(Arc::new(driver.snapshot()));
            }
            tokio::select! {
                _ = tokio::time::sleep(BATCH_SLEEP) => {}
                msg = in_rx.recv() => match msg {
                    Some((o, reply)) => {
                        let _ = reply.send(driver.sim.submit(o));
                        let _ = snap_tx.send(Arc::new(driver.snapshot()));
                    }
                    // Every handle is gone.
                    None => return,
                },
            }
        }
    });
    (RuntimeHandle { snapshot: snap_rx, inbox: in_tx }, task)
}
