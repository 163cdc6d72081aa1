//! The invariant battery run over a finished trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::catalog::Season;
use crate::composer::{bell_groups_between, Feature};
use crate::environment::season_of;
use crate::scheduler::GENERATOR_NODE;
use crate::time::{Timestamp, MS_PER_DAY, MS_PER_MINUTE};
use crate::wire::log::LogRecord;

use super::run::replay_dispatch;
use super::scenario::Resolved;
use super::trace::{field, Trace};

pub const LEVEL_TOLERANCE_DB: f64 = 0.5;
pub const MIN_LEVEL_SLACK_DB: f64 = 1.0;
pub const SEQUENCE_MIN_MS: i64 = 15 * MS_PER_MINUTE;
pub const SEQUENCE_MAX_MS: i64 = 25 * MS_PER_MINUTE;
pub const ETHOLOGY_FACTOR: f64 = 2.0;
/// Below this many crow and tit onsets together the ratio is noise.
pub const ETHOLOGY_MIN_EVENTS: usize = 30;
pub const PENDULUM_IOI_MS: i64 = 2_000;
pub const MAX_TRANSFER_FAILURES: u32 = 3;
/// One render quantum.
pub const ONSET_TOLERANCE_MS: i64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// First failing instant, when there is one.
    pub counterexample: Option<String>,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> Self {
        CheckResult { name: name.into(), passed: true, detail, counterexample: None }
    }

    fn fail(name: &str, detail: String, at: Option<Timestamp>) -> Self {
        CheckResult { name: name.into(), passed: false, detail, counterexample: at.map(|t| t.to_string()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("report {}\n", self.scenario);
        for r in &self.results {
            let _ = write!(out, "{} {:<16} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            if let Some(at) = &r.counterexample {
                let _ = write!(out, " (first at {at})");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Intervals during which a zone is exempt from its level floor and
/// landmark schedule: from a mute until `grace` after the matching unmute.
fn intervals(logs: &[&LogRecord], zone: &str, on: &str, off: &str, end: Timestamp, grace: i64) -> Vec<(Timestamp, Timestamp)> {
    let mut out = Vec::new();
    let mut open: Option<Timestamp> = None;
    for l in logs.iter().filter(|l| l.kind == "override" && field(&l.summary, "target") == Some(zone)) {
        let kind = field(&l.summary, "kind").unwrap_or("");
        let value = field(&l.summary, "value").unwrap_or("");
        let key = format!("{kind}:{value}");
        if key == on && open.is_none() {
            open = Some(l.timestamp);
        } else if key == off {
            if let Some(a) = open.take() {
                out.push((a, l.timestamp + grace));
            }
        }
    }
    if let Some(a) = open {
        out.push((a, end + grace));
    }
    out
}

fn within(spans: &[(Timestamp, Timestamp)], t: Timestamp) -> bool {
    spans.iter().any(|(a, b)| (*a..=*b).contains(&t))
}

struct Ctx<'a> {
    trace: &'a Trace,
    r: &'a Resolved,
    gen_logs: Vec<&'a LogRecord>,
    start: Timestamp,
    end: Timestamp,
}

impl<'a> Ctx<'a> {
    fn muted(&self, zone: &str) -> Vec<(Timestamp, Timestamp)> {
        intervals(&self.gen_logs, zone, "mute:", "unmute:", self.end, self.r.scenario.scheduler.lookahead_ms)
    }

    /// Spans where a bedroom's consent gate is open.
    fn consented(&self, zone: &str) -> Vec<(Timestamp, Timestamp)> {
        let mut spans = Vec::new();
        let mut open = None;
        for l in &self.gen_logs {
            let granted = match l.kind.as_str() {
                "consent" if field(&l.summary, "zone") == Some(zone) => field(&l.summary, "granted") == Some("true"),
                "override" if field(&l.summary, "target") == Some(zone) && field(&l.summary, "kind") == Some("consent_set") => {
                    field(&l.summary, "value") == Some("true")
                }
                _ => continue,
            };
            match (granted, open) {
                (true, None) => open = Some(l.timestamp),
                (false, Some(a)) => {
                    // Stops go out at the next tick; allow one fade.
                    spans.push((a, l.timestamp + self.r.scenario.scheduler.tick_ms + self.r.scenario.scheduler.mute_fade_ms));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(a) = open {
            spans.push((a, self.end));
        }
        spans
    }

    fn player_logs(&self, kind: &'static str) -> impl Iterator<Item = &'a LogRecord> + '_ {
        self.trace.logs().filter(move |l| l.kind == kind && l.node != GENERATOR_NODE)
    }
}

/// Run the full battery against `trace`, produced from `resolved`.
pub fn check(trace: &Trace, resolved: &Resolved) -> Report {
    let (start, end) = (trace.header.start, trace.header.end);
    let ctx = Ctx { trace, r: resolved, gen_logs: trace.logs().filter(|l| l.node == GENERATOR_NODE).collect(), start, end };
    let results = vec![
        bells(&ctx),
        sequences(&ctx),
        levels(&ctx),
        voice_limit(trace, resolved),
        ethology(&ctx),
        pendulum(&ctx),
        log_completeness(trace),
        replay(trace, resolved),
        asset_sync(trace),
    ];
    Report { scenario: trace.header.name.clone(), results }
}

fn bells(c: &Ctx) -> CheckResult {
    const NAME: &str = "bells";
    let expected: Vec<(Timestamp, u8)> = bell_groups_between(c.start - 1, c.end - 1, c.r.scenario.scheduler.bell_night_cap)
        .into_iter()
        .map(|b| (b.time, b.strokes))
        .collect();
    let full_days = (c.end - c.start) / MS_PER_DAY;
    for d in 0..full_days {
        let (a, b) = (c.start + d * MS_PER_DAY, c.start + (d + 1) * MS_PER_DAY);
        let n = expected.iter().filter(|(t, _)| *t >= a && *t < b).count();
        if n != 48 {
            return CheckResult::fail(NAME, format!("schedule has {n} groups on day {d}"), Some(a));
        }
    }
    let mut zones = 0;
    for z in c.r.topology.zones.iter().filter(|z| z.has(Feature::Bells)) {
        zones += 1;
        let muted = c.muted(&z.zone_id);
        let observed: BTreeSet<(Timestamp, u8)> = c
            .player_logs("voice_on")
            .filter(|l| z.player_ids.contains(&l.node) && l.timestamp >= c.start && l.timestamp < c.end)
            .filter_map(|l| field(&l.summary, "src")?.strip_prefix("bell:")?.parse().ok().map(|s| (l.timestamp, s)))
            .collect();
        for e in expected.iter().filter(|(t, _)| !within(&muted, *t)) {
            if !observed.contains(e) {
                return CheckResult::fail(NAME, format!("{}: missing {} strokes", z.zone_id, e.1), Some(e.0));
            }
        }
        if let Some(extra) = observed.iter().find(|o| !expected.contains(o)) {
            return CheckResult::fail(NAME, format!("{}: unexpected group of {} strokes", z.zone_id, extra.1), Some(extra.0));
        }
        if let Some(w) = observed.iter().collect::<Vec<_>>().windows(2).find(|w| w[1].0.minute_of_day() % 60 == 2 && w[1].0 - w[0].0 != 120_000) {
            return CheckResult::fail(NAME, format!("{}: repeat {} ms after its group", z.zone_id, w[1].0 - w[0].0), Some(w[1].0));
        }
    }
    CheckResult::pass(NAME, format!("{} groups per zone over {zones} zones, {full_days} full days at 48/day", expected.len()))
}

fn sequences(c: &Ctx) -> CheckResult {
    const NAME: &str = "sequences";
    let mut n = 0;
    for l in c.gen_logs.iter().filter(|l| l.kind == "sequence") {
        let zone = field(&l.summary, "zone").unwrap_or("");
        if c.r.topology.zone(zone).is_none_or(|z| z.is_bedroom()) {
            continue;
        }
        n += 1;
        let dur: i64 = field(&l.summary, "duration_ms").and_then(|v| v.parse().ok()).unwrap_or(-1);
        let tail: i64 = field(&l.summary, "tail_ms").and_then(|v| v.parse().ok()).unwrap_or(-1);
        if !(SEQUENCE_MIN_MS..=SEQUENCE_MAX_MS).contains(&dur) || tail <= 0 {
            return CheckResult::fail(NAME, format!("{zone}: duration {dur} ms, tail {tail} ms"), Some(l.timestamp));
        }
    }
    if n == 0 {
        return CheckResult::fail(NAME, "no common-space sequences".into(), None);
    }
    CheckResult::pass(NAME, format!("{n} common-space sequences within [15, 25] min with tail silence"))
}

fn levels(c: &Ctx) -> CheckResult {
    const NAME: &str = "levels";
    let mut by_zone: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for v in c.trace.levels() {
        by_zone.entry(v.zone.as_str()).or_default().push(v);
    }
    let mut patio_min = f64::INFINITY;
    let mut samples = 0usize;
    for z in &c.r.topology.zones {
        let Some(series) = by_zone.get(z.zone_id.as_str()) else {
            return CheckResult::fail(NAME, format!("{}: no level series", z.zone_id), None);
        };
        let b = &z.budget;
        let muted = c.muted(&z.zone_id);
        let consent = if z.is_bedroom() { c.consented(&z.zone_id) } else { Vec::new() };
        for (i, v) in series.iter().enumerate() {
            let next = series.get(i + 1).map_or(c.end + 1, |n| n.timestamp);
            if next <= c.start || v.timestamp > c.end {
                continue;
            }
            samples += 1;
            let at = v.timestamp.max(c.start);
            if v.level_dba > b.peak_dba + LEVEL_TOLERANCE_DB {
                return CheckResult::fail(NAME, format!("{} at {:.2} dBA over peak {}", z.zone_id, v.level_dba, b.peak_dba), Some(at));
            }
            if v.voices == 0 && (v.level_dba - b.silence_floor_dba).abs() > LEVEL_TOLERANCE_DB {
                return CheckResult::fail(NAME, format!("{} silent at {:.2} dBA", z.zone_id, v.level_dba), Some(at));
            }
            if z.has(Feature::Waterfall) && !within(&muted, at) {
                // The series is piecewise constant, so the span's level holds until `next`.
                patio_min = patio_min.min(v.level_dba);
                let floor = b.min_dba.unwrap_or(b.silence_floor_dba);
                if v.level_dba < floor - MIN_LEVEL_SLACK_DB {
                    return CheckResult::fail(NAME, format!("{} at {:.2} dBA under floor {floor}", z.zone_id, v.level_dba), Some(at));
                }
            }
            if z.is_bedroom() && v.voices > 0 && !within(&consent, v.timestamp) {
                return CheckResult::fail(NAME, format!("{} sounding without consent", z.zone_id), Some(at));
            }
        }
    }
    CheckResult::pass(NAME, format!("{samples} level spans; patio minimum {patio_min:.2} dBA"))
}

/// Sweep-line over voice and track spans per zone; ends sort before starts.
pub fn voice_limit(trace: &Trace, resolved: &Resolved) -> CheckResult {
    const NAME: &str = "voice_limit";
    let mut events: BTreeMap<&str, Vec<(Timestamp, i32)>> = BTreeMap::new();
    for l in trace.logs() {
        let delta = match l.kind.as_str() {
            "voice_on" | "track_on" => 1,
            "voice_off" | "track_off" => -1,
            _ => continue,
        };
        if let Some(z) = resolved.topology.zone_of_player(&l.node) {
            events.entry(z.zone_id.as_str()).or_default().push((l.timestamp, delta));
        }
    }
    let mut worst = 0;
    for (zone, mut ev) in events {
        let limit = resolved.topology.zone(zone).map_or(0, |z| z.max_voices as i32);
        ev.sort();
        let mut n = 0;
        for (t, d) in ev {
            n += d;
            worst = worst.max(n);
            if n > limit {
                return CheckResult::fail(NAME, format!("{zone}: {n} voices, limit {limit}"), Some(t));
            }
        }
    }
    CheckResult::pass(NAME, format!("peak {worst} simultaneous voices within every zone limit"))
}

fn ethology(c: &Ctx) -> CheckResult {
    const NAME: &str = "ethology";
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in c.player_logs("voice_on").filter(|l| l.timestamp >= c.start && l.timestamp <= c.end) {
        if let Some(sp) = field(&l.summary, "src").and_then(|s| c.r.catalog.get(s)).and_then(|r| r.species.as_deref()) {
            *counts.entry(sp).or_default() += 1;
        }
    }
    let crow = counts.get("crow").copied().unwrap_or(0);
    let tit = counts.get("tit").copied().unwrap_or(0);
    let detail = format!("crow {crow}, tit {tit}");
    if crow + tit < ETHOLOGY_MIN_EVENTS {
        return CheckResult::pass(NAME, format!("{detail}, too few to judge"));
    }
    let dominant = |a: usize, b: usize| a > b && a as f64 >= ETHOLOGY_FACTOR * b as f64;
    let ok = match season_of(c.start.date()) {
        Season::Winter => dominant(crow, tit),
        Season::Spring => dominant(tit, crow),
        _ => true,
    };
    if ok {
        CheckResult::pass(NAME, detail)
    } else {
        CheckResult::fail(NAME, format!("{detail} (expected factor {ETHOLOGY_FACTOR})"), None)
    }
}

fn pendulum(c: &Ctx) -> CheckResult {
    const NAME: &str = "pendulum";
    let mut runs = 0;
    let mut pairs = 0;
    for l in c.gen_logs.iter().filter(|l| l.kind == "pendulum") {
        let (Some(zone), Some(start), Some(end)) = (
            field(&l.summary, "zone").and_then(|z| c.r.topology.zone(z)),
            field(&l.summary, "start").and_then(|v| v.parse::<Timestamp>().ok()),
            field(&l.summary, "end").and_then(|v| v.parse::<Timestamp>().ok()),
        ) else {
            return CheckResult::fail(NAME, format!("malformed run record {:?}", l.summary), Some(l.timestamp));
        };
        runs += 1;
        let stop = end.min(c.end + 1);
        let mut pulses: Vec<Timestamp> = c
            .player_logs("pulse")
            .filter(|p| zone.player_ids.contains(&p.node) && p.timestamp >= start && p.timestamp < stop)
            .map(|p| p.timestamp)
            .collect();
        pulses.sort();
        if let Some(w) = pulses.windows(2).find(|w| w[1] - w[0] != PENDULUM_IOI_MS) {
            return CheckResult::fail(NAME, format!("{}: inter-onset {} ms", zone.zone_id, w[1] - w[0]), Some(w[1]));
        }
        pairs += pulses.len().saturating_sub(1);
        let cut = within(&c.muted(&zone.zone_id), stop) || !within(&c.consented(&zone.zone_id), stop - 1);
        let want = ((stop - start) + PENDULUM_IOI_MS - 1) / PENDULUM_IOI_MS;
        if pulses.first() != Some(&start) || (!cut && pulses.len() as i64 != want) {
            return CheckResult::fail(NAME, format!("{}: {} pulses, expected {want} from {start}", zone.zone_id, pulses.len()), Some(start));
        }
    }
    CheckResult::pass(NAME, format!("{runs} runs, {pairs} inter-onset intervals all {PENDULUM_IOI_MS} ms"))
}

/// Every onset a player logged traces back to a dispatched datagram.
fn log_completeness(trace: &Trace) -> CheckResult {
    const NAME: &str = "log_completeness";
    let sent: BTreeSet<(&str, &str)> = trace.dispatches().map(|d| (d.player.as_str(), d.msg_digest.as_str())).collect();
    let mut n = 0;
    for l in trace.logs().filter(|l| l.kind == "voice_on") {
        n += 1;
        if !sent.contains(&(l.node.as_str(), l.digest.as_str())) {
            return CheckResult::fail(NAME, format!("{} onset {} has no dispatch record", l.node, l.digest), Some(l.timestamp));
        }
    }
    CheckResult::pass(NAME, format!("{n} onsets matched to dispatch records"))
}

/// The scheduler, rerun alone, reproduces the trace's dispatch log.
fn replay(trace: &Trace, resolved: &Resolved) -> CheckResult {
    const NAME: &str = "replay";
    let reference = match replay_dispatch(resolved) {
        Ok(r) => r,
        Err(e) => return CheckResult::fail(NAME, e.to_string(), None),
    };
    let logged: Vec<_> = trace.dispatches().collect();
    for (i, (a, b)) in logged.iter().zip(&reference).enumerate() {
        if *a != b {
            return CheckResult::fail(NAME, format!("line {i}: {a} vs {b}"), Some(a.virtual_time));
        }
    }
    if logged.len() != reference.len() {
        return CheckResult::fail(NAME, format!("{} logged vs {} replayed lines", logged.len(), reference.len()), None);
    }
    CheckResult::pass(NAME, format!("{} dispatch lines reproduced", logged.len()))
}

fn asset_sync(trace: &Trace) -> CheckResult {
    const NAME: &str = "asset_sync";
    let reports: Vec<_> = trace.logs().filter(|l| l.kind == "asset_sync").collect();
    if reports.is_empty() {
        return CheckResult::pass(NAME, "preloaded inventories".into());
    }
    let failures: u32 = reports.iter().filter_map(|l| field(&l.summary, "failures")?.parse::<u32>().ok()).max().unwrap_or(0);
    if let Some(l) = reports.iter().find(|l| field(&l.summary, "converged") != Some("true")) {
        return CheckResult::fail(NAME, format!("{} did not converge", l.node), Some(l.timestamp));
    }
    let hashes: BTreeSet<&str> = reports.iter().map(|l| l.digest.as_str()).collect();
    if hashes.len() != 1 {
        return CheckResult::fail(NAME, format!("{} distinct final inventories", hashes.len()), None);
    }
    CheckResult::pass(NAME, format!("{} players converged, at most {failures} failed transfers each", reports.len()))
}

fn onsets(trace: &Trace) -> BTreeMap<(String, String), Vec<Timestamp>> {
    let mut out: BTreeMap<(String, String), Vec<Timestamp>> = BTreeMap::new();
    for l in trace.logs().filter(|l| l.node != GENERATOR_NODE) {
        let key = match l.kind.as_str() {
            "voice_on" => field(&l.summary, "src").unwrap_or("").to_string(),
            "pulse" => "pulse".to_string(),
            _ => continue,
        };
        out.entry((l.node.clone(), key)).or_default().push(l.timestamp);
    }
    out
}

/// Audible outcome of two runs: same sources per player, onsets paired in
/// order within `tolerance_ms`.
pub fn equivalence(reference: &Trace, other: &Trace, tolerance_ms: i64) -> CheckResult {
    const NAME: &str = "equivalence";
    let (a, b) = (onsets(reference), onsets(other));
    let total: usize = a.values().map(Vec::len).sum();
    let mut worst = 0;
    for (key, ta) in &a {
        let tb = b.get(key).map(Vec::as_slice).unwrap_or(&[]);
        if ta.len() != tb.len() {
            let at = ta.iter().zip(tb).find(|(x, y)| (**x - **y).abs() > tolerance_ms).map(|(x, _)| *x).or(ta.last().copied());
            return CheckResult::fail(NAME, format!("{} {}: {} vs {} onsets", key.0, key.1, ta.len(), tb.len()), at);
        }
        for (x, y) in ta.iter().zip(tb) {
            worst = worst.max((*x - *y).abs());
            if (*x - *y).abs() > tolerance_ms {
                return CheckResult::fail(NAME, format!("{} {}: onset moved {} ms", key.0, key.1, *y - *x), Some(*x));
            }
        }
    }
    if let Some(extra) = b.keys().find(|k| !a.contains_key(*k)) {
        return CheckResult::fail(NAME, format!("{} {}: only in the second run", extra.0, extra.1), b[extra].first().copied());
    }
    CheckResult::pass(NAME, format!("{total} onsets matched, worst shift {worst} ms"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, Scenario, TraceRecord};

    fn resolved(extra: &str) -> Resolved {
        let text = format!("name = \"t\"\nstart = \"2026-01-12T20:30:00\"\nduration = \"3h\"\nweather = \"bundled:january_week\"\nconsent = [\"room_4\"]\n{extra}");
        Scenario::parse(&text).unwrap().resolve(None).unwrap()
    }

    #[test]
    fn compliant_run_passes_everything() {
        let r = resolved("");
        let trace = run(&r).unwrap();
        let report = check(&trace, &r);
        assert!(report.passed(), "{}", report.render_text());
        assert!(report.get("pendulum").unwrap().detail.starts_with("1 runs"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["results"].as_array().unwrap().len(), report.results.len());
    }

    #[test]
    fn injected_overlap_names_zone_and_time() {
        let r = resolved("");
        let mut trace = run(&r).unwrap();
        let at = Timestamp::from_ymd_hms(2026, 1, 12, 21, 0, 0);
        // north_room allows 4 voices on p04.
        for v in 0..5 {
            trace.records.push(TraceRecord::Log(LogRecord::new(at, "p04", "voice_on", "", format!("voice={} src=x", 90_000 + v))));
        }
        let res = voice_limit(&trace, &r);
        assert!(!res.passed);
        assert!(res.detail.starts_with("north_room"), "{}", res.detail);
        assert_eq!(res.counterexample.as_deref(), Some("2026-01-12T21:00:00.000"));
    }

    #[test]
    fn equivalence_spots_moved_onsets() {
        let r = resolved("");
        let a = run(&r).unwrap();
        assert!(equivalence(&a, &a, 0).passed);
        let mut b = a.clone();
        let moved = b.records.iter_mut().find_map(|rec| match rec {
            TraceRecord::Log(l) if l.kind == "voice_on" => Some(l),
            _ => None,
        });
        let l = moved.unwrap();
        l.timestamp = l.timestamp + ONSET_TOLERANCE_MS + 1;
        let res = equivalence(&a, &b, ONSET_TOLERANCE_MS);
        assert!(!res.passed);
        assert!(res.detail.contains("moved 51 ms"), "{}", res.detail);
        assert!(equivalence(&a, &b, ONSET_TOLERANCE_MS + 1).passed);
    }

    #[test]
    fn unconsented_bedroom_sound_fails_levels() {
        let r = resolved("");
        let mut trace = run(&r).unwrap();
        let at = Timestamp::from_ymd_hms(2026, 1, 12, 22, 0, 0);
        trace.records.push(TraceRecord::Level(super::super::LevelSample { timestamp: at, zone: "room_1".into(), level_dba: 45.0, voices: 1 }));
        trace.records.sort_by_key(|r| r.timestamp());
        let report = check(&trace, &r);
        let levels = report.get("levels").unwrap();
        assert!(!levels.passed);
        assert!(levels.detail.contains("room_1"), "{}", levels.detail);
    }
}
