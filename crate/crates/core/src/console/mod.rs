//! Caregiver console service: live state, overrides, consent and reaction
//! annotations over HTTP, backed by a paced simulation.
//!
//! Authentication is a static token table (`token author` per line). It is
//! meant for a closed ward network, not for exposure beyond it.

pub mod annotation;
pub mod api;
pub mod runtime;
pub mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::Mutex;

use crate::sim::{Resolved, SimError, Simulation};

pub use annotation::{AnnotationDraft, AnnotationError, AnnotationPolicy, AnnotationStore, ReactionAnnotation, ReactionTag};
pub use api::{router, AppState, Stores};
pub use runtime::{LevelPoint, RuntimeHandle, Snapshot, ZoneView};
pub use store::{compact_consent, ConsentRecord, JsonLog, StoreError};

#[derive(Debug, Clone, Default)]
pub struct TokenTable(BTreeMap<String, String>);

#[derive(Debug, thiserror::Error)]
pub enum ConsoleError {
    #[error("token table line {0}: expected `token author`")]
    TokenLine(usize),
    #[error("token table defines no tokens")]
    NoTokens,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("trace file {path}: {source}")]
    Trace { path: PathBuf, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

impl TokenTable {
    pub fn parse(text: &str) -> Result<Self, ConsoleError> {
        let mut t = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(tok), Some(author), None) => {
                    t.insert(tok.to_string(), author.to_string());
                }
                _ => return Err(ConsoleError::TokenLine(i + 1)),
            }
        }
        if t.is_empty() {
            return Err(ConsoleError::NoTokens);
        }
        Ok(TokenTable(t))
    }

    pub fn author(&self, token: &str) -> Option<&str> {
        self.0.get(token).map(String::as_str)
    }
}

/// A running console: the router plus the simulation behind it.
pub struct Console {
    pub state: AppState,
    pub task: tokio::task::JoinHandle<()>,
}

impl Console {
    /// Open the stores in `data_dir`, carry persisted consent into the
    /// scenario and start the paced simulation. Needs a tokio runtime.
    pub fn start(mut resolved: Resolved, data_dir: &Path, tokens: TokenTable, policy: AnnotationPolicy) -> Result<Self, ConsoleError> {
        let (overrides, _) = JsonLog::open(&data_dir.join("overrides.jsonl"))?;
        let (mut consent_log, consent) = JsonLog::<ConsentRecord>::open(&data_dir.join("consent.jsonl"))?;
        let compacted = compact_consent(&consent);
        consent_log.rewrite(&compacted)?;
        for r in &compacted {
            resolved.scenario.consent.retain(|room| *room != r.room);
            if r.granted {
                resolved.scenario.consent.push(r.room.clone());
            }
        }
        let annotations = AnnotationStore::open(&data_dir.join("annotations.jsonl"))?;
        let trace_path = data_dir.join("trace.log");
        let trace = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&trace_path)
            .map_err(|e| ConsoleError::Trace { path: trace_path, source: e })?;
        let topology = resolved.topology.clone();
        let acceleration = resolved.scenario.acceleration;
        let sim = Simulation::new(resolved)?;
        let (runtime, task) = runtime::spawn(sim, acceleration, Some(trace));
        let state = AppState {
            runtime,
            stores: Arc::new(Stores { overrides: Mutex::new(overrides), consent: Mutex::new(consent_log), annotations: Mutex::new(annotations) }),
            tokens: Arc::new(tokens),
            policy: Arc::new(policy),
            topology,
        };
        Ok(Console { state, task })
    }

    pub fn router(&self) -> axum::Router {
        router(self.state.clone())
    }
}

/// Serve the console on `addr` until the process is stopped.
pub async fn serve_simulation(resolved: Resolved, addr: &str, data_dir: &Path, tokens: TokenTable) -> Result<(), ConsoleError> {
    let console = Console::start(resolved, data_dir, tokens, AnnotationPolicy::default())?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ConsoleError::Bind { addr: addr.into(), source: e })?;
    eprintln!("console listening on {}", listener.local_addr().map_err(ConsoleError::Serve)?);
    axum::serve(listener, console.router()).await.map_err(ConsoleError::Serve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_table() {
        let t = TokenTable::parse("# ward tokens\nabc nurse_a\n\nxyz nurse_b\n").unwrap();
        assert_eq!(t.author("abc"), Some("nurse_a"));
        assert_eq!(t.author("nope"), None);
        assert!(matches!(TokenTable::parse("abc\n"), Err(ConsoleError::TokenLine(1))));
        assert!(matches!(TokenTable::parse("# none\n"), Err(ConsoleError::NoTokens)));
    }
}
