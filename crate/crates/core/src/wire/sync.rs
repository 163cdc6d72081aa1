//! Reliable asset channel: inventory diffing, chunk framing and the
//! plan/apply loop that converges a player onto the catalog.
//!
//! Chunk frame: `id;offset;len;digest;payload`, where `digest` is the hex
//! SHA-256 of `payload` and the header is UTF-8.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{content_hash, Catalog};
use crate::fixtures::sha256_hex;

pub const CHUNK_SIZE: usize = 4096;

/// Byte size of a 16-bit mono 44.1 kHz WAV asset of the given duration.
pub fn expected_wav_size(duration_s: f64) -> u64 {
    44 + 2 * (duration_s * 44_100.0).round() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub id: String,
    pub digest: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssetSyncPlan {
    pub missing: Vec<AssetEntry>,
    pub stale: Vec<String>,
    pub target_hash: String,
}

impl AssetSyncPlan {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.stale.is_empty()
    }
}

pub fn inventory_hash(inventory: &BTreeMap<String, String>) -> String {
    content_hash(inventory.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}

/// Missing: catalog records absent from the inventory or held with another
/// digest. Stale: inventory ids the catalog no longer lists.
pub fn plan_sync(inventory: &BTreeMap<String, String>, catalog: &Catalog) -> AssetSyncPlan {
    let missing = catalog
        .records()
        .filter_map(|r| {
            let digest = r.digest.clone().unwrap_or_default();
            (inventory.get(&r.id) != Some(&digest)).then(|| AssetEntry {
                id: r.id.clone(),
                digest,
                size: expected_wav_size(r.duration_s),
            })
        })
        .collect();
    let stale = inventory.keys().filter(|id| catalog.get(id).is_none()).cloned().collect();
    AssetSyncPlan { missing, stale, target_hash: catalog.manifest_hash().to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: String,
    pub offset: u64,
    pub digest: String,
    pub payload: Vec<u8>,
}

impl Chunk {
    pub fn new(id: &str, offset: u64, payload: Vec<u8>) -> Self {
        Chunk { id: id.to_string(), offset, digest: sha256_hex(&payload), payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{};{};{};{};", self.id, self.offset, self.payload.len(), self.digest).into_bytes();
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Chunk, TransferError> {
        let bad = |m: &str| TransferError::Framing(m.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut start = 0;
        for (i, b) in frame.iter().enumerate() {
            if *b == b';' {
                fields.push(std::str::from_utf8(&frame[start..i]).map_err(|_| bad("header is not UTF-8"))?);
                start = i + 1;
                if fields.len() == 4 {
                    break;
                }
            }
        }
        if fields.len() != 4 {
            return Err(bad("header needs four fields"));
        }
        let offset: u64 = fields[1].parse().map_err(|_| bad("bad offset"))?;
        let len: usize = fields[2].parse().map_err(|_| bad("bad length"))?;
        let payload = &frame[start..];
        if payload.len() != len {
            return Err(bad("payload length differs from header"));
        }
        let chunk = Chunk { id: fields[0].to_string(), offset, digest: fields[3].to_string(), payload: payload.to_vec() };
        if sha256_hex(&chunk.payload) != chunk.digest {
            return Err(TransferError::ChunkDigest { id: chunk.id, offset });
        }
        Ok(chunk)
    }
}

pub fn chunk_asset(id: &str, bytes: &[u8]) -> Vec<Chunk> {
    bytes.chunks(CHUNK_SIZE).enumerate().map(|(i, c)| Chunk::new(id, (i * CHUNK_SIZE) as u64, c.to_vec())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransferError {
    #[error("transfer of {id} failed")]
    Failed { id: String },
    #[error("bad chunk frame: {0}")]
    Framing(String),
    #[error("chunk digest mismatch in {id} at offset {offset}")]
    ChunkDigest { id: String, offset: u64 },
    #[error("chunk of {id} at offset {got}, expected {expected}")]
    OutOfOrder { id: String, expected: u64, got: u64 },
    #[error("assembled {id} does not match its catalog digest")]
    AssetDigest { id: String },
    #[error("source has no asset {0}")]
    Unknown(String),
}

/// Reassemble an in-order chunk stream and verify it against `entry`.
pub fn assemble(entry: &AssetEntry, frames: &[Vec<u8>]) -> Result<Vec<u8>, TransferError> {
    let mut out = Vec::with_capacity(entry.size as usize);
    for f in frames {
        let c = Chunk::decode(f)?;
        if c.id != entry.id || c.offset != out.len() as u64 {
            return Err(TransferError::OutOfOrder { id: entry.id.clone(), expected: out.len() as u64, got: c.offset });
        }
        out.extend_from_slice(&c.payload);
    }
    if sha256_hex(&out) != entry.digest {
        return Err(TransferError::AssetDigest { id: entry.id.clone() });
    }
    Ok(out)
}

/// Sender side of the asset channel.
pub trait AssetSource {
    /// The framed chunks of one asset, or a whole-transfer failure.
    fn transfer(&mut self, id: &str) -> Result<Vec<Vec<u8>>, TransferError>;
}

/// Receiver side: whatever holds a player's assets.
pub trait AssetSink {
    fn inventory(&self) -> BTreeMap<String, String>;
    fn install(&mut self, id: &str, digest: &str, bytes: Vec<u8>);
    fn remove(&mut self, id: &str);
}

/// In-memory source that fails the transfers whose 1-based attempt number
/// is listed in `fail_on`.
#[derive(Debug, Clone)]
pub struct MemorySource<'a> {
    assets: &'a BTreeMap<String, Vec<u8>>,
    fail_on: BTreeSet<u32>,
    attempts: u32,
}

impl<'a> MemorySource<'a> {
    pub fn new(assets: &'a BTreeMap<String, Vec<u8>>, fail_on: impl IntoIterator<Item = u32>) -> Self {
        MemorySource { assets, fail_on: fail_on.into_iter().collect(), attempts: 0 }
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }
}

impl AssetSource for MemorySource<'_> {
    fn transfer(&mut self, id: &str) -> Result<Vec<Vec<u8>>, TransferError> {
        self.attempts += 1;
        if self.fail_on.contains(&self.attempts) {
            return Err(TransferError::Failed { id: id.to_string() });
        }
        let bytes = self.assets.get(id).ok_or_else(|| TransferError::Unknown(id.to_string()))?;
        Ok(chunk_asset(id, bytes).iter().map(Chunk::encode).collect())
    }
}

/// Id and digest only; payloads are verified and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DigestInventory(pub BTreeMap<String, String>);

impl AssetSink for DigestInventory {
    fn inventory(&self) -> BTreeMap<String, String> {
        self.0.clone()
    }
    fn install(&mut self, id: &str, digest: &str, _bytes: Vec<u8>) {
        self.0.insert(id.to_string(), digest.to_string());
    }
    fn remove(&mut self, id: &str) {
        self.0.remove(id);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyncReport {
    pub rounds: u32,
    pub transfers: u32,
    pub failures: u32,
    pub converged: bool,
    pub final_hash: String,
}

/// Repeat plan/apply rounds until the plan is empty or `max_rounds` pass.
/// Each round removes stale ids and fetches at most `batch` missing assets;
/// failed transfers stay missing and are retried next round.
pub fn synchronize<S: AssetSink, A: AssetSource>(
    sink: &mut S,
    catalog: &Catalog,
    source: &mut A,
    batch: usize,
    max_rounds: u32,
) -> SyncReport {
    let mut report = SyncReport::default();
    while report.rounds < max_rounds {
        let plan = plan_sync(&sink.inventory(), catalog);
        if plan.is_empty() {
            report.converged = true;
            break;
        }
        report.rounds += 1;
        for id in &plan.stale {
            sink.remove(id);
        }
        for entry in plan.missing.iter().take(batch.max(1)) {
            report.transfers += 1;
            match source.transfer(&entry.id).and_then(|frames| assemble(entry, &frames)) {
                Ok(bytes) => sink.install(&entry.id, &entry.digest, bytes),
                Err(_) => report.failures += 1,
            }
        }
    }
    if !report.converged {
        report.converged = plan_sync(&sink.inventory(), catalog).is_empty();
    }
    report.final_hash = inventory_hash(&sink.inventory());
    report
}
