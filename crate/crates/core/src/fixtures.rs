//! Bundled test fixtures: topology, catalog, world tables, and the
//! synthesized PCM assets the catalog digests refer to.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::catalog::{parse_manifest, render_manifest, Catalog, Category, SampleRecord};
use crate::rng::{derive_seed, seeded};

pub const TOPOLOGY: &str = include_str!("../fixtures/topology.txt");
pub const CATALOG_BASE: &str = include_str!("../fixtures/catalog_base.manifest");
/// The base manifest with asset digests filled in.
pub const CATALOG: &str = include_str!("../fixtures/catalog.manifest");
pub const ETHOLOGY: &str = include_str!("../fixtures/ethology.txt");
pub const CARE_SCHEDULE: &str = include_str!("../fixtures/care_schedule.txt");
pub const WEATHER_DEFAULTS: &str = include_str!("../fixtures/weather_defaults.txt");
pub const MENU: &str = include_str!("../fixtures/menu.txt");
pub const WEATHER_JANUARY_WEEK: &str = include_str!("../fixtures/weather/january_week.txt");
pub const WEATHER_APRIL_WEEK: &str = include_str!("../fixtures/weather/april_week.txt");

/// Bundled resource text by name, for `bundled:<name>` references.
pub fn bundled(name: &str) -> Option<&'static str> {
    Some(match name {
        "topology" => TOPOLOGY,
        "catalog" => CATALOG,
        "ethology" => ETHOLOGY,
        "care_schedule" => CARE_SCHEDULE,
        "menu" => MENU,
        "january_week" => WEATHER_JANUARY_WEEK,
        "april_week" => WEATHER_APRIL_WEEK,
        _ => return None,
    })
}

pub const ASSET_SAMPLE_RATE: u32 = 44_100;

/// The bundled catalog, digests included.
pub fn catalog() -> &'static Catalog {
    static CAT: OnceLock<Catalog> = OnceLock::new();
    CAT.get_or_init(|| parse_manifest(CATALOG).expect("bundled catalog"))
}

/// Encoded WAV bytes of every bundled asset, keyed by sample id.
pub fn assets() -> &'static BTreeMap<String, Vec<u8>> {
    static ASSETS: OnceLock<BTreeMap<String, Vec<u8>>> = OnceLock::new();
    ASSETS.get_or_init(|| {
        let base = parse_manifest(CATALOG_BASE).expect("bundled base catalog");
        base.records().map(|r| (r.id.clone(), encode_wav(&synthesize_pcm(r), ASSET_SAMPLE_RATE))).collect()
    })
}

/// Decoded PCM of every bundled asset, shared between simulated players.
pub fn decoded_assets() -> &'static BTreeMap<String, std::sync::Arc<[i16]>> {
    static PCM: OnceLock<BTreeMap<String, std::sync::Arc<[i16]>>> = OnceLock::new();
    PCM.get_or_init(|| {
        assets()
            .iter()
            .map(|(id, wav)| (id.clone(), decode_wav(wav).expect("bundled wav").1.into()))
            .collect()
    })
}

/// Decoded PCM keyed by content digest.
pub fn decoded_by_digest() -> std::sync::Arc<BTreeMap<String, std::sync::Arc<[i16]>>> {
    static PCM: OnceLock<std::sync::Arc<BTreeMap<String, std::sync::Arc<[i16]>>>> = OnceLock::new();
    PCM.get_or_init(|| {
        let decoded = decoded_assets();
        std::sync::Arc::new(
            catalog()
                .records()
                .filter_map(|r| Some((r.digest.clone()?, decoded.get(&r.id)?.clone())))
                .collect(),
        )
    })
    .clone()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The base manifest re-rendered with a `sha` for each synthesized asset.
pub fn indexed_manifest() -> String {
    let base = parse_manifest(CATALOG_BASE).expect("bundled base catalog");
    let assets = assets();
    let records = base
        .records()
        .cloned()
        .map(|mut r| {
            r.digest = Some(sha256_hex(&assets[&r.id]));
            r
        })
        .collect();
    render_manifest(&Catalog::from_records(records).expect("indexed catalog"))
}

/// Write every asset under `dir` at its manifest path.
pub fn write_assets(dir: &Path) -> std::io::Result<usize> {
    let cat = catalog();
    for (id, bytes) in assets() {
        let path = dir.join(&cat.get(id).expect("asset in catalog").path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
    }
    Ok(assets().len())
}

pub fn encode_wav(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav");
        let mut w16 = w.get_i16_writer(samples.len() as u32);
        for s in samples {
            w16.write_sample(*s);
        }
        w16.flush().expect("in-memory wav");
        w.finalize().expect("in-memory wav");
    }
    cursor.into_inner()
}

pub fn decode_wav(bytes: &[u8]) -> Result<(u32, Vec<i16>), hound::Error> {
    let mut r = hound::WavReader::new(Cursor::new(bytes))?;
    let rate = r.spec().sample_rate;
    let samples = r.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
    Ok((rate, samples))
}

/// Deterministic stand-in audio for a record: chirps for birds, filtered
/// noise for weather and water, clatter for human activity, partials for bells.
pub fn synthesize_pcm(rec: &SampleRecord) -> Vec<i16> {
    let mut rng = seeded(derive_seed(0x5eed, &[rec.id.as_bytes()]));
    let sr = ASSET_SAMPLE_RATE as f64;
    let n = (rec.duration_s * sr).round() as usize;
    let mut out = vec![0f64; n];
    match rec.category {
        Category::Biophony => {
            let base = 1_200.0 + 2_400.0 * rng.random::<f64>();
            let mut t = 0usize;
            while t < n {
                let len = ((0.08 + 0.25 * rng.random::<f64>()) * sr) as usize;
                let sweep = 0.6 + 0.8 * rng.random::<f64>();
                let mut phase = 0.0;
                for i in 0..len.min(n - t) {
                    let x = i as f64 / len as f64;
                    let f = base * (1.0 + (sweep - 1.0) * x);
                    phase += 2.0 * std::f64::consts::PI * f / sr;
                    out[t + i] = 0.5 * (std::f64::consts::PI * x).sin() * phase.sin();
                }
                t += len + ((0.1 + 0.6 * rng.random::<f64>()) * sr) as usize;
            }
        }
        Category::Geophony | Category::Landmark if !rec.id.starts_with("bell") => {
            let mut lp = 0.0;
            let alpha = 0.05 + 0.3 * rng.random::<f64>();
            let rate = 0.1 + 0.4 * rng.random::<f64>();
            for (i, o) in out.iter_mut().enumerate() {
                lp += alpha * ((rng.random::<f64>() * 2.0 - 1.0) - lp);
                let m = 0.7 + 0.3 * (2.0 * std::f64::consts::PI * rate * i as f64 / sr).sin();
                *o = 1.6 * lp * m;
            }
        }
        Category::Anthropophony => {
            let hum = 90.0 + 60.0 * rng.random::<f64>();
            for (i, o) in out.iter_mut().enumerate() {
                *o = 0.05 * (2.0 * std::f64::consts::PI * hum * i as f64 / sr).sin();
            }
            let mut t = 0usize;
            while t < n {
                let f = 600.0 + 3_000.0 * rng.random::<f64>();
                let len = (0.15 * sr) as usize;
                for i in 0..len.min(n - t) {
                    let x = i as f64 / sr;
                    out[t + i] += 0.4 * (-x * 30.0).exp() * (2.0 * std::f64::consts::PI * f * x).sin();
                }
                t += ((0.05 + 0.5 * rng.random::<f64>()) * sr) as usize;
            }
        }
        _ => {
            let partials = [(1.0, 1.0), (2.0, 0.5), (2.4, 0.35), (3.0, 0.25)];
            for (i, o) in out.iter_mut().enumerate() {
                let x = i as f64 / sr;
                *o = partials
                    .iter()
                    .map(|(r, a)| 0.3 * a * (-x * 1.2 * r).exp() * (2.0 * std::f64::consts::PI * 440.0 * r * x).sin())
                    .sum();
            }
        }
    }
    out.iter().map(|v| (v.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_has_24_records() {
        let base = parse_manifest(CATALOG_BASE).unwrap();
        assert_eq!(base.len(), 24);
        assert_eq!(catalog().len(), 24);
    }

    #[test]
    fn manifest_digests_match_synthesized_assets() {
        assert_eq!(CATALOG, indexed_manifest());
        for r in catalog().records() {
            assert_eq!(r.digest.as_deref(), Some(sha256_hex(&assets()[&r.id]).as_str()));
        }
    }

    #[test]
    fn wav_round_trip() {
        let rec = catalog().get("tit_01").unwrap();
        let pcm = synthesize_pcm(rec);
        let (rate, back) = decode_wav(&encode_wav(&pcm, ASSET_SAMPLE_RATE)).unwrap();
        assert_eq!(rate, ASSET_SAMPLE_RATE);
        assert_eq!(back, pcm);
        assert_eq!(pcm.len(), (rec.duration_s * ASSET_SAMPLE_RATE as f64).round() as usize);
    }
}
