//! Ball-table cache: distance fields from a ball center, keyed by a hash of
//! (frame, ε, lattice, center). Kept in memory and optionally on disk as raw
//! little-endian f64.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::frames::EpsFrame;
use crate::geodesy::{DistanceField, GraphOptions};
use crate::lattice::Lattice;
use crate::measure::{BallProbe, BallResolution};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
pub struct BallCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, (usize, Vec<f64>)>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl BallCache {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(BallCache { dir: Some(dir), ..Default::default() })
    }

    pub fn key(ef: &EpsFrame, lat: &Lattice, center: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(ef.base.name.as_bytes());
        h.update(ef.eps.to_bits().to_le_bytes());
        h.update(lat.key().as_bytes());
        for c in center {
            h.update(c.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn load(&self, key: &str) -> Option<(usize, Vec<f64>)> {
        if let Some(v) = self.mem.lock().unwrap().get(key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.bin"));
        let bytes = std::fs::read(path).ok()?;
        if bytes.len() < 8 || bytes.len() % 8 != 0 {
            return None;
        }
        let source = u64::from_le_bytes(bytes[..8].try_into().ok()?) as usize;
        let values = bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Some((source, values))
    }

    fn store(&self, key: &str, source: usize, values: &[f64]) {
        if let Some(dir) = &self.dir {
            let mut bytes = Vec::with_capacity(8 * (values.len() + 1));
            bytes.extend_from_slice(&(source as u64).to_le_bytes());
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            // a failed write only costs a recomputation later
            let _ = std::fs::write(dir.join(format!("{key}.bin")), bytes);
        }
        self.mem.lock().unwrap().insert(key.to_string(), (source, values.to_vec()));
    }

    pub fn probe(&self, ef: &EpsFrame, lat: &Lattice, center: &[f64]) -> Result<BallProbe> {
        let key = Self::key(ef, lat, center);
        if let Some((source, values)) = self.load(&key) {
            if values.len() == lat.len() {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(BallProbe::from_field(ef, lat.clone(), center, DistanceField::from_values(source, values)));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let p = BallProbe::new(ef, lat, center, &GraphOptions::default())?;
        self.store(&key, p.field.source, &p.field.values);
        Ok(p)
    }

    pub fn adapted(&self, ef: &EpsFrame, center: &[f64], r_max: f64, res: &BallResolution) -> Result<BallProbe> {
        BallProbe::adapted_with(ef, center, r_max, res, &|lat: &Lattice| self.probe(ef, lat, center))
    }
}

/// Adapted probe through the cache when one is given.
pub fn adapted(cache: Option<&BallCache>, ef: &EpsFrame, center: &[f64], r_max: f64, res: &BallResolution) -> Result<BallProbe> {
    match cache {
        Some(c) => c.adapted(ef, center, r_max, res),
        None => BallProbe::adapted(ef, center, r_max, res),
    }
}
