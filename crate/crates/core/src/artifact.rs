//! Offline artifacts: precomputed interface data stored as hash-keyed,
//! versioned binary blobs listed in a JSON manifest.
//!
//! A blob is keyed by the model hash, the frequency, the partition and the
//! backend settings. Layer factorizations are not stored; they are redone on
//! load, which is cheap next to the Green-block and cell-map precomputation.

use crate::discretization::Helmholtz;
use crate::error::{Error, Result};
use crate::green::{CompressionPolicy, GreenBlockSet};
use crate::nested::{build_system, Backend, InnerMethod, NestedConfig, NestedLayer};
use crate::sie::{LayerSolver, PrecomputedLayer, Sie};
use crate::subdomain::{build_layer, build_slab, partition_layers};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const FORMAT_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 4] = b"PTAF";
const MANIFEST: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of everything that determines the discrete operator.
pub fn model_hash(problem: &Helmholtz) -> String {
    let g = problem.grid();
    let mut h = Sha256::new();
    for v in [g.nx, g.nz, g.npml] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(g.h.to_le_bytes());
    h.update(problem.pml.strength.to_le_bytes());
    h.update(serde_json::to_vec(&problem.disc).expect("discretization serializes"));
    for c in problem.model.speeds() {
        h.update(c.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactKey {
    pub model_hash: String,
    pub omega: f64,
    pub layers: usize,
    pub layer: usize,
    pub backend: Backend,
    pub cells: usize,
    pub policy: Option<CompressionPolicy>,
}

impl ArtifactKey {
    pub fn id(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("key serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub key: ArtifactKey,
    pub file: String,
    pub bytes: u64,
    pub payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { version: FORMAT_VERSION, entries: Vec::new() }
    }
}

/// Directory of blobs plus `manifest.json`.
#[derive(Clone, Debug)]
pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let m: Manifest = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.version != FORMAT_VERSION {
            return Err(Error::Artifact(format!("manifest version {} (expected {FORMAT_VERSION})", m.version)));
        }
        Ok(m)
    }

    fn write_manifest(&self, m: &Manifest) -> Result<()> {
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(m)?)?;
        std::fs::rename(tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    /// Payload stored under `key`, verified against its recorded checksum.
    pub fn get(&self, key: &ArtifactKey) -> Result<Option<Vec<u8>>> {
        let id = key.id();
        let m = self.manifest()?;
        let Some(entry) = m.entries.iter().find(|e| e.id == id) else { return Ok(None) };
        let blob = std::fs::read(self.dir.join(&entry.file))?;
        if blob.len() < 8 || &blob[..4] != BLOB_MAGIC {
            return Err(Error::Artifact(format!("{} is not an artifact blob", entry.file)));
        }
        let version = u32::from_le_bytes(blob[4..8].try_into().expect("four bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!("{}: blob version {version} (expected {FORMAT_VERSION})", entry.file)));
        }
        let payload = blob[8..].to_vec();
        if sha256_hex(&payload) != entry.payload_sha256 {
            return Err(Error::Artifact(format!("{}: checksum mismatch", entry.file)));
        }
        Ok(Some(payload))
    }

    pub fn put(&self, key: &ArtifactKey, payload: &[u8]) -> Result<()> {
        let id = key.id();
        let file = format!("{id}.bin");
        let mut blob = BLOB_MAGIC.to_vec();
        blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        blob.extend_from_slice(payload);
        std::fs::write(self.dir.join(&file), &blob)?;
        let mut m = self.manifest()?;
        m.entries.retain(|e| e.id != id);
        m.entries.push(ManifestEntry {
            id,
            key: key.clone(),
            file,
            bytes: blob.len() as u64,
            payload_sha256: sha256_hex(payload),
        });
        self.write_manifest(&m)
    }
}

/// Blobs reused and created while building a system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// [`build_system`] with the offline data of every layer loaded from, or
/// written to, `store`.
pub fn build_system_cached(
    problem: &Helmholtz,
    layers: usize,
    backend: Backend,
    nested: &NestedConfig,
    policy: Option<&CompressionPolicy>,
    store: &ArtifactStore,
) -> Result<(Sie, CacheStats)> {
    let mut stats = CacheStats::default();
    let method = match backend {
        Backend::Direct => return Ok((build_system(problem, layers, backend, nested, policy)?, stats)),
        Backend::Precomputed => None,
        Backend::NestedPt => Some(InnerMethod::Pt),
        Backend::NestedLu => Some(InnerMethod::Lu),
    };
    let cfg = NestedConfig { method: method.unwrap_or(nested.method), ..*nested };
    let p = partition_layers(problem.grid(), layers)?;
    let hash = model_hash(problem);
    let mut solvers: Vec<Arc<dyn LayerSolver>> = Vec::with_capacity(layers);
    for l in 0..layers {
        let key = ArtifactKey {
            model_hash: hash.clone(),
            omega: problem.omega(),
            layers,
            layer: l,
            backend,
            cells: if method.is_some() { cfg.cells } else { 1 },
            policy: if method.is_some() { cfg.policy } else { policy.copied() },
        };
        let cached = store.get(&key)?;
        if cached.is_some() {
            stats.hits += 1;
        } else {
            stats.misses += 1;
        }
        let solver: Arc<dyn LayerSolver> = match (method, cached) {
            (None, Some(bytes)) => {
                let blocks = GreenBlockSet::read_bytes(&bytes, &mut 0)?;
                Arc::new(PrecomputedLayer::from_blocks(Arc::new(build_layer(problem, &p, l)?), blocks)?)
            }
            (None, None) => {
                let layer = PrecomputedLayer::new(Arc::new(build_layer(problem, &p, l)?), layers, policy)?;
                let mut out = Vec::new();
                layer.blocks().write_bytes(&mut out);
                store.put(&key, &out)?;
                Arc::new(layer)
            }
            (Some(_), Some(bytes)) => Arc::new(NestedLayer::from_offline(problem, build_slab(problem, &p, l)?, &cfg, &bytes)?),
            (Some(_), None) => {
                let layer = NestedLayer::build(problem, &p, l, &cfg)?;
                store.put(&key, &layer.offline_bytes())?;
                Arc::new(layer)
            }
        };
        solvers.push(solver);
    }
    Ok((Sie::new(problem, p, solvers)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{synthetic_model, Discretization, Grid, SyntheticKind};
    use crate::linalg::rel_diff;
    use crate::sie::SolveConfig;
    use num_complex::Complex64 as C64;

    fn problem(seed: u64) -> Helmholtz {
        let g = Grid::new(24, 24, 1.0 / 25.0, 6).unwrap();
        let m = synthetic_model(SyntheticKind::RandomSmooth, seed, &g).unwrap();
        Helmholtz::new(m, 12.0, None, Discretization::Fd).unwrap()
    }

    #[test]
    fn model_hash_tracks_the_medium() {
        assert_eq!(model_hash(&problem(1)), model_hash(&problem(1)));
        assert_ne!(model_hash(&problem(1)), model_hash(&problem(2)));
    }

    #[test]
    fn cached_build_reuses_blobs_and_reproduces_solutions() {
        let dir = std::env::temp_dir().join(format!("polartrace-artifacts-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let store = ArtifactStore::open(&dir).unwrap();
        let h = problem(3);
        let g = h.grid();
        let mut f = vec![C64::new(0.0, 0.0); g.ext_len()];
        f[g.index(12, 5).unwrap()] = C64::new(1.0, 0.0);
        let nested = NestedConfig { cells: 2, ..NestedConfig::default() };
        for backend in [Backend::Precomputed, Backend::NestedLu] {
            let (a, s1) = build_system_cached(&h, 2, backend, &nested, None, &store).unwrap();
            let (b, s2) = build_system_cached(&h, 2, backend, &nested, None, &store).unwrap();
            assert_eq!(s1, CacheStats { hits: 0, misses: 2 });
            assert_eq!(s2, CacheStats { hits: 2, misses: 0 });
            let ua = a.solve_polarized(&f, &SolveConfig::default()).unwrap().u;
            let ub = b.solve_polarized(&f, &SolveConfig::default()).unwrap().u;
            assert_eq!(rel_diff(&ua, &ub), 0.0);
        }
        let m = store.manifest().unwrap();
        assert_eq!(m.entries.len(), 4);
        let victim = dir.join(&m.entries[0].file);
        let mut blob = std::fs::read(&victim).unwrap();
        let last = blob.len() - 1;
        blob[last] ^= 1;
        std::fs::write(&victim, blob).unwrap();
        assert!(matches!(store.get(&m.entries[0].key), Err(Error::Artifact(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
