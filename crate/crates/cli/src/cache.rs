//! On-disk cache for transfer operators (TOP1) and equivariant densities (GFN1).
//!
//! Entries are written to a unique temporary file and renamed into place, so
//! readers never see a partial record. A `<entry>.lock` file created with
//! `create_new` elects one producer per entry across threads and processes;
//! the others wait for the entry to appear. Entries that fail to decode are
//! recomputed and overwritten.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qlsv_core::base::BasePoint;
use qlsv_core::grid::{decode_grid_function, encode_grid_function, GradedGrid};
use qlsv_core::lsv::MapParameter;
use qlsv_core::transfer::{
    Cocycle, EquivariantDensity, MemoryCache, OperatorKey, OperatorSource, PullbackSettings, TransferOperator,
};

/// A lock older than this is considered abandoned.
const STALE_LOCK: Duration = Duration::from_secs(120);
const POLL: Duration = Duration::from_millis(5);

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("entry");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub disk_hits: AtomicUsize,
    pub computed: AtomicUsize,
    pub corrupted: AtomicUsize,
    pub write_failures: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheCounts {
    pub disk_hits: usize,
    pub computed: usize,
    pub corrupted: usize,
    pub write_failures: usize,
}

impl CacheStats {
    pub fn counts(&self) -> CacheCounts {
        CacheCounts {
            disk_hits: self.disk_hits.load(Ordering::Relaxed),
            computed: self.computed.load(Ordering::Relaxed),
            corrupted: self.corrupted.load(Ordering::Relaxed),
            write_failures: self.write_failures.load(Ordering::Relaxed),
        }
    }
}

/// Operator source backed by memory and, optionally, a cache directory.
pub struct DiskCache {
    dir: Option<PathBuf>,
    memory: MemoryCache,
    pub stats: CacheStats,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl DiskCache {
    /// Falls back to memory-only caching (with a warning) when `dir` cannot be
    /// created or written.
    pub fn open(dir: Option<&Path>) -> Self {
        let dir = dir.and_then(|d| match Self::probe(d) {
            Ok(()) => Some(d.to_path_buf()),
            Err(e) => {
                warn!("cache directory {} is not writable ({e}); running uncached", d.display());
                None
            }
        });
        Self {
            dir,
            memory: MemoryCache::new(4096),
            stats: CacheStats::default(),
        }
    }

    fn probe(dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let probe = dir.join(format!(".probe.{}", std::process::id()));
        fs::write(&probe, b"ok")?;
        fs::remove_file(&probe)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Get-or-insert of one entry. `decode` returning `None` marks the file as
    /// corrupted; `produce` returns the value and its encoding.
    pub fn get_or_compute<T, E>(
        &self,
        name: &str,
        decode: impl Fn(&[u8]) -> Option<T>,
        produce: impl FnOnce() -> Result<(T, Vec<u8>), E>,
    ) -> Result<T, E> {
        let Some(dir) = &self.dir else {
            self.stats.computed.fetch_add(1, Ordering::Relaxed);
            return produce().map(|(v, _)| v);
        };
        let path = dir.join(name);
        let lock_path = dir.join(format!("{name}.lock"));
        let mut stale_corruption = false;
        let started = Instant::now();
        let guard = loop {
            match fs::read(&path) {
                Ok(bytes) => match decode(&bytes) {
                    Some(v) => {
                        self.stats.disk_hits.fetch_add(1, Ordering::Relaxed);
                        return Ok(v);
                    }
                    None if !stale_corruption => {
                        warn!("cache entry {} is corrupted; recomputing", path.display());
                        self.stats.corrupted.fetch_add(1, Ordering::Relaxed);
                        stale_corruption = true;
                    }
                    None => {}
                },
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => warn!("cannot read cache entry {}: {e}", path.display()),
            }
            match fs::OpenOptions::new().write(true).create_new(true).open(&lock_path) {
                Ok(_) => break Some(LockGuard(lock_path.clone())),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let age = fs::metadata(&lock_path)
                        .and_then(|m| m.modified())
                        .ok()
                        .and_then(|t| t.elapsed().ok())
                        .unwrap_or_default();
                    if age > STALE_LOCK || started.elapsed() > STALE_LOCK {
                        warn!("ignoring stale cache lock {}", lock_path.display());
                        break None;
                    }
                    // A corrupted entry with a live producer: wait for the rewrite.
                    std::thread::sleep(POLL);
                }
                Err(e) => {
                    warn!("cannot lock cache entry {}: {e}", path.display());
                    break None;
                }
            }
        };
        // Another producer may have finished between our read and the lock.
        if guard.is_some() && !stale_corruption {
            if let Ok(bytes) = fs::read(&path) {
                if let Some(v) = decode(&bytes) {
                    self.stats.disk_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(v);
                }
            }
        }
        self.stats.computed.fetch_add(1, Ordering::Relaxed);
        debug!("computing cache entry {name}");
        let (value, bytes) = produce()?;
        if let Err(e) = write_atomic(&path, &bytes) {
            self.stats.write_failures.fetch_add(1, Ordering::Relaxed);
            warn!("cannot write cache entry {}: {e}", path.display());
        }
        drop(guard);
        Ok(value)
    }

    fn operator_entry(key: &OperatorKey) -> String {
        format!("op-{}e{}-n{}-p{:016x}.top1", key.mantissa, key.exponent, key.n, key.p_bits)
    }

    /// Pullback density with the metadata needed to report it.
    pub fn density(
        &self,
        cc: &Cocycle<'_>,
        process_key: &str,
        omega: BasePoint,
        settings: PullbackSettings,
        eps: f64,
    ) -> qlsv_core::Result<EquivariantDensity> {
        let key = format!(
            "{process_key}|{}|{:016x}|{:016x}|{}|{}|{}|{}|{:016x}|{:016x}",
            cc.grid.n(),
            cc.grid.p().to_bits(),
            omega.anchor.to_bits(),
            omega.path,
            omega.index,
            settings.min_depth,
            settings.max_depth,
            settings.target.to_bits(),
            eps.to_bits()
        );
        let digest = hex::encode(&Sha256::digest(key.as_bytes())[..16]);
        let name = format!("dens-{digest}.gfn1");
        let meta_path = self.dir.as_ref().map(|d| d.join(format!("dens-{digest}.json")));
        let grid = cc.grid.clone();
        self.get_or_compute(
            &name,
            |bytes| {
                let h = decode_grid_function(bytes).ok()?;
                if !h.grid().same_as(&grid) {
                    return None;
                }
                let meta: DensityMeta = serde_json::from_slice(&fs::read(meta_path.as_ref()?).ok()?).ok()?;
                let h = qlsv_core::grid::GridFunction::new(grid.clone(), h.into_values(), qlsv_core::grid::Tag::Density)
                    .ok()?;
                Some(EquivariantDensity {
                    omega_anchor: omega,
                    eps,
                    min_value: h.min_value(),
                    h,
                    pullback_depth: meta.pullback_depth,
                    residual: f64::from_bits(meta.residual_bits),
                    mass_drift: f64::from_bits(meta.mass_drift_bits),
                })
            },
            || {
                let d = cc.equivariant_density(omega, settings, eps)?;
                if let Some(p) = &meta_path {
                    let meta = DensityMeta {
                        pullback_depth: d.pullback_depth,
                        residual_bits: d.residual.to_bits(),
                        mass_drift_bits: d.mass_drift.to_bits(),
                    };
                    if let Err(e) = write_atomic(p, &serde_json::to_vec(&meta).expect("metadata serializes")) {
                        warn!("cannot write cache metadata {}: {e}", p.display());
                    }
                }
                let bytes = encode_grid_function(&d.h);
                Ok((d, bytes))
            },
        )
    }
}

/// Floats are stored as bit patterns so cached runs reproduce cold runs exactly.
#[derive(Debug, Serialize, Deserialize)]
struct DensityMeta {
    pullback_depth: usize,
    residual_bits: u64,
    mass_drift_bits: u64,
}

impl OperatorSource for DiskCache {
    fn operator(&self, param: MapParameter, grid: &Arc<GradedGrid>) -> qlsv_core::Result<Arc<TransferOperator>> {
        let key = OperatorKey::new(param.gamma(), grid);
        if let Some(op) = self.memory.get(&key) {
            return Ok(op);
        }
        let op = self.get_or_compute(
            &Self::operator_entry(&key),
            |bytes| {
                let op = TransferOperator::from_bytes(bytes).ok()?;
                (OperatorKey::new(op.param().gamma(), op.grid()) == key).then_some(op)
            },
            || {
                let op = TransferOperator::build(param, grid.clone())?;
                let bytes = op.to_bytes();
                Ok::<_, qlsv_core::Error>((op, bytes))
            },
        )?;
        // Share the caller's grid handle so grid-identity checks stay cheap.
        let op = if Arc::ptr_eq(op.grid(), grid) {
            op
        } else {
            TransferOperator::from_triplets(op.param(), grid.clone(), &op.triplets())?
        };
        Ok(self.memory.insert(key, Arc::new(op)))
    }
}
