//! Soft-cutoff Gaussian skinning of mesh vertices to ribs and spine key
//! points, plus a content-addressed on-disk cache for the result.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{sha256_hex, Reader, Writer};
use crate::error::{Error, Result};
use crate::math::{project_to_segment, Vec3};
use crate::mesh::CleanPart;
use crate::ribs::Rib;
use crate::spatial::HashGrid;
use crate::spine::SpineTree;

pub const DEFAULT_NEIGHBORS: f64 = 2.0;
pub const DEFAULT_W_MIN: f64 = 1e-4;
pub const CACHE_ENV: &str = "FISHBONE_CACHE";
const CACHE_MAGIC: &[u8; 4] = b"FBW1";

/// Gaussian bandwidth and cutoff floor for one part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub sigma: f64,
    pub w_min: f64,
}

impl Bandwidth {
    /// `σ = nΔ / √(−2 ln w_min)` with rib spacing `Δ = L_p / K`.
    pub fn from_spacing(part_extent: f64, k: usize, n: f64, w_min: f64) -> Result<Self> {
        if k == 0 || !(w_min > 0.0 && w_min < 1.0) || !(n > 0.0) || !(part_extent > 0.0) {
            return Err(Error::Parameter(format!(
                "bandwidth needs K ≥ 1, 0 < w_min < 1, n > 0, L_p > 0 (got K={k}, w_min={w_min}, n={n}, L_p={part_extent})"
            )));
        }
        Ok(Bandwidth {
            sigma: bandwidth(part_extent, k, n, w_min),
            w_min,
        })
    }

    /// Distance at which the Gaussian falls to `w_min`; raw weights vanish
    /// at and beyond it.
    pub fn support_radius(&self) -> f64 {
        self.sigma * (-2.0 * self.w_min.ln()).sqrt()
    }

    /// `max(exp(−d²/2σ²) − w_min, 0)`, exactly zero from the support radius on.
    pub fn raw_weight(&self, d: f64) -> f64 {
        if d >= self.support_radius() {
            return 0.0;
        }
        ((-d * d / (2.0 * self.sigma * self.sigma)).exp() - self.w_min).max(0.0)
    }
}

pub fn bandwidth(part_extent: f64, k: usize, n: f64, w_min: f64) -> f64 {
    let delta = part_extent / k as f64;
    n * delta / (-2.0 * w_min.ln()).sqrt()
}

/// Nearest point of a vertex on one rib.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexProjection {
    pub rib: usize,
    pub edge_index: usize,
    pub param: f64,
    pub distance: f64,
}

impl VertexProjection {
    pub fn point(&self, rib: &Rib) -> Vec3 {
        let (a, b) = rib.segment(self.edge_index);
        a + (b - a) * self.param
    }
}

/// Nearest rib edge by exhaustive scan (wrap edge included for closed
/// ribs). Ties keep the lowest edge index.
pub fn project_to_rib(vertex: &Vec3, rib: &Rib, rib_id: usize) -> VertexProjection {
    let mut best = VertexProjection {
        rib: rib_id,
        edge_index: 0,
        param: 0.0,
        distance: f64::INFINITY,
    };
    for j in 0..rib.segment_count() {
        let (a, b) = rib.segment(j);
        let (t, d) = project_to_segment(vertex, &a, &b);
        if d < best.distance {
            best.edge_index = j;
            best.param = t;
            best.distance = d;
        }
    }
    if rib.segment_count() == 0 {
        best.distance = rib
            .points
            .first()
            .map_or(f64::INFINITY, |p| (vertex - p).norm());
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Rib,
    Spine,
}

/// Sparse row-normalized vertex × handle weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub kind: WeightKind,
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    /// One per nonzero (rib kind only).
    pub projections: Vec<VertexProjection>,
    /// `(vertex, key point)` pairs for vertices outside every spine support.
    pub rigid_fallback: Vec<(usize, usize)>,
    pub bandwidth: Bandwidth,
}

impl WeightMatrix {
    fn empty(kind: WeightKind, rows: usize, cols: usize, bandwidth: Bandwidth) -> Self {
        WeightMatrix {
            kind,
            rows,
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            projections: Vec::new(),
            rigid_fallback: Vec::new(),
            bandwidth,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_span(i);
        self.col_idx[s.clone()]
            .iter()
            .copied()
            .zip(self.values[s].iter().copied())
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == k).map_or(0.0, |(_, v)| v)
    }

    /// Column sums `Σ_i W_ik`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for (c, v) in self.col_idx.iter().zip(&self.values) {
            s[*c] += v;
        }
        s
    }

    /// `W · x` for per-handle vectors.
    pub fn apply(&self, handles: &[Vec3]) -> Vec<Vec3> {
        (0..self.rows)
            .map(|i| self.row(i).map(|(k, w)| handles[k] * w).sum())
            .collect()
    }

    /// `Wᵀ · y` for per-vertex vectors.
    pub fn apply_transpose(&self, per_vertex: &[Vec3]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.cols];
        for i in 0..self.rows {
            for (k, w) in self.row(i) {
                out[k] += per_vertex[i] * w;
            }
        }
        out
    }

    fn push_row(&mut self, entries: &mut [(usize, f64, Option<VertexProjection>)]) {
        entries.sort_by_key(|e| e.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        for (c, w, proj) in entries.iter() {
            self.col_idx.push(*c);
            self.values.push(w / total);
            if let Some(p) = proj {
                self.projections.push(*p);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    fn encode(&self, w: &mut Writer) {
        w.u8(match self.kind {
            WeightKind::Rib => 0,
            WeightKind::Spine => 1,
        });
        w.usize(self.rows);
        w.usize(self.cols);
        w.f64(self.bandwidth.sigma);
        w.f64(self.bandwidth.w_min);
        w.usize(self.nnz());
        for i in 0..self.rows {
            for e in self.row_span(i) {
                w.usize(i);
                w.usize(self.col_idx[e]);
                w.f64(self.values[e]);
            }
        }
        w.usize(self.projections.len());
        for p in &self.projections {
            w.usize(p.rib);
            w.usize(p.edge_index);
            w.f64(p.param);
            w.f64(p.distance);
        }
        w.usize(self.rigid_fallback.len());
        for &(v, k) in &self.rigid_fallback {
            w.usize(v);
            w.usize(k);
        }
    }

    fn decode(r: &mut Reader) -> Result<Self> {
        let kind = match r.u8()? {
            0 => WeightKind::Rib,
            1 => WeightKind::Spine,
            k => return Err(Error::Codec(format!("unknown weight kind {k}"))),
        };
        let rows = r.usize()?;
        let cols = r.usize()?;
        let bandwidth = Bandwidth {
            sigma: r.f64()?,
            w_min: r.f64()?,
        };
        let mut m = WeightMatrix::empty(kind, rows, cols, bandwidth);
        let nnz = r.count(24)?;
        m.row_ptr = vec![0; rows + 1];
        let mut last: Option<(usize, usize)> = None;
        for _ in 0..nnz {
            let (i, c, v) = (r.usize()?, r.usize()?, r.f64()?);
            if i >= rows || c >= cols || last.is_some_and(|l| l >= (i, c)) {
                return Err(Error::Codec(format!("bad triplet ({i}, {c})")));
            }
            last = Some((i, c));
            m.row_ptr[i + 1] += 1;
            m.col_idx.push(c);
            m.values.push(v);
        }
        for i in 0..rows {
            m.row_ptr[i + 1] += m.row_ptr[i];
        }
        let np = r.count(32)?;
        for _ in 0..np {
            m.projections.push(VertexProjection {
                rib: r.usize()?,
                edge_index: r.usize()?,
                param: r.f64()?,
                distance: r.f64()?,
            });
        }
        let nf = r.count(16)?;
        for _ in 0..nf {
            m.rigid_fallback.push((r.usize()?, r.usize()?));
        }
        if kind == WeightKind::Rib && np != nnz {
            return Err(Error::Codec("projection count does not match nonzeros".into()));
        }
        Ok(m)
    }
}

/// Rib weights: one projection per (vertex, rib) pair inside the support
/// radius. Rows without support stay empty.
pub fn compute_rib_weights(part: &CleanPart, ribs: &[Rib], bw: Bandwidth) -> Result<WeightMatrix> {
    if ribs.is_empty() {
        return Err(Error::Parameter("rib weights need at least one rib".into()));
    }
    let radius = bw.support_radius();
    let mut grid = HashGrid::new(radius);
    // global segment id → (rib, edge)
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for (k, rib) in ribs.iter().enumerate() {
        for j in 0..rib.segment_count() {
            let (a, b) = rib.segment(j);
            grid.insert_box(&a.inf(&b), &a.sup(&b), segments.len());
            segments.push((k, j));
        }
        if rib.segment_count() == 0 {
            if let Some(p) = rib.points.first() {
                grid.insert(p, segments.len());
                segments.push((k, 0));
            }
        }
    }

    let mut m = WeightMatrix::empty(WeightKind::Rib, part.vertices.len(), ribs.len(), bw);
    let mut cand = Vec::new();
    let mut entries = Vec::new();
    for v in &part.vertices {
        grid.candidates(v, radius, &mut cand);
        cand.sort_unstable();
        cand.dedup();
        // ascending segment id keeps ribs contiguous and edges ascending
        let mut best: Option<VertexProjection> = None;
        entries.clear();
        let flush = |best: &mut Option<VertexProjection>, entries: &mut Vec<_>| {
            if let Some(p) = best.take() {
                let w = bw.raw_weight(p.distance);
                if w > 0.0 {
                    entries.push((p.rib, w, Some(p)));
                }
            }
        };
        for &s in &cand {
            let (k, j) = segments[s];
            if best.is_some_and(|b| b.rib != k) {
                flush(&mut best, &mut entries);
            }
            let rib = &ribs[k];
            let (t, d) = if rib.segment_count() == 0 {
                (0.0, (v - rib.points[0]).norm())
            } else {
                let (a, b) = rib.segment(j);
                project_to_segment(v, &a, &b)
            };
            if best.is_none_or(|b| d < b.distance) {
                best = Some(VertexProjection {
                    rib: k,
                    edge_index: j,
                    param: t,
                    distance: d,
                });
            }
        }
        flush(&mut best, &mut entries);
        m.push_row(&mut entries);
    }
    Ok(m)
}

/// Spine weights over key points; vertices outside every support attach
/// rigidly to their nearest key point (lowest index on ties).
pub fn compute_spine_weights(
    part: &CleanPart,
    spine: &SpineTree,
    bw: Bandwidth,
) -> Result<WeightMatrix> {
    if spine.is_empty() {
        return Err(Error::EmptySpine);
    }
    let radius = bw.support_radius();
    let mut grid = HashGrid::new(radius);
    for (k, p) in spine.key_points.iter().enumerate() {
        grid.insert(p, k);
    }
    let mut m = WeightMatrix::empty(WeightKind::Spine, part.vertices.len(), spine.len(), bw);
    let mut cand = Vec::new();
    let mut entries = Vec::new();
    for (i, v) in part.vertices.iter().enumerate() {
        grid.candidates(v, radius, &mut cand);
        entries.clear();
        for &k in &cand {
            let w = bw.raw_weight((v - spine.key_points[k]).norm());
            if w > 0.0 {
                entries.push((k, w, None));
            }
        }
        if entries.is_empty() {
            let k = nearest_key(&spine.key_points, v);
            entries.push((k, 1.0, None));
            m.rigid_fallback.push((i, k));
        }
        m.push_row(&mut entries);
    }
    Ok(m)
}

fn nearest_key(keys: &[Vec3], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, q) in keys.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Rib and spine weights of one part.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    pub rib: WeightMatrix,
    pub spine: WeightMatrix,
}

impl SkinWeights {
    pub fn compute(
        part: &CleanPart,
        ribs: &[Rib],
        spine: &SpineTree,
        rib_bw: Bandwidth,
        spine_bw: Bandwidth,
    ) -> Result<Self> {
        Ok(SkinWeights {
            rib: compute_rib_weights(part, ribs, rib_bw)?,
            spine: compute_spine_weights(part, spine, spine_bw)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CACHE_MAGIC);
        self.rib.encode(&mut w);
        self.spine.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Codec("not a weight file".into()));
        }
        let rib = WeightMatrix::decode(&mut r)?;
        let spine = WeightMatrix::decode(&mut r)?;
        r.finish()?;
        if rib.kind != WeightKind::Rib || spine.kind != WeightKind::Spine {
            return Err(Error::Codec("weight kinds out of order".into()));
        }
        Ok(SkinWeights { rib, spine })
    }
}

/// SHA-256 over everything the weights depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RigCacheKey {
    pub digest: [u8; 32],
}

impl RigCacheKey {
    pub fn new(
        part: &CleanPart,
        ribs: &[Rib],
        spine: &SpineTree,
        rib_bw: Bandwidth,
        spine_bw: Bandwidth,
    ) -> Self {
        let mut w = Writer::new();
        w.vec3s(&part.vertices);
        w.usize(part.faces.len());
        for f in &part.faces {
            for &v in f {
                w.usize(v);
            }
        }
        w.usize(ribs.len());
        for rib in ribs {
            w.u8(rib.closed as u8);
            w.vec3s(&rib.points);
        }
        w.vec3s(&spine.key_points);
        for p in &spine.parents {
            w.u64(p.map_or(u64::MAX, |p| p as u64));
        }
        for bw in [rib_bw, spine_bw] {
            w.f64(bw.sigma);
            w.f64(bw.w_min);
        }
        RigCacheKey {
            digest: Sha256::digest(w.into_bytes()).into(),
        }
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheManifest {
    digest: String,
    payload_sha256: String,
    payload_bytes: usize,
    rows: usize,
    rib_cols: usize,
    spine_cols: usize,
    rib_nnz: usize,
    spine_nnz: usize,
}

/// Content-addressed weight cache rooted at a directory.
#[derive(Debug)]
pub struct WeightCache {
    root: PathBuf,
    computes: AtomicUsize,
}

impl WeightCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        WeightCache {
            root: root.into(),
            computes: AtomicUsize::new(0),
        }
    }

    /// Root from `FISHBONE_CACHE`, else `<tmp>/fishbone-cache`.
    pub fn from_env() -> Self {
        let root = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| std::env::temp_dir().join("fishbone-cache"));
        Self::new(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Number of times `lookup_or_compute` had to run its closure.
    pub fn compute_count(&self) -> usize {
        self.computes.load(Ordering::SeqCst)
    }

    pub fn entry_paths(&self, key: &RigCacheKey) -> (PathBuf, PathBuf) {
        let hex = key.hex();
        let dir = self.root.join(&hex[..2]);
        (dir.join(format!("{hex}.fbw")), dir.join(format!("{hex}.json")))
    }

    pub fn lookup_or_compute(
        &self,
        key: &RigCacheKey,
        compute: impl FnOnce() -> Result<SkinWeights>,
    ) -> Result<SkinWeights> {
        match self.load(key) {
            Ok(Some(w)) => return Ok(w),
            Ok(None) => {}
            Err(e) => log::warn!("weight cache entry {} unreadable, recomputing: {e}", key.hex()),
        }
        self.computes.fetch_add(1, Ordering::SeqCst);
        let weights = compute()?;
        if let Err(e) = self.store(key, &weights) {
            log::warn!("could not write weight cache entry {}: {e}", key.hex());
        }
        Ok(weights)
    }

    fn load(&self, key: &RigCacheKey) -> Result<Option<SkinWeights>> {
        let (bin, json) = self.entry_paths(key);
        if !bin.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let manifest_text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: CacheManifest = serde_json::from_str(&manifest_text)?;
        if manifest.digest != key.hex() || manifest.payload_sha256 != sha256_hex(&bytes) {
            return Err(Error::Codec("cache manifest does not match payload".into()));
        }
        SkinWeights::from_bytes(&bytes).map(Some)
    }

    fn store(&self, key: &RigCacheKey, weights: &SkinWeights) -> Result<()> {
        let (bin, json) = self.entry_paths(key);
        let dir = bin.parent().expect("entry has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = weights.to_bytes();
        let manifest = CacheManifest {
            digest: key.hex(),
            payload_sha256: sha256_hex(&bytes),
            payload_bytes: bytes.len(),
            rows: weights.rib.rows,
            rib_cols: weights.rib.cols,
            spine_cols: weights.spine.cols,
            rib_nnz: weights.rib.nnz(),
            spine_nnz: weights.spine.nnz(),
        };
        // manifest last: a reader that sees the payload without a matching
        // manifest treats the entry as corrupt and recomputes
        atomic_write(&bin, &bytes)?;
        atomic_write(&json, serde_json::to_string_pretty(&manifest)?.as_bytes())
    }
}

/// Write through a uniquely named temp file in the same directory, then
/// rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let tmp = path.with_extension(format!(
        "tmp{}.{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
