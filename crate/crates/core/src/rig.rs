//! The assembled rig: per-part rest geometry, ribs, spine, weights and
//! spine frames, plus the current (edited) pose.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{bind_to_spine, ArcTable, SpineBinding, SpineFrames};
use crate::geodesic::{select_root, solve_heat_geodesic, GeodesicField, GeodesicOptions};
use crate::math::{to_vec3, Vec3};
use crate::mesh::{
    clean_and_normalize, expand_to_original, make_welded_twin, CleanOptions, CleanPart, Normalization,
    PartSet, RawMesh,
};
use crate::ribs::{extract_ribs, plan_levels, LevelPlan, RibTree};
use crate::skinning::{
    Bandwidth, RigCacheKey, SkinWeights, WeightCache, DEFAULT_NEIGHBORS, DEFAULT_W_MIN,
};
use crate::spine::{build_spine, ScoreWeights, SpinePoint, SpineTree, SCORE_GRID};

/// Every knob the extraction pipeline uses; stored with the rig so it can be
/// regenerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub clean: CleanOptions,
    pub geodesic: GeodesicOptions,
    pub neighbors: f64,
    pub w_min: f64,
    pub score_weights: ScoreWeights,
    pub score_grid: usize,
    pub up: [f64; 3],
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            clean: CleanOptions::default(),
            geodesic: GeodesicOptions::default(),
            neighbors: DEFAULT_NEIGHBORS,
            w_min: DEFAULT_W_MIN,
            score_weights: ScoreWeights::default(),
            score_grid: SCORE_GRID,
            up: [0.0, 1.0, 0.0],
        }
    }
}

impl ExtractConfig {
    pub fn up_vector(&self) -> Vec3 {
        let u = to_vec3(self.up);
        if u.norm() > 0.0 {
            u.normalize()
        } else {
            Vec3::y()
        }
    }
}

/// Where a rib point sits on the original mesh: `(1 − λ)·v_a + λ·v_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RibAnchor {
    pub a: usize,
    pub b: usize,
    pub lambda: f64,
}

/// One part of a rig.
#[derive(Debug, Clone, PartialEq)]
pub struct PartRig {
    pub rest_mesh: CleanPart,
    /// Current pose; shares faces with `rest_mesh`.
    pub vertices: Vec<Vec3>,
    /// Geodesic field expanded onto the original vertices.
    pub field: GeodesicField,
    pub plan: LevelPlan,
    /// Rest ribs with their tree links.
    pub tree: RibTree,
    /// Current rib polylines, one per tree node.
    pub ribs: Vec<Vec<Vec3>>,
    pub rib_anchors: Vec<Vec<RibAnchor>>,
    pub rest_spine: SpineTree,
    /// Current key points.
    pub spine: Vec<Vec3>,
    pub spine_points: Vec<SpinePoint>,
    pub weights: SkinWeights,
    pub frames: SpineFrames,
    pub arc_tables: Vec<ArcTable>,
    pub bindings: Vec<SpineBinding>,
    pub twin_watertight: Option<bool>,
}

impl PartRig {
    pub fn part_id(&self) -> usize {
        self.rest_mesh.part_id
    }

    pub fn rib_count(&self) -> usize {
        self.tree.nodes.len()
    }

    pub fn branch_count(&self) -> usize {
        self.rest_spine.branches.len()
    }

    /// Restore the rest pose.
    pub fn reset(&mut self) {
        self.vertices = self.rest_mesh.vertices.clone();
        self.ribs = self.tree.nodes.iter().map(|r| r.points.clone()).collect();
        self.spine = self.rest_spine.key_points.clone();
    }

    /// Spine tree with the current key positions.
    pub fn current_spine(&self) -> SpineTree {
        SpineTree {
            key_points: self.spine.clone(),
            ..self.rest_spine.clone()
        }
    }

    /// Move every rib point by the displacement interpolated from its mesh
    /// edge, skipping ribs in `skip`.
    pub(crate) fn carry_ribs(&mut self, displacement: &[Vec3], skip: &[usize]) {
        for (k, (rib, anchors)) in self.ribs.iter_mut().zip(&self.rib_anchors).enumerate() {
            if skip.contains(&k) {
                continue;
            }
            for (p, a) in rib.iter_mut().zip(anchors) {
                *p += displacement[a.a] * (1.0 - a.lambda) + displacement[a.b] * a.lambda;
            }
        }
    }

    /// Check the structural invariants; returns the first failed check.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.rest_mesh.vertices.len();
        if self.vertices.len() != n {
            return Err(("vertex_count", format!("{} vs {n}", self.vertices.len())));
        }
        if let Some(f) = self.rest_mesh.faces.iter().find(|f| f.iter().any(|&v| v >= n)) {
            return Err(("face_indices", format!("{f:?}")));
        }
        let k = self.rib_count();
        if self.ribs.len() != k || self.rib_anchors.len() != k {
            return Err(("rib_count", format!("{} ribs for {k} nodes", self.ribs.len())));
        }
        for (i, (r, a)) in self.ribs.iter().zip(&self.rib_anchors).enumerate() {
            if r.len() != a.len() || a.iter().any(|x| x.a >= n || x.b >= n) {
                return Err(("rib_anchors", format!("rib {i}")));
            }
        }
        if let Some((i, p)) = self
            .tree
            .nodes
            .iter()
            .enumerate()
            .find_map(|(i, r)| r.parent.filter(|&p| p >= k).map(|p| (i, p)))
        {
            return Err(("rib_parent", format!("rib {i} points at {p}")));
        }
        let ks = self.rest_spine.len();
        if ks != k || self.spine.len() != ks {
            return Err(("spine_size", format!("{ks} keys for {k} ribs")));
        }
        if self.rest_spine.branches.iter().flatten().any(|&b| b >= ks)
            || self.rest_spine.parents.iter().flatten().any(|&p| p >= ks)
        {
            return Err(("spine_refs", "key index out of range".into()));
        }
        for (name, m, cols) in [("rib_weights", &self.weights.rib, k), ("spine_weights", &self.weights.spine, ks)] {
            if m.rows != n || m.cols != cols || m.row_ptr.len() != n + 1 {
                return Err((name, format!("shape {}x{} expected {n}x{cols}", m.rows, m.cols)));
            }
            if m.col_idx.iter().any(|&c| c >= cols) {
                return Err((name, "column out of range".into()));
            }
            for i in 0..n {
                let span = m.row_span(i);
                if span.is_empty() {
                    continue;
                }
                let s: f64 = m.values[span].iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err((name, format!("row {i} sums to {s}")));
                }
            }
        }
        if self.weights.rib.projections.len() != self.weights.rib.nnz() {
            return Err(("rib_projections", "count mismatch".into()));
        }
        for e in 0..self.weights.rib.nnz() {
            let p = &self.weights.rib.projections[e];
            if p.rib != self.weights.rib.col_idx[e] || p.edge_index >= self.tree.nodes[p.rib].segment_count().max(1) {
                return Err(("rib_projections", format!("entry {e}")));
            }
        }
        for &(v, key) in &self.weights.spine.rigid_fallback {
            if v >= n || key >= ks {
                return Err(("rigid_fallback", format!("({v}, {key})")));
            }
        }
        if self.bindings.len() != n || self.frames.edge_into.len() != ks {
            return Err(("bindings", "size mismatch".into()));
        }
        if self.arc_tables.len() != self.rest_spine.branches.len() {
            return Err(("arc_tables", "one table per branch expected".into()));
        }
        Ok(())
    }
}

/// Transport frames and per-branch arc tables of a rest spine.
pub fn rest_frames(spine: &SpineTree, up: &Vec3) -> (SpineFrames, Vec<ArcTable>) {
    let frames = SpineFrames::build(spine, &spine.key_points, up);
    let arc_tables = spine
        .branches
        .iter()
        .map(|b| ArcTable::new(b, &spine.key_points))
        .collect();
    (frames, arc_tables)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FishboneRig {
    pub parts: Vec<PartRig>,
    pub normalization: Normalization,
    pub config: ExtractConfig,
}

impl FishboneRig {
    pub fn part(&self, id: usize) -> Result<&PartRig> {
        self.parts
            .get(id)
            .ok_or_else(|| Error::Selection(format!("no part {id} (rig has {})", self.parts.len())))
    }

    pub fn part_mut(&mut self, id: usize) -> Result<&mut PartRig> {
        let n = self.parts.len();
        self.parts
            .get_mut(id)
            .ok_or_else(|| Error::Selection(format!("no part {id} (rig has {n})")))
    }

    pub fn reset(&mut self) {
        for p in &mut self.parts {
            p.reset();
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.parts.iter().map(|p| p.vertices.len()).sum()
    }

    pub fn key_count(&self) -> usize {
        self.parts.iter().map(|p| p.spine.len()).sum()
    }

    /// Current pose of all parts concatenated, in original units.
    pub fn export_mesh(&self) -> RawMesh {
        let mut out = RawMesh::default();
        let mut labels = Vec::new();
        for p in &self.parts {
            let base = out.vertices.len();
            out.vertices
                .extend(p.vertices.iter().map(|v| self.normalization.invert(v)));
            out.faces
                .extend(p.rest_mesh.faces.iter().map(|f| f.map(|v| v + base)));
            labels.extend(std::iter::repeat_n(p.part_id(), p.rest_mesh.faces.len()));
        }
        out.part_labels = Some(labels);
        out
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.parts {
            p.validate()
                .map_err(|(check, detail)| Error::CorruptRig {
                    check,
                    detail: format!("part {}: {detail}", p.part_id()),
                })?;
        }
        Ok(())
    }
}

/// Wall-clock split of one extraction run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub rib_extraction_s: f64,
    pub spine_construction_s: f64,
    pub weight_computation_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub timings: StageTimings,
    /// Per part, whether the weights came from the cache.
    pub cache_hits: Vec<bool>,
}

/// Run the whole pipeline on a raw mesh.
pub fn extract(
    raw: &RawMesh,
    config: &ExtractConfig,
    cache: Option<&WeightCache>,
) -> Result<(FishboneRig, ExtractReport)> {
    let start = Instant::now();
    let set = clean_and_normalize(raw, &config.clean)?;
    let (rig, mut report) = extract_parts(&set, config, cache)?;
    report.timings.total_s = start.elapsed().as_secs_f64();
    Ok((rig, report))
}

/// Run the pipeline on already cleaned parts.
pub fn extract_parts(
    set: &PartSet,
    config: &ExtractConfig,
    cache: Option<&WeightCache>,
) -> Result<(FishboneRig, ExtractReport)> {
    let start = Instant::now();
    let object_extent = set.object_bbox().max_extent();
    let mut report = ExtractReport::default();
    let mut parts = Vec::with_capacity(set.parts.len());
    for part in &set.parts {
        let (p, hit) = extract_part(part, object_extent, config, cache, &mut report.timings)?;
        parts.push(p);
        report.cache_hits.push(hit);
    }
    report.timings.total_s = start.elapsed().as_secs_f64();
    Ok((
        FishboneRig {
            parts,
            normalization: set.shared_normalization,
            config: *config,
        },
        report,
    ))
}

fn extract_part(
    part: &CleanPart,
    object_extent: f64,
    config: &ExtractConfig,
    cache: Option<&WeightCache>,
    timings: &mut StageTimings,
) -> Result<(PartRig, bool)> {
    let up = config.up_vector();

    let t0 = Instant::now();
    let twin = make_welded_twin(part);
    let geometry = twin.as_ref().map_or(part, |t| &t.part);
    let roots = select_root(geometry, config.geodesic.upright_hint, None);
    let field = solve_heat_geodesic(geometry, &roots, &config.geodesic)?;
    let part_extent = part.bbox().max_extent();
    let plan = plan_levels(part_extent, object_extent.max(part_extent), field.phi_max());
    let tree = extract_ribs(geometry, &field, &plan)?;
    // twin vertex → original vertex for rib anchors
    let to_original = |v: usize| twin.as_ref().map_or(v, |t| t.representatives[v]);
    let rib_anchors: Vec<Vec<RibAnchor>> = tree
        .nodes
        .iter()
        .map(|r| {
            r.edge_refs
                .iter()
                .map(|e| RibAnchor {
                    a: to_original(e.v0),
                    b: to_original(e.v1),
                    lambda: e.lambda,
                })
                .collect()
        })
        .collect();
    let field = match &twin {
        Some(t) => {
            let map = t.part.weld_map.as_ref().expect("twin carries a weld map");
            GeodesicField {
                phi: expand_to_original(&field.phi, map),
                root_vertices: field.root_vertices.iter().map(|&v| t.representatives[v]).collect(),
                component_id: expand_to_original(&field.component_id, map),
                ..field
            }
        }
        None => field,
    };
    timings.rib_extraction_s += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (spine, spine_points, _) = build_spine(&tree, &up, &config.score_weights, config.score_grid)?;
    timings.spine_construction_s += t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let bw = Bandwidth::from_spacing(part_extent, plan.k, config.neighbors, config.w_min)?;
    let ribs: Vec<_> = tree.nodes.clone();
    let compute = || SkinWeights::compute(part, &ribs, &spine, bw, bw);
    let (weights, hit) = match cache {
        Some(c) => {
            let key = RigCacheKey::new(part, &ribs, &spine, bw, bw);
            let before = c.compute_count();
            let w = c.lookup_or_compute(&key, compute)?;
            (w, c.compute_count() == before)
        }
        None => (compute()?, false),
    };
    timings.weight_computation_s += t2.elapsed().as_secs_f64();

    let (frames, arc_tables) = rest_frames(&spine, &up);
    let bindings = bind_to_spine(&part.vertices, &spine.key_points, &frames);

    Ok((
        PartRig {
            rest_mesh: part.clone(),
            vertices: part.vertices.clone(),
            field,
            plan,
            ribs: tree.nodes.iter().map(|r| r.points.clone()).collect(),
            tree,
            rib_anchors,
            spine: spine.key_points.clone(),
            rest_spine: spine,
            spine_points,
            weights,
            frames,
            arc_tables,
            bindings,
            twin_watertight: twin.as_ref().map(|t| t.watertight),
        },
        hit,
    ))
}
