//! `.fbr` rig files: magic, version, a JSON header with the structure and
//! parameters, a little-endian body with every numeric array, and a SHA-256
//! trailer over everything before it.
//!
//! ```text
//! "FBR1" | u32 version | u64 header_len | header JSON
//!        | u64 body_len | body | 32-byte SHA-256
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::frames::SpineBinding;
use crate::geodesic::GeodesicField;
use crate::math::Vec3;
use crate::mesh::{CleanPart, Normalization};
use crate::ribs::{EdgeRef, LevelPlan, Rib, RibTree};
use crate::rig::{rest_frames, ExtractConfig, FishboneRig, PartRig, RibAnchor};
use crate::skinning::{atomic_write, SkinWeights};
use crate::spine::{SpinePoint, SpineTree};

pub const MAGIC: &[u8; 4] = b"FBR1";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Parameters needed to regenerate the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub config: ExtractConfig,
    pub normalization: Normalization,
    pub parts: Vec<PartProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartProvenance {
    pub rib_levels: usize,
    pub rib_sigma: f64,
    pub spine_sigma: f64,
    pub w_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    provenance: Provenance,
    parts: Vec<PartHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartHeader {
    part_id: usize,
    is_thin_shell: bool,
    normalization: Normalization,
    has_weld_map: bool,
    root_vertices: Vec<usize>,
    diffusion_time: f64,
    component_times: Vec<f64>,
    plan: LevelPlan,
    tree_levels: Vec<f64>,
    ribs: Vec<RibHeader>,
    spine_parents: Vec<Option<usize>>,
    spine_branches: Vec<Vec<usize>>,
    spine_junctions: Vec<usize>,
    spine_points: Vec<SpinePointHeader>,
    twin_watertight: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RibHeader {
    level_index: usize,
    sub_index: usize,
    level_value: f64,
    closed: bool,
    part_id: usize,
    parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpinePointHeader {
    rib_node: usize,
    uv: (f64, f64),
    score_terms: (f64, f64, f64),
    fallback: bool,
}

fn write_usizes(w: &mut Writer, xs: &[usize]) {
    w.usize(xs.len());
    for &x in xs {
        w.usize(x);
    }
}

fn read_usizes(r: &mut Reader) -> Result<Vec<usize>> {
    let n = r.count(8)?;
    (0..n).map(|_| r.usize()).collect()
}

fn encode_part(part: &PartRig, w: &mut Writer) {
    let mesh = &part.rest_mesh;
    w.vec3s(&mesh.vertices);
    w.usize(mesh.faces.len());
    for f in &mesh.faces {
        for &v in f {
            w.usize(v);
        }
    }
    if let Some(m) = &mesh.weld_map {
        write_usizes(w, m);
    }
    w.vec3s(&part.vertices);
    w.f64s(&part.field.phi);
    write_usizes(w, &part.field.component_id);
    for ((rib, current), anchors) in part.tree.nodes.iter().zip(&part.ribs).zip(&part.rib_anchors) {
        w.vec3s(&rib.points);
        w.usize(rib.edge_refs.len());
        for e in &rib.edge_refs {
            w.usize(e.edge);
            w.usize(e.v0);
            w.usize(e.v1);
            w.f64(e.lambda);
        }
        w.vec3s(current);
        w.usize(anchors.len());
        for a in anchors {
            w.usize(a.a);
            w.usize(a.b);
            w.f64(a.lambda);
        }
    }
    w.vec3s(&part.rest_spine.key_points);
    w.vec3s(&part.spine);
    for p in &part.spine_points {
        w.vec3(&p.position);
    }
    w.blob(&part.weights.to_bytes());
    w.usize(part.bindings.len());
    for b in &part.bindings {
        w.u64(b.edge.map_or(u64::MAX, |e| e as u64));
        for x in [b.param, b.alpha, b.u, b.v, b.distance] {
            w.f64(x);
        }
    }
}

fn part_header(part: &PartRig) -> PartHeader {
    let mesh = &part.rest_mesh;
    PartHeader {
        part_id: mesh.part_id,
        is_thin_shell: mesh.is_thin_shell,
        normalization: mesh.normalization,
        has_weld_map: mesh.weld_map.is_some(),
        root_vertices: part.field.root_vertices.clone(),
        diffusion_time: part.field.diffusion_time,
        component_times: part.field.component_times.clone(),
        plan: part.plan.clone(),
        tree_levels: part.tree.levels.clone(),
        ribs: part
            .tree
            .nodes
            .iter()
            .map(|r| RibHeader {
                level_index: r.level_index,
                sub_index: r.sub_index,
                level_value: r.level_value,
                closed: r.closed,
                part_id: r.part_id,
                parent: r.parent,
            })
            .collect(),
        spine_parents: part.rest_spine.parents.clone(),
        spine_branches: part.rest_spine.branches.clone(),
        spine_junctions: part.rest_spine.junctions.clone(),
        spine_points: part
            .spine_points
            .iter()
            .map(|p| SpinePointHeader {
                rib_node: p.rib_node,
                uv: p.uv,
                score_terms: p.score_terms,
                fallback: p.fallback,
            })
            .collect(),
        twin_watertight: part.twin_watertight,
    }
}

fn decode_part(h: PartHeader, r: &mut Reader, up: &Vec3) -> Result<PartRig> {
    let vertices = r.vec3s()?;
    let nf = r.count(24)?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push([r.usize()?, r.usize()?, r.usize()?]);
    }
    let weld_map = if h.has_weld_map { Some(read_usizes(r)?) } else { None };
    let rest_mesh = CleanPart {
        vertices,
        faces,
        part_id: h.part_id,
        is_thin_shell: h.is_thin_shell,
        normalization: h.normalization,
        weld_map,
    };
    let current = r.vec3s()?;
    let field = GeodesicField {
        phi: r.f64s()?,
        root_vertices: h.root_vertices,
        diffusion_time: h.diffusion_time,
        component_times: h.component_times,
        component_id: read_usizes(r)?,
    };
    let mut nodes = Vec::with_capacity(h.ribs.len());
    let mut ribs = Vec::with_capacity(h.ribs.len());
    let mut rib_anchors = Vec::with_capacity(h.ribs.len());
    for rh in h.ribs {
        let points = r.vec3s()?;
        let ne = r.count(32)?;
        let mut edge_refs = Vec::with_capacity(ne);
        for _ in 0..ne {
            edge_refs.push(EdgeRef {
                edge: r.usize()?,
                v0: r.usize()?,
                v1: r.usize()?,
                lambda: r.f64()?,
            });
        }
        nodes.push(Rib {
            points,
            edge_refs,
            level_index: rh.level_index,
            sub_index: rh.sub_index,
            level_value: rh.level_value,
            closed: rh.closed,
            part_id: rh.part_id,
            parent: rh.parent,
        });
        ribs.push(r.vec3s()?);
        let na = r.count(24)?;
        let mut anchors = Vec::with_capacity(na);
        for _ in 0..na {
            anchors.push(RibAnchor {
                a: r.usize()?,
                b: r.usize()?,
                lambda: r.f64()?,
            });
        }
        rib_anchors.push(anchors);
    }
    let rest_keys = r.vec3s()?;
    let spine = r.vec3s()?;
    if rest_keys.len() != h.spine_parents.len() || h.spine_points.len() != rest_keys.len() {
        return Err(Error::CorruptRig {
            check: "spine_size",
            detail: format!("{} keys, {} parents", rest_keys.len(), h.spine_parents.len()),
        });
    }
    let mut spine_points = Vec::with_capacity(h.spine_points.len());
    for sp in h.spine_points {
        spine_points.push(SpinePoint {
            position: r.vec3()?,
            rib_node: sp.rib_node,
            uv: sp.uv,
            score_terms: sp.score_terms,
            fallback: sp.fallback,
        });
    }
    let weights = SkinWeights::from_bytes(r.blob()?).map_err(|e| Error::CorruptRig {
        check: "weights",
        detail: e.to_string(),
    })?;
    let nb = r.count(48)?;
    let mut bindings = Vec::with_capacity(nb);
    for _ in 0..nb {
        let edge = r.u64()?;
        let mut x = [0.0; 5];
        for v in &mut x {
            *v = r.f64()?;
        }
        bindings.push(SpineBinding {
            edge: (edge != u64::MAX).then_some(edge as usize),
            param: x[0],
            alpha: x[1],
            u: x[2],
            v: x[3],
            distance: x[4],
        });
    }
    let rest_spine = SpineTree {
        key_points: rest_keys,
        parents: h.spine_parents,
        branches: h.spine_branches,
        junctions: h.spine_junctions,
    };
    if rest_spine.parents.iter().flatten().any(|&p| p >= rest_spine.len())
        || rest_spine.branches.iter().flatten().any(|&k| k >= rest_spine.len())
    {
        return Err(Error::CorruptRig {
            check: "spine_refs",
            detail: "key index out of range".into(),
        });
    }
    let (frames, arc_tables) = rest_frames(&rest_spine, up);
    Ok(PartRig {
        rest_mesh,
        vertices: current,
        field,
        plan: h.plan,
        tree: RibTree {
            nodes,
            levels: h.tree_levels,
        },
        ribs,
        rib_anchors,
        rest_spine,
        spine,
        spine_points,
        weights,
        frames,
        arc_tables,
        bindings,
        twin_watertight: h.twin_watertight,
    })
}

pub fn provenance(rig: &FishboneRig) -> Provenance {
    Provenance {
        generator: format!("fishbone {}", env!("CARGO_PKG_VERSION")),
        config: rig.config.clone(),
        normalization: rig.normalization,
        parts: rig
            .parts
            .iter()
            .map(|p| PartProvenance {
                rib_levels: p.plan.k,
                rib_sigma: p.weights.rib.bandwidth.sigma,
                spine_sigma: p.weights.spine.bandwidth.sigma,
                w_min: p.weights.rib.bandwidth.w_min,
            })
            .collect(),
    }
}

pub fn rig_to_bytes(rig: &FishboneRig) -> Result<Vec<u8>> {
    check_weight_order(rig)?;
    let header = Header {
        version: VERSION,
        provenance: provenance(rig),
        parts: rig.parts.iter().map(part_header).collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut body = Writer::new();
    for p in &rig.parts {
        encode_part(p, &mut body);
    }
    let body = body.into_bytes();
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.blob(&header_json);
    w.blob(&body);
    let mut out = w.into_bytes();
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

/// Decode and validate a rig. Checks run in order: magic, version, length,
/// digest, structure, then the rig invariant suite.
pub fn rig_from_bytes(bytes: &[u8]) -> Result<FishboneRig> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(integrity("not a rig file (bad magic)"));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != VERSION {
        return Err(Error::Version {
            found,
            expected: VERSION,
        });
    }
    // lengths first, so truncation is reported as such
    let mut r = Reader::new(&bytes[8..]);
    let header_len = r.usize().map_err(|_| integrity("truncated header length"))?;
    r.take(header_len).map_err(|_| integrity("truncated header"))?;
    let body_len = r.usize().map_err(|_| integrity("truncated body length"))?;
    r.take(body_len).map_err(|_| integrity("truncated body"))?;
    let end = 8 + r.position();
    if bytes.len() != end + DIGEST_LEN {
        return Err(integrity(format!(
            "length {} does not match the declared {}",
            bytes.len(),
            end + DIGEST_LEN
        )));
    }
    if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
        return Err(integrity("digest mismatch"));
    }

    let mut r = Reader::new(&bytes[8..end]);
    let header: Header = serde_json::from_slice(r.blob()?)?;
    let body = r.blob()?;
    let mut br = Reader::new(body);
    let up = header.provenance.config.up_vector();
    let parts = header
        .parts
        .into_iter()
        .map(|h| decode_part(h, &mut br, &up))
        .collect::<Result<Vec<_>>>()?;
    br.finish()?;
    let rig = FishboneRig {
        parts,
        normalization: header.provenance.normalization,
        config: header.provenance.config,
    };
    rig.validate()?;
    Ok(rig)
}

/// Sparse rows must be in canonical column-ascending order.
fn check_weight_order(rig: &FishboneRig) -> Result<()> {
    for part in &rig.parts {
        for m in [&part.weights.rib, &part.weights.spine] {
            for i in 0..m.rows {
                if m.col_idx[m.row_span(i)].windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::CorruptRig {
                        check: "weight_order",
                        detail: format!("row {i} is not column-ascending"),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Write atomically (temp file + rename).
pub fn save_rig(rig: &FishboneRig, path: &Path) -> Result<()> {
    atomic_write(path, &rig_to_bytes(rig)?)
}

pub fn load_rig(path: &Path) -> Result<FishboneRig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    rig_from_bytes(&bytes)
}
