//! Iso-contour ribs of the geodesic field and their parent-child tree.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::GeodesicField;
use crate::math::Vec3;
use crate::mesh::{CleanPart, Topology};

pub const MIN_LEVELS: usize = 3;
pub const MAX_LEVELS: usize = 10;
/// Relative offset applied to vertices sitting exactly on a level.
pub const LEVEL_NUDGE: f64 = 1e-12;

/// A rib point: `p = v0 + lambda · (v1 − v0)` on mesh edge `(v0, v1)`,
/// `v0 < v1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub edge: usize,
    pub v0: usize,
    pub v1: usize,
    pub lambda: f64,
}

impl EdgeRef {
    pub fn point(&self, vertices: &[Vec3]) -> Vec3 {
        vertices[self.v0] + (vertices[self.v1] - vertices[self.v0]) * self.lambda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rib {
    pub points: Vec<Vec3>,
    pub edge_refs: Vec<EdgeRef>,
    pub level_index: usize,
    pub sub_index: usize,
    pub level_value: f64,
    pub closed: bool,
    pub part_id: usize,
    /// Node id of the parent sub-rib in the owning tree.
    pub parent: Option<usize>,
}

impl Rib {
    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Number of polyline edges, including the wrap edge of closed ribs.
    pub fn segment_count(&self) -> usize {
        let n = self.points.len();
        if self.closed {
            n
        } else {
            n.saturating_sub(1)
        }
    }

    pub fn segment(&self, j: usize) -> (Vec3, Vec3) {
        let n = self.points.len();
        (self.points[j], self.points[(j + 1) % n])
    }

    pub fn length(&self) -> f64 {
        (0..self.segment_count())
            .map(|j| {
                let (a, b) = self.segment(j);
                (b - a).norm()
            })
            .sum()
    }

    fn min_edge(&self) -> usize {
        self.edge_refs.iter().map(|e| e.edge).min().unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub k: usize,
    pub levels: Vec<f64>,
}

/// `clip(round(10 · ratio), 3, 10)` with round-half-away-from-zero.
pub fn level_count(ratio: f64) -> usize {
    ((10.0 * ratio).round() as i64).clamp(MIN_LEVELS as i64, MAX_LEVELS as i64) as usize
}

/// Interior levels `φ_k = k · φ_max / (K + 1)`.
pub fn plan_levels(part_extent: f64, object_extent: f64, phi_max: f64) -> LevelPlan {
    let k = level_count(part_extent / object_extent);
    let levels = (1..=k).map(|i| i as f64 * phi_max / (k + 1) as f64).collect();
    LevelPlan { k, levels }
}

/// Trace every iso-contour of `phi` at `level` on `part`.
pub fn trace_level(part: &CleanPart, topo: &Topology, phi: &[f64], level: f64) -> Vec<Rib> {
    let phi_max = phi.iter().copied().fold(0.0, f64::max);
    if !(level > 0.0 && level < phi_max) {
        return Vec::new();
    }
    let nudge = LEVEL_NUDGE * phi_max;
    let value = |v: usize| if phi[v] == level { phi[v] + nudge } else { phi[v] };

    // crossing edges and their points
    let mut crossing: HashMap<usize, EdgeRef> = HashMap::new();
    for (e, &[v0, v1]) in topo.edges.iter().enumerate() {
        let (a, b) = (value(v0), value(v1));
        if (a <= level && level < b) || (b <= level && level < a) {
            let (lo, hi, lo_is_v0) = if a < b { (a, b, true) } else { (b, a, false) };
            let t = (level - lo) / (hi - lo);
            let lambda = if lo_is_v0 { t } else { 1.0 - t };
            crossing.insert(e, EdgeRef { edge: e, v0, v1, lambda });
        }
    }

    // links between crossing edges through faces
    let mut links: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (f, fe) in topo.face_edges.iter().enumerate() {
        let hits: Vec<usize> = fe.iter().copied().filter(|e| crossing.contains_key(e)).collect();
        if hits.len() == 2 {
            links.entry(hits[0]).or_default().push((f, hits[1]));
            links.entry(hits[1]).or_default().push((f, hits[0]));
        }
    }
    for l in links.values_mut() {
        l.sort_unstable();
    }

    let mut used_face = vec![false; topo.face_edges.len()];
    let mut visited: HashMap<usize, bool> = HashMap::new();
    let mut walks: Vec<(Vec<usize>, bool)> = Vec::new();
    let walk = |start: usize,
                used_face: &mut Vec<bool>,
                visited: &mut HashMap<usize, bool>|
     -> (Vec<usize>, bool) {
        let mut path = vec![start];
        visited.insert(start, true);
        let mut cur = start;
        loop {
            let next = links
                .get(&cur)
                .and_then(|l| l.iter().find(|(f, _)| !used_face[*f]).copied());
            let Some((f, e)) = next else {
                return (path, false);
            };
            used_face[f] = true;
            if e == start {
                return (path, true);
            }
            if visited.contains_key(&e) {
                return (path, false);
            }
            visited.insert(e, true);
            path.push(e);
            cur = e;
        }
    };
    let mut ends: Vec<usize> = crossing
        .keys()
        .copied()
        .filter(|e| links.get(e).map_or(0, |l| l.len()) <= 1)
        .collect();
    ends.sort_unstable();
    for e in ends {
        if !visited.contains_key(&e) {
            walks.push(walk(e, &mut used_face, &mut visited));
        }
    }
    let mut rest: Vec<usize> = crossing.keys().copied().collect();
    rest.sort_unstable();
    for e in rest {
        if !visited.contains_key(&e) {
            walks.push(walk(e, &mut used_face, &mut visited));
        }
    }

    let mut ribs: Vec<Rib> = walks
        .into_iter()
        .map(|(path, closed)| {
            let edge_refs: Vec<EdgeRef> = path.iter().map(|e| crossing[e]).collect();
            Rib {
                points: edge_refs.iter().map(|r| r.point(&part.vertices)).collect(),
                edge_refs,
                level_index: 0,
                sub_index: 0,
                level_value: level,
                closed,
                part_id: part.part_id,
                parent: None,
            }
        })
        .collect();
    ribs.sort_by_key(|r| r.min_edge());
    for (i, r) in ribs.iter_mut().enumerate() {
        r.sub_index = i;
    }
    ribs
}

/// Drop ribs that are too small, and open ribs on solid parts.
pub fn filter_ribs(ribs: Vec<Rib>, is_thin_shell: bool) -> Vec<Rib> {
    let mut kept: Vec<Rib> = ribs
        .into_iter()
        .filter(|r| {
            if r.closed {
                r.points.len() >= 3
            } else {
                is_thin_shell && r.points.len() >= 2
            }
        })
        .collect();
    for (i, r) in kept.iter_mut().enumerate() {
        r.sub_index = i;
    }
    kept
}

/// All sub-ribs of a part across levels with parent links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibTree {
    /// Sub-ribs ordered by level, then sub index.
    pub nodes: Vec<Rib>,
    /// Values of the surviving levels.
    pub levels: Vec<f64>,
}

impl RibTree {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn nodes_at_level(&self, k: usize) -> impl Iterator<Item = (usize, &Rib)> {
        self.nodes.iter().enumerate().filter(move |(_, r)| r.level_index == k)
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&c| self.nodes[c].parent == Some(id))
            .collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&c| self.nodes[c].parent.is_none())
            .collect()
    }
}

/// Faces incident to a rib's crossing edges, sorted and unique.
fn associated_faces(topo: &Topology, rib: &Rib) -> Vec<usize> {
    let mut faces: Vec<usize> = rib
        .edge_refs
        .iter()
        .flat_map(|r| topo.edge_faces(r.edge).iter().copied())
        .collect();
    faces.sort_unstable();
    faces.dedup();
    faces
}

/// Link every sub-rib at level k to a sub-rib at level k−1 by a multi-source
/// BFS over the faces between the two levels.
pub fn build_branch_tree(
    part: &CleanPart,
    topo: &Topology,
    phi: &[f64],
    ribs_by_level: Vec<Vec<Rib>>,
    levels: &[f64],
) -> RibTree {
    let mut nodes: Vec<Rib> = Vec::new();
    let mut kept_levels = Vec::new();
    let mut prev_ids: Vec<usize> = Vec::new();
    let mut prev_level = 0.0;
    for (ribs, &level) in ribs_by_level.into_iter().zip(levels) {
        if ribs.is_empty() {
            continue;
        }
        let k = kept_levels.len();
        kept_levels.push(level);
        let parents = if prev_ids.is_empty() {
            vec![None; ribs.len()]
        } else {
            let prev: Vec<&Rib> = prev_ids.iter().map(|&i| &nodes[i]).collect();
            assign_parents(part, topo, phi, &prev, &ribs, prev_level, level)
        };
        let mut ids = Vec::with_capacity(ribs.len());
        for (mut rib, parent) in ribs.into_iter().zip(parents) {
            rib.level_index = k;
            rib.parent = parent.map(|p| prev_ids[p]);
            if rib.parent.is_none() && k > 0 {
                log::info!(
                    "part {}: sub-rib {} at level {} has no reachable parent; starting a new branch",
                    part.part_id,
                    rib.sub_index,
                    k
                );
            }
            ids.push(nodes.len());
            nodes.push(rib);
        }
        prev_ids = ids;
        prev_level = level;
    }
    RibTree {
        nodes,
        levels: kept_levels,
    }
}

/// Returns, per child rib, the index of its parent within `parents`.
fn assign_parents(
    part: &CleanPart,
    topo: &Topology,
    phi: &[f64],
    parents: &[&Rib],
    children: &[Rib],
    lo: f64,
    hi: f64,
) -> Vec<Option<usize>> {
    let nf = part.faces.len();
    let in_strip: Vec<bool> = part
        .faces
        .iter()
        .map(|f| {
            let a = f.iter().map(|&v| phi[v]).fold(f64::INFINITY, f64::min);
            let b = f.iter().map(|&v| phi[v]).fold(f64::NEG_INFINITY, f64::max);
            b >= lo && a <= hi
        })
        .collect();

    // per face: minimum hop and the set of parent labels reaching it there
    let mut hop = vec![usize::MAX; nf];
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); nf];
    let mut frontier: Vec<usize> = Vec::new();
    for (p, rib) in parents.iter().enumerate() {
        for f in associated_faces(topo, rib) {
            if hop[f] == usize::MAX {
                hop[f] = 0;
                frontier.push(f);
            }
            labels[f].push(p);
        }
    }
    let mut depth = 0;
    while !frontier.is_empty() {
        frontier.sort_unstable();
        frontier.dedup();
        let mut next = Vec::new();
        for &f in &frontier {
            labels[f].sort_unstable();
            labels[f].dedup();
            let own = labels[f].clone();
            for g in topo.face_neighbors(f) {
                if !in_strip[g] {
                    continue;
                }
                if hop[g] == usize::MAX {
                    hop[g] = depth + 1;
                    next.push(g);
                }
                if hop[g] == depth + 1 {
                    labels[g].extend_from_slice(&own);
                }
            }
        }
        frontier = next;
        depth += 1;
    }

    let parent_centroids: Vec<Vec3> = parents.iter().map(|r| r.centroid()).collect();
    children
        .iter()
        .map(|child| {
            // per label: (faces reached, best hop)
            let mut score: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for f in associated_faces(topo, child) {
                if hop[f] == usize::MAX {
                    continue;
                }
                let mut ls = labels[f].clone();
                ls.sort_unstable();
                ls.dedup();
                for l in ls {
                    let e = score.entry(l).or_insert((0, usize::MAX));
                    e.0 += 1;
                    e.1 = e.1.min(hop[f]);
                }
            }
            let c = child.centroid();
            score
                .into_iter()
                .min_by(|(la, (na, ha)), (lb, (nb, hb))| {
                    nb.cmp(na).then(ha.cmp(hb)).then_with(|| {
                        let da = (parent_centroids[*la] - c).norm();
                        let db = (parent_centroids[*lb] - c).norm();
                        da.partial_cmp(&db).unwrap().then(la.cmp(lb))
                    })
                })
                .map(|(l, _)| l)
        })
        .collect()
}

/// Trace, filter and link all ribs of one part.
pub fn extract_ribs(
    part: &CleanPart,
    field: &GeodesicField,
    plan: &LevelPlan,
) -> Result<RibTree> {
    let topo = Topology::build(&part.faces);
    let by_level: Vec<Vec<Rib>> = plan
        .levels
        .iter()
        .map(|&l| filter_ribs(trace_level(part, &topo, &field.phi, l), part.is_thin_shell))
        .collect();
    if by_level.iter().all(|r| r.is_empty()) {
        return Err(Error::Extraction {
            part: part.part_id,
            reason: "no rib survived filtering at any level".into(),
        });
    }
    Ok(build_branch_tree(part, &topo, &field.phi, by_level, &plan.levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn level_count_examples() {
        assert_eq!(level_count(1.0), 10);
        assert_eq!(level_count(0.5), 5);
        assert_eq!(level_count(0.05), 3);
        assert_eq!(level_count(0.65), 7);
        let plan = plan_levels(0.5, 1.0, 6.0);
        assert_eq!(plan.k, 5);
        assert_eq!(plan.levels, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn crossing_at_edge_midpoint() {
        let part = CleanPart::from_geometry(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        );
        let topo = Topology::build(&part.faces);
        let phi = [0.2, 0.8, 0.8];
        let ribs = trace_level(&part, &topo, &phi, 0.5);
        assert_eq!(ribs.len(), 1);
        assert!(!ribs[0].closed);
        assert_eq!(ribs[0].points.len(), 2);
        for p in &ribs[0].points {
            assert!((p.x + p.y - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sheet_contour_ends_on_boundary() {
        let sheet = shapes::grid_sheet(8, 8, 1.0);
        let topo = Topology::build(&sheet.faces);
        let phi: Vec<f64> = sheet.vertices.iter().map(|v| v.x + 0.1 * v.y).collect();
        let ribs = trace_level(&sheet, &topo, &phi, 0.47);
        assert_eq!(ribs.len(), 1);
        let r = &ribs[0];
        assert!(!r.closed);
        for end in [r.edge_refs[0], *r.edge_refs.last().unwrap()] {
            assert_eq!(topo.edge_faces(end.edge).len(), 1);
        }
        assert_eq!(filter_ribs(ribs.clone(), true).len(), 1);
        assert!(filter_ribs(ribs, false).is_empty());
    }

    #[test]
    fn small_ribs_are_dropped() {
        let rib = Rib {
            points: vec![Vec3::zeros(), Vec3::x()],
            edge_refs: vec![],
            level_index: 0,
            sub_index: 0,
            level_value: 0.5,
            closed: true,
            part_id: 0,
            parent: None,
        };
        assert!(filter_ribs(vec![rib.clone()], false).is_empty());
        let mut open = rib;
        open.closed = false;
        open.points.truncate(1);
        assert!(filter_ribs(vec![open], true).is_empty());
    }

    #[test]
    fn rib_points_sit_on_their_edges() {
        let s = shapes::icosphere(2);
        let topo = Topology::build(&s.faces);
        let phi: Vec<f64> = s.vertices.iter().map(|v| v.y + 1.0).collect();
        for level in [0.3, 1.0, 1.7] {
            let ribs = trace_level(&s, &topo, &phi, level);
            assert_eq!(ribs.len(), 1);
            assert!(ribs[0].closed);
            for (p, r) in ribs[0].points.iter().zip(&ribs[0].edge_refs) {
                assert!((p - r.point(&s.vertices)).norm() < 1e-12);
                assert!(r.v0 < r.v1 && (0.0..=1.0).contains(&r.lambda));
            }
        }
    }
}
