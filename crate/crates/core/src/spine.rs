//! Per-rib reference planes, scored spine points and branch assembly.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{any_orthogonal, point_in_polygon, Vec3};
use crate::ribs::{Rib, RibTree};

/// Candidate grid resolution per side for closed ribs.
pub const SCORE_GRID: usize = 128;
/// Scores closer than this are treated as equal.
pub const SCORE_TIE: f64 = 1e-12;
/// Height-derivative smoothing bandwidth as a fraction of the rib bbox diagonal.
pub const FLATNESS_BANDWIDTH: f64 = 1.0 / 16.0;
/// Slopes at or below this are treated as flat (round-off on planar ribs).
pub const SLOPE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibFrame {
    pub centroid: Vec3,
    pub basis_u: Vec3,
    pub basis_v: Vec3,
    pub normal: Vec3,
    /// Rib points in plane coordinates.
    pub projected: Vec<(f64, f64)>,
    /// Signed out-of-plane offset of every rib point.
    pub heights: Vec<f64>,
    /// True when the rib was too degenerate for a plane fit.
    pub fallback: bool,
}

impl RibFrame {
    pub fn to_plane(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.centroid;
        (d.dot(&self.basis_u), d.dot(&self.basis_v))
    }

    pub fn from_plane(&self, u: f64, v: f64) -> Vec3 {
        self.centroid + self.basis_u * u + self.basis_v * v
    }
}

fn sign_fix(v: Vec3) -> Vec3 {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Best-fit plane of a rib by PCA, with `e_v` the in-plane direction closest
/// to `up` and `e_u = e_v × n`.
pub fn fit_rib_frame(points: &[Vec3], up: &Vec3) -> RibFrame {
    let n = points.len().max(1) as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    let major: Vec3 = sign_fix(eig.eigenvectors.column(order[2]).into());

    let degenerate = !(largest > 0.0) || middle <= 1e-12 * largest || points.len() < 3;
    let (normal, fallback) = if degenerate {
        // collinear rib: plane through the rib direction and up
        let t = if largest > 0.0 { major } else { Vec3::x() };
        let c = t.cross(up);
        let nrm = if c.norm() > 1e-9 { c.normalize() } else { any_orthogonal(&t) };
        (nrm, true)
    } else {
        let mut nrm: Vec3 = eig.eigenvectors.column(order[0]).into();
        let d = nrm.dot(up);
        if d < 0.0 || (d.abs() < 1e-12 && sign_fix(nrm) != nrm) {
            nrm = -nrm;
        }
        (nrm, false)
    };
    let proj_up = up - normal * up.dot(&normal);
    let basis_v = if proj_up.norm() > 1e-9 {
        proj_up.normalize()
    } else {
        let m = major - normal * major.dot(&normal);
        if m.norm() > 1e-9 {
            m.normalize()
        } else {
            any_orthogonal(&normal)
        }
    };
    let basis_u = basis_v.cross(&normal);
    let mut frame = RibFrame {
        centroid,
        basis_u,
        basis_v,
        normal,
        projected: Vec::new(),
        heights: Vec::new(),
        fallback,
    };
    frame.projected = points.iter().map(|p| frame.to_plane(p)).collect();
    frame.heights = points.iter().map(|p| (p - centroid).dot(&normal)).collect();
    frame
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinePoint {
    pub position: Vec3,
    /// Node id of the rib in its tree.
    pub rib_node: usize,
    pub uv: (f64, f64),
    /// Normalized (F, C, P) at the winner.
    pub score_terms: (f64, f64, f64),
    /// True when no interior candidate existed and the centroid was used.
    pub fallback: bool,
}

/// Raw score fields over a candidate set, before normalization.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub uv: Vec<(f64, f64)>,
    pub height_derivative: Vec<f64>,
    pub centroid_distance: Vec<f64>,
    pub parent_distance: Vec<f64>,
}

/// Per rib point, |dh/ds| by central differences along the polyline.
fn height_derivatives(rib: &Rib, frame: &RibFrame) -> Vec<f64> {
    let m = rib.points.len();
    (0..m)
        .map(|i| {
            let (a, b) = if rib.closed {
                ((i + m - 1) % m, (i + 1) % m)
            } else {
                (i.saturating_sub(1), (i + 1).min(m - 1))
            };
            let ds = (rib.points[b] - rib.points[a]).norm();
            if ds > 0.0 {
                ((frame.heights[b] - frame.heights[a]) / ds).abs()
            } else {
                0.0
            }
        })
        .collect()
}

fn bbox_2d(points: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(u, v) in points {
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    (lo, hi)
}

pub fn candidates(
    rib: &Rib,
    frame: &RibFrame,
    parent: Option<&Vec3>,
    grid: usize,
) -> Candidates {
    let (lo, hi) = bbox_2d(&frame.projected);
    let diag = ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt();
    let uv: Vec<(f64, f64)> = if rib.closed {
        let mut out = Vec::new();
        for j in 0..grid {
            for i in 0..grid {
                let q = (
                    lo.0 + (i as f64 + 0.5) * (hi.0 - lo.0) / grid as f64,
                    lo.1 + (j as f64 + 0.5) * (hi.1 - lo.1) / grid as f64,
                );
                if point_in_polygon(q, &frame.projected) {
                    out.push(q);
                }
            }
        }
        out
    } else {
        frame.projected.clone()
    };

    let slopes = height_derivatives(rib, frame);
    let bw = (FLATNESS_BANDWIDTH * diag).max(1e-300);
    // Kernel sum, not a weighted mean: cells far from every sloped stretch
    // of the rib stay near zero, which keeps the winner off the boundary.
    let height_derivative = uv
        .iter()
        .map(|&(u, v)| {
            frame
                .projected
                .iter()
                .zip(&slopes)
                .filter(|(_, &g)| g > SLOPE_FLOOR)
                .map(|(&(pu, pv), &g)| {
                    let d2 = (u - pu).powi(2) + (v - pv).powi(2);
                    g * (-d2 / (2.0 * bw * bw)).exp()
                })
                .sum()
        })
        .collect();
    let centroid_distance = uv.iter().map(|&(u, v)| (u * u + v * v).sqrt()).collect();
    let parent_uv = parent.map(|p| frame.to_plane(p));
    let parent_distance = uv
        .iter()
        .map(|&(u, v)| parent_uv.map_or(0.0, |(pu, pv)| ((u - pu).powi(2) + (v - pv).powi(2)).sqrt()))
        .collect();
    Candidates {
        uv,
        height_derivative,
        centroid_distance,
        parent_distance,
    }
}

/// Min-max normalization; constant fields map to zero.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Index of the best candidate: highest score, then nearest to the
/// centroid, then smallest `(u, v)`.
pub fn select_candidate(c: &Candidates, weights: &ScoreWeights) -> Option<(usize, (f64, f64, f64))> {
    if c.uv.is_empty() {
        return None;
    }
    let f = min_max(&c.height_derivative);
    let cc = min_max(&c.centroid_distance);
    let p = min_max(&c.parent_distance);
    let score: Vec<f64> = (0..c.uv.len())
        .map(|i| weights.alpha * (1.0 - f[i]) + weights.beta * (1.0 - cc[i]) + weights.gamma * (1.0 - p[i]))
        .collect();
    let best = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winner = (0..c.uv.len())
        .filter(|&i| score[i] >= best - SCORE_TIE)
        .min_by(|&a, &b| {
            c.centroid_distance[a]
                .partial_cmp(&c.centroid_distance[b])
                .unwrap()
                .then(c.uv[a].0.partial_cmp(&c.uv[b].0).unwrap())
                .then(c.uv[a].1.partial_cmp(&c.uv[b].1).unwrap())
        })?;
    Some((winner, (1.0 - f[winner], 1.0 - cc[winner], 1.0 - p[winner])))
}

pub fn extract_spine_point(
    rib: &Rib,
    rib_node: usize,
    frame: &RibFrame,
    parent: Option<&Vec3>,
    weights: &ScoreWeights,
    grid: usize,
) -> Result<SpinePoint> {
    for (name, w) in [("alpha", weights.alpha), ("beta", weights.beta), ("gamma", weights.gamma)] {
        if !(w >= 0.0) {
            return Err(Error::Parameter(format!("score weight {name} must be non-negative")));
        }
    }
    if weights.alpha + weights.beta + weights.gamma <= 0.0 {
        return Err(Error::Parameter("score weights must not all be zero".into()));
    }
    let c = candidates(rib, frame, parent, grid);
    Ok(match select_candidate(&c, weights) {
        Some((i, terms)) => SpinePoint {
            position: frame.from_plane(c.uv[i].0, c.uv[i].1),
            rib_node,
            uv: c.uv[i],
            score_terms: terms,
            fallback: false,
        },
        None => {
            log::warn!("rib node {rib_node}: no interior score candidate, using the centroid");
            SpinePoint {
                position: frame.centroid,
                rib_node,
                uv: (0.0, 0.0),
                score_terms: (0.0, 0.0, 0.0),
                fallback: true,
            }
        }
    })
}

/// Shared-node spine tree: one key point per sub-rib.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineTree {
    pub key_points: Vec<Vec3>,
    /// Parent key of every key (the tree edges).
    pub parents: Vec<Option<usize>>,
    /// Root-to-leaf key index sequences.
    pub branches: Vec<Vec<usize>>,
    /// Keys with two or more children.
    pub junctions: Vec<usize>,
}

impl SpineTree {
    pub fn len(&self) -> usize {
        self.key_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_points.is_empty()
    }

    pub fn children(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.parents[c] == Some(k)).collect()
    }

    /// Unique parent-child edges `(parent, child)` in child order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter_map(|c| self.parents[c].map(|p| (p, c)))
            .collect()
    }

    /// Build from a parent array. Branches are enumerated depth-first with
    /// children in ascending order.
    pub fn from_parents(key_points: Vec<Vec3>, parents: Vec<Option<usize>>) -> Result<Self> {
        if key_points.is_empty() {
            return Err(Error::EmptySpine);
        }
        let n = key_points.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (c, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(c);
            }
        }
        let mut branches = Vec::new();
        for root in (0..n).filter(|&i| parents[i].is_none()) {
            let mut stack = vec![vec![root]];
            while let Some(path) = stack.pop() {
                let last = *path.last().unwrap();
                if children[last].is_empty() {
                    branches.push(path);
                } else {
                    for &c in children[last].iter().rev() {
                        let mut p = path.clone();
                        p.push(c);
                        stack.push(p);
                    }
                }
            }
        }
        let junctions = (0..n).filter(|&i| children[i].len() >= 2).collect();
        Ok(SpineTree {
            key_points,
            parents,
            branches,
            junctions,
        })
    }
}

pub fn assemble_spine(tree: &RibTree, points: &[SpinePoint]) -> Result<SpineTree> {
    if tree.nodes.is_empty() {
        return Err(Error::EmptySpine);
    }
    let mut keys = vec![None; tree.nodes.len()];
    for p in points {
        keys[p.rib_node] = Some(p.position);
    }
    let key_points = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| k.ok_or_else(|| Error::Parameter(format!("rib node {i} has no spine point"))))
        .collect::<Result<Vec<_>>>()?;
    let parents = tree.nodes.iter().map(|r| r.parent).collect();
    SpineTree::from_parents(key_points, parents)
}

/// Frame, score and assemble the spine of one rib tree, in level order so
/// parents are known before their children.
pub fn build_spine(
    tree: &RibTree,
    up: &Vec3,
    weights: &ScoreWeights,
    grid: usize,
) -> Result<(SpineTree, Vec<SpinePoint>, Vec<RibFrame>)> {
    let mut points: Vec<SpinePoint> = Vec::with_capacity(tree.nodes.len());
    let mut frames = Vec::with_capacity(tree.nodes.len());
    for (id, rib) in tree.nodes.iter().enumerate() {
        let frame = fit_rib_frame(&rib.points, up);
        let parent = rib.parent.map(|p| points[p].position);
        let sp = extract_spine_point(rib, id, &frame, parent.as_ref(), weights, grid)?;
        points.push(sp);
        frames.push(frame);
    }
    let spine = assemble_spine(tree, &points)?;
    Ok((spine, points, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn ring(center: Vec3, radius: f64, n: usize, lift: impl Fn(f64) -> f64) -> Rib {
        let points = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                center + Vec3::new(radius * a.cos(), radius * a.sin(), lift(a))
            })
            .collect();
        Rib {
            points,
            edge_refs: Vec::new(),
            level_index: 0,
            sub_index: 0,
            level_value: 1.0,
            closed: true,
            part_id: 0,
            parent: None,
        }
    }

    #[test]
    fn planar_circle_frame() {
        let rib = ring(Vec3::new(1.0, 2.0, 3.0), 0.5, 64, |_| 0.0);
        let f = fit_rib_frame(&rib.points, &Vec3::y());
        assert!((f.normal.cross(&Vec3::z())).norm() < 1e-12);
        assert!((f.centroid - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!((f.basis_v - Vec3::y()).norm() < 1e-12);
        assert!(f.basis_u.dot(&f.basis_v).abs() < 1e-12);
        assert!((f.basis_u.cross(&f.basis_v) - f.normal).norm() < 1e-12);
    }

    #[test]
    fn frame_follows_rotation_about_up() {
        let rib = ring(Vec3::zeros(), 1.0, 48, |_| 0.0);
        let r = Rotation3::from_axis_angle(&Vec3::y_axis(), 0.7);
        let rotated: Vec<Vec3> = rib.points.iter().map(|p| r * p).collect();
        let a = fit_rib_frame(&rib.points, &Vec3::y());
        let b = fit_rib_frame(&rotated, &Vec3::y());
        assert!((r * a.normal).cross(&b.normal).norm() < 1e-10);
        assert!((r * a.basis_v - b.basis_v).norm() < 1e-10);
    }

    #[test]
    fn saddle_normal_near_z() {
        let rib = ring(Vec3::zeros(), 1.0, 256, |a| 0.1 * (2.0 * a).sin());
        let f = fit_rib_frame(&rib.points, &Vec3::y());
        let angle = f.normal.dot(&Vec3::z()).abs().acos();
        assert!(angle < 5f64.to_radians());
    }

    #[test]
    fn flat_circle_default_weights_pick_centroid() {
        let rib = ring(Vec3::zeros(), 1.0, 64, |_| 0.0);
        let f = fit_rib_frame(&rib.points, &Vec3::y());
        let sp = extract_spine_point(&rib, 0, &f, None, &ScoreWeights::default(), 128).unwrap();
        // the nearest grid cell center to the origin
        let cell = 2.0 / 128.0;
        assert!(sp.position.norm() <= cell);
        assert!(!sp.fallback);
    }

    #[test]
    fn parent_term_pulls_towards_parent() {
        let rib = ring(Vec3::zeros(), 1.0, 64, |_| 0.0);
        let f = fit_rib_frame(&rib.points, &Vec3::y());
        let parent = Vec3::new(0.5, 0.3, 0.7);
        let w = ScoreWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        };
        let sp = extract_spine_point(&rib, 0, &f, Some(&parent), &w, 64).unwrap();
        assert!((sp.position - Vec3::new(0.5, 0.3, 0.0)).norm() < 2.0 / 64.0);
    }

    #[test]
    fn zero_weights_rejected() {
        let rib = ring(Vec3::zeros(), 1.0, 16, |_| 0.0);
        let f = fit_rib_frame(&rib.points, &Vec3::y());
        let w = ScoreWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert!(extract_spine_point(&rib, 0, &f, None, &w, 8).is_err());
    }

    #[test]
    fn branch_enumeration() {
        // 0 - 1 - 2 < (3 - 5), (4 - 6)
        let parents = vec![None, Some(0), Some(1), Some(2), Some(2), Some(3), Some(4)];
        let t = SpineTree::from_parents(vec![Vec3::zeros(); 7], parents).unwrap();
        assert_eq!(t.branches, vec![vec![0, 1, 2, 3, 5], vec![0, 1, 2, 4, 6]]);
        assert_eq!(t.junctions, vec![2]);
        assert!(SpineTree::from_parents(vec![], vec![]).is_err());
    }
}
