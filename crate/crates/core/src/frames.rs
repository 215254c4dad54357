//! Parallel-transport frames, per-branch arc tables and nearest-segment
//! cylindrical bindings along a spine tree.

use serde::{Deserialize, Serialize};

use crate::math::{any_orthogonal, project_to_segment, transport, Vec3, EPS};
use crate::spine::SpineTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

impl Frame {
    /// Frame with the given tangent whose normal is `up` with its tangent
    /// component removed (any orthogonal vector when parallel).
    pub fn from_up(tangent: &Vec3, up: &Vec3) -> Self {
        let n = up - tangent * tangent.dot(up);
        let normal = if n.norm() > 1e-9 {
            n.normalize()
        } else {
            any_orthogonal(tangent)
        };
        Frame {
            tangent: *tangent,
            normal,
            binormal: tangent.cross(&normal),
        }
    }

    /// Carry the frame onto a new tangent by minimal rotation.
    pub fn transported(&self, tangent: &Vec3) -> Self {
        let n = transport(&self.normal, &self.tangent, tangent);
        // re-orthonormalize against rounding drift
        let normal = (n - tangent * tangent.dot(&n)).normalize();
        Frame {
            tangent: *tangent,
            normal,
            binormal: tangent.cross(&normal),
        }
    }

    pub fn to_local(&self, offset: &Vec3) -> [f64; 3] {
        [
            offset.dot(&self.tangent),
            offset.dot(&self.normal),
            offset.dot(&self.binormal),
        ]
    }

    pub fn from_local(&self, c: [f64; 3]) -> Vec3 {
        self.tangent * c[0] + self.normal * c[1] + self.binormal * c[2]
    }
}

/// One spine edge `parent → child` with its transported frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFrame {
    pub parent: usize,
    pub child: usize,
    pub length: f64,
    pub frame: Frame,
    /// Zero-length edge whose tangent was inherited.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineFrames {
    /// Indexed like `SpineTree::edges()`.
    pub edges: Vec<EdgeFrame>,
    /// Per key, the edge arriving at it.
    pub edge_into: Vec<Option<usize>>,
    /// Per key: the incoming edge's frame, the first outgoing edge's frame
    /// for roots, or an `up`-based frame for isolated keys.
    pub key_frames: Vec<Frame>,
}

impl SpineFrames {
    /// Transport frames from every root outward. Root edges start from the
    /// `up` component orthogonal to their tangent.
    pub fn build(spine: &SpineTree, positions: &[Vec3], up: &Vec3) -> Self {
        let up_dir = if up.norm() > 0.0 { up.normalize() } else { Vec3::y() };
        Self::build_with(spine, positions, &up_dir, |_, t| Frame::from_up(t, &up_dir))
    }

    /// Rebuild on deformed positions, starting each root edge from its frame
    /// in `rest` carried onto the new tangent. A rigid motion of the whole
    /// spine whose rotation axis is normal to the root tangent moves every
    /// frame rigidly.
    pub fn follow(rest: &SpineFrames, spine: &SpineTree, positions: &[Vec3], up: &Vec3) -> Self {
        let up_dir = if up.norm() > 0.0 { up.normalize() } else { Vec3::y() };
        Self::build_with(spine, positions, &up_dir, |e, t| match rest.edges.get(e) {
            Some(r) => r.frame.transported(t),
            None => Frame::from_up(t, &up_dir),
        })
    }

    fn build_with(spine: &SpineTree, positions: &[Vec3], up_dir: &Vec3, root_frame: impl Fn(usize, &Vec3) -> Frame) -> Self {
        let up_dir = *up_dir;
        let n = spine.len();
        let pairs = spine.edges();
        let mut edge_into = vec![None; n];
        for (e, &(_, c)) in pairs.iter().enumerate() {
            edge_into[c] = Some(e);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(p, c) in &pairs {
            children[p].push(c);
        }
        let placeholder = EdgeFrame {
            parent: 0,
            child: 0,
            length: 0.0,
            frame: Frame::from_up(&Vec3::x(), &up_dir),
            degenerate: true,
        };
        let mut edges = vec![placeholder; pairs.len()];

        let mut stack: Vec<usize> = (0..n).filter(|&k| spine.parents[k].is_none()).rev().collect();
        while let Some(k) = stack.pop() {
            let incoming = edge_into[k].map(|e| edges[e].frame);
            for &c in children[k].iter().rev() {
                stack.push(c);
            }
            for &c in &children[k] {
                let d = positions[c] - positions[k];
                let len = d.norm();
                let (tangent, degenerate) = if len > EPS {
                    (d / len, false)
                } else {
                    (incoming.map_or(up_dir.cross(&any_orthogonal(&up_dir)), |f| f.tangent), true)
                };
                let frame = match incoming {
                    Some(f) => f.transported(&tangent),
                    None => root_frame(edge_into[c].unwrap(), &tangent),
                };
                edges[edge_into[c].unwrap()] = EdgeFrame {
                    parent: k,
                    child: c,
                    length: len,
                    frame,
                    degenerate,
                };
            }
        }
        let key_frames = (0..n)
            .map(|k| match edge_into[k] {
                Some(e) => edges[e].frame,
                None => children[k]
                    .first()
                    .map(|&c| edges[edge_into[c].unwrap()].frame)
                    .unwrap_or_else(|| Frame::from_up(&any_orthogonal(&up_dir), &up_dir)),
            })
            .collect();
        SpineFrames {
            edges,
            edge_into,
            key_frames,
        }
    }

    /// Largest deviation from orthonormality over all key and edge frames.
    pub fn orthonormality_error(&self) -> f64 {
        let frames = self.key_frames.iter().chain(self.edges.iter().map(|e| &e.frame));
        let mut worst: f64 = 0.0;
        for f in frames {
            for v in [f.tangent, f.normal, f.binormal] {
                worst = worst.max((v.norm() - 1.0).abs());
            }
            worst = worst
                .max(f.tangent.dot(&f.normal).abs())
                .max(f.tangent.dot(&f.binormal).abs())
                .max(f.normal.dot(&f.binormal).abs())
                .max((f.tangent.cross(&f.normal) - f.binormal).norm());
        }
        worst
    }
}

/// Cumulative arc length along one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcTable {
    pub keys: Vec<usize>,
    pub arc: Vec<f64>,
    pub total: f64,
}

impl ArcTable {
    pub fn new(branch: &[usize], positions: &[Vec3]) -> Self {
        let mut arc = Vec::with_capacity(branch.len());
        let mut s = 0.0;
        for (j, &k) in branch.iter().enumerate() {
            if j > 0 {
                s += (positions[k] - positions[branch[j - 1]]).norm();
            }
            arc.push(s);
        }
        ArcTable {
            keys: branch.to_vec(),
            arc,
            total: s,
        }
    }

    /// Normalized parameter of branch position `j`.
    pub fn t_of(&self, j: usize) -> f64 {
        if self.total > 0.0 {
            self.arc[j] / self.total
        } else {
            0.0
        }
    }

    /// Segment index and parameter of arc length `s` (clamped to the branch).
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let m = self.keys.len();
        if m < 2 {
            return (0, 0.0);
        }
        let s = s.clamp(0.0, self.total);
        let mut j = self.arc.partition_point(|&a| a <= s).saturating_sub(1);
        j = j.min(m - 2);
        let len = self.arc[j + 1] - self.arc[j];
        let t = if len > 0.0 { ((s - self.arc[j]) / len).clamp(0.0, 1.0) } else { 0.0 };
        (j, t)
    }

    /// Point at arc length `s` on the polyline through `positions`, with
    /// linear extrapolation along the end segments outside `[0, total]`.
    pub fn point_at(&self, positions: &[Vec3], s: f64) -> Vec3 {
        let m = self.keys.len();
        let p = |j: usize| positions[self.keys[j]];
        if m == 1 {
            return p(0);
        }
        let dir = |j: usize| {
            let d = p(j + 1) - p(j);
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                Vec3::zeros()
            }
        };
        if s < 0.0 {
            return p(0) + dir(first_nondegenerate(&self.arc, false)) * s;
        }
        if s > self.total {
            return p(m - 1) + dir(first_nondegenerate(&self.arc, true)) * (s - self.total);
        }
        let (j, t) = self.locate(s);
        p(j) + (p(j + 1) - p(j)) * t
    }
}

fn first_nondegenerate(arc: &[f64], from_end: bool) -> usize {
    let m = arc.len();
    let segs: Box<dyn Iterator<Item = usize>> = if from_end {
        Box::new((0..m - 1).rev())
    } else {
        Box::new(0..m - 1)
    };
    let mut fallback = if from_end { m - 2 } else { 0 };
    for j in segs {
        if arc[j + 1] > arc[j] {
            fallback = j;
            break;
        }
    }
    fallback
}

/// A vertex expressed against its nearest spine edge: parameter along the
/// edge, tangential offset and normal-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpineBinding {
    /// `None` for single-key spines (bound to key 0).
    pub edge: Option<usize>,
    pub param: f64,
    pub alpha: f64,
    pub u: f64,
    pub v: f64,
    /// Distance to the spine polyline.
    pub distance: f64,
}

/// Nearest spine edge per vertex (lowest edge index on ties) and the
/// vertex's local coordinates in that edge's frame.
pub fn bind_to_spine(vertices: &[Vec3], positions: &[Vec3], frames: &SpineFrames) -> Vec<SpineBinding> {
    vertices
        .iter()
        .map(|v| {
            let mut best: Option<(usize, f64, f64)> = None;
            for (e, ef) in frames.edges.iter().enumerate() {
                let (t, d) = project_to_segment(v, &positions[ef.parent], &positions[ef.child]);
                if best.is_none_or(|b| d < b.2) {
                    best = Some((e, t, d));
                }
            }
            match best {
                Some((e, t, d)) => {
                    let ef = &frames.edges[e];
                    let base = positions[ef.parent] + (positions[ef.child] - positions[ef.parent]) * t;
                    let [alpha, u, w] = ef.frame.to_local(&(v - base));
                    SpineBinding {
                        edge: Some(e),
                        param: t,
                        alpha,
                        u,
                        v: w,
                        distance: d,
                    }
                }
                None => {
                    let f = &frames.key_frames[0];
                    let off = v - positions[0];
                    let [alpha, u, w] = f.to_local(&off);
                    SpineBinding {
                        edge: None,
                        param: 0.0,
                        alpha,
                        u,
                        v: w,
                        distance: off.norm(),
                    }
                }
            }
        })
        .collect()
}

/// Base point and frame of a binding on a (possibly deformed) spine.
pub fn binding_anchor(b: &SpineBinding, positions: &[Vec3], frames: &SpineFrames) -> (Vec3, Frame) {
    match b.edge {
        Some(e) => {
            let ef = &frames.edges[e];
            let base = positions[ef.parent] + (positions[ef.child] - positions[ef.parent]) * b.param;
            (base, ef.frame)
        }
        None => (positions[0], frames.key_frames[0]),
    }
}

pub fn reconstruct(b: &SpineBinding, positions: &[Vec3], frames: &SpineFrames) -> Vec3 {
    let (base, f) = binding_anchor(b, positions, frames);
    base + f.from_local([b.alpha, b.u, b.v])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn helix_spine(n: usize) -> SpineTree {
        let pts = (0..n)
            .map(|i| {
                let a = i as f64 * 0.4;
                Vec3::new(a.cos(), a.sin(), 0.3 * a)
            })
            .collect();
        let parents = (0..n).map(|i| i.checked_sub(1)).collect();
        SpineTree::from_parents(pts, parents).unwrap()
    }

    #[test]
    fn frames_are_orthonormal() {
        let s = helix_spine(20);
        let f = SpineFrames::build(&s, &s.key_points, &Vec3::y());
        assert!(f.orthonormality_error() < 1e-12);
    }

    #[test]
    fn straight_spine_keeps_up_normal() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let s = SpineTree::from_parents(pts.clone(), (0..5).map(|i: usize| i.checked_sub(1)).collect()).unwrap();
        let f = SpineFrames::build(&s, &pts, &Vec3::y());
        for kf in &f.key_frames {
            assert!((kf.normal - Vec3::y()).norm() < 1e-15);
            assert!((kf.binormal - Vec3::z()).norm() < 1e-15);
        }
    }

    #[test]
    fn arc_table_locates_and_extrapolates() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        let a = ArcTable::new(&[0, 1, 2], &pts);
        assert_eq!(a.total, 3.0);
        assert_eq!(a.locate(2.0), (1, 0.5));
        assert_eq!(a.point_at(&pts, 2.0), Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(a.point_at(&pts, 4.0), Vec3::new(1.0, 3.0, 0.0));
        assert_eq!(a.point_at(&pts, -1.0), Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn binding_round_trips() {
        let s = helix_spine(12);
        let f = SpineFrames::build(&s, &s.key_points, &Vec3::y());
        let verts: Vec<Vec3> = (0..50)
            .map(|i| {
                let x = i as f64 * 0.13;
                Vec3::new(x.sin() * 1.3, x.cos() * 0.7, x * 0.2)
            })
            .collect();
        let b = bind_to_spine(&verts, &s.key_points, &f);
        for (v, bi) in verts.iter().zip(&b) {
            assert!((reconstruct(bi, &s.key_points, &f) - v).norm() < 1e-12);
        }
    }
}
