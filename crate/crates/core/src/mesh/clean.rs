use std::collections::HashMap;

use super::{
    classify_thin_shell, CleanPart, Normalization, PartSet, RawMesh, DEFAULT_MERGE_TOLERANCE,
    DEFAULT_THIN_SHELL_THRESHOLD, DEGENERATE_AREA,
};
use crate::error::{Error, Result};
use crate::math::{triangle_area, Aabb};
use crate::spatial::weld_points;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CleanOptions {
    pub keep_largest_component: bool,
    pub merge_tolerance: f64,
    pub thin_shell_threshold: f64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            keep_largest_component: false,
            merge_tolerance: DEFAULT_MERGE_TOLERANCE,
            thin_shell_threshold: DEFAULT_THIN_SHELL_THRESHOLD,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so labels are order-stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Label faces by vertex-connected component; labels are numbered in order
/// of each component's first face.
pub(crate) fn face_components(nverts: usize, faces: &[[usize; 3]]) -> Vec<usize> {
    let mut uf = UnionFind::new(nverts);
    for f in faces {
        uf.union(f[0], f[1]);
        uf.union(f[1], f[2]);
    }
    let mut ids = HashMap::new();
    faces
        .iter()
        .map(|f| {
            let root = uf.find(f[0]);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

/// Remove non-finite and degenerate geometry, merge coincident vertices,
/// split into parts and normalize every part by one shared transform into
/// the origin-centered unit box.
pub fn clean_and_normalize(raw: &RawMesh, options: &CleanOptions) -> Result<PartSet> {
    let nv = raw.vertices.len();
    let finite: Vec<bool> = raw
        .vertices
        .iter()
        .map(|v| v.iter().all(|c| c.is_finite()))
        .collect();

    let mut faces: Vec<([usize; 3], usize)> = Vec::with_capacity(raw.faces.len());
    for (i, f) in raw.faces.iter().enumerate() {
        if f.iter().any(|&v| v >= nv) {
            return Err(Error::Parse {
                format: "mesh",
                line: 0,
                message: format!("face {i} references a missing vertex"),
            });
        }
        if f.iter().all(|&v| finite[v]) {
            let label = raw.part_labels.as_ref().map_or(0, |l| l[i]);
            faces.push((*f, label));
        }
    }

    let mut used = vec![false; nv];
    for (f, _) in &faces {
        for &v in f {
            used[v] = true;
        }
    }
    let rep = weld_points(&raw.vertices, &used, options.merge_tolerance);
    let mut welded: Vec<([usize; 3], usize)> = faces
        .into_iter()
        .map(|(f, l)| (f.map(|v| rep[v].expect("referenced vertex has a representative")), l))
        .filter(|(f, _)| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();

    let referenced = |faces: &[([usize; 3], usize)]| {
        Aabb::from_points(faces.iter().flat_map(|(f, _)| f.iter().map(|&v| &raw.vertices[v])))
    };
    let Some(bb) = referenced(&welded) else {
        return Err(Error::EmptyGeometry);
    };
    let provisional = bb.max_extent();
    if !(provisional > 0.0) {
        return Err(Error::EmptyGeometry);
    }
    let s2 = (1.0 / provisional).powi(2);
    welded.retain(|(f, _)| {
        let a = triangle_area(&raw.vertices[f[0]], &raw.vertices[f[1]], &raw.vertices[f[2]]);
        a * s2 >= DEGENERATE_AREA
    });

    if options.keep_largest_component && !welded.is_empty() {
        let plain: Vec<[usize; 3]> = welded.iter().map(|(f, _)| *f).collect();
        let comp = face_components(nv, &plain);
        let ncomp = comp.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; ncomp];
        for &c in &comp {
            counts[c] += 1;
        }
        // max_by_key keeps the last maximum; scanning in reverse makes ties
        // go to the component with the earliest face
        let best = (0..ncomp).rev().max_by_key(|&c| counts[c]).unwrap_or(0);
        welded = welded
            .into_iter()
            .zip(comp)
            .filter(|(_, c)| *c == best)
            .map(|(f, _)| f)
            .collect();
    }

    let Some(bb) = referenced(&welded) else {
        return Err(Error::EmptyGeometry);
    };
    let extent = bb.max_extent();
    if !(extent > 0.0) {
        return Err(Error::EmptyGeometry);
    }
    let center = bb.center();
    let normalization = Normalization {
        center: [center.x, center.y, center.z],
        scale: 1.0 / extent,
    };

    let labels: Vec<usize> = if raw.part_labels.is_some() {
        let mut ids = HashMap::new();
        welded
            .iter()
            .map(|(_, l)| {
                let next = ids.len();
                *ids.entry(*l).or_insert(next)
            })
            .collect()
    } else {
        let plain: Vec<[usize; 3]> = welded.iter().map(|(f, _)| *f).collect();
        face_components(nv, &plain)
    };
    let nparts = labels.iter().max().map_or(0, |m| m + 1);

    let mut parts = Vec::with_capacity(nparts);
    for p in 0..nparts {
        let part_faces: Vec<[usize; 3]> = welded
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == p)
            .map(|((f, _), _)| *f)
            .collect();
        let mut verts: Vec<usize> = part_faces.iter().flatten().copied().collect();
        verts.sort_unstable();
        verts.dedup();
        let local: HashMap<usize, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut part = CleanPart {
            vertices: verts
                .iter()
                .map(|&v| normalization.apply(&raw.vertices[v]))
                .collect(),
            faces: part_faces.iter().map(|f| f.map(|v| local[&v])).collect(),
            part_id: p,
            is_thin_shell: false,
            normalization,
            weld_map: None,
        };
        part.is_thin_shell = classify_thin_shell(&part, options.thin_shell_threshold);
        parts.push(part);
    }
    if parts.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    Ok(PartSet {
        parts,
        shared_normalization: normalization,
    })
}

/// Flatten a part set back into a labelled raw mesh (normalized units).
pub fn parts_to_raw(set: &PartSet) -> RawMesh {
    let mut raw = RawMesh {
        part_labels: Some(Vec::new()),
        ..Default::default()
    };
    for part in &set.parts {
        let base = raw.vertices.len();
        raw.vertices.extend_from_slice(&part.vertices);
        for f in &part.faces {
            raw.faces.push(f.map(|v| v + base));
            raw.part_labels.as_mut().unwrap().push(part.part_id);
        }
    }
    raw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::shapes;

    fn raw_cube(center: Vec3, half: f64) -> RawMesh {
        let c = shapes::cube(1.0);
        RawMesh {
            vertices: c.vertices.iter().map(|v| center + v * (2.0 * half)).collect(),
            faces: c.faces.clone(),
            part_labels: None,
        }
    }

    #[test]
    fn nan_vertex_and_faces_removed() {
        let mut raw = raw_cube(Vec3::zeros(), 1.0);
        let n = raw.vertices.len();
        raw.vertices.push(Vec3::new(f64::NAN, 0.0, 0.0));
        raw.faces.push([0, 1, n]);
        raw.faces.push([n, 2, 3]);
        let set = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        assert_eq!(set.parts.len(), 1);
        assert_eq!(set.parts[0].faces.len(), 12);
        assert_eq!(set.parts[0].vertices.len(), 8);
        assert!(set.parts[0].vertices.iter().all(|v| v.iter().all(|c| c.is_finite())));
    }

    #[test]
    fn coincident_vertices_merge() {
        let raw = RawMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(1e-9, 0.0, 0.0),
                Vec3::new(0.0, -1.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [3, 4, 1]],
            part_labels: None,
        };
        let set = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        assert_eq!(set.parts.len(), 1);
        assert_eq!(set.parts[0].vertices.len(), 4);
    }

    #[test]
    fn offset_cube_normalizes_to_unit_box() {
        let raw = raw_cube(Vec3::new(5.0, 0.0, 0.0), 1.0);
        let set = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        let bb = set.object_bbox();
        assert!((bb.extents() - Vec3::repeat(1.0)).norm() < 1e-12);
        assert!(bb.center().norm() < 1e-12);
        assert_eq!(set.shared_normalization.scale, 0.5);
    }

    #[test]
    fn components_become_parts_with_shared_transform() {
        let mut raw = raw_cube(Vec3::zeros(), 0.5);
        let other = raw_cube(Vec3::new(3.0, 0.0, 0.0), 0.5);
        let base = raw.vertices.len();
        raw.vertices.extend(other.vertices);
        raw.faces.extend(other.faces.iter().map(|f| f.map(|v| v + base)));
        let set = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        assert_eq!(set.parts.len(), 2);
        assert_eq!(set.parts[0].normalization, set.parts[1].normalization);
        let bb = set.object_bbox();
        assert!((bb.max_extent() - 1.0).abs() < 1e-12);

        let largest = clean_and_normalize(
            &raw,
            &CleanOptions {
                keep_largest_component: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(largest.parts.len(), 1);
    }

    #[test]
    fn degenerate_face_dropped() {
        let mut raw = raw_cube(Vec3::zeros(), 1.0);
        raw.vertices.push(Vec3::new(0.5, 0.5, 0.5));
        raw.vertices.push(Vec3::new(0.5 + 1e-8, 0.5, 0.5));
        raw.vertices.push(Vec3::new(0.5, 0.5 + 1e-8, 0.5));
        let n = raw.vertices.len();
        raw.faces.push([n - 3, n - 2, n - 1]);
        let set = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        assert_eq!(set.parts.len(), 1);
        assert_eq!(set.parts[0].faces.len(), 12);
    }

    #[test]
    fn all_faces_invalid_is_empty_geometry() {
        let raw = RawMesh {
            vertices: vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0), Vec3::x()],
            faces: vec![[0, 1, 2]],
            part_labels: None,
        };
        assert!(matches!(
            clean_and_normalize(&raw, &CleanOptions::default()),
            Err(Error::EmptyGeometry)
        ));
    }

    #[test]
    fn cleaning_is_idempotent() {
        let mut raw = raw_cube(Vec3::new(2.0, -1.0, 7.0), 3.0);
        raw.vertices[0].x += 0.3;
        let once = clean_and_normalize(&raw, &CleanOptions::default()).unwrap();
        let twice = clean_and_normalize(&parts_to_raw(&once), &CleanOptions::default()).unwrap();
        assert_eq!(once.parts.len(), twice.parts.len());
        for (a, b) in once.parts.iter().zip(&twice.parts) {
            assert_eq!(a.faces, b.faces);
            for (p, q) in a.vertices.iter().zip(&b.vertices) {
                assert!((p - q).norm() <= 1e-12);
            }
        }
    }
}
