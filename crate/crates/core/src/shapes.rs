//! Procedural meshes used by tests, benchmarks and the demos.

use std::collections::HashMap;

use crate::mesh::CleanPart;
use crate::math::Vec3;
use crate::spatial::weld_points;

/// Unit-radius icosphere obtained by `subdiv` rounds of 4:1 subdivision.
pub fn icosphere(subdiv: usize) -> CleanPart {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    CleanPart::from_geometry(vertices, faces)
}

/// Flat `nx` × `ny` vertex grid in the z = 0 plane spanning
/// `[0, size·(nx-1)/(max-1)] × [0, size·(ny-1)/(max-1)]`, every quad split
/// along the same diagonal.
pub fn grid_sheet(nx: usize, ny: usize, size: f64) -> CleanPart {
    assert!(nx >= 2 && ny >= 2);
    let h = size / (nx.max(ny) - 1) as f64;
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(i as f64 * h, j as f64 * h, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    CleanPart::from_geometry(vertices, faces)
}

/// Axis-aligned cube of edge `size` centered at the origin, outward faces.
pub fn cube(size: f64) -> CleanPart {
    let h = size / 2.0;
    let vertices: Vec<Vec3> = (0..8)
        .map(|b| {
            Vec3::new(
                if b & 1 != 0 { h } else { -h },
                if b & 2 != 0 { h } else { -h },
                if b & 4 != 0 { h } else { -h },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    CleanPart::from_geometry(vertices, faces)
}

/// Closed cylinder of `radius` along +x from `x = 0` to `x = length`, with
/// `rings` vertex rings of `segments` vertices and fan caps.
pub fn tube(radius: f64, length: f64, segments: usize, rings: usize) -> CleanPart {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = Vec::with_capacity(segments * rings + 2);
    for r in 0..rings {
        let x = length * r as f64 / (rings - 1) as f64;
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vec3::new(x, radius * a.cos(), radius * a.sin()));
        }
    }
    let id = |r: usize, s: usize| r * segments + s % segments;
    let mut faces = Vec::new();
    for r in 0..rings - 1 {
        for s in 0..segments {
            faces.push([id(r, s), id(r, s + 1), id(r + 1, s + 1)]);
            faces.push([id(r, s), id(r + 1, s + 1), id(r + 1, s)]);
        }
    }
    let start = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, 0.0));
    vertices.push(Vec3::new(length, 0.0, 0.0));
    for s in 0..segments {
        faces.push([start, id(0, s + 1), id(0, s)]);
        faces.push([start + 1, id(rings - 1, s), id(rings - 1, s + 1)]);
    }
    CleanPart::from_geometry(vertices, faces)
}

/// Signed distance to the capsule with axis `[a, b]` and `radius`.
pub fn capsule_sdf(p: &Vec3, a: &Vec3, b: &Vec3, radius: f64) -> f64 {
    let (_, d) = crate::math::project_to_segment(p, a, b);
    d - radius
}

/// Polygonize `{f < 0}` over the box `[lo, hi]` sampled with cell size `h`
/// by marching tetrahedra (six tetrahedra per cube along the main diagonal).
pub fn implicit_surface(f: impl Fn(&Vec3) -> f64, lo: Vec3, hi: Vec3, h: f64) -> CleanPart {
    let n = ((hi - lo) / h).map(|c| c.ceil() as usize + 1);
    let (nx, ny, nz) = (n.x, n.y, n.z);
    let gid = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let pos = |i: usize, j: usize, k: usize| lo + Vec3::new(i as f64, j as f64, k as f64) * h;
    let mut values = vec![0.0; (nx + 1) * (ny + 1) * (nz + 1)];
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let v = f(&pos(i, j, k));
                // keep every sample strictly off the surface
                values[gid(i, j, k)] = if v.abs() < 1e-9 { 1e-9 } else { v };
            }
        }
    }

    const TETS: [[usize; 4]; 6] = [
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut cross = |a: (usize, Vec3), b: (usize, Vec3), vertices: &mut Vec<Vec3>| {
        let key = (a.0.min(b.0), a.0.max(b.0));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (fa, fb) = (values[a.0], values[b.0]);
            let t = fa / (fa - fb);
            vertices.push(a.1 + (b.1 - a.1) * t);
            vertices.len() - 1
        })
    };

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let corner = |c: usize| {
                    let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                    (gid(i + di, j + dj, k + dk), pos(i + di, j + dj, k + dk))
                };
                for tet in TETS {
                    let c: Vec<(usize, Vec3)> = tet.iter().map(|&t| corner(t)).collect();
                    let inside: Vec<usize> = (0..4).filter(|&q| values[c[q].0] < 0.0).collect();
                    let outside: Vec<usize> = (0..4).filter(|&q| values[c[q].0] >= 0.0).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let dir = outside.iter().map(|&q| c[q].1).sum::<Vec3>() / outside.len() as f64
                        - inside.iter().map(|&q| c[q].1).sum::<Vec3>() / inside.len() as f64;
                    let mut emit = |tri: [usize; 3], vertices: &Vec<Vec3>| {
                        let nrm = (vertices[tri[1]] - vertices[tri[0]])
                            .cross(&(vertices[tri[2]] - vertices[tri[0]]));
                        if nrm.dot(&dir) < 0.0 {
                            faces.push([tri[0], tri[2], tri[1]]);
                        } else {
                            faces.push(tri);
                        }
                    };
                    if inside.len() == 1 || inside.len() == 3 {
                        let (lone, others) = if inside.len() == 1 {
                            (inside[0], outside.clone())
                        } else {
                            (outside[0], inside.clone())
                        };
                        let tri = [
                            cross(c[lone], c[others[0]], &mut vertices),
                            cross(c[lone], c[others[1]], &mut vertices),
                            cross(c[lone], c[others[2]], &mut vertices),
                        ];
                        emit(tri, &vertices);
                    } else {
                        let (a, b) = (inside[0], inside[1]);
                        let (p, q) = (outside[0], outside[1]);
                        let ap = cross(c[a], c[p], &mut vertices);
                        let aq = cross(c[a], c[q], &mut vertices);
                        let bq = cross(c[b], c[q], &mut vertices);
                        let bp = cross(c[b], c[p], &mut vertices);
                        emit([ap, aq, bq], &vertices);
                        emit([ap, bq, bp], &vertices);
                    }
                }
            }
        }
    }

    // collapse near-coincident crossings so slivers do not reach the solver
    let rep = weld_points(&vertices, &vec![true; vertices.len()], h * 1e-3);
    let rep: Vec<usize> = rep.into_iter().map(Option::unwrap).collect();
    let mut seen = std::collections::HashSet::new();
    let faces: Vec<[usize; 3]> = faces
        .into_iter()
        .map(|f| f.map(|v| rep[v]))
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .filter(|f| {
            let mut key = *f;
            key.sort_unstable();
            seen.insert(key)
        })
        .collect();
    let mut used = vec![usize::MAX; vertices.len()];
    let mut compact = Vec::new();
    for f in &faces {
        for &v in f {
            if used[v] == usize::MAX {
                used[v] = 0;
            }
        }
    }
    for (i, v) in vertices.iter().enumerate() {
        if used[i] != usize::MAX {
            used[i] = compact.len();
            compact.push(*v);
        }
    }
    let faces = faces.iter().map(|f| f.map(|v| used[v])).collect();
    CleanPart::from_geometry(compact, faces)
}

/// Upright Y-shaped tube: a trunk along +y that splits into two arms.
pub fn y_tube(h: f64) -> CleanPart {
    let r = 0.08;
    let base = Vec3::new(0.0, -0.5, 0.0);
    let fork = Vec3::new(0.0, 0.0, 0.0);
    let left = Vec3::new(-0.3, 0.45, 0.0);
    let right = Vec3::new(0.3, 0.45, 0.0);
    implicit_surface(
        |p| {
            capsule_sdf(p, &base, &fork, r)
                .min(capsule_sdf(p, &fork, &left, r))
                .min(capsule_sdf(p, &fork, &right, r))
        },
        Vec3::new(-0.45, -0.65, -0.15),
        Vec3::new(0.45, 0.6, 0.15),
        h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{is_watertight, Topology};

    fn euler(part: &CleanPart) -> i64 {
        let e = Topology::build(&part.faces).edges.len() as i64;
        part.vertices.len() as i64 - e + part.faces.len() as i64
    }

    #[test]
    fn icosphere_counts() {
        let s = icosphere(3);
        assert_eq!(s.faces.len(), 20 * 64);
        assert_eq!(s.vertices.len(), 642);
        assert!(is_watertight(&s.faces));
        assert_eq!(euler(&s), 2);
    }

    #[test]
    fn closed_shapes_are_watertight() {
        assert!(is_watertight(&cube(1.0).faces));
        let t = tube(0.1, 1.0, 12, 8);
        assert!(is_watertight(&t.faces));
        assert_eq!(euler(&t), 2);
        assert!(!t.is_thin_shell);
    }

    #[test]
    fn implicit_sphere_is_watertight() {
        let s = implicit_surface(
            |p| p.norm() - 0.4,
            Vec3::repeat(-0.5),
            Vec3::repeat(0.5),
            0.05,
        );
        assert!(is_watertight(&s.faces));
        assert_eq!(euler(&s), 2);
        for v in &s.vertices {
            assert!((v.norm() - 0.4).abs() < 0.01);
        }
    }

    #[test]
    fn y_tube_is_a_closed_solid() {
        let y = y_tube(0.025);
        assert!(is_watertight(&y.faces));
        assert_eq!(euler(&y), 2);
    }
}
