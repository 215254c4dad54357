use std::collections::{HashMap, HashSet};

use super::{is_watertight, CleanPart, Topology, DEGENERATE_AREA};
use crate::math::{triangle_area, Vec3};
use crate::spatial::weld_points;

/// Boundary loops longer than this are left open.
pub const MAX_FILLED_HOLE_EDGES: usize = 32;
/// Twin weld tolerance as a fraction of the part's bbox diagonal.
pub const TWIN_WELD_FRACTION: f64 = 1e-4;

/// Watertightness-repaired copy of a solid part.
#[derive(Debug, Clone)]
pub struct WeldedTwin {
    /// Repaired geometry; `weld_map` maps original vertices to twin vertices.
    pub part: CleanPart,
    /// Per twin vertex, the original vertex it stands for. Fill vertices map
    /// to their nearest original vertex.
    pub representatives: Vec<usize>,
    /// False when repair left the geometry non-watertight.
    pub watertight: bool,
    pub holes_filled: usize,
}

/// Build the welded twin of a solid part. Returns `None` for thin shells,
/// which skip repair.
pub fn make_welded_twin(part: &CleanPart) -> Option<WeldedTwin> {
    if part.is_thin_shell {
        return None;
    }
    let n = part.vertices.len();
    if is_watertight(&part.faces) {
        let mut twin = part.clone();
        twin.weld_map = Some((0..n).collect());
        return Some(WeldedTwin {
            part: twin,
            representatives: (0..n).collect(),
            watertight: true,
            holes_filled: 0,
        });
    }

    let tol = part.bbox().diagonal() * TWIN_WELD_FRACTION;
    let rep = weld_points(&part.vertices, &vec![true; n], tol);
    let rep: Vec<usize> = rep.into_iter().map(|r| r.expect("all vertices masked")).collect();

    let mut seen = HashSet::new();
    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(part.faces.len());
    for f in &part.faces {
        let g = f.map(|v| rep[v]);
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            continue;
        }
        if triangle_area(&part.vertices[g[0]], &part.vertices[g[1]], &part.vertices[g[2]])
            < DEGENERATE_AREA
        {
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        if seen.insert(key) {
            faces.push(g);
        }
    }

    let mut vertices = part.vertices.clone();
    let holes_filled = fill_small_holes(&mut vertices, &mut faces);

    // compact: keep referenced vertices in ascending index order
    let mut used = vec![false; vertices.len()];
    for f in &faces {
        for &v in f {
            used[v] = true;
        }
    }
    let mut new_index = vec![usize::MAX; vertices.len()];
    let mut twin_vertices = Vec::new();
    let mut representatives = Vec::new();
    for (i, v) in vertices.iter().enumerate() {
        if used[i] {
            new_index[i] = twin_vertices.len();
            twin_vertices.push(*v);
            representatives.push(i);
        }
    }
    let twin_faces: Vec<[usize; 3]> = faces.iter().map(|f| f.map(|v| new_index[v])).collect();

    // originals whose representative vanished map to the nearest twin vertex
    let weld_map: Vec<usize> = (0..n)
        .map(|i| match new_index[rep[i]] {
            usize::MAX => nearest(&twin_vertices, &part.vertices[i]),
            j => j,
        })
        .collect();
    for (j, r) in representatives.iter_mut().enumerate() {
        if *r >= n {
            *r = nearest(&part.vertices, &twin_vertices[j]);
        }
    }

    let watertight = is_watertight(&twin_faces);
    if !watertight {
        log::warn!(
            "part {}: welded twin is still not watertight; open contours will be filtered",
            part.part_id
        );
    }
    let twin = CleanPart {
        vertices: twin_vertices,
        faces: twin_faces,
        part_id: part.part_id,
        is_thin_shell: false,
        normalization: part.normalization,
        weld_map: Some(weld_map),
    };
    Some(WeldedTwin {
        part: twin,
        representatives,
        watertight,
        holes_filled,
    })
}

/// Fan-fill boundary loops of at most `MAX_FILLED_HOLE_EDGES` edges from a
/// new centroid vertex. Returns the number of loops filled.
fn fill_small_holes(vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) -> usize {
    let topo = Topology::build(faces);
    // boundary loops run against the orientation of their single face
    let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in 0..topo.edges.len() {
        let fs = topo.edge_faces(e);
        if fs.len() != 1 {
            continue;
        }
        let [a, b] = topo.edges[e];
        let face = faces[fs[0]];
        let forward = (0..3).any(|k| face[k] == a && face[(k + 1) % 3] == b);
        let (from, to) = if forward { (b, a) } else { (a, b) };
        next.entry(from).or_default().push(to);
    }
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();

    let mut visited: HashSet<(usize, usize)> = HashSet::new();
    let mut filled = 0;
    for start in starts {
        if next[&start].len() != 1 || visited.contains(&(start, next[&start][0])) {
            continue;
        }
        let mut loop_verts = vec![start];
        let mut cur = start;
        let ok = loop {
            let Some(outs) = next.get(&cur) else { break false };
            if outs.len() != 1 {
                break false;
            }
            let nxt = outs[0];
            if !visited.insert((cur, nxt)) {
                break false;
            }
            if nxt == start {
                break true;
            }
            if loop_verts.len() > MAX_FILLED_HOLE_EDGES {
                break false;
            }
            loop_verts.push(nxt);
            cur = nxt;
        };
        if !ok || loop_verts.len() < 3 {
            continue;
        }
        let c = loop_verts.iter().map(|&v| vertices[v]).sum::<Vec3>() / loop_verts.len() as f64;
        let ci = vertices.len();
        vertices.push(c);
        for k in 0..loop_verts.len() {
            let a = loop_verts[k];
            let b = loop_verts[(k + 1) % loop_verts.len()];
            faces.push([a, b, ci]);
        }
        filled += 1;
    }
    filled
}

/// Nearest point index by exhaustive scan; ties go to the lowest index.
/// Only used for the handful of vertices created or removed by repair.
fn nearest(points: &[Vec3], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in points.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Expand a per-twin-vertex array onto the original vertices.
pub fn expand_to_original<T: Clone>(twin_values: &[T], weld_map: &[usize]) -> Vec<T> {
    weld_map.iter().map(|&j| twin_values[j].clone()).collect()
}

/// Contract a per-original-vertex array onto twin vertices using each twin
/// vertex's representative.
pub fn contract_to_twin<T: Clone>(original_values: &[T], representatives: &[usize]) -> Vec<T> {
    representatives
        .iter()
        .map(|&i| original_values[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn euler_characteristic(part: &CleanPart) -> i64 {
        let topo = Topology::build(&part.faces);
        part.vertices.len() as i64 - topo.edges.len() as i64 + part.faces.len() as i64
    }

    #[test]
    fn watertight_sphere_gives_identity_twin() {
        let sphere = shapes::icosphere(2);
        let twin = make_welded_twin(&sphere).unwrap();
        assert!(twin.watertight);
        assert_eq!(twin.part.vertices, sphere.vertices);
        let n = sphere.vertices.len();
        assert_eq!(twin.part.weld_map, Some((0..n).collect()));
    }

    #[test]
    fn cracked_cube_is_repaired() {
        let cube = shapes::cube(1.0);
        let diag = cube.bbox().diagonal();
        // duplicate vertex 0 slightly and point the first face using it there
        let mut cracked = cube.clone();
        let dup = cracked.vertices.len();
        cracked.vertices.push(cube.vertices[0] + Vec3::new(1e-5 * diag, 0.0, 0.0));
        let f = cracked.faces.iter().position(|f| f.contains(&0)).unwrap();
        for v in cracked.faces[f].iter_mut() {
            if *v == 0 {
                *v = dup;
            }
        }
        assert!(!is_watertight(&cracked.faces));
        let twin = make_welded_twin(&cracked).unwrap();
        assert!(twin.watertight);
        assert_eq!(euler_characteristic(&twin.part), 2);
        let map = twin.part.weld_map.as_ref().unwrap();
        assert_eq!(map[dup], map[0]);
    }

    #[test]
    fn small_hole_is_filled() {
        let mut sphere = shapes::icosphere(2);
        sphere.faces.remove(0);
        sphere.is_thin_shell = false;
        let twin = make_welded_twin(&sphere).unwrap();
        assert_eq!(twin.holes_filled, 1);
        assert!(twin.watertight);
        assert_eq!(euler_characteristic(&twin.part), 2);
        assert_eq!(twin.part.vertices.len(), sphere.vertices.len() + 1);
        let last = twin.part.vertices.len() - 1;
        assert!(twin.representatives[last] < sphere.vertices.len());
    }

    #[test]
    fn thin_shell_skips_repair() {
        let sheet = shapes::grid_sheet(5, 5, 1.0);
        assert!(make_welded_twin(&sheet).is_none());
    }

    #[test]
    fn expand_then_contract_is_left_inverse() {
        let cube = shapes::cube(1.0);
        let mut cracked = cube.clone();
        let dup = cracked.vertices.len();
        cracked.vertices.push(cube.vertices[3] + Vec3::new(0.0, 1e-5, 0.0));
        let f = cracked.faces.iter().position(|f| f.contains(&3)).unwrap();
        for v in cracked.faces[f].iter_mut() {
            if *v == 3 {
                *v = dup;
            }
        }
        let twin = make_welded_twin(&cracked).unwrap();
        let values: Vec<f64> = (0..twin.part.vertices.len()).map(|i| i as f64 * 1.5).collect();
        let expanded = expand_to_original(&values, twin.part.weld_map.as_ref().unwrap());
        let back = contract_to_twin(&expanded, &twin.representatives);
        assert_eq!(back, values);
    }
}
