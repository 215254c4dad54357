use super::CleanPart;

/// Undirected edge table with edge-face incidence.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Unique edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<[usize; 2]>,
    /// Edge ids of face `f`, where slot `k` is the edge `(f[k], f[k+1])`.
    pub face_edges: Vec<[usize; 3]>,
    edge_face_offsets: Vec<usize>,
    edge_face_list: Vec<usize>,
}

impl Topology {
    pub fn build(faces: &[[usize; 3]]) -> Self {
        let mut half: Vec<(usize, usize, usize, u8)> = Vec::with_capacity(faces.len() * 3);
        for (f, face) in faces.iter().enumerate() {
            for k in 0..3 {
                let a = face[k];
                let b = face[(k + 1) % 3];
                half.push((a.min(b), a.max(b), f, k as u8));
            }
        }
        half.sort_unstable();

        let mut edges = Vec::new();
        let mut face_edges = vec![[usize::MAX; 3]; faces.len()];
        let mut edge_face_offsets = vec![0];
        let mut edge_face_list = Vec::with_capacity(half.len());
        let mut i = 0;
        while i < half.len() {
            let (a, b, _, _) = half[i];
            let e = edges.len();
            edges.push([a, b]);
            while i < half.len() && half[i].0 == a && half[i].1 == b {
                let (_, _, f, k) = half[i];
                face_edges[f][k as usize] = e;
                edge_face_list.push(f);
                i += 1;
            }
            edge_face_offsets.push(edge_face_list.len());
        }
        Topology {
            edges,
            face_edges,
            edge_face_offsets,
            edge_face_list,
        }
    }

    pub fn edge_faces(&self, e: usize) -> &[usize] {
        &self.edge_face_list[self.edge_face_offsets[e]..self.edge_face_offsets[e + 1]]
    }

    pub fn boundary_edge_count(&self) -> usize {
        (0..self.edges.len())
            .filter(|&e| self.edge_faces(e).len() == 1)
            .count()
    }

    /// Look up the id of edge `(a, b)`.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    /// Faces sharing an edge with `f`.
    pub fn face_neighbors(&self, f: usize) -> impl Iterator<Item = usize> + '_ {
        self.face_edges[f]
            .iter()
            .flat_map(move |&e| self.edge_faces(e).iter().copied())
            .filter(move |&g| g != f)
    }
}

pub fn boundary_edge_fraction(part: &CleanPart) -> f64 {
    let topo = Topology::build(&part.faces);
    if topo.edges.is_empty() {
        return 0.0;
    }
    topo.boundary_edge_count() as f64 / topo.edges.len() as f64
}

/// A part is a thin shell when its boundary-edge fraction exceeds `threshold`.
pub fn classify_thin_shell(part: &CleanPart, threshold: f64) -> bool {
    boundary_edge_fraction(part) > threshold
}

/// Every edge has exactly two incident faces that traverse it in opposite
/// directions. Self-intersections are not tested.
pub fn is_watertight(faces: &[[usize; 3]]) -> bool {
    let topo = Topology::build(faces);
    (0..topo.edges.len()).all(|e| {
        let fs = topo.edge_faces(e);
        if fs.len() != 2 {
            return false;
        }
        let [a, b] = topo.edges[e];
        let forward = |f: usize| {
            let face = faces[f];
            (0..3).any(|k| face[k] == a && face[(k + 1) % 3] == b)
        };
        forward(fs[0]) != forward(fs[1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn cube_is_closed_solid() {
        let cube = shapes::cube(1.0);
        assert!(is_watertight(&cube.faces));
        assert_eq!(boundary_edge_fraction(&cube), 0.0);
        assert!(!classify_thin_shell(&cube, 0.05));
    }

    #[test]
    fn single_quad_sheet_is_thin() {
        let sheet = shapes::grid_sheet(2, 2, 1.0);
        assert!(classify_thin_shell(&sheet, 0.05));
        assert!(!is_watertight(&sheet.faces));
    }

    #[test]
    fn grid_sheet_fraction_from_counts() {
        // 20 x 20 vertices: 19 quads per side, one diagonal per quad.
        let sheet = shapes::grid_sheet(20, 20, 1.0);
        let topo = Topology::build(&sheet.faces);
        let expected_edges = 2 * 19 * 20 + 19 * 19;
        assert_eq!(topo.edges.len(), expected_edges);
        assert_eq!(topo.boundary_edge_count(), 4 * 19);
        let frac = 76.0 / expected_edges as f64;
        assert!((boundary_edge_fraction(&sheet) - frac).abs() < 1e-15);
        assert!(classify_thin_shell(&sheet, 0.05));
    }

    #[test]
    fn thin_shell_is_scale_invariant() {
        let mut sheet = shapes::grid_sheet(6, 9, 1.0);
        let before = boundary_edge_fraction(&sheet);
        for v in &mut sheet.vertices {
            *v *= 1234.5;
        }
        assert_eq!(before, boundary_edge_fraction(&sheet));
    }

    #[test]
    fn flipped_face_breaks_orientation() {
        let mut cube = shapes::cube(1.0);
        cube.faces[0].swap(0, 1);
        assert!(!is_watertight(&cube.faces));
    }
}
