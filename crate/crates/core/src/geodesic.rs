//! Heat-method geodesic field with automatic root selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{CleanPart, Topology};
use crate::sparse::{Csr, SpdSolver};

/// Fraction of a part's vertices that form the root band.
pub const ROOT_FRACTION: f64 = 0.01;
/// Floor applied to summed cotangent edge weights.
pub const MIN_COTAN_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        [Axis::X, Axis::Y, Axis::Z][i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceSide {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSelection {
    pub dominant_axis: Axis,
    pub chosen_face: FaceSide,
    pub root_vertices: Vec<usize>,
}

/// Number of root vertices for a part of `n` vertices.
pub fn root_count(n: usize) -> usize {
    ((ROOT_FRACTION * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Pick the root band: the 1% of vertices nearest to one extreme face of the
/// bounding box along its longest axis.
pub fn select_root(
    part: &CleanPart,
    upright_hint: bool,
    override_selection: Option<&RootSelection>,
) -> RootSelection {
    if let Some(sel) = override_selection {
        return sel.clone();
    }
    select_root_among(&part.vertices, &(0..part.vertices.len()).collect::<Vec<_>>(), upright_hint)
}

fn select_root_among(vertices: &[Vec3], ids: &[usize], upright_hint: bool) -> RootSelection {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in ids {
        lo = lo.inf(&vertices[i]);
        hi = hi.sup(&vertices[i]);
    }
    let ext = hi - lo;
    // first axis wins ties
    let mut a = 0;
    for k in 1..3 {
        if ext[k] > ext[a] {
            a = k;
        }
    }
    let side = if a == 1 && upright_hint {
        FaceSide::Min
    } else if lo[a].abs() <= hi[a].abs() {
        FaceSide::Min
    } else {
        FaceSide::Max
    };
    let plane = match side {
        FaceSide::Min => lo[a],
        FaceSide::Max => hi[a],
    };
    let mut order: Vec<(f64, usize)> = ids
        .iter()
        .map(|&i| ((vertices[i][a] - plane).abs(), i))
        .collect();
    order.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut roots: Vec<usize> = order
        .iter()
        .take(root_count(ids.len()))
        .map(|&(_, i)| i)
        .collect();
    roots.sort_unstable();
    RootSelection {
        dominant_axis: Axis::from_index(a),
        chosen_face: side,
        root_vertices: roots,
    }
}

/// Cotangent Laplacian (positive semidefinite: positive diagonal, negative
/// off-diagonals) with lumped barycentric vertex areas.
#[derive(Debug, Clone)]
pub struct LaplaceOperators {
    pub laplacian: Csr,
    pub mass: Vec<f64>,
    pub mean_edge_length: f64,
}

fn cot(a: &Vec3, b: &Vec3) -> Option<f64> {
    let s = a.cross(b).norm();
    (s > 0.0).then(|| a.dot(b) / s)
}

pub fn build_operators(part: &CleanPart) -> Result<LaplaceOperators> {
    build_operators_raw(&part.vertices, &part.faces)
}

fn build_operators_raw(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<LaplaceOperators> {
    let n = vertices.len();
    if faces.is_empty() {
        return Err(Error::Operator("no triangles".into()));
    }
    let topo = Topology::build(faces);
    let mut weights = vec![0.0; topo.edges.len()];
    let mut mass = vec![0.0; n];
    let mut valid = 0usize;
    for (f, face) in faces.iter().enumerate() {
        let p = face.map(|v| vertices[v]);
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if !(area > 0.0) || !area.is_finite() {
            continue;
        }
        valid += 1;
        for &v in face {
            mass[v] += area / 3.0;
        }
        for k in 0..3 {
            // angle at vertex k is opposite edge (k+1, k+2), stored in slot k+1
            let o = p[k];
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            if let Some(c) = cot(&(a - o), &(b - o)) {
                weights[topo.face_edges[f][(k + 1) % 3]] += 0.5 * c;
            }
        }
    }
    if valid == 0 {
        return Err(Error::Operator("all triangles are degenerate".into()));
    }
    let mut trip = Vec::with_capacity(4 * topo.edges.len());
    let mut total_len = 0.0;
    for (e, &[i, j]) in topo.edges.iter().enumerate() {
        let w = weights[e].max(MIN_COTAN_WEIGHT);
        trip.push((i, j, -w));
        trip.push((j, i, -w));
        trip.push((i, i, w));
        trip.push((j, j, w));
        total_len += (vertices[i] - vertices[j]).norm();
    }
    Ok(LaplaceOperators {
        laplacian: Csr::from_triplets(n, &trip),
        mass,
        mean_edge_length: total_len / topo.edges.len() as f64,
    })
}

/// Heat-method diffusion time `m · h²`.
pub fn diffusion_time(mean_edge_length: f64, multiplier: f64) -> f64 {
    multiplier * mean_edge_length * mean_edge_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicField {
    pub phi: Vec<f64>,
    pub root_vertices: Vec<usize>,
    /// Diffusion time of the component holding the primary root.
    pub diffusion_time: f64,
    /// Per connected component diffusion time, indexed by component id.
    pub component_times: Vec<f64>,
    pub component_id: Vec<usize>,
}

impl GeodesicField {
    pub fn phi_max(&self) -> f64 {
        self.phi.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicOptions {
    pub time_multiplier: f64,
    pub upright_hint: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions {
            time_multiplier: 1.0,
            upright_hint: true,
        }
    }
}

/// Vertex-connected components: per-vertex component id (vertices not used
/// by any face get their own component) numbered by first face.
pub fn vertex_components(n: usize, faces: &[[usize; 3]]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in faces {
        for k in 0..2 {
            let a = find(&mut parent, f[k]);
            let b = find(&mut parent, f[k + 1]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut root_label = vec![usize::MAX; n];
    let mut count = 0;
    let order = faces.iter().flatten().copied().chain(0..n);
    for v in order {
        if label[v] != usize::MAX {
            continue;
        }
        let r = find(&mut parent, v);
        if root_label[r] == usize::MAX {
            root_label[r] = count;
            count += 1;
        }
        label[v] = root_label[r];
    }
    (label, count)
}

/// Solve the heat-method geodesic field from `roots`, independently on each
/// connected component. Components without a root get a fresh root band.
pub fn solve_heat_geodesic(
    part: &CleanPart,
    roots: &RootSelection,
    options: &GeodesicOptions,
) -> Result<GeodesicField> {
    let n = part.vertices.len();
    if roots.root_vertices.is_empty() {
        return Err(Error::Parameter("empty root set".into()));
    }
    if let Some(&bad) = roots.root_vertices.iter().find(|&&r| r >= n) {
        return Err(Error::Parameter(format!("root vertex {bad} out of range")));
    }
    let (component_id, ncomp) = vertex_components(n, &part.faces);
    let mut comp_vertices: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for v in 0..n {
        comp_vertices[component_id[v]].push(v);
    }
    let mut comp_faces: Vec<Vec<[usize; 3]>> = vec![Vec::new(); ncomp];
    for f in &part.faces {
        comp_faces[component_id[f[0]]].push(*f);
    }
    let mut comp_roots: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for &r in &roots.root_vertices {
        comp_roots[component_id[r]].push(r);
    }

    let mut phi = vec![0.0; n];
    let mut all_roots = Vec::new();
    let mut component_times = vec![0.0; ncomp];
    for c in 0..ncomp {
        let verts = &comp_vertices[c];
        if comp_faces[c].is_empty() {
            // isolated vertex: its own root
            all_roots.extend_from_slice(verts);
            continue;
        }
        let mut local = std::collections::HashMap::with_capacity(verts.len());
        for (i, &v) in verts.iter().enumerate() {
            local.insert(v, i);
        }
        let lv: Vec<Vec3> = verts.iter().map(|&v| part.vertices[v]).collect();
        let lf: Vec<[usize; 3]> = comp_faces[c].iter().map(|f| f.map(|v| local[&v])).collect();
        let lroots: Vec<usize> = if comp_roots[c].is_empty() {
            let ids: Vec<usize> = (0..lv.len()).collect();
            select_root_among(&lv, &ids, options.upright_hint).root_vertices
        } else {
            let mut r: Vec<usize> = comp_roots[c].iter().map(|v| local[v]).collect();
            r.sort_unstable();
            r.dedup();
            r
        };
        let (lphi, t) = solve_component(&lv, &lf, &lroots, options.time_multiplier)?;
        component_times[c] = t;
        for (i, &v) in verts.iter().enumerate() {
            phi[v] = lphi[i];
        }
        all_roots.extend(lroots.iter().map(|&i| verts[i]));
    }
    all_roots.sort_unstable();
    let primary = component_id[roots.root_vertices[0]];
    Ok(GeodesicField {
        phi,
        root_vertices: all_roots,
        diffusion_time: component_times[primary],
        component_times,
        component_id,
    })
}

fn solve_component(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    roots: &[usize],
    multiplier: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = vertices.len();
    let ops = build_operators_raw(vertices, faces)?;
    let t = diffusion_time(ops.mean_edge_length, multiplier);
    let mut is_root = vec![false; n];
    for &r in roots {
        is_root[r] = true;
    }
    if is_root.iter().all(|&b| b) {
        return Ok((vec![0.0; n], t));
    }

    // heat step: (M + tL) u = M δ
    let heat = ops.laplacian.scaled_plus_diagonal(t, &ops.mass);
    let rhs: Vec<f64> = (0..n)
        .map(|i| if is_root[i] { ops.mass[i] } else { 0.0 })
        .collect();
    let u = SpdSolver::new(heat, "heat diffusion")?.solve(&rhs, "heat diffusion")?;

    // normalized negative gradient per face, then its integrated divergence
    let mut div = vec![0.0; n];
    for face in faces {
        let p = face.map(|v| vertices[v]);
        let nrm = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let area2 = nrm.norm();
        if !(area2 > 0.0) {
            continue;
        }
        let nhat = nrm / area2;
        let mut grad = Vec3::zeros();
        for k in 0..3 {
            let e = p[(k + 2) % 3] - p[(k + 1) % 3];
            grad += nhat.cross(&e) * u[face[k]];
        }
        grad /= area2;
        let g = grad.norm();
        if !(g > 0.0) {
            continue;
        }
        let x = -grad / g;
        for k in 0..3 {
            let o = p[k];
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            let e1 = a - o;
            let e2 = b - o;
            // cot of the angle at b faces e1, at a faces e2
            let cot_b = cot(&(o - b), &(a - b)).unwrap_or(0.0);
            let cot_a = cot(&(o - a), &(b - a)).unwrap_or(0.0);
            div[face[k]] += 0.5 * (cot_b * e1.dot(&x) + cot_a * e2.dot(&x));
        }
    }

    // Poisson step: L φ = −div with the first root pinned to zero
    let pin = roots[0];
    let keep: Vec<usize> = (0..n).filter(|&i| i != pin).collect();
    let reduced = ops.laplacian.submatrix(&keep);
    let b: Vec<f64> = keep.iter().map(|&i| -div[i]).collect();
    let x = SpdSolver::new(reduced, "poisson")?.solve(&b, "poisson")?;
    let mut phi = vec![0.0; n];
    for (k, &i) in keep.iter().enumerate() {
        phi[i] = x[k];
    }
    let shift = roots.iter().map(|&r| phi[r]).fold(f64::INFINITY, f64::min);
    for v in &mut phi {
        *v = (*v - shift).max(0.0);
    }
    Ok((phi, t))
}
