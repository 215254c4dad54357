//! Reduced-space elastic dynamics on the spine key points, lifted back to
//! the mesh through the spine skinning weights.

use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::{bind_to_spine, reconstruct, SpineBinding, SpineFrames};
use crate::math::{to_array, to_vec3, Aabb, Vec3, EPS};
use crate::mesh::CleanPart;
use crate::rig::{FishboneRig, PartRig};
use crate::skinning::WeightMatrix;
use crate::spine::SpineTree;

pub const DEFAULT_FRAME_DT: f64 = 1.0 / 60.0;
pub const DEFAULT_SUBSTEPS: usize = 4;
/// Warn when `dt·√(k_max/m_min)` exceeds this.
pub const CFL_LIMIT: f64 = 0.5;
/// Cylindrical blend bandwidth as a fraction of the rest bbox diagonal.
pub const DEFAULT_SIGMA_S_FRACTION: f64 = 0.05;
pub const DEFAULT_RAMP_EXPONENT: f64 = 1.5;
pub const DEFAULT_TURBULENCE: f64 = 0.3;
pub const DEFAULT_SECONDARY_RATIO: f64 = 2.3;
/// Per-key phase multiplier of the turbulence term.
pub const TURBULENCE_PHASE_FACTOR: f64 = 1.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BendingModel {
    #[default]
    Curvature,
    LegacyLaplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftMode {
    #[default]
    Displacement,
    Cylindrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pin {
    #[serde(default)]
    pub part: usize,
    pub key: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub k_s: f64,
    pub k_b: f64,
    pub alpha: f64,
    pub beta_e: f64,
    pub beta_b: f64,
    /// Frame time in seconds.
    pub dt: f64,
    pub substeps: usize,
    pub rho: f64,
    pub gravity: [f64; 3],
    pub bending_model: BendingModel,
    pub lift_mode: LiftMode,
    /// Cylindrical blend bandwidth; `None` means 5% of the bbox diagonal.
    pub sigma_s: Option<f64>,
    /// `None` pins the root key of every part.
    pub pins: Option<Vec<Pin>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k_s: 400.0,
            k_b: 1.0,
            alpha: 1.0,
            beta_e: 0.0,
            beta_b: 0.0,
            dt: DEFAULT_FRAME_DT,
            substeps: DEFAULT_SUBSTEPS,
            rho: 1.0,
            gravity: [0.0, -9.81, 0.0],
            bending_model: BendingModel::Curvature,
            lift_mode: LiftMode::Displacement,
            sigma_s: None,
            pins: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("k_s", self.k_s),
            ("k_b", self.k_b),
            ("alpha", self.alpha),
            ("beta_e", self.beta_e),
            ("beta_b", self.beta_b),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::Parameter("substeps must be >= 1".into()));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::Parameter(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::Parameter("gravity must be finite".into()));
        }
        if let Some(s) = self.sigma_s {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Parameter(format!("sigma_s must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn substep_dt(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    pub direction: [f64; 3],
    pub amplitude: f64,
    /// Angular frequency ω in rad/s.
    pub frequency: f64,
    /// Phase step Δφ between consecutive keys.
    pub phase_step: f64,
    #[serde(default = "default_ramp")]
    pub ramp_exponent: f64,
    /// Drag coefficient c_d.
    #[serde(default)]
    pub drag: f64,
    /// Mean ambient flow speed along the wind direction.
    #[serde(default)]
    pub flow: f64,
    #[serde(default = "default_turbulence")]
    pub turbulence: f64,
    #[serde(default = "default_secondary_ratio")]
    pub secondary_ratio: f64,
}

fn default_ramp() -> f64 {
    DEFAULT_RAMP_EXPONENT
}
fn default_turbulence() -> f64 {
    DEFAULT_TURBULENCE
}
fn default_secondary_ratio() -> f64 {
    DEFAULT_SECONDARY_RATIO
}

/// Zero-amplitude wind along +x with the default gust shape.
impl Default for Wind {
    fn default() -> Self {
        Wind {
            direction: [1.0, 0.0, 0.0],
            amplitude: 0.0,
            frequency: 0.0,
            phase_step: 0.0,
            ramp_exponent: DEFAULT_RAMP_EXPONENT,
            drag: 0.0,
            flow: 0.0,
            turbulence: DEFAULT_TURBULENCE,
            secondary_ratio: DEFAULT_SECONDARY_RATIO,
        }
    }
}

impl Wind {
    fn unit_direction(&self) -> Vec3 {
        let d = to_vec3(self.direction);
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            Vec3::zeros()
        }
    }

    /// Ambient flow velocity seen by key `i` at time `t`.
    pub fn flow_velocity(&self, i: usize, t: f64) -> Vec3 {
        let gust = self.turbulence
            * self.amplitude
            * (self.secondary_ratio * self.frequency * t + i as f64 * self.phase_step * TURBULENCE_PHASE_FACTOR).sin();
        self.unit_direction() * (self.flow + gust)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    pub time: f64,
    #[serde(default)]
    pub part: usize,
    pub point: [f64; 3],
    pub impulse: [f64; 3],
    /// Spatial support; 0 hits only the nearest key.
    #[serde(default)]
    pub sigma: f64,
}

/// Per-vertex forces on the mesh, pulled back onto the keys.
pub trait MeshForceField: Send + Sync {
    /// Forces for the vertices of `part` at time `t`, or `None` for none.
    fn forces(&self, part: usize, vertex_count: usize, t: f64) -> Option<Vec<Vec3>>;
}

/// The same force on every vertex of every part.
#[derive(Debug, Clone, Copy)]
pub struct UniformMeshForce(pub Vec3);

impl MeshForceField for UniformMeshForce {
    fn forces(&self, _part: usize, vertex_count: usize, _t: f64) -> Option<Vec<Vec3>> {
        Some(vec![self.0; vertex_count])
    }
}

#[derive(Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceSchedule {
    pub wind: Option<Wind>,
    pub gravity: bool,
    pub impulses: Vec<Impulse>,
    #[serde(skip)]
    pub mesh_forces: Option<Arc<dyn MeshForceField>>,
}

impl fmt::Debug for ForceSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForceSchedule")
            .field("wind", &self.wind)
            .field("gravity", &self.gravity)
            .field("impulses", &self.impulses)
            .field("mesh_forces", &self.mesh_forces.is_some())
            .finish()
    }
}

impl ForceSchedule {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.wind {
            let vals = [w.amplitude, w.frequency, w.phase_step, w.ramp_exponent, w.drag, w.flow, w.turbulence, w.secondary_ratio];
            if vals.iter().chain(&w.direction).any(|v| !v.is_finite()) {
                return Err(Error::Parameter("wind parameters must be finite".into()));
            }
            if w.drag < 0.0 {
                return Err(Error::Parameter(format!("wind drag must be >= 0, got {}", w.drag)));
            }
        }
        for imp in &self.impulses {
            if !(imp.sigma.is_finite() && imp.sigma >= 0.0) {
                return Err(Error::Parameter(format!("impulse sigma must be >= 0, got {}", imp.sigma)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    /// ℓ̄⁰ / (ℓ⁰ + ε).
    pub sigma: f64,
}

/// Consecutive keys `prev → mid → next` on one branch path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestTriple {
    pub prev: usize,
    pub mid: usize,
    pub next: usize,
    pub kappa: Vec3,
    /// ½(ℓ⁰_prev + ℓ⁰_next).
    pub lbar: f64,
    /// ℓ⁰_prev + ℓ⁰_next.
    pub span: f64,
    /// Rest second difference, for the legacy model.
    pub laplacian: Vec3,
}

/// Time-dependent spine state of one part together with its rest data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub rest_positions: Vec<Vec3>,
    pub edges: Vec<RestEdge>,
    pub mean_length: f64,
    pub triples: Vec<RestTriple>,
    pub pinned: Vec<bool>,
    /// Arc distance along the spine to the nearest pinned key (or the
    /// root when the component has no pin), for the wind ramp.
    pub ramp_distance: Vec<f64>,
    /// Keys whose difference gives the local tangent.
    pub tangent_stencil: Vec<(usize, usize)>,
    pub substeps_taken: usize,
    /// Zero-length edges met by the last force evaluation.
    pub degenerate_edges: usize,
}

fn tangent_of(e: &Vec3) -> Option<(Vec3, f64)> {
    let l = e.norm();
    (l > EPS).then(|| (e / l, l))
}

impl ReducedState {
    /// Rest state from key positions, a parent array and root-to-leaf
    /// branch paths. Triples shared by several paths are kept once.
    pub fn new(
        rest: Vec<Vec3>,
        parents: &[Option<usize>],
        branches: &[Vec<usize>],
        masses: Vec<f64>,
        pins: &[usize],
    ) -> Result<Self> {
        let k = rest.len();
        if k == 0 {
            return Err(Error::EmptySpine);
        }
        if parents.len() != k || masses.len() != k {
            return Err(Error::Parameter(format!(
                "{k} keys but {} parents and {} masses",
                parents.len(),
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Mass(format!("key masses must be positive, got {m}")));
        }
        let mut pinned = vec![false; k];
        for &p in pins {
            *pinned
                .get_mut(p)
                .ok_or_else(|| Error::Selection(format!("pin {p} out of range ({k} keys)")))? = true;
        }

        let mut edges: Vec<RestEdge> = parents
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p, c)))
            .map(|(a, b)| RestEdge {
                a,
                b,
                length: (rest[b] - rest[a]).norm(),
                sigma: 0.0,
            })
            .collect();
        let mean_length = if edges.is_empty() {
            0.0
        } else {
            edges.iter().map(|e| e.length).sum::<f64>() / edges.len() as f64
        };
        for e in &mut edges {
            e.sigma = mean_length / (e.length + EPS);
        }

        let mut seen = HashSet::new();
        let mut triples = Vec::new();
        for path in branches {
            for w in path.windows(3) {
                if !seen.insert((w[0], w[1], w[2])) {
                    continue;
                }
                let (p, m, n) = (rest[w[0]], rest[w[1]], rest[w[2]]);
                let l0 = (m - p).norm();
                let l1 = (n - m).norm();
                let span = l0 + l1;
                let kappa = match (tangent_of(&(m - p)), tangent_of(&(n - m))) {
                    (Some((t0, _)), Some((t1, _))) if span > EPS => (t1 - t0) * (2.0 / span),
                    _ => Vec3::zeros(),
                };
                triples.push(RestTriple {
                    prev: w[0],
                    mid: w[1],
                    next: w[2],
                    kappa,
                    lbar: 0.5 * span,
                    span,
                    laplacian: p - m * 2.0 + n,
                });
            }
        }

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        for e in &edges {
            children[e.a].push(e.b);
        }
        let tangent_stencil = (0..k)
            .map(|i| (parents[i].unwrap_or(i), children[i].first().copied().unwrap_or(i)))
            .collect();
        let ramp_distance = ramp_distances(&rest, parents, &edges, &pinned);

        Ok(ReducedState {
            positions: rest.clone(),
            velocities: vec![Vec3::zeros(); k],
            masses,
            rest_positions: rest,
            edges,
            mean_length,
            triples,
            pinned,
            ramp_distance,
            tangent_stencil,
            substeps_taken: 0,
            degenerate_edges: 0,
        })
    }

    /// Open chain `0 → 1 → … → K−1`.
    pub fn chain(rest: Vec<Vec3>, masses: Vec<f64>, pins: &[usize]) -> Result<Self> {
        let k = rest.len();
        let parents: Vec<Option<usize>> = (0..k).map(|i| i.checked_sub(1)).collect();
        let branch: Vec<usize> = (0..k).collect();
        Self::new(rest, &parents, &[branch], masses, pins)
    }

    /// State of a rig part, taking its current pose as the rest pose.
    pub fn from_part(part: &PartRig, rho: f64, pins: &[usize]) -> Result<Self> {
        let masses = init_masses(part, rho)?;
        Self::new(
            part.spine.clone(),
            &part.rest_spine.parents,
            &part.rest_spine.branches,
            masses,
            pins,
        )
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Unit tangent at key `i`, zero for isolated keys.
    pub fn tangent(&self, i: usize) -> Vec3 {
        let (a, b) = self.tangent_stencil[i];
        tangent_of(&(self.positions[b] - self.positions[a])).map_or(Vec3::zeros(), |(t, _)| t)
    }

    /// Wind ramp `(d_i / d_max)^p`.
    pub fn ramp(&self, i: usize, p: f64) -> f64 {
        let d_max = self.ramp_distance.iter().copied().fold(0.0, f64::max);
        if d_max > 0.0 {
            (self.ramp_distance[i] / d_max).powf(p)
        } else {
            0.0
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| 0.5 * m * v.norm_squared())
            .sum()
    }

    /// Sum of positive stiffness scales on each key, a Gershgorin-style
    /// bound on the largest stiffness seen by one key.
    pub fn max_key_stiffness(&self, config: &SimConfig) -> f64 {
        let mut k = vec![0.0; self.len()];
        for e in &self.edges {
            let s = 2.0 * config.k_s * e.sigma;
            k[e.a] += s;
            k[e.b] += s;
        }
        for t in &self.triples {
            let (s_prev, s_mid, s_next) = match config.bending_model {
                BendingModel::Curvature => {
                    let l0 = (self.rest_positions[t.mid] - self.rest_positions[t.prev]).norm().max(EPS);
                    let l1 = (self.rest_positions[t.next] - self.rest_positions[t.mid]).norm().max(EPS);
                    let a = 2.0 * config.k_b * t.lbar / t.span.max(EPS);
                    let c = 2.0 * a / t.span.max(EPS);
                    let mid = c * (1.0 / l0 + 1.0 / l1).powi(2);
                    (c / (l0 * l0) + mid, 2.0 * mid, c / (l1 * l1) + mid)
                }
                BendingModel::LegacyLaplacian => (4.0 * config.k_b, 8.0 * config.k_b, 4.0 * config.k_b),
            };
            k[t.prev] += s_prev;
            k[t.mid] += s_mid;
            k[t.next] += s_next;
        }
        k.into_iter().fold(0.0, f64::max)
    }

    /// `dt_sub · √(k_max / m_min)`.
    pub fn cfl_number(&self, config: &SimConfig) -> f64 {
        let m_min = self.masses.iter().copied().fold(f64::INFINITY, f64::min);
        config.substep_dt() * (self.max_key_stiffness(config) / m_min).sqrt()
    }
}

/// Multi-source shortest arc distance over the spine tree.
fn ramp_distances(rest: &[Vec3], parents: &[Option<usize>], edges: &[RestEdge], pinned: &[bool]) -> Vec<f64> {
    let k = rest.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for e in edges {
        adj[e.a].push((e.b, e.length));
        adj[e.b].push((e.a, e.length));
    }
    // component roots, to seed components without a pin
    let root_of = |mut i: usize| {
        while let Some(p) = parents[i] {
            i = p;
        }
        i
    };
    let mut pinned_components = HashSet::new();
    for i in (0..k).filter(|&i| pinned[i]) {
        pinned_components.insert(root_of(i));
    }
    let mut dist = vec![f64::INFINITY; k];
    let mut heap = BinaryHeap::new();
    for i in 0..k {
        let seed = pinned[i] || (parents[i].is_none() && !pinned_components.contains(&i));
        if seed {
            dist[i] = 0.0;
            heap.push(HeapItem(0.0, i));
        }
    }
    while let Some(HeapItem(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(j, w) in &adj[i] {
            if d + w < dist[j] {
                dist[j] = d + w;
                heap.push(HeapItem(d + w, j));
            }
        }
    }
    dist
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Barycentric lumped vertex masses `ρ·Σ A_f/3`.
pub fn vertex_masses(mesh: &CleanPart, rho: f64) -> Vec<f64> {
    mesh.vertex_areas().into_iter().map(|a| rho * a).collect()
}

/// Unit-mean normalization. Keys without any mass take the smallest
/// positive mass first, so no key is weightless and the mean is positive.
pub fn normalize_masses(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Mass("no keys".into()));
    }
    if raw.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::Mass("raw key masses must be finite and non-negative".into()));
    }
    let floor = raw.iter().copied().filter(|m| *m > 0.0).fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::Mass("every key has zero mass".into()));
    }
    let filled: Vec<f64> = raw.iter().map(|&m| if m > 0.0 { m } else { floor }).collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    Ok(filled.iter().map(|m| m / mean).collect())
}

/// Key masses of a part: vertex masses pulled through the spine weights and
/// normalized to unit mean.
pub fn init_masses(part: &PartRig, rho: f64) -> Result<Vec<f64>> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Mass(format!("density must be positive, got {rho}")));
    }
    let vm = vertex_masses(&part.rest_mesh, rho);
    if vm.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Mass("mesh has zero total area".into()));
    }
    let w = &part.weights.spine;
    let mut raw = vec![0.0; w.cols];
    for (j, &m) in vm.iter().enumerate() {
        for (k, wk) in w.row(j) {
            raw[k] += wk * m;
        }
    }
    normalize_masses(&raw)
}

pub fn stretch_energy(state: &ReducedState, k_s: f64) -> f64 {
    state
        .edges
        .iter()
        .map(|e| {
            let l = (state.positions[e.b] - state.positions[e.a]).norm();
            0.5 * k_s * e.sigma * (l - e.length).powi(2)
        })
        .sum()
}

pub fn bending_energy(state: &ReducedState, k_b: f64, model: BendingModel) -> f64 {
    let p = &state.positions;
    state
        .triples
        .iter()
        .map(|t| match model {
            BendingModel::Curvature => {
                match (tangent_of(&(p[t.mid] - p[t.prev])), tangent_of(&(p[t.next] - p[t.mid]))) {
                    (Some((t0, _)), Some((t1, _))) => {
                        let kappa = (t1 - t0) * (2.0 / t.span);
                        0.5 * k_b * t.lbar * (kappa - t.kappa).norm_squared()
                    }
                    _ => 0.0,
                }
            }
            BendingModel::LegacyLaplacian => {
                let r = p[t.prev] - p[t.mid] * 2.0 + p[t.next] - t.laplacian;
                0.5 * k_b * r.norm_squared()
            }
        })
        .sum()
}

pub fn elastic_energy(state: &ReducedState, config: &SimConfig) -> f64 {
    stretch_energy(state, config.k_s) + bending_energy(state, config.k_b, config.bending_model)
}

/// Accumulate stretch forces; returns the number of zero-length edges.
pub fn add_stretch_forces(state: &ReducedState, k_s: f64, f: &mut [Vec3]) -> usize {
    let mut degenerate = 0;
    for e in &state.edges {
        let d = state.positions[e.b] - state.positions[e.a];
        let l = d.norm();
        if l <= EPS {
            degenerate += 1;
        }
        let dir = d / (l + EPS);
        let s = dir * (k_s * e.sigma * (l - e.length));
        f[e.a] += s;
        f[e.b] -= s;
    }
    degenerate
}

/// Accumulate bending forces; returns the number of triples skipped for a
/// zero-length edge.
pub fn add_bending_forces(state: &ReducedState, k_b: f64, model: BendingModel, f: &mut [Vec3]) -> usize {
    let p = &state.positions;
    let mut degenerate = 0;
    for t in &state.triples {
        match model {
            BendingModel::Curvature => {
                let (Some((t0, l0)), Some((t1, l1))) = (tangent_of(&(p[t.mid] - p[t.prev])), tangent_of(&(p[t.next] - p[t.mid])))
                else {
                    degenerate += 1;
                    continue;
                };
                let dk = (t1 - t0) * (2.0 / t.span) - t.kappa;
                let a = 2.0 * k_b * t.lbar / t.span;
                let f_prev = -(dk - t0 * t0.dot(&dk)) * (a / l0);
                let f_next = -(dk - t1 * t1.dot(&dk)) * (a / l1);
                f[t.prev] += f_prev;
                f[t.next] += f_next;
                f[t.mid] -= f_prev + f_next;
            }
            BendingModel::LegacyLaplacian => {
                let r = p[t.prev] - p[t.mid] * 2.0 + p[t.next] - t.laplacian;
                f[t.prev] -= r * k_b;
                f[t.next] -= r * k_b;
                f[t.mid] += r * (2.0 * k_b);
            }
        }
    }
    degenerate
}

pub fn elastic_forces(state: &ReducedState, config: &SimConfig) -> Vec<Vec3> {
    let mut f = vec![Vec3::zeros(); state.len()];
    add_stretch_forces(state, config.k_s, &mut f);
    add_bending_forces(state, config.k_b, config.bending_model, &mut f);
    f
}

pub fn add_damping_forces(state: &ReducedState, config: &SimConfig, f: &mut [Vec3]) {
    let v = &state.velocities;
    if config.alpha != 0.0 {
        for i in 0..state.len() {
            f[i] -= v[i] * (config.alpha * state.masses[i]);
        }
    }
    if config.beta_e != 0.0 {
        for e in &state.edges {
            let d = state.positions[e.b] - state.positions[e.a];
            let dir = d / (d.norm() + EPS);
            let s = dir * (config.beta_e * (v[e.b] - v[e.a]).dot(&dir));
            f[e.a] += s;
            f[e.b] -= s;
        }
    }
    if config.beta_b != 0.0 {
        for t in &state.triples {
            let dd = (v[t.prev] - v[t.mid] * 2.0 + v[t.next]) * config.beta_b;
            f[t.prev] -= dd;
            f[t.next] -= dd;
            f[t.mid] += dd * 2.0;
        }
    }
}

pub fn damping_forces(state: &ReducedState, config: &SimConfig) -> Vec<Vec3> {
    let mut f = vec![Vec3::zeros(); state.len()];
    add_damping_forces(state, config, &mut f);
    f
}

/// Wind with drag, gravity and an optional already pulled-back mesh force.
/// Impulses are velocity kicks and are applied by the integrator.
pub fn external_forces(
    state: &ReducedState,
    schedule: &ForceSchedule,
    config: &SimConfig,
    time: f64,
    pullback: Option<&[Vec3]>,
) -> Vec<Vec3> {
    let mut f = vec![Vec3::zeros(); state.len()];
    if let Some(w) = &schedule.wind {
        let dir = w.unit_direction();
        for (i, fi) in f.iter_mut().enumerate() {
            let a = state.ramp(i, w.ramp_exponent);
            if a == 0.0 {
                continue;
            }
            *fi += dir * (a * w.amplitude * (w.frequency * time + i as f64 * w.phase_step).sin());
            if w.drag != 0.0 {
                let t = state.tangent(i);
                let rel = w.flow_velocity(i, time) - state.velocities[i];
                *fi += (rel - t * t.dot(&rel)) * (w.drag * a);
            }
        }
    }
    if schedule.gravity {
        let g = to_vec3(config.gravity);
        for (fi, m) in f.iter_mut().zip(&state.masses) {
            *fi += g * *m;
        }
    }
    if let Some(pb) = pullback {
        for (fi, p) in f.iter_mut().zip(pb) {
            *fi += p;
        }
    }
    f
}

/// Gaussian impulse weights around `point`; `sigma = 0` selects only the
/// nearest key (lowest index on ties).
pub fn impulse_weights(positions: &[Vec3], point: &Vec3, sigma: f64) -> Vec<f64> {
    if sigma > 0.0 {
        positions
            .iter()
            .map(|p| (-(p - point).norm_squared() / (2.0 * sigma * sigma)).exp())
            .collect()
    } else {
        let mut w = vec![0.0; positions.len()];
        let nearest = (0..positions.len()).min_by(|&a, &b| {
            (positions[a] - point)
                .norm_squared()
                .total_cmp(&(positions[b] - point).norm_squared())
        });
        if let Some(i) = nearest {
            w[i] = 1.0;
        }
        w
    }
}

pub fn apply_impulse(state: &mut ReducedState, point: &Vec3, impulse: &Vec3, sigma: f64) {
    let w = impulse_weights(&state.positions, point, sigma);
    for i in 0..state.len() {
        state.velocities[i] += impulse * (w[i] / state.masses[i]);
    }
}

/// Pull per-vertex forces back onto the keys through `(W^s)^T`.
pub fn pull_back(weights: &WeightMatrix, per_vertex: &[Vec3]) -> Vec<Vec3> {
    weights.apply_transpose(per_vertex)
}

fn project_pins(state: &mut ReducedState) {
    for i in 0..state.len() {
        if state.pinned[i] {
            state.positions[i] = state.rest_positions[i];
            state.velocities[i] = Vec3::zeros();
        }
    }
}

/// One semi-implicit Euler substep of length `dt` starting at `time`.
pub fn substep(
    state: &mut ReducedState,
    config: &SimConfig,
    schedule: &ForceSchedule,
    time: f64,
    dt: f64,
    pullback: Option<&[Vec3]>,
) -> Result<()> {
    let mut f = external_forces(state, schedule, config, time, pullback);
    let mut degenerate = add_stretch_forces(state, config.k_s, &mut f);
    degenerate += add_bending_forces(state, config.k_b, config.bending_model, &mut f);
    add_damping_forces(state, config, &mut f);
    state.degenerate_edges = degenerate;
    for i in 0..state.len() {
        state.velocities[i] += f[i] * (dt / state.masses[i]);
        state.positions[i] += state.velocities[i] * dt;
    }
    project_pins(state);
    let step = state.substeps_taken;
    state.substeps_taken += 1;
    let finite = state
        .positions
        .iter()
        .chain(&state.velocities)
        .all(|v| v.iter().all(|c| c.is_finite()));
    if finite {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Advance one frame of `config.dt` from `time`: impulses scheduled inside
/// a substep's window kick velocities at its start.
pub fn step(state: &mut ReducedState, config: &SimConfig, schedule: &ForceSchedule, time: f64) -> Result<()> {
    step_part(state, 0, config, schedule, time, &mut |_| None)
}

fn step_part(
    state: &mut ReducedState,
    part: usize,
    config: &SimConfig,
    schedule: &ForceSchedule,
    time: f64,
    pullback: &mut dyn FnMut(f64) -> Option<Vec<Vec3>>,
) -> Result<()> {
    let dt = config.substep_dt();
    for s in 0..config.substeps {
        let t = time + s as f64 * dt;
        for imp in schedule.impulses.iter().filter(|i| i.part == part) {
            if imp.time >= t && imp.time < t + dt {
                apply_impulse(state, &to_vec3(imp.point), &to_vec3(imp.impulse), imp.sigma);
            }
        }
        let pb = pullback(t);
        substep(state, config, schedule, t, dt, pb.as_deref())?;
    }
    Ok(())
}

/// `V⁰ + W^s (S − S⁰)`.
pub fn lift_displacement(rest_vertices: &[Vec3], weights: &WeightMatrix, rest_keys: &[Vec3], keys: &[Vec3]) -> Vec<Vec3> {
    let delta: Vec<Vec3> = keys.iter().zip(rest_keys).map(|(a, b)| a - b).collect();
    rest_vertices
        .iter()
        .zip(weights.apply(&delta))
        .map(|(v, d)| v + d)
        .collect()
}

/// Rest cylindrical coordinates of every vertex about its nearest spine
/// segment, with the blend weight toward the frame reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalBinding {
    pub bindings: Vec<SpineBinding>,
    pub lambda: Vec<f64>,
    pub sigma_s: f64,
    pub rest_frames: SpineFrames,
    pub up: Vec3,
}

impl CylindricalBinding {
    pub fn new(vertices: &[Vec3], spine: &SpineTree, up: &Vec3, sigma_s: f64) -> Result<Self> {
        if !(sigma_s.is_finite() && sigma_s > 0.0) {
            return Err(Error::Parameter(format!("sigma_s must be > 0, got {sigma_s}")));
        }
        let rest_frames = SpineFrames::build(spine, &spine.key_points, up);
        let bindings = bind_to_spine(vertices, &spine.key_points, &rest_frames);
        let lambda = bindings
            .iter()
            .map(|b| (-b.distance * b.distance / (2.0 * sigma_s * sigma_s)).exp())
            .collect();
        Ok(CylindricalBinding {
            bindings,
            lambda,
            sigma_s,
            rest_frames,
            up: *up,
        })
    }
}

/// Blend of the displacement lift and the reconstruction in frames carried
/// along the deformed spine. Returns the lifted vertices and the number of
/// vertices that fell back to the displacement lift on a degenerate segment.
pub fn lift_cylindrical(
    binding: &CylindricalBinding,
    rest_vertices: &[Vec3],
    weights: &WeightMatrix,
    spine: &SpineTree,
    keys: &[Vec3],
) -> (Vec<Vec3>, usize) {
    let disp = lift_displacement(rest_vertices, weights, &spine.key_points, keys);
    let frames = SpineFrames::follow(&binding.rest_frames, spine, keys, &binding.up);
    let mut flagged = 0;
    let out = disp
        .iter()
        .zip(binding.bindings.iter().zip(&binding.lambda))
        .map(|(d, (b, &lam))| {
            if b.edge.is_some_and(|e| frames.edges[e].degenerate) {
                flagged += 1;
                return *d;
            }
            let v = reconstruct(b, keys, &frames);
            d + (v - d) * lam
        })
        .collect();
    (out, flagged)
}

/// Per-part simulation data.
#[derive(Debug, Clone)]
pub struct PartSim {
    pub state: ReducedState,
    pub rest_vertices: Vec<Vec3>,
    pub spine: SpineTree,
    pub weights: WeightMatrix,
    pub cylindrical: Option<CylindricalBinding>,
}

/// One JSON-lines trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub frame: usize,
    pub time: f64,
    /// Per part, per key.
    pub key_positions: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_hash: Option<String>,
}

/// A running simulation over every part of a rig, starting from the rig's
/// current pose.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub schedule: ForceSchedule,
    pub parts: Vec<PartSim>,
    pub time: f64,
    pub frame: usize,
    /// Vertices that used the displacement fallback in the last lift.
    pub flagged_vertices: usize,
}

impl Simulation {
    pub fn new(rig: &FishboneRig, config: SimConfig, schedule: ForceSchedule) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        let mut pins: Vec<Vec<usize>> = vec![Vec::new(); rig.parts.len()];
        match &config.pins {
            None => {
                for (p, part) in rig.parts.iter().enumerate() {
                    pins[p] = (0..part.spine.len()).filter(|&k| part.rest_spine.parents[k].is_none()).collect();
                }
            }
            Some(list) => {
                for pin in list {
                    pins.get_mut(pin.part)
                        .ok_or_else(|| Error::Selection(format!("pin part {} out of range", pin.part)))?
                        .push(pin.key);
                }
            }
        }
        let diag = Aabb::from_points(rig.parts.iter().flat_map(|p| p.vertices.iter()))
            .map_or(1.0, |b| b.diagonal());
        let sigma_s = config.sigma_s.unwrap_or(DEFAULT_SIGMA_S_FRACTION * diag);
        let up = rig.config.up_vector();
        let mut parts = Vec::with_capacity(rig.parts.len());
        for (p, part) in rig.parts.iter().enumerate() {
            let state = ReducedState::from_part(part, config.rho, &pins[p])?;
            let cfl = state.cfl_number(&config);
            if cfl > CFL_LIMIT {
                log::warn!("part {p}: dt·sqrt(k_max/m_min) = {cfl:.3} exceeds {CFL_LIMIT}; the explicit integrator may diverge");
            }
            let spine = part.current_spine();
            let cylindrical = match config.lift_mode {
                LiftMode::Cylindrical => Some(CylindricalBinding::new(&part.vertices, &spine, &up, sigma_s)?),
                LiftMode::Displacement => None,
            };
            parts.push(PartSim {
                state,
                rest_vertices: part.vertices.clone(),
                spine,
                weights: part.weights.spine.clone(),
                cylindrical,
            });
        }
        Ok(Simulation {
            config,
            schedule,
            parts,
            time: 0.0,
            frame: 0,
            flagged_vertices: 0,
        })
    }

    pub fn step_frame(&mut self) -> Result<()> {
        for (p, part) in self.parts.iter_mut().enumerate() {
            let field = self.schedule.mesh_forces.clone();
            let n = part.rest_vertices.len();
            let weights = &part.weights;
            let mut pullback = |t: f64| {
                field
                    .as_ref()
                    .and_then(|f| f.forces(p, n, t))
                    .map(|fv| pull_back(weights, &fv))
            };
            step_part(&mut part.state, p, &self.config, &self.schedule, self.time, &mut pullback)?;
        }
        self.frame += 1;
        self.time = self.frame as f64 * self.config.dt;
        Ok(())
    }

    /// Lifted mesh of every part in the configured lift mode.
    pub fn lift(&mut self) -> Vec<Vec<Vec3>> {
        let mut flagged = 0;
        let out = self
            .parts
            .iter()
            .map(|p| match &p.cylindrical {
                Some(c) => {
                    let (v, f) = lift_cylindrical(c, &p.rest_vertices, &p.weights, &p.spine, &p.state.positions);
                    flagged += f;
                    v
                }
                None => lift_displacement(&p.rest_vertices, &p.weights, &p.spine.key_points, &p.state.positions),
            })
            .collect();
        self.flagged_vertices = flagged;
        out
    }

    /// Write the current spine and lifted mesh into the rig; ribs follow
    /// the mesh.
    pub fn write_to_rig(&mut self, rig: &mut FishboneRig) -> Result<()> {
        if rig.parts.len() != self.parts.len() {
            return Err(Error::Parameter("rig does not match the simulation".into()));
        }
        let lifted = self.lift();
        for ((part, sim), verts) in rig.parts.iter_mut().zip(&self.parts).zip(lifted) {
            let disp: Vec<Vec3> = verts.iter().zip(&part.vertices).map(|(a, b)| a - b).collect();
            part.carry_ribs(&disp, &[]);
            part.vertices = verts;
            part.spine = sim.state.positions.clone();
        }
        Ok(())
    }

    /// Keys over vertices across all parts.
    pub fn reduction_ratio(&self) -> f64 {
        let k: usize = self.parts.iter().map(|p| p.state.len()).sum();
        let n: usize = self.parts.iter().map(|p| p.rest_vertices.len()).sum();
        k as f64 / n.max(1) as f64
    }

    pub fn total_energy(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.state.kinetic_energy() + elastic_energy(&p.state, &self.config))
            .sum()
    }

    pub fn trace_record(&mut self, with_hash: bool) -> TraceRecord {
        let vertex_hash = with_hash.then(|| vertex_hash(&self.lift()));
        TraceRecord {
            frame: self.frame,
            time: self.time,
            key_positions: self
                .parts
                .iter()
                .map(|p| p.state.positions.iter().map(to_array).collect())
                .collect(),
            vertex_hash,
        }
    }
}

/// First 64 bits of SHA-256 over the little-endian coordinates, as hex.
pub fn vertex_hash(parts: &[Vec<Vec3>]) -> String {
    let mut h = Sha256::new();
    for v in parts.iter().flatten() {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}
