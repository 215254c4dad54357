//! Rib-driven and spine-driven deformation primitives with rib–mesh–spine
//! coupling.
//!
//! Every primitive acts on the rig's current pose. Rib edits move the mesh
//! through the rib weights and drag the spine along through the spine
//! weights; spine edits move the mesh through the spine weights. Ribs that
//! are not edited directly follow the surface they were traced on.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{ArcTable, SpineFrames};
use crate::math::{to_vec3, Vec3};
use crate::rig::{FishboneRig, PartRig};
use crate::spine::fit_rib_frame;

/// Cross-section target for the reshape primitive, as a radial profile
/// `η(θ)` with unit mean over the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Template {
    Circle,
    Square,
    Ellipse { a: f64, b: f64 },
}

/// Mean of `1 / max(|cos θ|, |sin θ|)` over a full turn: `(4/π)·ln(1 + √2)`.
pub fn square_mean_radius() -> f64 {
    4.0 / PI * (1.0 + 2f64.sqrt()).ln()
}

fn ellipse_raw(a: f64, b: f64, theta: f64) -> f64 {
    a * b / ((b * theta.cos()).powi(2) + (a * theta.sin()).powi(2)).sqrt()
}

/// Mean ellipse radius by the midpoint rule, which converges geometrically
/// for smooth periodic integrands.
fn ellipse_mean_radius(a: f64, b: f64) -> f64 {
    const SAMPLES: usize = 4096;
    (0..SAMPLES)
        .map(|i| ellipse_raw(a, b, TAU * (i as f64 + 0.5) / SAMPLES as f64))
        .sum::<f64>()
        / SAMPLES as f64
}

impl Template {
    fn validate(&self) -> Result<()> {
        if let Template::Ellipse { a, b } = self {
            if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Parameter(format!("ellipse axes must be positive (got {a}, {b})")));
            }
        }
        Ok(())
    }

    /// Profile evaluator with the normalization constant precomputed.
    pub fn profile(&self) -> impl Fn(f64) -> f64 {
        let t = *self;
        let mean = match t {
            Template::Circle => 1.0,
            Template::Square => square_mean_radius(),
            Template::Ellipse { a, b } => ellipse_mean_radius(a, b),
        };
        move |theta: f64| match t {
            Template::Circle => 1.0,
            Template::Square => 1.0 / theta.cos().abs().max(theta.sin().abs()) / mean,
            Template::Ellipse { a, b } => ellipse_raw(a, b, theta) / mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BendAxis {
    Normal,
    Binormal,
}

/// The nine primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case")]
pub enum Primitive {
    UniformScale { s: f64 },
    AnisoScale { s: [f64; 3] },
    Translate { d: [f64; 3] },
    /// Rotation about the rib centroid, by axis–angle or an explicit matrix
    /// (row-major).
    Rotate {
        #[serde(default)]
        axis: Option<[f64; 3]>,
        #[serde(default)]
        angle: Option<f64>,
        #[serde(default)]
        matrix: Option<[[f64; 3]; 3]>,
    },
    /// Gaussian drag along the rib arc length around `anchor`.
    LocalDrag { anchor: f64, d: [f64; 3], sigma: f64 },
    Reshape { template: Template, blend: f64 },
    Stretch { s: f64, anchor: f64 },
    Bend { axis: BendAxis, angle: f64, anchor: f64 },
    Twist { psi_max: f64, t_start: f64, t_end: f64 },
}

impl Primitive {
    pub fn is_rib_primitive(&self) -> bool {
        !matches!(
            self,
            Primitive::Stretch { .. } | Primitive::Bend { .. } | Primitive::Twist { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::UniformScale { .. } => "uniform_scale",
            Primitive::AnisoScale { .. } => "aniso_scale",
            Primitive::Translate { .. } => "translate",
            Primitive::Rotate { .. } => "rotate",
            Primitive::LocalDrag { .. } => "local_drag",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Stretch { .. } => "stretch",
            Primitive::Bend { .. } => "bend",
            Primitive::Twist { .. } => "twist",
        }
    }
}

/// One edit: a primitive plus its target (rib set for rib primitives, a
/// spine branch for spine primitives) within a part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    #[serde(default)]
    pub part: usize,
    #[serde(default)]
    pub ribs: Vec<usize>,
    #[serde(default)]
    pub branch: usize,
    #[serde(flatten)]
    pub primitive: Primitive,
}

impl Edit {
    pub fn ribs(part: usize, ribs: Vec<usize>, primitive: Primitive) -> Self {
        Edit {
            part,
            ribs,
            branch: 0,
            primitive,
        }
    }

    pub fn spine(part: usize, branch: usize, primitive: Primitive) -> Self {
        Edit {
            part,
            ribs: Vec::new(),
            branch,
            primitive,
        }
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_unit(name: &str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("{name} must lie in [0, 1] (got {t})")));
    }
    Ok(())
}

/// Rotation matrix of a `Rotate` primitive after validation.
fn rotation_matrix(
    axis: &Option<[f64; 3]>,
    angle: &Option<f64>,
    matrix: &Option<[[f64; 3]; 3]>,
) -> Result<Matrix3<f64>> {
    match (axis, angle, matrix) {
        (_, _, Some(m)) => {
            let q = Matrix3::from_fn(|r, c| m[r][c]);
            let ortho = (q.transpose() * q - Matrix3::identity()).abs().max();
            let det = q.determinant();
            if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
                return Err(Error::Parameter(format!(
                    "rotation matrix must be orthonormal with det +1 (|QᵀQ − I| = {ortho:e}, det = {det})"
                )));
            }
            Ok(q)
        }
        (Some(a), Some(t), None) => {
            let a = to_vec3(*a);
            if !(a.norm() > 0.0) || !finite3(&[a.x, a.y, a.z]) || !t.is_finite() {
                return Err(Error::Parameter("rotation needs a nonzero finite axis and finite angle".into()));
            }
            Ok(*Rotation3::from_axis_angle(&Unit::new_normalize(a), *t).matrix())
        }
        _ => Err(Error::Parameter("rotate needs either `matrix` or `axis` and `angle`".into())),
    }
}

/// Validate an edit against a part; returns whether it is an identity.
fn validate(part: &PartRig, edit: &Edit) -> Result<bool> {
    let p = &edit.primitive;
    if p.is_rib_primitive() {
        if edit.ribs.is_empty() {
            return Err(Error::Selection("rib edit with an empty rib selection".into()));
        }
        if let Some(&bad) = edit.ribs.iter().find(|&&k| k >= part.rib_count()) {
            return Err(Error::Selection(format!(
                "unknown rib {bad} (part {} has {} ribs)",
                part.part_id(),
                part.rib_count()
            )));
        }
    } else if edit.branch >= part.branch_count() {
        return Err(Error::Selection(format!(
            "unknown branch {} (part {} has {} branches)",
            edit.branch,
            part.part_id(),
            part.branch_count()
        )));
    }
    let identity = match p {
        Primitive::UniformScale { s } => {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!("scale must be positive (got {s})")));
            }
            *s == 1.0
        }
        Primitive::AnisoScale { s } => {
            if !s.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(Error::Parameter(format!("scale factors must be positive (got {s:?})")));
            }
            s.iter().all(|&x| x == 1.0)
        }
        Primitive::Translate { d } => {
            if !finite3(d) {
                return Err(Error::Parameter("translation must be finite".into()));
            }
            d.iter().all(|&x| x == 0.0)
        }
        Primitive::Rotate { axis, angle, matrix } => {
            let q = rotation_matrix(axis, angle, matrix)?;
            q == Matrix3::identity()
        }
        Primitive::LocalDrag { anchor, d, sigma } => {
            if !(*sigma > 0.0 && sigma.is_finite()) || !anchor.is_finite() || !finite3(d) {
                return Err(Error::Parameter(format!("local drag needs σ > 0 and finite values (σ = {sigma})")));
            }
            d.iter().all(|&x| x == 0.0)
        }
        Primitive::Reshape { template, blend } => {
            template.validate()?;
            check_unit("blend", *blend)?;
            *blend == 0.0
        }
        Primitive::Stretch { s, anchor } => {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!("stretch factor must be positive (got {s})")));
            }
            check_unit("anchor", *anchor)?;
            *s == 1.0
        }
        Primitive::Bend { angle, anchor, .. } => {
            if !angle.is_finite() {
                return Err(Error::Parameter("bend angle must be finite".into()));
            }
            check_unit("anchor", *anchor)?;
            *angle == 0.0
        }
        Primitive::Twist { psi_max, t_start, t_end } => {
            if !psi_max.is_finite() {
                return Err(Error::Parameter("twist angle must be finite".into()));
            }
            check_unit("t_start", *t_start)?;
            check_unit("t_end", *t_end)?;
            if t_start > t_end {
                return Err(Error::Parameter(format!("t_start {t_start} exceeds t_end {t_end}")));
            }
            *psi_max == 0.0
        }
    };
    Ok(identity)
}

/// Apply one edit in place. Invalid edits leave the rig untouched.
pub fn apply_edit(rig: &mut FishboneRig, edit: &Edit) -> Result<()> {
    let up = rig.config.up_vector();
    let part = rig.part_mut(edit.part)?;
    if validate(part, edit)? {
        return Ok(());
    }
    match &edit.primitive {
        Primitive::Stretch { s, anchor } => spine_stretch(part, edit.branch, *s, *anchor),
        Primitive::Bend { axis, angle, anchor } => spine_bend(part, edit.branch, *axis, *angle, *anchor, &up),
        Primitive::Twist { psi_max, t_start, t_end } => {
            spine_twist(part, edit.branch, *psi_max, *t_start, *t_end, &up)
        }
        rib_primitive => rib_edit(part, &edit.ribs, rib_primitive, &up)?,
    }
    Ok(())
}

/// Apply edits in order. On failure, edits before the failing one stay
/// applied and the failing index is returned with the error.
pub fn compose_edits(rig: &mut FishboneRig, edits: &[Edit]) -> std::result::Result<(), (usize, Error)> {
    for (i, e) in edits.iter().enumerate() {
        apply_edit(rig, e).map_err(|err| (i, err))?;
    }
    Ok(())
}

/// Cumulative arc length at every point of a polyline (closing edge not
/// included) and the total length including it when closed.
fn arc_lengths(points: &[Vec3], closed: bool) -> (Vec<f64>, f64) {
    let mut cum = Vec::with_capacity(points.len());
    let mut s = 0.0;
    for (j, p) in points.iter().enumerate() {
        if j > 0 {
            s += (p - points[j - 1]).norm();
        }
        cum.push(s);
    }
    if closed && points.len() > 1 {
        s += (points[0] - points[points.len() - 1]).norm();
    }
    (cum, s)
}

/// Per-rib displacement field of a rib primitive, evaluated at a point with
/// known rib arc length.
struct RibField<'a> {
    primitive: &'a Primitive,
    centroid: Vec3,
    rotation: Matrix3<f64>,
    closed: bool,
    length: f64,
    reshape: Option<ReshapeFrame>,
}

struct ReshapeFrame {
    centroid: Vec3,
    e_u: Vec3,
    e_v: Vec3,
    normal: Vec3,
    mean_radius: f64,
    profile: Box<dyn Fn(f64) -> f64>,
    blend: f64,
}

impl RibField<'_> {
    fn displacement(&self, p: &Vec3, s: f64) -> Vec3 {
        let c = self.centroid;
        match self.primitive {
            Primitive::UniformScale { s: k } => (p - c) * (k - 1.0),
            Primitive::AnisoScale { s: k } => {
                let r = p - c;
                Vec3::new(r.x * (k[0] - 1.0), r.y * (k[1] - 1.0), r.z * (k[2] - 1.0))
            }
            Primitive::Translate { d } => to_vec3(*d),
            Primitive::Rotate { .. } => (self.rotation - Matrix3::identity()) * (p - c),
            Primitive::LocalDrag { anchor, d, sigma } => {
                let mut ds = (s - anchor).abs();
                if self.closed && self.length > 0.0 {
                    ds = ds.rem_euclid(self.length);
                    ds = ds.min(self.length - ds);
                }
                to_vec3(*d) * (-ds * ds / (2.0 * sigma * sigma)).exp()
            }
            Primitive::Reshape { .. } => {
                let f = self.reshape.as_ref().expect("reshape frame prepared");
                let r = p - f.centroid;
                let (x, y, h) = (r.dot(&f.e_u), r.dot(&f.e_v), r.dot(&f.normal));
                let theta = y.atan2(x);
                let target = f.mean_radius * (f.profile)(theta);
                let q = f.centroid + (f.e_u * theta.cos() + f.e_v * theta.sin()) * target + f.normal * h;
                (q - p) * f.blend
            }
            _ => unreachable!("spine primitive routed to rib field"),
        }
    }
}

fn rib_edit(part: &mut PartRig, selection: &[usize], primitive: &Primitive, up: &Vec3) -> Result<()> {
    let mut selected: Vec<usize> = selection.to_vec();
    selected.sort_unstable();
    selected.dedup();
    let rotation = match primitive {
        Primitive::Rotate { axis, angle, matrix } => rotation_matrix(axis, angle, matrix)?,
        _ => Matrix3::identity(),
    };

    // per selected rib: field, arc table, and the new polyline
    let mut fields: Vec<Option<(RibField, Vec<f64>)>> = (0..part.rib_count()).map(|_| None).collect();
    for &k in &selected {
        let pts = &part.ribs[k];
        let closed = part.tree.nodes[k].closed;
        let (cum, length) = arc_lengths(pts, closed);
        let centroid = pts.iter().sum::<Vec3>() / pts.len().max(1) as f64;
        let reshape = match primitive {
            Primitive::Reshape { template, blend } => {
                let f = fit_rib_frame(pts, up);
                let mean_radius =
                    f.projected.iter().map(|(u, v)| u.hypot(*v)).sum::<f64>() / pts.len().max(1) as f64;
                Some(ReshapeFrame {
                    centroid: f.centroid,
                    e_u: f.basis_u,
                    e_v: f.basis_v,
                    normal: f.normal,
                    mean_radius,
                    profile: Box::new(template.profile()),
                    blend: *blend,
                })
            }
            _ => None,
        };
        let field = RibField {
            primitive,
            centroid,
            rotation,
            closed,
            length,
            reshape,
        };
        fields[k] = Some((field, cum));
    }

    // mesh displacement through the rib weights
    let w = &part.weights.rib;
    let mut disp = vec![Vec3::zeros(); part.vertices.len()];
    let mut moved = false;
    for (i, d) in disp.iter_mut().enumerate() {
        for e in w.row_span(i) {
            let k = w.col_idx[e];
            let Some((field, cum)) = &fields[k] else { continue };
            let proj = &w.projections[e];
            let pts = &part.ribs[k];
            let a = pts[proj.edge_index];
            let b = pts[(proj.edge_index + 1) % pts.len()];
            let p = a + (b - a) * proj.param;
            let s = cum[proj.edge_index] + (b - a).norm() * proj.param;
            *d += field.displacement(&p, s) * w.values[e];
            moved = true;
        }
    }

    // edited ribs follow their own field, the rest follow the surface
    for &k in &selected {
        let (field, cum) = fields[k].as_ref().unwrap();
        let new: Vec<Vec3> = part.ribs[k]
            .iter()
            .zip(cum)
            .map(|(p, &s)| p + field.displacement(p, s))
            .collect();
        part.ribs[k] = new;
    }
    if moved {
        for (v, d) in part.vertices.iter_mut().zip(&disp) {
            *v += d;
        }
        part.carry_ribs(&disp, &selected);
        couple_spine(part, &disp);
    }
    Ok(())
}

/// `p_k += Σ_i W^s_ik Δv_i / Σ_i W^s_ik` for every key with support.
fn couple_spine(part: &mut PartRig, disp: &[Vec3]) {
    let w = &part.weights.spine;
    let num = w.apply_transpose(disp);
    let den = w.column_sums();
    for (k, p) in part.spine.iter_mut().enumerate() {
        if den[k] > 0.0 {
            *p += num[k] / den[k];
        }
    }
}

/// Nearest ancestor of every key that lies on the branch (itself when on
/// it), or `None` for keys in other trees.
fn branch_attachment(part: &PartRig, branch: &[usize]) -> Vec<Option<usize>> {
    let n = part.spine.len();
    let mut on = vec![false; n];
    for &k in branch {
        on[k] = true;
    }
    (0..n)
        .map(|k| {
            let mut c = Some(k);
            while let Some(x) = c {
                if on[x] {
                    return Some(x);
                }
                c = part.rest_spine.parents[x];
            }
            None
        })
        .collect()
}

/// Set the key points to `new_positions` and move mesh and ribs by the
/// spine-weighted key displacement.
fn move_spine(part: &mut PartRig, new_positions: Vec<Vec3>) {
    let delta: Vec<Vec3> = new_positions.iter().zip(&part.spine).map(|(a, b)| a - b).collect();
    let disp = part.weights.spine.apply(&delta);
    for (v, d) in part.vertices.iter_mut().zip(&disp) {
        *v += d;
    }
    part.carry_ribs(&disp, &[]);
    part.spine = new_positions;
}

fn spine_stretch(part: &mut PartRig, branch_id: usize, s: f64, t_a: f64) {
    let branch = part.rest_spine.branches[branch_id].clone();
    let arc = ArcTable::new(&branch, &part.spine);
    let a = t_a * arc.total;
    let mut delta_on_branch = vec![Vec3::zeros(); part.spine.len()];
    for (j, &k) in branch.iter().enumerate() {
        let l1 = a + s * (arc.arc[j] - a);
        delta_on_branch[k] = arc.point_at(&part.spine, l1) - part.spine[k];
    }
    let attach = branch_attachment(part, &branch);
    let new = (0..part.spine.len())
        .map(|k| match attach[k] {
            Some(b) => part.spine[k] + delta_on_branch[b],
            None => part.spine[k],
        })
        .collect();
    move_spine(part, new);
}

fn spine_bend(part: &mut PartRig, branch_id: usize, axis: BendAxis, angle: f64, t_a: f64, up: &Vec3) {
    let branch = part.rest_spine.branches[branch_id].clone();
    if branch.len() < 2 {
        return;
    }
    let arc = ArcTable::new(&branch, &part.spine);
    let a = t_a * arc.total;
    let anchor = arc.point_at(&part.spine, a);
    let frames = SpineFrames::build(&part.rest_spine, &part.spine, up);
    let (j, _) = arc.locate(a);
    let f = frames.edges[frames.edge_into[branch[j + 1]].expect("branch edge")].frame;
    let ax = match axis {
        BendAxis::Normal => f.normal,
        BendAxis::Binormal => f.binormal,
    };
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(ax), angle);
    let mut rotated = vec![false; part.spine.len()];
    for (j, &k) in branch.iter().enumerate() {
        rotated[k] = arc.arc[j] > a;
    }
    let attach = branch_attachment(part, &branch);
    let new = (0..part.spine.len())
        .map(|k| {
            let p = part.spine[k];
            match attach[k] {
                Some(b) if rotated[b] => anchor + rot * (p - anchor),
                _ => p,
            }
        })
        .collect();
    move_spine(part, new);
}

/// Twist ramp: 0 before `t_start`, linear up to `psi_max` at `t_end`,
/// constant after.
pub fn twist_angle(t: f64, psi_max: f64, t_start: f64, t_end: f64) -> f64 {
    if t <= t_start {
        if t == t_start && t_start == t_end {
            psi_max
        } else {
            0.0
        }
    } else if t >= t_end {
        psi_max
    } else {
        psi_max * (t - t_start) / (t_end - t_start)
    }
}

fn spine_twist(part: &mut PartRig, branch_id: usize, psi_max: f64, t_start: f64, t_end: f64, up: &Vec3) {
    let branch = &part.rest_spine.branches[branch_id];
    if branch.len() < 2 {
        return;
    }
    let arc = ArcTable::new(branch, &part.spine);
    let frames = SpineFrames::build(&part.rest_spine, &part.spine, up);
    // edge → position of its child on the branch
    let mut edge_pos = vec![None; frames.edges.len()];
    for j in 1..branch.len() {
        if let Some(e) = frames.edge_into[branch[j]] {
            edge_pos[e] = Some(j);
        }
    }
    let mut disp = vec![Vec3::zeros(); part.vertices.len()];
    for (i, b) in part.bindings.iter().enumerate() {
        let Some(e) = b.edge else { continue };
        let Some(j) = edge_pos[e] else { continue };
        let s = arc.arc[j - 1] + (arc.arc[j] - arc.arc[j - 1]) * b.param;
        let t = if arc.total > 0.0 { s / arc.total } else { 0.0 };
        let psi = twist_angle(t, psi_max, t_start, t_end);
        if psi == 0.0 {
            continue;
        }
        let ef = &frames.edges[e];
        let base = part.spine[ef.parent] + (part.spine[ef.child] - part.spine[ef.parent]) * b.param;
        let v = part.vertices[i];
        let [alpha, u, w] = ef.frame.to_local(&(v - base));
        let (sn, cs) = psi.sin_cos();
        let moved = base + ef.frame.from_local([alpha, u * cs - w * sn, u * sn + w * cs]);
        disp[i] = moved - v;
        part.vertices[i] = moved;
    }
    part.carry_ribs(&disp, &[]);
}
