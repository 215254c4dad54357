mod common;

use common::{max_abs_diff, tube_rig};
use fishbone::deform::{
    apply_edit, compose_edits, square_mean_radius, twist_angle, BendAxis, Edit, Primitive, Template,
};
use fishbone::frames::{binding_anchor, SpineFrames};
use fishbone::math::Vec3;
use fishbone::Error;

fn identity_edits(rib: usize) -> Vec<Edit> {
    let r = |p| Edit::ribs(0, vec![rib], p);
    let s = |p| Edit::spine(0, 0, p);
    vec![
        r(Primitive::UniformScale { s: 1.0 }),
        r(Primitive::AnisoScale { s: [1.0; 3] }),
        r(Primitive::Translate { d: [0.0; 3] }),
        r(Primitive::Rotate { axis: Some([0.0, 0.0, 1.0]), angle: Some(0.0), matrix: None }),
        r(Primitive::LocalDrag { anchor: 0.1, d: [0.0; 3], sigma: 0.05 }),
        r(Primitive::Reshape { template: Template::Square, blend: 0.0 }),
        s(Primitive::Stretch { s: 1.0, anchor: 0.3 }),
        s(Primitive::Bend { axis: BendAxis::Binormal, angle: 0.0, anchor: 0.5 }),
        s(Primitive::Twist { psi_max: 0.0, t_start: 0.2, t_end: 0.8 }),
    ]
}

#[test]
fn identity_parameters_are_bitwise_identity() {
    let rig = tube_rig();
    for e in identity_edits(3) {
        let mut r = rig.clone();
        apply_edit(&mut r, &e).unwrap();
        assert_eq!(r, rig, "{} at identity changed the rig", e.primitive.name());
    }
}

#[test]
fn rib_translation_is_weighted_by_column() {
    let rig = tube_rig();
    let k = 4;
    let d = [0.01, -0.02, 0.03];
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::ribs(0, vec![k], Primitive::Translate { d })).unwrap();
    let p = &rig.parts[0];
    let w = &p.weights.rib;
    for i in 0..w.rows {
        let moved = r.parts[0].vertices[i] - p.vertices[i];
        let expect = Vec3::from(d) * w.get(i, k);
        assert!((moved - expect).norm() < 1e-15, "vertex {i}");
    }
}

#[test]
fn translating_every_rib_moves_supported_vertices_exactly() {
    let rig = tube_rig();
    let p = &rig.parts[0];
    let d = Vec3::new(0.01, -0.02, 0.03);
    let all: Vec<usize> = (0..p.rib_count()).collect();
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::ribs(0, all, Primitive::Translate { d: d.into() })).unwrap();
    let w = &p.weights.rib;
    let mut supported = 0;
    for i in 0..w.rows {
        let moved = r.parts[0].vertices[i] - p.vertices[i];
        if w.row(i).next().is_some() {
            supported += 1;
            assert!((moved - d).norm() < 1e-14, "vertex {i}: {moved:?}");
        } else {
            assert_eq!(moved.norm(), 0.0);
        }
    }
    assert!(supported > w.rows / 2);
}

#[test]
fn zero_weight_vertices_never_move() {
    let rig = tube_rig();
    let k = 2;
    let edits = [
        Primitive::UniformScale { s: 1.7 },
        Primitive::Rotate { axis: Some([1.0, 2.0, 0.5]), angle: Some(0.8), matrix: None },
        Primitive::LocalDrag { anchor: 0.2, d: [0.0, 0.05, 0.0], sigma: 0.1 },
        Primitive::Reshape { template: Template::Ellipse { a: 2.0, b: 1.0 }, blend: 0.7 },
    ];
    for prim in edits {
        let mut r = rig.clone();
        apply_edit(&mut r, &Edit::ribs(0, vec![k], prim.clone())).unwrap();
        let p = &rig.parts[0];
        let mut moved_any = false;
        for i in 0..p.vertices.len() {
            if p.weights.rib.get(i, k) == 0.0 {
                assert_eq!(r.parts[0].vertices[i], p.vertices[i], "{} moved vertex {i}", prim.name());
            } else if r.parts[0].vertices[i] != p.vertices[i] {
                moved_any = true;
            }
        }
        assert!(moved_any, "{} moved nothing", prim.name());
    }
}

#[test]
fn translate_back_and_forth_returns() {
    let rig = tube_rig();
    let mut r = rig.clone();
    let d = [0.02, 0.01, -0.03];
    compose_edits(
        &mut r,
        &[
            Edit::ribs(0, vec![1, 2], Primitive::Translate { d }),
            Edit::ribs(0, vec![1, 2], Primitive::Translate { d: d.map(|x| -x) }),
        ],
    )
    .unwrap();
    assert!(max_abs_diff(&r.parts[0].vertices, &rig.parts[0].vertices) < 1e-9);
    assert!(max_abs_diff(&r.parts[0].spine, &rig.parts[0].spine) < 1e-9);
}

#[test]
fn rib_edit_drags_spine_by_weighted_mean_displacement() {
    let rig = tube_rig();
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::ribs(0, vec![5], Primitive::UniformScale { s: 1.4 })).unwrap();
    let p0 = &rig.parts[0];
    let p1 = &r.parts[0];
    let ws = &p0.weights.spine;
    for k in 0..p0.spine.len() {
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for i in 0..ws.rows {
            let w = ws.get(i, k);
            num += (p1.vertices[i] - p0.vertices[i]) * w;
            den += w;
        }
        let expect = if den > 0.0 { p0.spine[k] + num / den } else { p0.spine[k] };
        assert!((p1.spine[k] - expect).norm() < 1e-12, "key {k}");
    }
}

#[test]
fn twist_preserves_spine_radius() {
    let rig = tube_rig();
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::spine(0, 0, Primitive::Twist { psi_max: 1.3, t_start: 0.1, t_end: 0.9 })).unwrap();
    let p0 = &rig.parts[0];
    let p1 = &r.parts[0];
    let up = rig.config.up_vector();
    let frames = SpineFrames::build(&p0.rest_spine, &p0.spine, &up);
    let mut rotated = 0;
    for (i, b) in p0.bindings.iter().enumerate() {
        let (base, f) = binding_anchor(b, &p0.spine, &frames);
        let before = f.to_local(&(p0.vertices[i] - base));
        let after = f.to_local(&(p1.vertices[i] - base));
        let r0 = before[1].hypot(before[2]);
        let r1 = after[1].hypot(after[2]);
        assert!((r0 - r1).abs() < 1e-12, "vertex {i}: {r0} vs {r1}");
        assert!((before[0] - after[0]).abs() < 1e-12);
        if (p1.vertices[i] - p0.vertices[i]).norm() > 1e-6 {
            rotated += 1;
        }
    }
    assert!(rotated > p0.vertices.len() / 2);
    assert_eq!(p1.spine, p0.spine);
}

#[test]
fn twist_ramp() {
    assert_eq!(twist_angle(0.1, 2.0, 0.2, 0.6), 0.0);
    assert!((twist_angle(0.4, 2.0, 0.2, 0.6) - 1.0).abs() < 1e-12);
    assert_eq!(twist_angle(0.9, 2.0, 0.2, 0.6), 2.0);
}

#[test]
fn bend_rotates_tail_about_anchor() {
    let rig = tube_rig();
    let mut r = rig.clone();
    let half_pi = std::f64::consts::FRAC_PI_2;
    apply_edit(&mut r, &Edit::spine(0, 0, Primitive::Bend { axis: BendAxis::Binormal, angle: half_pi, anchor: 0.5 }))
        .unwrap();
    let p0 = &rig.parts[0];
    let p1 = &r.parts[0];
    let branch = &p0.rest_spine.branches[0];
    // the tube spine runs along +x, so the tail should now point along +y
    let tail = *branch.last().unwrap();
    let mid = branch[branch.len() / 2 - 1];
    assert_eq!(p1.spine[mid], p0.spine[mid]);
    let dir = (p1.spine[tail] - p1.spine[mid]).normalize();
    assert!(dir.y > 0.95, "tail direction {dir:?}");
    // distance to the pivot is preserved by the rigid rotation
    let arc = &p0.arc_tables[0];
    let pivot = arc.point_at(&p0.spine, 0.5 * arc.total);
    let l0 = (p0.spine[tail] - pivot).norm();
    let l1 = (p1.spine[tail] - pivot).norm();
    assert!((l0 - l1).abs() < 1e-12);
}

#[test]
fn stretch_doubles_arc_from_root_anchor() {
    let rig = tube_rig();
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::spine(0, 0, Primitive::Stretch { s: 2.0, anchor: 0.0 })).unwrap();
    let p0 = &rig.parts[0];
    let p1 = &r.parts[0];
    let branch = &p0.rest_spine.branches[0];
    let arc0 = &p0.arc_tables[0];
    for (j, &k) in branch.iter().enumerate() {
        let expect = arc0.point_at(&p0.spine, 2.0 * arc0.arc[j]);
        assert!((p1.spine[k] - expect).norm() < 1e-12);
    }
    assert_eq!(p1.spine[branch[0]], p0.spine[branch[0]]);
}

#[test]
fn edit_order_matters() {
    let rig = tube_rig();
    let scale = Edit::ribs(0, vec![6], Primitive::UniformScale { s: 1.5 });
    let bend = Edit::spine(0, 0, Primitive::Bend { axis: BendAxis::Normal, angle: 0.7, anchor: 0.3 });
    let mut a = rig.clone();
    compose_edits(&mut a, &[scale.clone(), bend.clone()]).unwrap();
    let mut b = rig.clone();
    compose_edits(&mut b, &[bend, scale]).unwrap();
    assert!(max_abs_diff(&a.parts[0].vertices, &b.parts[0].vertices) > 1e-6);
}

#[test]
fn failing_edit_reports_index_and_keeps_prior() {
    let rig = tube_rig();
    let mut r = rig.clone();
    let edits = [
        Edit::ribs(0, vec![1], Primitive::Translate { d: [0.01, 0.0, 0.0] }),
        Edit::ribs(0, vec![999], Primitive::Translate { d: [0.01, 0.0, 0.0] }),
    ];
    let (i, err) = compose_edits(&mut r, &edits).unwrap_err();
    assert_eq!(i, 1);
    assert!(matches!(err, Error::Selection(_)));
    let mut once = rig.clone();
    apply_edit(&mut once, &edits[0]).unwrap();
    assert_eq!(r, once);
}

#[test]
fn invalid_parameters_are_rejected() {
    let rig = tube_rig();
    let bad = [
        Edit::ribs(0, vec![1], Primitive::UniformScale { s: 0.0 }),
        Edit::ribs(0, vec![1], Primitive::Rotate { axis: None, angle: None, matrix: Some([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]) }),
        Edit::ribs(0, vec![1], Primitive::LocalDrag { anchor: 0.0, d: [1.0, 0.0, 0.0], sigma: 0.0 }),
        Edit::ribs(0, vec![1], Primitive::Reshape { template: Template::Circle, blend: 1.5 }),
        Edit::spine(0, 0, Primitive::Twist { psi_max: 1.0, t_start: 0.8, t_end: 0.2 }),
    ];
    for e in bad {
        let mut r = rig.clone();
        assert!(matches!(apply_edit(&mut r, &e), Err(Error::Parameter(_))), "{:?}", e.primitive);
        assert_eq!(r, rig);
    }
    let mut r = rig.clone();
    assert!(matches!(apply_edit(&mut r, &Edit::spine(0, 7, Primitive::Stretch { s: 2.0, anchor: 0.0 })), Err(Error::Selection(_))));
}

#[test]
fn square_profile_at_diagonal() {
    // independent quadrature of the mean of 1/max(|cos|, |sin|)
    let n = 200_000;
    let mean: f64 = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
            1.0 / t.cos().abs().max(t.sin().abs())
        })
        .sum::<f64>()
        / n as f64;
    assert!((mean - square_mean_radius()).abs() < 1e-8);
    let eta = Template::Square.profile();
    let diag = eta(std::f64::consts::FRAC_PI_4);
    assert!((diag - 2f64.sqrt() / mean).abs() < 1e-8);
    assert!((diag - 2f64.sqrt() / 1.12219).abs() < 1e-4);
}

#[test]
fn reshape_to_square_moves_rib_onto_template() {
    let rig = tube_rig();
    let k = 5;
    let mut r = rig.clone();
    apply_edit(&mut r, &Edit::ribs(0, vec![k], Primitive::Reshape { template: Template::Square, blend: 1.0 })).unwrap();
    let before = &rig.parts[0].ribs[k];
    let after = &r.parts[0].ribs[k];
    let f = fishbone::spine::fit_rib_frame(before, &rig.config.up_vector());
    let mean_r = f.projected.iter().map(|(u, v)| u.hypot(*v)).sum::<f64>() / before.len() as f64;
    let eta = Template::Square.profile();
    for p in after {
        let (u, v) = f.to_plane(p);
        let theta = v.atan2(u);
        assert!((u.hypot(v) - mean_r * eta(theta)).abs() < 1e-12);
    }
}

#[test]
fn edits_round_trip_through_json() {
    for e in identity_edits(2) {
        let s = serde_json::to_string(&e).unwrap();
        let back: Edit = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
    let e: Edit = serde_json::from_str(r#"{"primitive":"uniform_scale","s":1.5,"ribs":[3]}"#).unwrap();
    assert_eq!(e, Edit::ribs(0, vec![3], Primitive::UniformScale { s: 1.5 }));
}
