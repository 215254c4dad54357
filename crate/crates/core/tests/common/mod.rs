#![allow(dead_code)]

use fishbone::mesh::{CleanPart, RawMesh};
use fishbone::rig::{extract, ExtractConfig, FishboneRig};
use fishbone::shapes;

pub fn raw(part: &CleanPart) -> RawMesh {
    RawMesh {
        vertices: part.vertices.clone(),
        faces: part.faces.clone(),
        part_labels: None,
    }
}

pub fn rig_of(part: &CleanPart) -> FishboneRig {
    extract(&raw(part), &ExtractConfig::default(), None).unwrap().0
}

/// Unit-length tube along x with radius 0.1.
pub fn tube_rig() -> FishboneRig {
    rig_of(&shapes::tube(0.1, 1.0, 24, 41))
}

pub fn max_abs_diff(a: &[nalgebra::Vector3<f64>], b: &[nalgebra::Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}
