//! Mesh loading, cleaning, part decomposition and watertightness repair.

mod clean;
mod io;
mod topology;
mod weld;

pub use clean::{clean_and_normalize, parts_to_raw, CleanOptions};
pub use io::{load_mesh, parse_mesh_json, parse_obj, write_mesh_json, write_obj, MeshFormat};
pub use topology::{boundary_edge_fraction, classify_thin_shell, is_watertight, Topology};
pub use weld::{contract_to_twin, expand_to_original, make_welded_twin, WeldedTwin};

use serde::{Deserialize, Serialize};

use crate::math::{Aabb, Vec3};

/// Thin-shell boundary-edge fraction threshold.
pub const DEFAULT_THIN_SHELL_THRESHOLD: f64 = 0.05;
/// Vertex merge tolerance applied during cleaning, in input units.
pub const DEFAULT_MERGE_TOLERANCE: f64 = 1e-6;
/// Faces below this area (normalized units) are dropped.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Triangle soup as read from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Option<Vec<usize>>,
}

/// Uniform scale about a center: `normalized = (v - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        (v - Vec3::from(self.center)) * self.scale
    }

    pub fn invert(&self, v: &Vec3) -> Vec3 {
        v / self.scale + Vec3::from(self.center)
    }
}

/// A cleaned, normalized part ready for the geodesic stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanPart {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub part_id: usize,
    pub is_thin_shell: bool,
    pub normalization: Normalization,
    /// Original vertex -> welded twin vertex, present on welded twins.
    pub weld_map: Option<Vec<usize>>,
}

impl CleanPart {
    /// Wrap already-clean geometry (fixtures, procedural shapes).
    pub fn from_geometry(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        let mut part = CleanPart {
            vertices,
            faces,
            part_id: 0,
            is_thin_shell: false,
            normalization: Normalization::identity(),
            weld_map: None,
        };
        part.is_thin_shell = classify_thin_shell(&part, DEFAULT_THIN_SHELL_THRESHOLD);
        part
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(&self.vertices).expect("clean part has vertices")
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        crate::math::triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Barycentric lumped area per vertex (one third of each incident face).
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let a = self.face_area(f) / 3.0;
            for &v in face {
                areas[v] += a;
            }
        }
        areas
    }
}

/// All parts of one object, sharing a single normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSet {
    pub parts: Vec<CleanPart>,
    pub shared_normalization: Normalization,
}

impl PartSet {
    pub fn object_bbox(&self) -> Aabb {
        Aabb::from_points(self.parts.iter().flat_map(|p| p.vertices.iter()))
            .expect("part set is non-empty")
    }
}
