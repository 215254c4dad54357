//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page owns one [`Demo`]: a rig extracted from a built-in shape. Pose
//! sliders are absolute, so every change re-applies all of them from rest.

use fishbone::deform::{apply_edit, BendAxis, Edit, Primitive};
use fishbone::dynamics::{ForceSchedule, SimConfig, Simulation, Wind};
use fishbone::math::Vec3;
use fishbone::mesh::RawMesh;
use fishbone::rig::{extract, ExtractConfig, FishboneRig};
use fishbone::shapes;
use wasm_bindgen::prelude::*;

fn flatten(ps: &[Vec3]) -> Vec<f32> {
    ps.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    rig: FishboneRig,
    sim: Option<Simulation>,
    wind: f64,
}

#[wasm_bindgen]
impl Demo {
    /// `shape` is "tube" or "y".
    #[wasm_bindgen(constructor)]
    pub fn new(shape: &str) -> Result<Demo, JsError> {
        let part = match shape {
            "tube" => shapes::tube(0.12, 1.0, 20, 33),
            "y" => shapes::y_tube(0.05),
            other => return Err(JsError::new(&format!("unknown shape `{other}`"))),
        };
        let raw = RawMesh { vertices: part.vertices, faces: part.faces, part_labels: None };
        let (rig, _) = extract(&raw, &ExtractConfig::default(), None).map_err(js_err)?;
        Ok(Demo { rig, sim: None, wind: 0.0 })
    }

    pub fn vertex_count(&self) -> usize {
        self.rig.parts[0].vertices.len()
    }

    pub fn rib_count(&self) -> usize {
        self.rig.parts[0].rib_count()
    }

    /// Triangle indices, three per face.
    pub fn indices(&self) -> Vec<u32> {
        self.rig.parts[0].rest_mesh.faces.iter().flatten().map(|&i| i as u32).collect()
    }

    /// Current vertex positions as xyz triples.
    pub fn positions(&self) -> Vec<f32> {
        flatten(&self.rig.parts[0].vertices)
    }

    pub fn spine(&self) -> Vec<f32> {
        flatten(&self.rig.parts[0].spine)
    }

    /// Parent key of every spine key, -1 for the root.
    pub fn spine_parents(&self) -> Vec<i32> {
        self.rig.parts[0].rest_spine.parents.iter().map(|p| p.map_or(-1, |p| p as i32)).collect()
    }

    pub fn rib(&self, id: usize) -> Vec<f32> {
        self.rig.parts[0].ribs.get(id).map(|r| flatten(r)).unwrap_or_default()
    }

    pub fn rib_closed(&self, id: usize) -> bool {
        self.rig.parts[0].tree.nodes.get(id).is_some_and(|r| r.closed)
    }

    /// Pose from rest: scale rib `rib` by `scale`, bend the main branch by
    /// `bend` radians about its middle and twist it by up to `twist`.
    pub fn set_pose(&mut self, rib: usize, scale: f64, bend: f64, twist: f64) -> Result<(), JsError> {
        self.sim = None;
        self.rig.reset();
        let rib = rib.min(self.rib_count() - 1);
        let edits = [
            Edit::ribs(0, vec![rib], Primitive::UniformScale { s: scale }),
            Edit::spine(0, 0, Primitive::Bend { axis: BendAxis::Binormal, angle: bend, anchor: 0.4 }),
            Edit::spine(0, 0, Primitive::Twist { psi_max: twist, t_start: 0.1, t_end: 1.0 }),
        ];
        for e in &edits {
            apply_edit(&mut self.rig, e).map_err(js_err)?;
        }
        Ok(())
    }

    /// Advance a wind simulation by `frames` frames, starting one from the
    /// current pose if none runs or the strength changed.
    pub fn wind_step(&mut self, strength: f64, frames: usize) -> Result<f64, JsError> {
        if self.sim.is_none() || self.wind != strength {
            let schedule = ForceSchedule {
                wind: Some(Wind {
                    direction: [0.0, 0.0, 1.0],
                    amplitude: strength,
                    frequency: 1.5,
                    phase_step: 0.3,
                    ..Wind::default()
                }),
                ..Default::default()
            };
            let config = SimConfig { alpha: 0.8, ..Default::default() };
            self.sim = Some(Simulation::new(&self.rig, config, schedule).map_err(js_err)?);
            self.wind = strength;
        }
        let sim = self.sim.as_mut().expect("started above");
        for _ in 0..frames {
            sim.step_frame().map_err(js_err)?;
            sim.write_to_rig(&mut self.rig).map_err(js_err)?;
        }
        Ok(sim.time)
    }

    pub fn reset(&mut self) {
        self.sim = None;
        self.rig.reset();
    }
}
