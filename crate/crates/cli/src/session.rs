//! Editing sessions: one rig, a selection, an edit log and an optional
//! running simulation. Everything here is synchronous; the HTTP layer wraps
//! each session in a mutex.

use std::path::PathBuf;

use fishbone::animation::{apply_to_rig, capture_keyframe, Keyframe, Track};
use fishbone::deform::{apply_edit, Edit, Primitive};
use fishbone::dynamics::{ForceSchedule, SimConfig, Simulation, TraceRecord};
use fishbone::math::Vec3;
use fishbone::rig::FishboneRig;
use fishbone::skinning::atomic_write;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::batch::{part_summaries, with_overrides};
use crate::wire::{encode_f32, encode_u32, PartGeometry, PositionDelta};

/// Camera hints a snapshot may carry; the client interprets them.
pub const VIEWS: [&str; 6] = ["+x", "-x", "+y", "-y", "+z", "-z"];

pub const COMMANDS: [&str; 10] = [
    "list_parts",
    "set_part",
    "list_ribs",
    "select_ribs",
    "list_spine_branches",
    "select_spine_branch",
    "deform",
    "reset",
    "snapshot",
    "done",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NotFound,
    Validation,
    Conflict,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct CommandError {
    pub kind: ErrorKind,
    /// Location of the offending value in the request, e.g. `params.ids[2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}

impl CommandError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        CommandError {
            kind: ErrorKind::Validation,
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        CommandError {
            kind: ErrorKind::Conflict,
            path: None,
            message: message.into(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        CommandError {
            kind: ErrorKind::Failed,
            path: None,
            message: message.into(),
        }
    }
}

pub type CmdResult<T> = Result<T, CommandError>;

/// Deserialize command parameters, reporting the failing field path.
pub fn parse_params<T: DeserializeOwned>(params: &Value) -> CmdResult<T> {
    serde_path_to_error::deserialize(params).map_err(|e| {
        let p = e.path().to_string();
        let path = if p == "." { "params".to_string() } else { format!("params.{p}") };
        CommandError::validation(path, e.inner().to_string())
    })
}

/// Everything that changes the rig, in order. Replaying it on the loaded
/// rig reproduces the live state bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEntry {
    Deform {
        edit: Edit,
    },
    Reset,
    Simulate {
        config: SimConfig,
        forces: ForceSchedule,
        frames: usize,
    },
    CaptureKeyframe {
        time: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        looping: Option<bool>,
    },
    ApplyKeyframe {
        time: f64,
    },
}

pub fn replay(base: &FishboneRig, log: &[LogEntry]) -> fishbone::Result<(FishboneRig, Track)> {
    let mut rig = base.clone();
    let mut track = Track::default();
    for entry in log {
        match entry {
            LogEntry::Deform { edit } => apply_edit(&mut rig, edit)?,
            LogEntry::Reset => rig.reset(),
            LogEntry::Simulate { config, forces, frames } => {
                let mut sim = Simulation::new(&rig, config.clone(), forces.clone())?;
                for _ in 0..*frames {
                    sim.step_frame()?;
                    sim.write_to_rig(&mut rig)?;
                }
            }
            LogEntry::CaptureKeyframe { time, looping } => {
                capture_keyframe(&rig, &mut track, *time)?;
                if let Some(l) = looping {
                    track.looping = *l;
                }
            }
            LogEntry::ApplyKeyframe { time } => apply_to_rig(&mut rig, &track.sample(*time))?,
        }
    }
    Ok((rig, track))
}

pub struct SimRun {
    pub sim: Simulation,
    pub config: SimConfig,
    pub forces: ForceSchedule,
    pub with_hash: bool,
    pub running: bool,
    pub frames: usize,
    /// Bumped on every start so stale tickers exit.
    pub generation: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStart {
    /// Overrides on the default simulation parameters.
    pub config: Option<Value>,
    pub forces: ForceSchedule,
    pub vertex_hash: bool,
    /// Step on a wall-clock ticker; otherwise only `sim/step` advances.
    pub realtime: Option<bool>,
}

pub struct Session {
    pub id: String,
    pub source: String,
    pub base: FishboneRig,
    pub rig: FishboneRig,
    pub active_part: usize,
    pub selected_ribs: Vec<usize>,
    pub selected_branch: usize,
    pub edit_log: Vec<LogEntry>,
    pub track: Track,
    pub sim: Option<SimRun>,
    pub records: Vec<TraceRecord>,
    pub closed: bool,
    pub log_dir: Option<PathBuf>,
    generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMode {
    #[default]
    Full,
    Delta,
    None,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetPart {
    part: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectRibs {
    ids: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBranch {
    branch: usize,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GeometryParams {
    geometry: GeometryMode,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SnapshotParams {
    view: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DoneParams {
    message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Rib,
    Spine,
}

/// First 16 hex digits of SHA-256 over the current pose (f64, LE).
pub fn pose_id(rig: &FishboneRig) -> String {
    let mut h = Sha256::new();
    let mut put = |ps: &[Vec3]| {
        for p in ps {
            for c in p.iter() {
                h.update(c.to_le_bytes());
            }
        }
    };
    for p in &rig.parts {
        put(&p.vertices);
        p.ribs.iter().for_each(|r| put(r));
        put(&p.spine);
    }
    hex::encode(&h.finalize()[..8])
}

impl Session {
    pub fn new(id: String, source: String, rig: FishboneRig) -> Self {
        Session {
            id,
            source,
            base: rig.clone(),
            rig,
            active_part: 0,
            selected_ribs: Vec::new(),
            selected_branch: 0,
            edit_log: Vec::new(),
            track: Track::default(),
            sim: None,
            records: Vec::new(),
            closed: false,
            log_dir: None,
            generation: 0,
        }
    }

    fn check_open(&self) -> CmdResult<()> {
        if self.closed {
            return Err(CommandError::conflict("session is closed"));
        }
        Ok(())
    }

    /// Run one named command.
    pub fn execute(&mut self, name: &str, params: &Value) -> CmdResult<Value> {
        self.check_open()?;
        let params = if params.is_null() { &Value::Object(Default::default()) } else { params };
        match name {
            "list_parts" => Ok(json!({
                "active_part": self.active_part,
                "parts": part_summaries(&self.rig),
            })),
            "set_part" => {
                let p: SetPart = parse_params(params)?;
                if p.part >= self.rig.parts.len() {
                    return Err(CommandError::validation("params.part", format!("no part {}", p.part)));
                }
                self.active_part = p.part;
                self.selected_ribs.clear();
                self.selected_branch = 0;
                Ok(json!({ "active_part": p.part }))
            }
            "list_ribs" => Ok(self.list_ribs()),
            "select_ribs" => {
                let s: SelectRibs = parse_params(params)?;
                let n = self.rig.parts[self.active_part].rib_count();
                if let Some((i, id)) = s.ids.iter().enumerate().find(|(_, &id)| id >= n) {
                    return Err(CommandError::validation(
                        format!("params.ids[{i}]"),
                        format!("no rib {id} in part {} ({n} ribs)", self.active_part),
                    ));
                }
                let mut ids = s.ids;
                ids.sort_unstable();
                ids.dedup();
                self.selected_ribs = ids;
                Ok(json!({ "selected_ribs": self.selected_ribs }))
            }
            "list_spine_branches" => Ok(self.list_branches()),
            "select_spine_branch" => {
                let s: SelectBranch = parse_params(params)?;
                let n = self.rig.parts[self.active_part].branch_count();
                if s.branch >= n {
                    return Err(CommandError::validation(
                        "params.branch",
                        format!("no branch {} in part {} ({n} branches)", s.branch, self.active_part),
                    ));
                }
                self.selected_branch = s.branch;
                Ok(json!({ "selected_branch": s.branch }))
            }
            "deform" => self.deform(params),
            "reset" => {
                let g: GeometryParams = parse_params(params)?;
                self.finish_sim();
                let before: Vec<Vec<Vec3>> = self.rig.parts.iter().map(|p| p.vertices.clone()).collect();
                self.rig.reset();
                self.edit_log.push(LogEntry::Reset);
                let geometry: Vec<Value> = match g.geometry {
                    GeometryMode::Full => self.rig.parts.iter().map(|p| json!(PartGeometry::of(p))).collect(),
                    GeometryMode::Delta => self
                        .rig
                        .parts
                        .iter()
                        .zip(&before)
                        .map(|(p, b)| json!(PositionDelta::between(p.part_id(), b, &p.vertices)))
                        .collect(),
                    GeometryMode::None => Vec::new(),
                };
                Ok(json!({ "snapshot_id": pose_id(&self.rig), "parts": geometry }))
            }
            "snapshot" => {
                let s: SnapshotParams = parse_params(params)?;
                self.snapshot(s.view.as_deref())
            }
            "done" => {
                let d: DoneParams = parse_params(params)?;
                self.finish_sim();
                let path = self.flush_log(&d.message)?;
                self.closed = true;
                Ok(json!({ "closed": true, "log_path": path, "entries": self.edit_log.len() }))
            }
            other => Err(CommandError::validation(
                "name",
                format!("unknown command `{other}`; expected one of {}", COMMANDS.join(", ")),
            )),
        }
    }

    fn list_ribs(&self) -> Value {
        let part = &self.rig.parts[self.active_part];
        let ribs: Vec<Value> = part
            .tree
            .nodes
            .iter()
            .enumerate()
            .map(|(id, r)| {
                json!({
                    "id": id,
                    "level": r.level_index,
                    "sub_index": r.sub_index,
                    "closed": r.closed,
                    "parent": r.parent,
                    "points": r.points.len(),
                    "length": r.length(),
                    "selected": self.selected_ribs.contains(&id),
                })
            })
            .collect();
        json!({ "part": self.active_part, "ribs": ribs })
    }

    fn list_branches(&self) -> Value {
        let spine = &self.rig.parts[self.active_part].rest_spine;
        let branches: Vec<Value> = spine
            .branches
            .iter()
            .enumerate()
            .map(|(id, keys)| json!({ "id": id, "keys": keys, "selected": id == self.selected_branch }))
            .collect();
        json!({ "part": self.active_part, "branches": branches, "junctions": spine.junctions })
    }

    fn deform(&mut self, params: &Value) -> CmdResult<Value> {
        let mut params = params.clone();
        let mode = match params.as_object_mut().and_then(|m| m.remove("geometry")) {
            Some(g) => parse_params::<GeometryMode>(&g).map_err(|mut e| {
                e.path = Some("params.geometry".into());
                e
            })?,
            None => GeometryMode::Full,
        };
        let primitive: Primitive = parse_params(&params)?;
        let edit = if primitive.is_rib_primitive() {
            if self.selected_ribs.is_empty() {
                return Err(CommandError::validation("selection", "rib primitives need selected ribs (select_ribs)"));
            }
            Edit::ribs(self.active_part, self.selected_ribs.clone(), primitive)
        } else {
            Edit::spine(self.active_part, self.selected_branch, primitive)
        };
        self.finish_sim();
        let before = self.rig.parts[self.active_part].vertices.clone();
        apply_edit(&mut self.rig, &edit).map_err(|e| CommandError::validation("params", e.to_string()))?;
        self.edit_log.push(LogEntry::Deform { edit: edit.clone() });
        let part = &self.rig.parts[self.active_part];
        let mut out = json!({ "edit": edit, "snapshot_id": pose_id(&self.rig) });
        match mode {
            GeometryMode::Full => out["geometry"] = json!(PartGeometry::of(part)),
            GeometryMode::Delta => {
                let g = PartGeometry::of(part);
                out["delta"] = json!(PositionDelta::between(self.active_part, &before, &part.vertices));
                out["ribs"] = json!(g.ribs);
                out["spine"] = json!(g.spine);
            }
            GeometryMode::None => {}
        }
        Ok(out)
    }

    /// Geometry of every part plus the selection state.
    pub fn snapshot(&self, view: Option<&str>) -> CmdResult<Value> {
        let view = view.unwrap_or("+z");
        if !VIEWS.contains(&view) {
            return Err(CommandError::validation(
                "params.view",
                format!("unknown view `{view}`; expected one of {}", VIEWS.join(", ")),
            ));
        }
        let parts: Vec<Value> = self
            .rig
            .parts
            .iter()
            .map(|p| {
                let mut g = json!(PartGeometry::of(p));
                g["faces"] = json!(encode_u32(p.rest_mesh.faces.iter().flatten().copied()));
                g["face_count"] = json!(p.rest_mesh.faces.len());
                g["branches"] = json!(p.rest_spine.branches);
                g
            })
            .collect();
        Ok(json!({
            "snapshot_id": pose_id(&self.rig),
            "view": view,
            "normalization": self.rig.normalization,
            "active_part": self.active_part,
            "selected_ribs": self.selected_ribs,
            "selected_branch": self.selected_branch,
            "simulating": self.sim.as_ref().is_some_and(|s| s.running),
            "parts": parts,
        }))
    }

    /// One column of a weight matrix, for highlighting a handle's support.
    pub fn weight_column(&self, part: usize, kind: WeightKind, index: usize) -> CmdResult<Value> {
        let p = self
            .rig
            .parts
            .get(part)
            .ok_or_else(|| CommandError::validation("part", format!("no part {part}")))?;
        let m = match kind {
            WeightKind::Rib => &p.weights.rib,
            WeightKind::Spine => &p.weights.spine,
        };
        if index >= m.cols {
            return Err(CommandError::validation("index", format!("column {index} out of range ({})", m.cols)));
        }
        let mut vertices = Vec::new();
        let mut weights = Vec::new();
        for i in 0..m.rows {
            let w = m.get(i, index);
            if w != 0.0 {
                vertices.push(i);
                weights.push(w);
            }
        }
        Ok(json!({
            "part": part,
            "kind": kind,
            "index": index,
            "count": vertices.len(),
            "vertices": encode_u32(vertices),
            "weights": encode_f32(weights),
        }))
    }

    /// Store the current pose at `time`. A running simulation ends first so
    /// the log records its frames before the capture.
    pub fn capture(&mut self, time: f64, looping: Option<bool>) -> CmdResult<Value> {
        self.check_open()?;
        if !time.is_finite() {
            return Err(CommandError::validation("time", "time must be finite"));
        }
        self.finish_sim();
        capture_keyframe(&self.rig, &mut self.track, time).map_err(|e| CommandError::validation("time", e.to_string()))?;
        if let Some(l) = looping {
            self.track.looping = l;
        }
        self.edit_log.push(LogEntry::CaptureKeyframe { time, looping });
        Ok(self.keyframes())
    }

    pub fn keyframes(&self) -> Value {
        json!({ "times": self.track.times(), "loop": self.track.looping })
    }

    /// Sampled geometry at `time`; with `apply` the rig takes that pose.
    pub fn sample(&mut self, time: f64, apply: bool) -> CmdResult<Value> {
        self.check_open()?;
        if self.track.is_empty() {
            return Err(CommandError::conflict("no keyframes captured"));
        }
        let kf: Keyframe = self.track.sample(time);
        let parts: Vec<Value> = if apply {
            self.finish_sim();
            apply_to_rig(&mut self.rig, &kf).map_err(|e| CommandError::failed(e.to_string()))?;
            self.edit_log.push(LogEntry::ApplyKeyframe { time });
            self.rig.parts.iter().map(|p| json!(PartGeometry::of(p))).collect()
        } else {
            let mut r = self.rig.clone();
            apply_to_rig(&mut r, &kf).map_err(|e| CommandError::failed(e.to_string()))?;
            r.parts.iter().map(|p| json!(PartGeometry::of(p))).collect()
        };
        Ok(json!({ "time": time, "applied": apply, "snapshot_id": pose_id(&self.rig), "parts": parts }))
    }

    /// Start a simulation from the current pose; any previous run ends.
    pub fn start_sim(&mut self, start: SimStart) -> CmdResult<u64> {
        self.check_open()?;
        let config: SimConfig = with_overrides(start.config.as_ref())
            .map_err(|e| CommandError::validation("config", format!("{e:#}")))?;
        self.finish_sim();
        let sim = Simulation::new(&self.rig, config.clone(), start.forces.clone())
            .map_err(|e| CommandError::validation("config", e.to_string()))?;
        self.generation += 1;
        self.records.clear();
        self.sim = Some(SimRun {
            sim,
            config,
            forces: start.forces,
            with_hash: start.vertex_hash,
            running: start.realtime.unwrap_or(true),
            frames: 0,
            generation: self.generation,
        });
        Ok(self.generation)
    }

    /// Advance the simulation; a failing step ends the run.
    pub fn step_sim(&mut self, frames: usize) -> CmdResult<Value> {
        self.check_open()?;
        let run = self.sim.as_mut().ok_or_else(|| CommandError::conflict("no simulation running"))?;
        let mut failure = None;
        for _ in 0..frames {
            if let Err(e) = run.sim.step_frame() {
                failure = Some(e);
                break;
            }
            run.sim.write_to_rig(&mut self.rig).expect("simulation built from this rig");
            run.frames += 1;
            self.records.push(run.sim.trace_record(run.with_hash));
        }
        let status = json!({ "frame": run.frames, "time": run.sim.time, "energy": run.sim.total_energy() });
        if let Some(e) = failure {
            self.finish_sim();
            return Err(CommandError::failed(format!("simulation stopped: {e}")));
        }
        Ok(status)
    }

    /// End the current run, logging the frames it wrote into the rig.
    pub fn finish_sim(&mut self) -> Option<usize> {
        let run = self.sim.take()?;
        if run.frames > 0 {
            self.edit_log.push(LogEntry::Simulate {
                config: run.config,
                forces: run.forces,
                frames: run.frames,
            });
        }
        Some(run.frames)
    }

    /// Whether a ticker with this generation should keep stepping.
    pub fn ticking(&self, generation: u64) -> bool {
        !self.closed && self.sim.as_ref().is_some_and(|s| s.running && s.generation == generation)
    }

    pub fn frame_dt(&self) -> Option<f64> {
        self.sim.as_ref().map(|s| s.config.dt)
    }

    /// Trace records from `since` on, as JSON lines.
    pub fn frames_since(&self, since: usize) -> String {
        let mut out = String::new();
        for r in self.records.iter().skip(since) {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    fn flush_log(&self, message: &str) -> CmdResult<Option<String>> {
        let Some(dir) = &self.log_dir else { return Ok(None) };
        let path = dir.join(format!("{}.json", self.id));
        let body = json!({
            "id": self.id,
            "source": self.source,
            "message": message,
            "edit_log": self.edit_log,
        });
        std::fs::create_dir_all(dir).map_err(|e| CommandError::failed(e.to_string()))?;
        atomic_write(&path, serde_json::to_string_pretty(&body).unwrap().as_bytes())
            .map_err(|e| CommandError::failed(e.to_string()))?;
        Ok(Some(path.display().to_string()))
    }
}
