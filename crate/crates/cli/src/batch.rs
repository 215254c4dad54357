//! File-to-file operations behind the CLI subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fishbone::animation::{apply_to_rig, capture_keyframe, load_track, save_track, Track};
use fishbone::deform::{compose_edits, Edit};
use fishbone::dynamics::{ForceSchedule, SimConfig, Simulation};
use fishbone::mesh::{load_mesh, write_obj, MeshFormat, RawMesh};
use fishbone::rig::{extract, ExtractConfig, ExtractReport, FishboneRig, StageTimings};
use fishbone::rig_store::{load_rig, rig_to_bytes, save_rig};
use fishbone::skinning::{atomic_write, WeightCache};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Deep-merge `overrides` onto the serialized default of `T`.
pub fn with_overrides<T: Default + Serialize + DeserializeOwned>(overrides: Option<&Value>) -> Result<T> {
    let mut base = serde_json::to_value(T::default())?;
    if let Some(o) = overrides {
        merge(&mut base, o);
    }
    Ok(serde_path_to_error::deserialize(base)?)
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_mesh(path: &Path) -> Result<RawMesh> {
    let format = MeshFormat::from_path(path)
        .with_context(|| format!("{}: unknown mesh extension (expected .obj or .json)", path.display()))?;
    Ok(load_mesh(path, format)?)
}

pub fn write_mesh(rig: &FishboneRig, path: &Path) -> Result<()> {
    let mesh = rig.export_mesh();
    atomic_write(path, write_obj(&mesh.vertices, &mesh.faces).as_bytes())?;
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What `extract` prints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub timings: StageTimings,
    pub cache_hits: Vec<bool>,
    pub parts: Vec<PartSummary>,
    pub rig_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartSummary {
    pub part: usize,
    pub vertices: usize,
    pub ribs: usize,
    pub rib_levels: usize,
    pub spine_keys: usize,
    pub branches: usize,
    pub thin_shell: bool,
}

pub fn part_summaries(rig: &FishboneRig) -> Vec<PartSummary> {
    rig.parts
        .iter()
        .map(|p| PartSummary {
            part: p.part_id(),
            vertices: p.vertices.len(),
            ribs: p.rib_count(),
            rib_levels: p.plan.k,
            spine_keys: p.spine.len(),
            branches: p.branch_count(),
            thin_shell: p.rest_mesh.is_thin_shell,
        })
        .collect()
}

/// Failure in one pipeline stage; the exit message names the stage.
#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: anyhow::Error,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|source| StageError { stage: name, source }.into())
}

pub fn run_extract(
    input: &Path,
    output: &Path,
    config: &ExtractConfig,
    cache: Option<&WeightCache>,
) -> Result<ExtractSummary> {
    let mesh = stage("mesh_io", read_mesh(input))?;
    let (rig, report): (FishboneRig, ExtractReport) =
        stage("extraction", extract(&mesh, config, cache).map_err(Into::into))?;
    let bytes = stage("rig_store", rig_to_bytes(&rig).map_err(Into::into))?;
    stage("rig_store", atomic_write(output, &bytes).map_err(Into::into))?;
    Ok(ExtractSummary {
        timings: report.timings,
        cache_hits: report.cache_hits,
        parts: part_summaries(&rig),
        rig_sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn run_deform(rig_path: &Path, edits: &[Edit], out_rig: Option<&Path>, out_mesh: Option<&Path>) -> Result<()> {
    let mut rig = load_rig(rig_path)?;
    compose_edits(&mut rig, edits).map_err(|(i, e)| anyhow::anyhow!("edit {i} ({}): {e}", edits[i].primitive.name()))?;
    if let Some(p) = out_rig {
        save_rig(&rig, p)?;
    }
    if let Some(p) = out_mesh {
        write_mesh(&rig, p)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub frames: usize,
    pub keys: usize,
    pub vertices: usize,
    pub reduction_ratio: f64,
    pub final_energy: f64,
    pub flagged_vertices: usize,
}

/// Step `frames` frames, writing one trace record per frame.
pub fn run_simulate(
    rig: &mut FishboneRig,
    config: SimConfig,
    forces: ForceSchedule,
    frames: usize,
    with_hash: bool,
    trace: &mut dyn Write,
) -> Result<SimSummary> {
    let mut sim = Simulation::new(rig, config, forces)?;
    for _ in 0..frames {
        sim.step_frame()?;
        serde_json::to_writer(&mut *trace, &sim.trace_record(with_hash))?;
        trace.write_all(b"\n")?;
    }
    sim.write_to_rig(rig)?;
    Ok(SimSummary {
        frames,
        keys: rig.key_count(),
        vertices: rig.vertex_count(),
        reduction_ratio: sim.reduction_ratio(),
        final_energy: sim.total_energy(),
        flagged_vertices: sim.flagged_vertices,
    })
}

pub fn simulate_files(
    rig_path: &Path,
    config: SimConfig,
    forces: ForceSchedule,
    frames: usize,
    with_hash: bool,
    trace_path: &Path,
    out_mesh: Option<&Path>,
) -> Result<SimSummary> {
    let mut rig = load_rig(rig_path)?;
    let file = File::create(trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    let mut trace = BufWriter::new(file);
    let summary = run_simulate(&mut rig, config, forces, frames, with_hash, &mut trace)?;
    trace.flush()?;
    if let Some(p) = out_mesh {
        write_mesh(&rig, p)?;
    }
    Ok(summary)
}

/// Add the rig's current pose to a track file, creating it if missing.
pub fn animate_capture(rig_path: &Path, track_path: &Path, time: f64, looping: Option<bool>) -> Result<Track> {
    let rig = load_rig(rig_path)?;
    let mut track = if track_path.exists() { load_track(track_path)? } else { Track::default() };
    capture_keyframe(&rig, &mut track, time)?;
    if let Some(l) = looping {
        track.looping = l;
    }
    save_track(&track, track_path)?;
    Ok(track)
}

/// Write `frames` meshes sampled uniformly over the track's time range.
pub fn animate_render(rig_path: &Path, track_path: &Path, frames: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if frames == 0 {
        bail!("frame count must be positive");
    }
    let mut rig = load_rig(rig_path)?;
    let track = load_track(track_path)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let t0 = track.keyframes()[0].time;
    let step = if frames > 1 { track.duration() / (frames - 1) as f64 } else { 0.0 };
    let mut written = Vec::with_capacity(frames);
    for f in 0..frames {
        apply_to_rig(&mut rig, &track.sample(t0 + step * f as f64))?;
        let path = out_dir.join(format!("frame_{f:04}.obj"));
        write_mesh(&rig, &path)?;
        written.push(path);
    }
    Ok(written)
}
