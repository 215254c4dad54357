//! Seeded batch generation of deformed variants.
//!
//! A sampler spec lists edits whose parameters are either literal JSON
//! values or `{"range": [lo, hi]}` objects, sampled uniformly per variant:
//!
//! ```json
//! {"edits": [
//!   {"primitive": "uniform_scale", "ribs": [1, 2], "params": {"s": {"range": [0.8, 1.2]}}},
//!   {"primitive": "bend", "branch": 0,
//!    "params": {"axis": "binormal", "angle": {"range": [-0.6, 0.6]}, "anchor": 0.5}}
//! ]}
//! ```
//!
//! Omitting `ribs` targets every rib of the part.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fishbone::deform::{apply_edit, Edit, Primitive};
use fishbone::mesh::write_obj;
use fishbone::rig::FishboneRig;
use fishbone::skinning::atomic_write;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("{path}: invalid range [{lo}, {hi}] (need finite lo <= hi)")]
    Range { path: String, lo: f64, hi: f64 },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub edits: Vec<EditSampler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSampler {
    pub primitive: String,
    #[serde(default)]
    pub part: usize,
    #[serde(default)]
    pub ribs: Option<Vec<usize>>,
    #[serde(default)]
    pub branch: usize,
    #[serde(default)]
    pub params: Map<String, Value>,
}

fn as_range(v: &Value) -> Option<&Value> {
    match v {
        Value::Object(m) if m.len() == 1 => m.get("range"),
        _ => None,
    }
}

/// Replace every range by a draw (or, with `rng = None`, by its lower end).
fn instantiate(v: &Value, path: &str, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Value, SpecError> {
    if let Some(r) = as_range(v) {
        let pair = r.as_array().filter(|a| a.len() == 2);
        let (lo, hi) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
            Some((Some(lo), Some(hi))) => (lo, hi),
            _ => {
                return Err(SpecError::Invalid {
                    path: format!("{path}/range"),
                    message: "expected [lo, hi]".into(),
                })
            }
        };
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SpecError::Range { path: path.into(), lo, hi });
        }
        let x = match rng {
            Some(rng) => lo + (hi - lo) * rng.random::<f64>(),
            None => lo,
        };
        return Ok(Value::from(x));
    }
    Ok(match v {
        Value::Array(a) => Value::Array(
            a.iter()
                .enumerate()
                .map(|(i, x)| instantiate(x, &format!("{path}/{i}"), rng))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| Ok((k.clone(), instantiate(x, &format!("{path}/{k}"), rng)?)))
                .collect::<Result<_, SpecError>>()?,
        ),
        other => other.clone(),
    })
}

fn build_edit(s: &EditSampler, i: usize, rig: &FishboneRig, rng: Option<&mut ChaCha8Rng>) -> Result<Edit, SpecError> {
    let base = format!("/edits/{i}");
    let mut rng = rng;
    let mut params = Map::new();
    for (k, v) in &s.params {
        params.insert(k.clone(), instantiate(v, &format!("{base}/params/{k}"), &mut rng)?);
    }
    params.insert("primitive".into(), Value::from(s.primitive.clone()));
    let primitive: Primitive = serde_json::from_value(Value::Object(params)).map_err(|e| SpecError::Invalid {
        path: format!("{base}/params"),
        message: e.to_string(),
    })?;
    let part = rig.parts.get(s.part).ok_or_else(|| SpecError::Invalid {
        path: format!("{base}/part"),
        message: format!("no part {}", s.part),
    })?;
    let ribs = s.ribs.clone().unwrap_or_else(|| (0..part.rib_count()).collect());
    Ok(Edit {
        part: s.part,
        ribs,
        branch: s.branch,
        primitive,
    })
}

impl SamplerSpec {
    /// Check ranges, primitive names and targets without drawing.
    pub fn validate(&self, rig: &FishboneRig) -> Result<(), SpecError> {
        for (i, s) in self.edits.iter().enumerate() {
            build_edit(s, i, rig, None)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub index: usize,
    pub file: String,
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub seed: u64,
    pub count: usize,
    pub spec: SamplerSpec,
    pub variants: Vec<Variant>,
}

/// Sample `count` variants; returns them with their posed rigs in order.
pub fn sample_variants(
    rig: &FishboneRig,
    spec: &SamplerSpec,
    count: usize,
    seed: u64,
    mut sink: impl FnMut(&Variant, &FishboneRig) -> Result<()>,
) -> Result<AugmentManifest> {
    spec.validate(rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut variants = Vec::with_capacity(count);
    for index in 0..count {
        let edits = spec
            .edits
            .iter()
            .enumerate()
            .map(|(i, s)| build_edit(s, i, rig, Some(&mut rng)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut posed = rig.clone();
        for (i, e) in edits.iter().enumerate() {
            apply_edit(&mut posed, e).with_context(|| format!("variant {index}, edit {i}"))?;
        }
        let v = Variant {
            index,
            file: format!("variant_{index:04}.obj"),
            edits,
        };
        sink(&v, &posed)?;
        variants.push(v);
    }
    Ok(AugmentManifest {
        seed,
        count,
        spec: spec.clone(),
        variants,
    })
}

/// Write `variant_NNNN.obj` files and `manifest.json` into `out_dir`.
pub fn run_augment(rig: &FishboneRig, spec: &SamplerSpec, count: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    let manifest = sample_variants(rig, spec, count, seed, |v, posed| {
        let mesh = posed.export_mesh();
        let path = out_dir.join(&v.file);
        atomic_write(&path, write_obj(&mesh.vertices, &mesh.faces).as_bytes())?;
        written.push(path);
        Ok(())
    })?;
    let path = out_dir.join("manifest.json");
    atomic_write(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    written.push(path);
    Ok(written)
}
