//! Keyframe capture and linear replay of rig states.
//!
//! A keyframe holds the full posed state of every part, flattened in part
//! order: mesh vertices, rib polylines and spine keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rig::FishboneRig;
use crate::skinning::atomic_write;

pub const TRACK_MAGIC: &[u8; 4] = b"FBT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub index: usize,
    pub time: f64,
    pub mesh_vertices: Vec<Vec3>,
    pub rib_points: Vec<Vec<Vec3>>,
    pub spine_points: Vec<Vec3>,
}

/// Sizes every keyframe of a track must share.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub vertex_count: usize,
    pub key_count: usize,
    pub rib_lengths: Vec<usize>,
}

impl Keyframe {
    pub fn from_rig(rig: &FishboneRig, time: f64) -> Self {
        let mut kf = Keyframe {
            index: 0,
            time,
            mesh_vertices: Vec::with_capacity(rig.vertex_count()),
            rib_points: Vec::new(),
            spine_points: Vec::with_capacity(rig.key_count()),
        };
        for p in &rig.parts {
            kf.mesh_vertices.extend_from_slice(&p.vertices);
            kf.rib_points.extend(p.ribs.iter().cloned());
            kf.spine_points.extend_from_slice(&p.spine);
        }
        kf
    }

    pub fn topology(&self) -> Topology {
        Topology {
            vertex_count: self.mesh_vertices.len(),
            key_count: self.spine_points.len(),
            rib_lengths: self.rib_points.iter().map(Vec::len).collect(),
        }
    }
}

pub fn rig_topology(rig: &FishboneRig) -> Topology {
    Topology {
        vertex_count: rig.vertex_count(),
        key_count: rig.key_count(),
        rib_lengths: rig.parts.iter().flat_map(|p| p.ribs.iter().map(Vec::len)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    keyframes: Vec<Keyframe>,
    pub looping: bool,
}

impl Track {
    /// Build a track, sorting by time. Duplicate times and mismatched
    /// topologies are errors.
    pub fn new(mut keyframes: Vec<Keyframe>, looping: bool) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(Error::Track("a track needs at least one keyframe".into()));
        }
        keyframes.sort_by(|a, b| a.time.total_cmp(&b.time));
        let topo = keyframes[0].topology();
        for (i, k) in keyframes.iter().enumerate() {
            if !k.time.is_finite() {
                return Err(Error::Track(format!("keyframe time {} is not finite", k.time)));
            }
            if i > 0 && k.time <= keyframes[i - 1].time {
                return Err(Error::Track(format!("duplicate keyframe time {}", k.time)));
            }
            if k.topology() != topo {
                return Err(Error::Track(format!("keyframe at t={} has a different topology", k.time)));
            }
        }
        let mut track = Track { keyframes, looping };
        track.reindex();
        Ok(track)
    }

    fn reindex(&mut self) {
        for (i, k) in self.keyframes.iter_mut().enumerate() {
            k.index = i;
        }
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn topology(&self) -> Option<Topology> {
        self.keyframes.first().map(Keyframe::topology)
    }

    pub fn times(&self) -> Vec<f64> {
        self.keyframes.iter().map(|k| k.time).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.keyframes.first(), self.keyframes.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Insert in time order; a keyframe at an existing time replaces it.
    pub fn insert(&mut self, kf: Keyframe) -> Result<()> {
        if !kf.time.is_finite() {
            return Err(Error::Track(format!("keyframe time {} is not finite", kf.time)));
        }
        if let Some(topo) = self.topology() {
            if kf.topology() != topo {
                return Err(Error::Track(
                    "rig topology does not match the track (vertex, rib or key counts differ)".into(),
                ));
            }
        }
        match self.keyframes.binary_search_by(|k| k.time.total_cmp(&kf.time)) {
            Ok(i) => self.keyframes[i] = kf,
            Err(i) => self.keyframes.insert(i, kf),
        }
        self.reindex();
        Ok(())
    }

    /// Interpolated state at `t`. Outside the time range the end frames are
    /// held, or with `looping` the time wraps with period t_last - t_first.
    pub fn sample(&self, t: f64) -> Keyframe {
        let frames = &self.keyframes;
        assert!(!frames.is_empty(), "sampling an empty track");
        let (first, last) = (frames[0].time, frames[frames.len() - 1].time);
        let t = if self.looping && last > first && (t < first || t > last) {
            first + (t - first).rem_euclid(last - first)
        } else {
            t
        };
        if t <= first {
            return at_time(&frames[0], t);
        }
        if t >= last {
            return at_time(&frames[frames.len() - 1], t);
        }
        // first index with time > t; t is strictly inside so 1 <= hi < len
        let hi = frames.partition_point(|k| k.time <= t);
        let (a, b) = (&frames[hi - 1], &frames[hi]);
        if t == a.time {
            return at_time(a, t);
        }
        let tau = (t - a.time) / (b.time - a.time);
        // a + τ(b − a) rather than (1 − τ)a + τb: equal keyframes give an
        // exactly constant segment
        let lerp = |p: &Vec3, q: &Vec3| p + (q - p) * tau;
        let lerp_all = |p: &[Vec3], q: &[Vec3]| p.iter().zip(q).map(|(p, q)| lerp(p, q)).collect();
        Keyframe {
            index: a.index,
            time: t,
            mesh_vertices: lerp_all(&a.mesh_vertices, &b.mesh_vertices),
            rib_points: a.rib_points.iter().zip(&b.rib_points).map(|(p, q)| lerp_all(p, q)).collect(),
            spine_points: lerp_all(&a.spine_points, &b.spine_points),
        }
    }
}

fn at_time(kf: &Keyframe, t: f64) -> Keyframe {
    Keyframe { time: t, ..kf.clone() }
}

/// Store the rig's current pose at time `t`.
pub fn capture_keyframe(rig: &FishboneRig, track: &mut Track, t: f64) -> Result<()> {
    track.insert(Keyframe::from_rig(rig, t))
}

/// Write a sampled state back into the rig's current pose.
pub fn apply_to_rig(rig: &mut FishboneRig, kf: &Keyframe) -> Result<()> {
    if kf.topology() != rig_topology(rig) {
        return Err(Error::Track("keyframe topology does not match the rig".into()));
    }
    let (mut v, mut r, mut s) = (0, 0, 0);
    for p in &mut rig.parts {
        let n = p.vertices.len();
        p.vertices.copy_from_slice(&kf.mesh_vertices[v..v + n]);
        v += n;
        for rib in &mut p.ribs {
            rib.copy_from_slice(&kf.rib_points[r]);
            r += 1;
        }
        let k = p.spine.len();
        p.spine.copy_from_slice(&kf.spine_points[s..s + k]);
        s += k;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackManifest {
    frame_count: usize,
    vertex_count: usize,
    key_count: usize,
    rib_lengths: Vec<usize>,
    times: Vec<f64>,
    #[serde(rename = "loop")]
    looping: bool,
}

/// `"FBT1" | u64 manifest_len | manifest JSON | per frame: N×3, rib points, K×3 f64`
pub fn track_to_bytes(track: &Track) -> Result<Vec<u8>> {
    let topo = track.topology().ok_or_else(|| Error::Track("empty track".into()))?;
    let manifest = TrackManifest {
        frame_count: track.len(),
        vertex_count: topo.vertex_count,
        key_count: topo.key_count,
        rib_lengths: topo.rib_lengths,
        times: track.times(),
        looping: track.looping,
    };
    let mut w = Writer::new();
    w.bytes(TRACK_MAGIC);
    w.blob(&serde_json::to_vec(&manifest)?);
    let put = |w: &mut Writer, ps: &[Vec3]| ps.iter().for_each(|p| w.vec3(p));
    for k in track.keyframes() {
        put(&mut w, &k.mesh_vertices);
        for rib in &k.rib_points {
            put(&mut w, rib);
        }
        put(&mut w, &k.spine_points);
    }
    Ok(w.into_bytes())
}

pub fn track_from_bytes(bytes: &[u8]) -> Result<Track> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != TRACK_MAGIC {
        return Err(Error::Track("not a track file".into()));
    }
    let m: TrackManifest = serde_json::from_slice(r.blob()?)?;
    if m.times.len() != m.frame_count {
        return Err(Error::Track("manifest times do not match the frame count".into()));
    }
    let points = m.vertex_count + m.key_count + m.rib_lengths.iter().sum::<usize>();
    if points.saturating_mul(24).saturating_mul(m.frame_count) != r.remaining() {
        return Err(Error::Track(format!(
            "body holds {} bytes, manifest describes {} frames of {points} points",
            r.remaining(),
            m.frame_count
        )));
    }
    let get = |r: &mut Reader, n: usize| (0..n).map(|_| r.vec3()).collect::<Result<Vec<_>>>();
    let mut frames = Vec::with_capacity(m.frame_count);
    for (index, &time) in m.times.iter().enumerate() {
        let mesh_vertices = get(&mut r, m.vertex_count)?;
        let rib_points = m.rib_lengths.iter().map(|&n| get(&mut r, n)).collect::<Result<_>>()?;
        let spine_points = get(&mut r, m.key_count)?;
        frames.push(Keyframe {
            index,
            time,
            mesh_vertices,
            rib_points,
            spine_points,
        });
    }
    r.finish()?;
    Track::new(frames, m.looping)
}

pub fn save_track(track: &Track, path: &Path) -> Result<()> {
    atomic_write(path, &track_to_bytes(track)?)
}

pub fn load_track(path: &Path) -> Result<Track> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    track_from_bytes(&bytes)
}
