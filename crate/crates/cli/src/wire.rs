//! Geometry payloads: base64 of little-endian f32 (coordinates, weights) or
//! u32 (indices) blocks inside JSON.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fishbone::math::Vec3;
use fishbone::rig::PartRig;
use serde::{Deserialize, Serialize};

pub fn encode_f32(xs: impl IntoIterator<Item = f64>) -> String {
    let mut bytes = Vec::new();
    for x in xs {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn encode_points(ps: &[Vec3]) -> String {
    encode_f32(ps.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn encode_u32(xs: impl IntoIterator<Item = usize>) -> String {
    let mut bytes = Vec::new();
    for x in xs {
        bytes.extend_from_slice(&(x as u32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(s: &str) -> Result<Vec<f32>, base64::DecodeError> {
    let bytes = STANDARD.decode(s)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn decode_u32(s: &str) -> Result<Vec<u32>, base64::DecodeError> {
    let bytes = STANDARD.decode(s)?;
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Current pose of one part. Coordinates are in the rig's normalized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartGeometry {
    pub part: usize,
    pub vertex_count: usize,
    pub positions: String,
    pub ribs: Vec<RibGeometry>,
    pub spine: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibGeometry {
    pub id: usize,
    pub closed: bool,
    pub points: String,
}

impl PartGeometry {
    pub fn of(part: &PartRig) -> Self {
        PartGeometry {
            part: part.part_id(),
            vertex_count: part.vertices.len(),
            positions: encode_points(&part.vertices),
            ribs: part
                .ribs
                .iter()
                .zip(&part.tree.nodes)
                .enumerate()
                .map(|(id, (pts, rib))| RibGeometry {
                    id,
                    closed: rib.closed,
                    points: encode_points(pts),
                })
                .collect(),
            spine: encode_points(&part.spine),
        }
    }
}

/// Vertices whose position changed, with their new coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDelta {
    pub part: usize,
    pub count: usize,
    pub indices: String,
    pub positions: String,
}

impl PositionDelta {
    pub fn between(part: usize, before: &[Vec3], after: &[Vec3]) -> Self {
        let changed: Vec<usize> = (0..after.len()).filter(|&i| before[i] != after[i]).collect();
        PositionDelta {
            part,
            count: changed.len(),
            indices: encode_u32(changed.iter().copied()),
            positions: encode_f32(changed.iter().flat_map(|&i| [after[i].x, after[i].y, after[i].z])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_blocks_round_trip() {
        let xs = [0.0, -1.5, 1e-3, 12345.678];
        let back = decode_f32(&encode_f32(xs)).unwrap();
        assert_eq!(back, xs.map(|x| x as f32));
        assert_eq!(decode_u32(&encode_u32([0, 7, 70000])).unwrap(), vec![0, 7, 70000]);
        // little-endian layout
        assert_eq!(STANDARD.decode(encode_f32([1.0])).unwrap(), 1.0f32.to_le_bytes());
    }
}
