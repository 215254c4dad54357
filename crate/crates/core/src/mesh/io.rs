use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    MeshJson,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "json" => Some(MeshFormat::MeshJson),
            _ => None,
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<RawMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::MeshJson => parse_mesh_json(&text),
    }
}

fn obj_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        format: "obj",
        line,
        message: message.into(),
    }
}

fn parse_obj_index(token: &str, nverts: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let idx: i64 = head
        .parse()
        .map_err(|_| obj_error(line, format!("bad face index `{token}`")))?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        nverts as i64 + idx
    } else {
        return Err(obj_error(line, "face index 0 is invalid"));
    };
    if resolved < 0 || resolved as usize >= nverts {
        return Err(obj_error(line, format!("face index {idx} out of range")));
    }
    Ok(resolved as usize)
}

/// Parse Wavefront OBJ positions, faces and `o`/`g` groupings. Polygons are
/// fan-triangulated; normals and texture coordinates are ignored.
pub fn parse_obj(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut labels = Vec::new();
    let mut rejected = Vec::new();
    let mut saw_group = false;
    let mut pending_group = false;
    let mut current: Option<usize> = None;
    let mut next_label: usize = 0;

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| obj_error(lineno, "bad vertex coordinate"))?;
                if coords.len() != 3 {
                    return Err(obj_error(lineno, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<usize> = tokens
                    .map(|t| parse_obj_index(t, vertices.len(), lineno))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    rejected.push(lineno);
                    continue;
                }
                let label = match current {
                    Some(l) if !pending_group => l,
                    _ => {
                        next_label += 1;
                        pending_group = false;
                        next_label - 1
                    }
                };
                current = Some(label);
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    labels.push(label);
                }
            }
            "o" | "g" => {
                saw_group = true;
                pending_group = true;
            }
            _ => {}
        }
    }

    if !rejected.is_empty() {
        return Err(Error::RejectedFaces { lines: rejected });
    }
    if faces.is_empty() {
        return Err(obj_error(text.lines().count(), "no faces found"));
    }
    Ok(RawMesh {
        vertices,
        faces,
        part_labels: saw_group.then_some(labels),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parts: Option<Vec<usize>>,
}

/// Parse the fixture JSON format
/// `{"vertices": [[x,y,z],...], "faces": [[i,j,k],...], "parts": [faceStart,...]}`.
pub fn parse_mesh_json(text: &str) -> Result<RawMesh> {
    let doc: MeshJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        format: "mesh-json",
        line: e.line(),
        message: e.to_string(),
    })?;
    let nv = doc.vertices.len();
    if let Some(bad) = doc.faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
        return Err(Error::Parse {
            format: "mesh-json",
            line: 0,
            message: format!("face {bad:?} references a missing vertex"),
        });
    }
    let part_labels = match doc.parts {
        Some(starts) => {
            let mut labels = vec![0usize; doc.faces.len()];
            for (p, &start) in starts.iter().enumerate() {
                let end = starts.get(p + 1).copied().unwrap_or(doc.faces.len());
                if start > end || end > doc.faces.len() {
                    return Err(Error::Parse {
                        format: "mesh-json",
                        line: 0,
                        message: "part face ranges must be increasing".into(),
                    });
                }
                labels[start..end].iter_mut().for_each(|l| *l = p);
            }
            Some(labels)
        }
        None => None,
    };
    if doc.faces.is_empty() {
        return Err(Error::Parse {
            format: "mesh-json",
            line: 0,
            message: "no faces found".into(),
        });
    }
    Ok(RawMesh {
        vertices: doc.vertices.into_iter().map(Vec3::from).collect(),
        faces: doc.faces,
        part_labels,
    })
}

pub fn write_obj(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(vertices.len() * 40 + faces.len() * 24);
    for v in vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_mesh_json(mesh: &RawMesh) -> String {
    let parts = mesh.part_labels.as_ref().map(|labels| {
        let mut starts = Vec::new();
        for i in 0..labels.len() {
            if i == 0 || labels[i - 1] != labels[i] {
                starts.push(i);
            }
        }
        starts
    });
    let doc = MeshJson {
        vertices: mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
        faces: mesh.faces.clone(),
        parts,
    };
    serde_json::to_string(&doc).expect("mesh json serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert!(m.part_labels.is_none());
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        // both triangles share the 0-2 diagonal
        assert!(m.faces.iter().all(|f| f.contains(&0) && f.contains(&2)));
    }

    #[test]
    fn object_groups_become_labels() {
        let text = "o a\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\no b\nv 5 0 0\nv 6 0 0\nv 5 1 0\nf -3 -2 -1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.part_labels, Some(vec![0, 1]));
        assert_eq!(m.faces[1], [3, 4, 5]);
    }

    #[test]
    fn bad_index_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 9\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn two_vertex_face_is_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::RejectedFaces { ref lines } if lines == &vec![4]));
    }

    #[test]
    fn empty_obj_is_a_parse_error() {
        assert!(matches!(parse_obj(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn mesh_json_parts() {
        let text = r#"{"vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]], "faces": [[0,1,2],[0,1,3],[0,2,3]], "parts": [0, 2]}"#;
        let m = parse_mesh_json(text).unwrap();
        assert_eq!(m.part_labels, Some(vec![0, 0, 1]));
        let back = parse_mesh_json(&write_mesh_json(&m)).unwrap();
        assert_eq!(back, m);
    }
}
