//! Wavefront OBJ meshes with part labels and JSON landmark files.
//!
//! The part label of a face is the most recent `g` or `usemtl` name
//! before it, matched case-insensitively against the five part names.
//! Polygons are fan-triangulated; texture and normal indices are ignored.

use std::path::Path;

use thiserror::Error;

use satpose::geometry::{LabeledMesh, LandmarkSet, PartLabel, Vec3};

use crate::error::CliError;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown part label {0:?}")]
    UnknownPartLabel(String),
    #[error("line {0}: face has no part label")]
    MissingPartLabel(usize),
    #[error("mesh has no triangles")]
    NoTriangles,
}

fn parse_index(token: &str, n_vertices: usize, line: usize) -> Result<usize, MeshError> {
    let bad = |m: String| MeshError::Parse { line, message: m };
    let first = token.split('/').next().unwrap_or("");
    let i: i64 = first
        .parse()
        .map_err(|_| bad(format!("bad vertex index {token:?}")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        n_vertices as i64 + i
    } else {
        return Err(bad("vertex index 0".into()));
    };
    if idx < 0 || idx as usize >= n_vertices {
        return Err(bad(format!("vertex index {i} out of range")));
    }
    Ok(idx as usize)
}

/// Parses OBJ text into a labeled mesh and the number of degenerate
/// triangles dropped.
pub fn parse_obj(text: &str) -> Result<(LabeledMesh, usize), MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    let mut current: Option<PartLabel> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| MeshError::Parse {
                        line,
                        message: "bad vertex coordinate".into(),
                    })?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(MeshError::Parse {
                        line,
                        message: "vertex needs 3 finite coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "g" | "usemtl" => {
                let name = tokens.collect::<Vec<_>>().join(" ");
                current = Some(PartLabel::parse(&name).ok_or(MeshError::UnknownPartLabel(name))?);
            }
            "f" => {
                let idx = tokens
                    .map(|t| parse_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: "face needs at least 3 vertices".into(),
                    });
                }
                let label = current.ok_or(MeshError::MissingPartLabel(line))?;
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                    labels.push(label);
                }
            }
            _ => {}
        }
    }
    let (mesh, dropped) =
        LabeledMesh::new(vertices, triangles, labels).map_err(|e| MeshError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
    if mesh.triangle_count() == 0 {
        return Err(MeshError::NoTriangles);
    }
    Ok((mesh, dropped))
}

pub fn load_mesh(path: &Path) -> Result<(LabeledMesh, usize), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_obj(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// A JSON array of `[x, y, z]` body-frame points in meters.
pub fn load_landmarks(path: &Path) -> Result<LandmarkSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let pts: Vec<[f64; 3]> = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    LandmarkSet::new(pts.into_iter().map(Vec3::from).collect())
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1
g body
f 1 2 3 4
f 5 8 7 6
f 1 5 6 2
f 2 6 7 3
f 3 7 8 4
f 5 1 4 8
";

    #[test]
    fn cube_quads_become_twelve_body_triangles() {
        let (mesh, dropped) = parse_obj(CUBE).unwrap();
        assert_eq!((mesh.triangle_count(), dropped), (12, 0));
        assert!(mesh.labels().iter().all(|l| *l == PartLabel::Body));
    }

    #[test]
    fn labels_fold_case() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\ng Solar_Panel\nf 1 2 3\n";
        let (mesh, _) = parse_obj(text).unwrap();
        assert_eq!(mesh.labels(), &[PartLabel::SolarPanel]);
    }

    #[test]
    fn unknown_label_is_named() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\ng dish\nf 1 2 3\n";
        assert_eq!(
            parse_obj(text).unwrap_err(),
            MeshError::UnknownPartLabel("dish".into())
        );
    }

    #[test]
    fn slash_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nusemtl antenna2\nf 1/1/1 2//1 -1\n";
        let (mesh, _) = parse_obj(text).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
        assert_eq!(mesh.labels(), &[PartLabel::Antenna2]);
    }

    #[test]
    fn degenerate_faces_are_dropped_and_counted() {
        let text = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\ng body\nf 1 2 3\nf 1 2 4\n";
        let (mesh, dropped) = parse_obj(text).unwrap();
        assert_eq!((mesh.triangle_count(), dropped), (1, 1));
    }

    #[test]
    fn failures() {
        assert_eq!(parse_obj("v 0 0 0\n").unwrap_err(), MeshError::NoTriangles);
        assert_eq!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap_err(),
            MeshError::MissingPartLabel(4)
        );
        assert!(matches!(
            parse_obj("v 0 0\n"),
            Err(MeshError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_obj("v 0 0 0\ng body\nf 1 2 9\n"),
            Err(MeshError::Parse { line: 3, .. })
        ));
    }
}
