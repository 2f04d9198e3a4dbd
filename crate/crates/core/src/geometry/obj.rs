//! Wavefront OBJ subset: `v x y z [r g b]` and triangular `f` lines.

use std::fmt::Write as _;
use std::path::Path;

use super::{GeometryError, Mesh};

/// Result of reading a mesh file.
#[derive(Clone, Debug)]
pub struct LoadedMesh {
    pub mesh: Mesh,
    /// Zero-area triangles dropped during cleanup.
    pub degenerate_dropped: usize,
}

pub fn load_mesh(path: &Path) -> Result<LoadedMesh, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let loaded = parse_obj(&text)?;
    if loaded.degenerate_dropped > 0 {
        log::warn!(
            "{}: dropped {} degenerate triangle(s)",
            path.display(),
            loaded.degenerate_dropped
        );
    }
    Ok(loaded)
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_obj(text: &str) -> Result<LoadedMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => {
                let nums: Vec<f64> = parts
                    .map(|s| s.parse::<f64>().map_err(|_| parse_err(line_no, format!("bad number {s:?}"))))
                    .collect::<Result<_, _>>()?;
                match nums.len() {
                    3 => vertices.push([nums[0], nums[1], nums[2]]),
                    6 => {
                        vertices.push([nums[0], nums[1], nums[2]]);
                        colors.push((vertices.len() - 1, [nums[3], nums[4], nums[5]]));
                    }
                    n => return Err(parse_err(line_no, format!("vertex needs 3 or 6 values, got {n}"))),
                }
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|tok| face_index(tok, vertices.len()).ok_or_else(|| parse_err(line_no, format!("bad face index {tok:?}"))))
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!("only triangular faces are supported, got {} indices", idx.len()),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            // normals, texture coordinates, groups, materials: not used
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(GeometryError::NoTriangles);
    }
    let colors = match colors.len() {
        0 => None,
        n if n == vertices.len() => Some(colors.into_iter().map(|(_, c)| c).collect()),
        n => {
            return Err(GeometryError::Invalid(format!(
                "{n} of {} vertices carry colors; expected all or none",
                vertices.len()
            )))
        }
    };
    let mut mesh = Mesh {
        vertices,
        colors,
        triangles,
        vertex_normals: None,
    };
    mesh.validate()?;
    let degenerate_dropped = mesh.remove_degenerate();
    if mesh.triangles.is_empty() {
        return Err(GeometryError::NoTriangles);
    }
    Ok(LoadedMesh {
        mesh,
        degenerate_dropped,
    })
}

/// 1-based or negative (relative) OBJ index, ignoring `/vt/vn` suffixes.
fn face_index(tok: &str, count: usize) -> Option<usize> {
    let first = tok.split('/').next()?;
    let i: i64 = first.parse().ok()?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return None;
    };
    (0..count as i64).contains(&resolved).then_some(resolved as usize)
}

pub fn obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 48 + mesh.triangles.len() * 24);
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                writeln!(out, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2])
            }
            None => writeln!(out, "v {} {} {}", v[0], v[1], v[2]),
        }
        .expect("writing to a String");
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("writing to a String");
    }
    out
}

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<(), GeometryError> {
    std::fs::write(path, obj_string(mesh)).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
