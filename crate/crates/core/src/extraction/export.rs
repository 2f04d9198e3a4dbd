//! Colored-mesh files: OBJ with per-vertex colors, binary little-endian PLY.

use std::path::Path;

use crate::geometry::{obj_string, Mesh};

use super::ExtractError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, ExtractError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(ExtractError::Format(format!(
                "{}: expected a .obj or .ply extension",
                path.display()
            ))),
        }
    }
}

/// `round(255·c)` with halves going up, clamped to a byte.
pub fn color_byte(c: f64) -> u8 {
    (255.0 * c + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn ply_bytes(mesh: &Mesh) -> Vec<u8> {
    let normals = mesh
        .vertex_normals
        .clone()
        .unwrap_or_else(|| mesh.compute_vertex_normals());
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n",
        mesh.vertices.len()
    );
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    ));
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for x in v.iter().chain(&normals[i]) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        if let Some(c) = &mesh.colors {
            out.extend(c[i].map(color_byte));
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn export_mesh(mesh: &Mesh, path: &Path, format: MeshFormat) -> Result<(), ExtractError> {
    let bytes = match format {
        MeshFormat::Obj => obj_string(mesh).into_bytes(),
        MeshFormat::Ply => ply_bytes(mesh),
    };
    std::fs::write(path, bytes).map_err(|e| ExtractError::io(path, e))
}

fn ply_err(msg: impl Into<String>) -> ExtractError {
    ExtractError::Format(format!("ply: {}", msg.into()))
}

#[derive(Clone, Copy)]
enum Scalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self, ExtractError> {
        Ok(match name {
            "uchar" | "uint8" => Self::U8,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(ply_err(format!("unsupported type {other}"))),
        })
    }

    fn read(self, data: &[u8], at: &mut usize) -> Result<f64, ExtractError> {
        let size = match self {
            Self::U8 => 1,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        };
        let b = data.get(*at..*at + size).ok_or_else(|| ply_err("truncated body"))?;
        *at += size;
        Ok(match self {
            Self::U8 => b[0] as f64,
            Self::I32 => i32::from_le_bytes(b.try_into().expect("4")) as f64,
            Self::U32 => u32::from_le_bytes(b.try_into().expect("4")) as f64,
            Self::F32 => f32::from_le_bytes(b.try_into().expect("4")) as f64,
            Self::F64 => f64::from_le_bytes(b.try_into().expect("8")),
        })
    }
}

/// Reads binary little-endian PLY with triangle faces and optional normals
/// and uchar colors.
pub fn parse_ply(data: &[u8]) -> Result<Mesh, ExtractError> {
    const END: &[u8] = b"end_header\n";
    let end = data
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| ply_err("missing end_header"))?;
    let header = std::str::from_utf8(&data[..end]).map_err(|_| ply_err("header is not text"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(ply_err("missing magic"));
    }
    let (mut n_vertex, mut n_face) = (0, 0);
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut face_types = None;
    let mut element = "";
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(ply_err(format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                element = "vertex";
                n_vertex = n.parse().map_err(|_| ply_err("bad vertex count"))?;
            }
            ["element", "face", n] => {
                element = "face";
                n_face = n.parse().map_err(|_| ply_err("bad face count"))?;
            }
            ["property", "list", count, index, _] if element == "face" => {
                face_types = Some((Scalar::parse(count)?, Scalar::parse(index)?));
            }
            ["property", ty, name] if element == "vertex" => props.push((name.to_string(), Scalar::parse(ty)?)),
            ["comment", ..] | [] => {}
            _ => return Err(ply_err(format!("unsupported header line {line:?}"))),
        }
    }
    let (count_ty, index_ty) = face_types.ok_or_else(|| ply_err("no face list"))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let slot = |names: [&str; 3]| -> Option<[usize; 3]> {
        Some([find(names[0])?, find(names[1])?, find(names[2])?])
    };
    let pos = slot(["x", "y", "z"]).ok_or_else(|| ply_err("missing positions"))?;
    let nrm = slot(["nx", "ny", "nz"]);
    let col = slot(["red", "green", "blue"]);

    let mut at = end + END.len();
    let mut vertices = Vec::with_capacity(n_vertex);
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    for _ in 0..n_vertex {
        let row: Vec<f64> = props
            .iter()
            .map(|(_, t)| t.read(data, &mut at))
            .collect::<Result<_, _>>()?;
        vertices.push(pos.map(|i| row[i]));
        if let Some(s) = nrm {
            normals.push(s.map(|i| row[i]));
        }
        if let Some(s) = col {
            colors.push(s.map(|i| row[i] / 255.0));
        }
    }
    let mut triangles = Vec::with_capacity(n_face);
    for f in 0..n_face {
        if count_ty.read(data, &mut at)? != 3.0 {
            return Err(ply_err(format!("face {f} is not a triangle")));
        }
        let mut t = [0; 3];
        for v in &mut t {
            let i = index_ty.read(data, &mut at)?;
            if !(0.0..n_vertex as f64).contains(&i) {
                return Err(ply_err(format!("face {f} index {i} out of range")));
            }
            *v = i as usize;
        }
        triangles.push(t);
    }
    let mut mesh = Mesh::new(vertices, triangles);
    mesh.vertex_normals = nrm.map(|_| normals);
    mesh.colors = col.map(|_| colors);
    Ok(mesh)
}

pub fn load_ply(path: &Path) -> Result<Mesh, ExtractError> {
    let data = std::fs::read(path).map_err(|e| ExtractError::io(path, e))?;
    parse_ply(&data)
}
