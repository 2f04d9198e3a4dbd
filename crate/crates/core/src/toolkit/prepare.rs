//! Per-instance sample caches: training and held-out samples, keypoints and
//! the normalizing transform, in one checksummed binary file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::vec3::Vec3;
use crate::geometry::{
    load_keypoints, load_mesh, mix_seed, obj_string, sample_sdf_points, sample_surface_colors,
    BvhIndex, Keypoints, Mesh, SdfSamples, SimilarityTransform, SurfaceSamples,
};
use crate::synth::{Manifest, ManifestEntry};
use crate::training::{SampleConfig, TrainingInstance};

use super::metrics::EvalInstance;
use super::ToolkitError;

pub const SAMPLE_MAGIC: &[u8; 8] = b"GTEXSMPL";
pub const SAMPLE_VERSION: u32 = 1;
pub const SAMPLE_EXTENSION: &str = "samples";

/// Everything sampled from one normalized mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub instance_id: String,
    pub seed: u64,
    pub yaw: f64,
    pub transform: SimilarityTransform,
    pub keypoints: Keypoints,
    pub sdf: SdfSamples,
    pub surface: SurfaceSamples,
    pub held_out_sdf: SdfSamples,
    pub held_out_surface: SurfaceSamples,
}

/// 64-bit FNV-1a, used to give each instance id its own sample stream.
fn id_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn instance_seed(seed: u64, id: &str) -> u64 {
    mix_seed(seed, id_hash(id))
}

impl PreparedInstance {
    /// Normalizes `mesh` and draws all sample sets. Returns the normalized
    /// mesh too.
    pub fn sample(
        id: &str,
        mesh: &Mesh,
        keypoints: &Keypoints,
        yaw: f64,
        counts: &SampleConfig,
        seed: u64,
    ) -> Result<(Self, Mesh), ToolkitError> {
        let seed = instance_seed(seed, id);
        let (train, normalized, transform) =
            TrainingInstance::from_mesh(id, mesh, keypoints, yaw, counts.sdf, counts.surface, seed)?;
        let index = BvhIndex::build(&normalized);
        let held_out_sdf = sample_sdf_points(&normalized, &index, counts.held_out_sdf, mix_seed(seed, 3))?;
        let held_out_surface = sample_surface_colors(&normalized, counts.held_out_surface, mix_seed(seed, 4))?;
        let prepared = Self {
            instance_id: id.to_string(),
            seed,
            yaw,
            transform,
            keypoints: train.keypoints,
            sdf: train.sdf,
            surface: train.surface,
            held_out_sdf,
            held_out_surface,
        };
        Ok((prepared, normalized))
    }

    pub fn training(&self) -> TrainingInstance {
        TrainingInstance {
            instance_id: self.instance_id.clone(),
            sdf: self.sdf.clone(),
            surface: self.surface.clone(),
            keypoints: self.keypoints.clone(),
            yaw: self.yaw,
        }
    }

    pub fn evaluation(&self, normalized_mesh: Mesh) -> EvalInstance {
        EvalInstance {
            instance_id: self.instance_id.clone(),
            mesh: normalized_mesh,
            sdf: self.held_out_sdf.clone(),
            surface: self.held_out_surface.clone(),
            keypoints: self.keypoints.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SAMPLE_MAGIC);
        out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for n in [
            self.sdf.len(),
            self.surface.len(),
            self.held_out_sdf.len(),
            self.held_out_surface.len(),
            self.keypoints.len(),
        ] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        let text = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        text(&mut out, &self.instance_id);
        text(&mut out, &serde_json::to_string(&self.keypoints.names).expect("names serialize"));
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        put(self.yaw);
        self.transform.center.iter().for_each(|&c| put(c));
        put(self.transform.scale);
        self.keypoints.positions.iter().flatten().for_each(|&c| put(c));
        for s in [&self.sdf, &self.held_out_sdf] {
            s.points.iter().flatten().for_each(|&c| put(c));
            s.sdf.iter().for_each(|&c| put(c));
        }
        for s in [&self.surface, &self.held_out_surface] {
            for part in [&s.points, &s.colors, &s.normals] {
                part.iter().flatten().for_each(|&c| put(c));
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ToolkitError> {
        if bytes.len() < 8 + 4 + 8 + 5 * 8 + 4 {
            return Err(ToolkitError::Truncated);
        }
        if &bytes[..8] != SAMPLE_MAGIC {
            return Err(ToolkitError::Cache("not a sample cache".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(ToolkitError::Checksum);
        }
        let mut r = Reader { body, at: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != SAMPLE_VERSION {
            return Err(ToolkitError::Version {
                found: version,
                expected: SAMPLE_VERSION,
            });
        }
        let seed = r.u64()?;
        let [n_sdf, n_surf, n_hsdf, n_hsurf, n_kp] = [(); 5].map(|_| r.u64());
        let (n_sdf, n_surf, n_hsdf, n_hsurf, n_kp) =
            (n_sdf? as usize, n_surf? as usize, n_hsdf? as usize, n_hsurf? as usize, n_kp? as usize);
        let instance_id = r.text()?;
        let names: Vec<String> =
            serde_json::from_str(&r.text()?).map_err(|e| ToolkitError::Cache(format!("keypoint names: {e}")))?;
        let floats = 1 + 4 + 3 * n_kp + 4 * (n_sdf + n_hsdf) + 9 * (n_surf + n_hsurf);
        if body.len() - r.at != 8 * floats {
            return Err(if body.len() - r.at < 8 * floats {
                ToolkitError::Truncated
            } else {
                ToolkitError::Cache("trailing bytes after payload".into())
            });
        }
        let yaw = r.f64()?;
        let center = [r.f64()?, r.f64()?, r.f64()?];
        let scale = r.f64()?;
        let positions = r.vec3s(n_kp)?;
        let sdf = r.sdf(n_sdf)?;
        let held_out_sdf = r.sdf(n_hsdf)?;
        let surface = r.surface(n_surf)?;
        let held_out_surface = r.surface(n_hsurf)?;
        Ok(Self {
            instance_id,
            seed,
            yaw,
            transform: SimilarityTransform { center, scale },
            keypoints: Keypoints::new(names, positions)?,
            sdf,
            surface,
            held_out_sdf,
            held_out_surface,
        })
    }
}

struct Reader<'a> {
    body: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ToolkitError> {
        let s = self.body.get(self.at..self.at + n).ok_or(ToolkitError::Truncated)?;
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ToolkitError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ToolkitError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String, ToolkitError> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ToolkitError::Cache("invalid text".into()))
    }

    fn vec3s(&mut self, n: usize) -> Result<Vec<Vec3>, ToolkitError> {
        (0..n).map(|_| Ok([self.f64()?, self.f64()?, self.f64()?])).collect()
    }

    fn sdf(&mut self, n: usize) -> Result<SdfSamples, ToolkitError> {
        let points = self.vec3s(n)?;
        let sdf = (0..n).map(|_| self.f64()).collect::<Result<_, _>>()?;
        Ok(SdfSamples { points, sdf })
    }

    fn surface(&mut self, n: usize) -> Result<SurfaceSamples, ToolkitError> {
        Ok(SurfaceSamples {
            points: self.vec3s(n)?,
            colors: self.vec3s(n)?,
            normals: self.vec3s(n)?,
        })
    }
}

/// `prepared.json`: what `prepare` wrote into a directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedIndex {
    pub seed: u64,
    pub samples: SampleConfig,
    pub template_id: String,
    pub instances: Vec<String>,
}

impl PreparedIndex {
    pub const FILE_NAME: &'static str = "prepared.json";
}

/// A loaded prepared directory, or a dataset sampled in memory.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub index: PreparedIndex,
    pub template: PreparedInstance,
    pub instances: Vec<PreparedInstance>,
    /// Normalized ground-truth meshes, template first.
    pub meshes: Vec<Mesh>,
}

impl PreparedSet {
    pub fn training(&self) -> (Vec<TrainingInstance>, TrainingInstance) {
        (self.instances.iter().map(|i| i.training()).collect(), self.template.training())
    }

    pub fn evaluation(&self) -> Vec<EvalInstance> {
        self.instances
            .iter()
            .zip(&self.meshes[1..])
            .map(|(inst, mesh)| inst.evaluation(mesh.clone()))
            .collect()
    }
}

fn read_entry(dir: &Path, entry: &ManifestEntry) -> Result<(Mesh, Keypoints), ToolkitError> {
    let mesh = load_mesh(&dir.join(&entry.mesh))?.mesh;
    let keypoints = load_keypoints(&dir.join(&entry.keypoints), &SimilarityTransform::IDENTITY, None)?;
    Ok((mesh, keypoints))
}

/// Samples every mesh of the dataset at `data_dir`.
pub fn sample_dataset(data_dir: &Path, counts: &SampleConfig, seed: u64) -> Result<PreparedSet, ToolkitError> {
    let manifest = Manifest::load(data_dir)?;
    let entries: Vec<&ManifestEntry> = std::iter::once(&manifest.template).chain(&manifest.instances).collect();
    let mut prepared = Vec::with_capacity(entries.len());
    let mut meshes = Vec::with_capacity(entries.len());
    for entry in entries {
        let (mesh, keypoints) = read_entry(data_dir, entry)?;
        log::info!("sampling {}", entry.id);
        let (p, normalized) = PreparedInstance::sample(&entry.id, &mesh, &keypoints, entry.yaw, counts, seed)?;
        prepared.push(p);
        meshes.push(normalized);
    }
    let template = prepared.remove(0);
    Ok(PreparedSet {
        index: PreparedIndex {
            seed,
            samples: *counts,
            template_id: manifest.template.id.clone(),
            instances: manifest.instances.iter().map(|e| e.id.clone()).collect(),
        },
        template,
        instances: prepared,
        meshes,
    })
}

fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{SAMPLE_EXTENSION}"))
}

fn mesh_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.normalized.obj"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ToolkitError> {
    std::fs::write(path, bytes).map_err(|e| ToolkitError::io(path, e))
}

/// Writes one sample cache and one normalized mesh per instance, plus the
/// index.
pub fn write_prepared(set: &PreparedSet, out_dir: &Path) -> Result<(), ToolkitError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ToolkitError::io(out_dir, e))?;
    for (inst, mesh) in std::iter::once(&set.template).chain(&set.instances).zip(&set.meshes) {
        write(&cache_path(out_dir, &inst.instance_id), &inst.to_bytes())?;
        write(&mesh_path(out_dir, &inst.instance_id), obj_string(mesh).as_bytes())?;
    }
    let text = serde_json::to_string_pretty(&set.index).expect("index serializes") + "\n";
    write(&out_dir.join(PreparedIndex::FILE_NAME), text.as_bytes())
}

pub fn prepare_dataset(
    data_dir: &Path,
    out_dir: &Path,
    counts: &SampleConfig,
    seed: u64,
) -> Result<PreparedSet, ToolkitError> {
    let set = sample_dataset(data_dir, counts, seed)?;
    write_prepared(&set, out_dir)?;
    Ok(set)
}

pub fn load_prepared(dir: &Path) -> Result<PreparedSet, ToolkitError> {
    let path = dir.join(PreparedIndex::FILE_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| ToolkitError::io(&path, e))?;
    let index: PreparedIndex =
        serde_json::from_str(&text).map_err(|e| ToolkitError::Cache(format!("{}: {e}", path.display())))?;
    let load = |id: &str| -> Result<(PreparedInstance, Mesh), ToolkitError> {
        let path = cache_path(dir, id);
        let bytes = std::fs::read(&path).map_err(|e| ToolkitError::io(&path, e))?;
        let inst = PreparedInstance::from_bytes(&bytes)
            .map_err(|e| ToolkitError::Cache(format!("{}: {e}", path.display())))?;
        if inst.instance_id != id {
            return Err(ToolkitError::Cache(format!("{} holds {:?}", path.display(), inst.instance_id)));
        }
        Ok((inst, load_mesh(&mesh_path(dir, id))?.mesh))
    };
    let (template, template_mesh) = load(&index.template_id)?;
    let mut meshes = vec![template_mesh];
    let mut instances = Vec::with_capacity(index.instances.len());
    for id in &index.instances {
        let (inst, mesh) = load(id)?;
        instances.push(inst);
        meshes.push(mesh);
    }
    Ok(PreparedSet {
        index,
        template,
        instances,
        meshes,
    })
}

/// A prepared directory is used as is; a raw dataset is sampled in memory.
pub fn load_any(dir: &Path, counts: &SampleConfig, seed: u64) -> Result<PreparedSet, ToolkitError> {
    if dir.join(PreparedIndex::FILE_NAME).exists() {
        load_prepared(dir)
    } else {
        sample_dataset(dir, counts, seed)
    }
}
