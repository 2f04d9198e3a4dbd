use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::stream_rng;
use crate::geometry::vec3::Vec3;
use crate::geometry::{obj_string, Keypoints, Mesh};

use super::boxcar::{generate_boxcar, Boxcar, BoxcarParams, Part, PartColors};
use super::SynthError;

/// Relative dimension jitter around the template.
pub const DIMENSION_JITTER: f64 = 0.4;
/// Per-channel color range the part colors are drawn from.
pub const COLOR_GAMUT: (f64, f64) = (0.1, 0.9);
pub const TEMPLATE_ID: &str = "template";

#[derive(Clone, Debug)]
pub struct Instance {
    pub id: String,
    pub params: BoxcarParams,
    pub mesh: Mesh,
    pub keypoints: Keypoints,
    pub parts: Vec<Part>,
    /// Ground-truth heading about +z, in radians.
    pub yaw: f64,
}

impl Instance {
    fn new(id: String, params: BoxcarParams, yaw: f64, resolution: usize) -> Result<Self, SynthError> {
        let Boxcar {
            mesh,
            keypoints,
            parts,
        } = generate_boxcar(&params, resolution)?;
        Ok(Self {
            id,
            params,
            mesh,
            keypoints,
            parts,
            yaw,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub template: Instance,
    pub instances: Vec<Instance>,
}

pub fn instance_id(i: usize) -> String {
    format!("car_{i:04}")
}

fn jitter(rng: &mut impl Rng, v: f64) -> f64 {
    v * (1.0 + rng.random_range(-DIMENSION_JITTER..=DIMENSION_JITTER))
}

fn random_color(rng: &mut impl Rng) -> Vec3 {
    [(); 3].map(|_| rng.random_range(COLOR_GAMUT.0..=COLOR_GAMUT.1))
}

fn draw_params(rng: &mut impl Rng, t: &BoxcarParams) -> BoxcarParams {
    // independent draws can break the ordering invariants; redraw until valid
    loop {
        let p = BoxcarParams {
            body_length: jitter(rng, t.body_length),
            body_width: jitter(rng, t.body_width),
            body_height: jitter(rng, t.body_height),
            cabin_length: jitter(rng, t.cabin_length),
            cabin_height: jitter(rng, t.cabin_height),
            wheel_radius: jitter(rng, t.wheel_radius),
            part_colors: PartColors {
                body: random_color(rng),
                cabin: random_color(rng),
                wheel: random_color(rng),
            },
        };
        if p.validate().is_ok() {
            return p;
        }
    }
}

/// `count` jittered boxcars plus the template itself. Instance 0 reuses the
/// template dimensions with freshly drawn colors. Instance `i` draws from
/// its own RNG stream, so prefixes of a family agree across counts.
pub fn generate_family(
    seed: u64,
    count: usize,
    template: &BoxcarParams,
    resolution: usize,
) -> Result<Dataset, SynthError> {
    if count == 0 {
        return Err(SynthError::Params("family needs at least one instance".into()));
    }
    template.validate()?;
    let template_inst = Instance::new(TEMPLATE_ID.into(), *template, 0.0, resolution)?;
    let instances = (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut params = draw_params(&mut rng, template);
            let yaw = rng.random_range(-PI..PI);
            if i == 0 {
                params = BoxcarParams {
                    part_colors: params.part_colors,
                    ..*template
                };
            }
            Instance::new(instance_id(i), params, yaw, resolution)
        })
        .collect::<Result<_, _>>()?;
    Ok(Dataset {
        template: template_inst,
        instances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub mesh: PathBuf,
    pub keypoints: PathBuf,
    #[serde(default)]
    pub yaw: f64,
}

/// Index of a dataset directory. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub template_id: String,
    pub template: ManifestEntry,
    pub instances: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self, SynthError> {
        let path = dir.join(Self::FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| SynthError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        std::iter::once(&self.template)
            .chain(&self.instances)
            .find(|e| e.id == id)
    }
}

fn write_instance(dir: &Path, inst: &Instance) -> Result<ManifestEntry, SynthError> {
    let mesh = PathBuf::from(format!("{}.obj", inst.id));
    let keypoints = PathBuf::from(format!("{}.keypoints.json", inst.id));
    let write = |name: &Path, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| SynthError::io(&path, e))
    };
    write(&mesh, obj_string(&inst.mesh))?;
    write(&keypoints, inst.keypoints.to_json())?;
    Ok(ManifestEntry {
        id: inst.id.clone(),
        mesh,
        keypoints,
        yaw: inst.yaw,
    })
}

/// Writes every mesh as OBJ with vertex colors, every keypoint set as JSON,
/// and a `manifest.json` tying them together.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest, SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| SynthError::io(dir, e))?;
    let template = write_instance(dir, &dataset.template)?;
    let instances = dataset
        .instances
        .iter()
        .map(|inst| write_instance(dir, inst))
        .collect::<Result<_, _>>()?;
    let manifest = Manifest {
        template_id: dataset.template.id.clone(),
        template,
        instances,
    };
    let path = dir.join(Manifest::FILE_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| SynthError::io(&path, e))?;
    Ok(manifest)
}
