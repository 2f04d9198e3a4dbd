use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vec3::Vec3;
use super::{GeometryError, SimilarityTransform};

/// Named semantic landmarks of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoints {
    pub positions: Vec<Vec3>,
    pub names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    keypoints: Vec<KeypointEntry>,
}

#[derive(Serialize, Deserialize)]
struct KeypointEntry {
    name: String,
    p: Vec3,
}

impl Keypoints {
    pub fn new(names: Vec<String>, positions: Vec<Vec3>) -> Result<Self, GeometryError> {
        if names.len() != positions.len() {
            return Err(GeometryError::Keypoints(format!(
                "{} names for {} positions",
                names.len(),
                positions.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(GeometryError::Keypoints(format!("duplicate keypoint name {n:?}")));
            }
        }
        Ok(Self { positions, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<Vec3> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.positions[i])
    }

    /// Reorders to `order`; the name sets must match exactly.
    pub fn aligned_to(&self, order: &[String]) -> Result<Self, GeometryError> {
        if order.len() != self.names.len() {
            return Err(GeometryError::Keypoints(format!(
                "{} keypoints, template has {}",
                self.names.len(),
                order.len()
            )));
        }
        let index: HashMap<&str, usize> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let positions = order
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .map(|&i| self.positions[i])
                    .ok_or_else(|| GeometryError::Keypoints(format!("keypoint {n:?} missing")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            positions,
            names: order.to_vec(),
        })
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            positions: self.positions.iter().map(|&p| t.apply(p)).collect(),
            names: self.names.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = KeypointFile {
            keypoints: self
                .names
                .iter()
                .zip(&self.positions)
                .map(|(name, &p)| KeypointEntry {
                    name: name.clone(),
                    p,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("keypoints serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let file: KeypointFile =
            serde_json::from_str(text).map_err(|e| GeometryError::Keypoints(e.to_string()))?;
        let (names, positions) = file.keypoints.into_iter().map(|e| (e.name, e.p)).unzip();
        Self::new(names, positions)
    }
}

/// Reads a keypoint file given in the raw mesh frame, maps it through the
/// mesh's normalization transform and, when a template order is supplied,
/// reorders it to that order.
pub fn load_keypoints(
    path: &Path,
    transform: &SimilarityTransform,
    template_order: Option<&[String]>,
) -> Result<Keypoints, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let raw = Keypoints::from_json(&text)?;
    let kps = match template_order {
        Some(order) => raw.aligned_to(order)?,
        None => raw,
    };
    Ok(kps.transformed(transform))
}
