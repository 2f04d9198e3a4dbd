use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::Mesh;

/// Radius of the sphere the farthest vertex lands on.
pub const NORMALIZED_RADIUS: f64 = 1.0 / 1.03;

/// `p ↦ (p − center)·scale`, recorded so keypoints follow their mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        center: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::sub(p, self.center), self.scale)
    }

    pub fn invert(&self, q: Vec3) -> Vec3 {
        vec3::add(vec3::scale(q, 1.0 / self.scale), self.center)
    }
}

/// Centers the bounding box at the origin and scales the farthest vertex to
/// norm `1/1.03`.
pub fn normalize_mesh(mesh: &Mesh) -> (Mesh, SimilarityTransform) {
    assert!(!mesh.vertices.is_empty(), "normalize_mesh on an empty mesh");
    let (lo, hi) = mesh.bounding_box();
    let center = vec3::scale(vec3::add(lo, hi), 0.5);
    let radius = mesh
        .vertices
        .iter()
        .map(|&v| vec3::norm(vec3::sub(v, center)))
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 {
        NORMALIZED_RADIUS / radius
    } else {
        1.0
    };
    let transform = SimilarityTransform { center, scale };
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = transform.apply(*v);
    }
    (out, transform)
}
