//! Procedural boxcar family with analytic landmarks and part colors.

mod boxcar;
mod family;

pub use boxcar::{
    generate_boxcar, Boxcar, BoxcarLayout, BoxcarParams, Part, PartColors, KEYPOINT_NAMES,
};
pub use family::{
    generate_family, instance_id, write_dataset, Dataset, Instance, Manifest, ManifestEntry,
    COLOR_GAMUT, DIMENSION_JITTER, TEMPLATE_ID,
};

use std::path::Path;

use thiserror::Error;

use crate::geometry::vec3::Vec3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid boxcar parameters: {0}")]
    Params(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SynthError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn remap(v: f64, from: (f64, f64), to: (f64, f64)) -> f64 {
    to.0 + (v - from.0) * (to.1 - to.0) / (from.1 - from.0)
}

/// Maps a point on part `part` of boxcar `src` to the semantically
/// corresponding point on `dst`. Each part moves by its own axis-aligned
/// affine map; wheels are matched by the quadrant the point lies in.
pub fn corresponding_point(src: &BoxcarParams, dst: &BoxcarParams, part: Part, p: Vec3) -> Vec3 {
    let (ls, ld) = (src.layout(), dst.layout());
    match part {
        Part::Body | Part::Cabin => {
            let half = |b: &BoxcarParams| (0.5 * b.body_length, 0.5 * b.body_width);
            let ((sx, sy), (dx, dy)) = (half(src), half(dst));
            let (xs, xd, zs, zd) = if part == Part::Body {
                ((-sx, sx), (-dx, dx), (ls.body_bottom, ls.body_top), (ld.body_bottom, ld.body_top))
            } else {
                (
                    (ls.cabin_rear, ls.cabin_front),
                    (ld.cabin_rear, ld.cabin_front),
                    (ls.body_top, ls.roof),
                    (ld.body_top, ld.roof),
                )
            };
            [remap(p[0], xs, xd), remap(p[1], (-sy, sy), (-dy, dy)), remap(p[2], zs, zd)]
        }
        Part::Wheel => {
            let (gx, gy) = (p[0].signum(), p[1].signum());
            let k = dst.wheel_radius / src.wheel_radius;
            let ky = ld.wheel_width / ls.wheel_width;
            [
                gx * ld.wheel_x + (p[0] - gx * ls.wheel_x) * k,
                gy * ld.wheel_y + (p[1] - gy * ls.wheel_y) * ky,
                dst.wheel_radius + (p[2] - src.wheel_radius) * k,
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vec3, BvhIndex};

    #[test]
    fn correspondence_carries_keypoints_and_surface() {
        let src = BoxcarParams::default();
        let dst = BoxcarParams {
            body_length: 3.1,
            body_width: 2.2,
            body_height: 1.0,
            cabin_length: 1.4,
            cabin_height: 0.9,
            wheel_radius: 0.3,
            ..src
        };
        let parts = [
            [Part::Body; 8].as_slice(),
            &[Part::Cabin; 2],
            &[Part::Wheel; 4],
        ]
        .concat();
        let (ks, kd) = (src.keypoints(), dst.keypoints());
        for i in 0..14 {
            let q = corresponding_point(&src, &dst, parts[i], ks.positions[i]);
            assert!(vec3::dist(q, kd.positions[i]) < 1e-12, "{}", ks.names[i]);
        }
        // mapped surface vertices land on the destination surface
        let a = generate_boxcar(&src, 2).unwrap();
        let b = generate_boxcar(&dst, 2).unwrap();
        let idx = BvhIndex::build(&b.mesh);
        for (t, part) in a.mesh.triangles.iter().zip(&a.parts) {
            for &v in t {
                let q = corresponding_point(&src, &dst, *part, a.mesh.vertices[v]);
                assert!(idx.unsigned_distance(q) < 1e-9);
            }
        }
    }
}
