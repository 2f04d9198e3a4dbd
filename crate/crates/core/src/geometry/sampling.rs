//! Supervision samplers. Every sampler is a pure function of
//! `(mesh, n, seed)`: work is cut into fixed-size chunks, each chunk draws
//! from its own ChaCha stream, and chunks are merged in index order, so the
//! result does not depend on how many workers ran.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::vec3::{self, Vec3};
use super::{BvhIndex, GeometryError, Mesh};

const CHUNK: usize = 1024;

/// Share of points perturbed with the small and the large noise level.
pub const NEAR_FRACTION: f64 = 0.45;
pub const SIGMA_FINE: f64 = 0.005;
pub const SIGMA_COARSE: f64 = 0.05;
/// Spot-check size for the ray-parity watertightness warning.
const PARITY_SPOT_CHECKS: usize = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdfSamples {
    pub points: Vec<Vec3>,
    /// Ground-truth signed distance, negative inside.
    pub sdf: Vec<f64>,
}

impl SdfSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Independent RNG stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed from `seed` and a tag (SplitMix64 finalizer).
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Area-weighted triangle picker with uniform barycentric coordinates.
#[derive(Clone, Debug)]
pub struct AreaSampler {
    cdf: Vec<f64>,
}

impl AreaSampler {
    pub fn new(mesh: &Mesh) -> Result<Self, GeometryError> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = (0..mesh.triangles.len())
            .map(|t| {
                acc += mesh.triangle_area(t);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(GeometryError::Invalid("mesh has zero surface area".into()));
        }
        Ok(Self { cdf })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (usize, [f64; 3]) {
        let total = *self.cdf.last().expect("nonempty");
        let u = rng.random::<f64>() * total;
        let t = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        (t, [1.0 - s, s * (1.0 - r2), s * r2])
    }
}

fn point_at(mesh: &Mesh, t: usize, w: [f64; 3]) -> Vec3 {
    let [a, b, c] = mesh.corners(t);
    vec3::barycentric(a, b, c, w)
}

fn chunks(n: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let count = n.div_ceil(CHUNK);
    (0..count)
        .into_par_iter()
        .map(move |c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
}

/// `n` area-weighted points on the surface.
pub fn sample_surface_points(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vec3>, GeometryError> {
    let sampler = AreaSampler::new(mesh)?;
    Ok(chunks(n)
        .flat_map_iter(|(lo, hi)| {
            let mut rng = stream_rng(seed, (lo / CHUNK) as u64);
            (lo..hi)
                .map(|_| {
                    let (t, w) = sampler.sample(&mut rng);
                    point_at(mesh, t, w)
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

/// Near-surface and uniform volume points labelled with exact signed distance.
///
/// The first 45% of points are surface samples with N(0, 0.005²) noise per
/// axis, the next 45% use N(0, 0.05²), and the rest are uniform in [−1,1]³.
pub fn sample_sdf_points(
    mesh: &Mesh,
    index: &BvhIndex,
    n: usize,
    seed: u64,
) -> Result<SdfSamples, GeometryError> {
    if n == 0 {
        return Err(GeometryError::Invalid("sample count must be at least 1".into()));
    }
    let sampler = AreaSampler::new(mesh)?;
    let n_fine = (NEAR_FRACTION * n as f64).round() as usize;
    let n_coarse = ((2.0 * NEAR_FRACTION * n as f64).round() as usize).saturating_sub(n_fine);
    let fine = Normal::new(0.0, SIGMA_FINE).expect("valid sigma");
    let coarse = Normal::new(0.0, SIGMA_COARSE).expect("valid sigma");
    let points: Vec<Vec3> = chunks(n)
        .flat_map_iter(|(lo, hi)| {
            let mut rng = stream_rng(seed, (lo / CHUNK) as u64);
            (lo..hi)
                .map(|i| {
                    if i < n_fine + n_coarse {
                        let noise = if i < n_fine { &fine } else { &coarse };
                        let (t, w) = sampler.sample(&mut rng);
                        let p = point_at(mesh, t, w);
                        [
                            p[0] + noise.sample(&mut rng),
                            p[1] + noise.sample(&mut rng),
                            p[2] + noise.sample(&mut rng),
                        ]
                    } else {
                        [
                            rng.random_range(-1.0..=1.0),
                            rng.random_range(-1.0..=1.0),
                            rng.random_range(-1.0..=1.0),
                        ]
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let sdf: Vec<f64> = points.par_iter().map(|&p| index.signed_distance(p)).collect();

    let start = n_fine + n_coarse;
    let mismatches = (start..n)
        .take(PARITY_SPOT_CHECKS)
        .filter(|&i| (sdf[i] < 0.0) != index.inside_by_parity(points[i]))
        .count();
    if mismatches > 0 {
        log::warn!(
            "sdf sampling: {mismatches} sign/parity disagreements in spot check; mesh may not be watertight"
        );
    }
    Ok(SdfSamples { points, sdf })
}

/// Area-weighted surface points with interpolated colors and normals.
pub fn sample_surface_colors(mesh: &Mesh, n: usize, seed: u64) -> Result<SurfaceSamples, GeometryError> {
    let colors = mesh.colors.as_ref().ok_or(GeometryError::Colorless)?;
    if n == 0 {
        return Err(GeometryError::Invalid("sample count must be at least 1".into()));
    }
    let computed;
    let normals = match &mesh.vertex_normals {
        Some(n) => n,
        None => {
            computed = mesh.compute_vertex_normals();
            &computed
        }
    };
    let sampler = AreaSampler::new(mesh)?;
    let rows: Vec<(Vec3, Vec3, Vec3)> = chunks(n)
        .flat_map_iter(|(lo, hi)| {
            let mut rng = stream_rng(seed, (lo / CHUNK) as u64);
            (lo..hi)
                .map(|_| {
                    let (t, w) = sampler.sample(&mut rng);
                    let [a, b, c] = mesh.triangles[t];
                    let p = point_at(mesh, t, w);
                    let col = vec3::barycentric(colors[a], colors[b], colors[c], w);
                    let col = col.map(|x| x.clamp(0.0, 1.0));
                    let nrm = vec3::normalize(vec3::barycentric(normals[a], normals[b], normals[c], w));
                    (p, col, nrm)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut out = SurfaceSamples::default();
    for (p, c, nrm) in rows {
        out.points.push(p);
        out.colors.push(c);
        out.normals.push(nrm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::cube;

    #[test]
    fn sdf_samples_concentrate_near_surface() {
        let m = cube(-0.5, 0.5);
        let idx = BvhIndex::build(&m);
        let s = sample_sdf_points(&m, &idx, 1000, 7).unwrap();
        assert_eq!(s.len(), 1000);
        let near = s.sdf.iter().filter(|d| d.abs() < 0.2).count();
        assert!(near >= 850, "near = {near}");
        assert!(s.sdf.iter().all(|d| d.abs() <= 2.0));
        for (p, d) in s.points.iter().zip(&s.sdf) {
            assert_eq!(idx.signed_distance(*p).to_bits(), d.to_bits());
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let m = cube(-0.5, 0.5);
        let idx = BvhIndex::build(&m);
        let a = sample_sdf_points(&m, &idx, 3000, 42).unwrap();
        let b = sample_sdf_points(&m, &idx, 3000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_sdf_points(&m, &idx, 3000, 43).unwrap();
        assert_ne!(a, c);
        assert!(sample_sdf_points(&m, &idx, 0, 1).is_err());
    }

    #[test]
    fn single_red_triangle() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]])
            .with_colors(vec![[1.0, 0.0, 0.0]; 3]);
        let s = sample_surface_colors(&m, 200, 3).unwrap();
        assert!(s
            .colors
            .iter()
            .all(|c| (c[0] - 1.0).abs() < 1e-12 && c[1] == 0.0 && c[2] == 0.0));
        assert!(s.normals.iter().all(|n| (n[2] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn colorless_mesh_rejected() {
        assert!(matches!(
            sample_surface_colors(&cube(0.0, 1.0), 10, 0),
            Err(GeometryError::Colorless)
        ));
    }

    #[test]
    fn area_weighting_follows_binomial_bound() {
        // Two disjoint triangles with areas 1 and 3.
        let s3 = 6f64.sqrt();
        let m = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 0.0],
                [5.0 + s3, 0.0, 0.0],
                [5.0, s3, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .with_colors(vec![[0.0; 3], [0.0; 3], [0.0; 3], [1.0; 3], [1.0; 3], [1.0; 3]]);
        assert!((m.triangle_area(0) - 1.0).abs() < 1e-12);
        assert!((m.triangle_area(1) - 3.0).abs() < 1e-12);
        let s = sample_surface_colors(&m, 10_000, 11).unwrap();
        let share = s.points.iter().filter(|p| p[0] >= 5.0).count() as f64 / 10_000.0;
        // 3σ of Binomial(10⁴, 0.75) is ≈ 0.013
        assert!((share - 0.75).abs() <= 0.03, "share {share}");
    }

    #[test]
    fn surface_points_lie_on_mesh() {
        let m = cube(-0.5, 0.5).with_colors(vec![[0.2, 0.4, 0.6]; 8]);
        let idx = BvhIndex::build(&m);
        let s = sample_surface_colors(&m, 500, 5).unwrap();
        for p in &s.points {
            assert!(idx.unsigned_distance(*p) <= 1e-9);
        }
    }
}
