use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::Mesh;

use super::tables::{case_table, CORNERS, EDGES};
use super::ExtractError;

/// Grid nodes sitting exactly on the iso value are moved up by this much.
pub const ISO_NUDGE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells per axis.
    pub resolution: usize,
    /// `[min, max]` corners.
    pub bounds: [Vec3; 2],
    pub iso_value: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 128,
            bounds: [[-1.0; 3], [1.0; 3]],
            iso_value: 0.0,
        }
    }
}

impl GridSpec {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        if self.resolution < 8 {
            return Err(ExtractError::Grid(format!("resolution {} < 8", self.resolution)));
        }
        let [lo, hi] = self.bounds;
        if !(0..3).all(|k| lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
            return Err(ExtractError::Grid(format!("degenerate bounds {lo:?}..{hi:?}")));
        }
        if !self.iso_value.is_finite() {
            return Err(ExtractError::Grid("non-finite iso value".into()));
        }
        Ok(())
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.resolution + 1
    }

    pub fn spacing(&self) -> Vec3 {
        let [lo, hi] = self.bounds;
        std::array::from_fn(|k| (hi[k] - lo[k]) / self.resolution as f64)
    }

    pub fn cell_diagonal(&self) -> f64 {
        vec3::norm(self.spacing())
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let [lo, hi] = self.bounds;
        let n = self.resolution as f64;
        let at = |a: usize, axis: usize| {
            let t = a as f64 / n;
            lo[axis] * (1.0 - t) + hi[axis] * t
        };
        [at(i, 0), at(j, 1), at(k, 2)]
    }
}

/// Field values on every grid node, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValues {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridValues {
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.grid.nodes_per_axis();
        i + n * (j + n * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Central-difference gradient at a node, one-sided on the border.
    fn gradient(&self, node: [usize; 3]) -> Vec3 {
        let n = self.grid.nodes_per_axis();
        let h = self.grid.spacing();
        std::array::from_fn(|axis| {
            let mut lo = node;
            let mut hi = node;
            if node[axis] > 0 {
                lo[axis] -= 1;
            }
            if node[axis] + 1 < n {
                hi[axis] += 1;
            }
            let span = (hi[axis] - lo[axis]) as f64 * h[axis];
            (self.get(hi[0], hi[1], hi[2]) - self.get(lo[0], lo[1], lo[2])) / span
        })
    }
}

/// Evaluates `field` one z-slab at a time, slabs in parallel. Values equal to
/// the iso value are nudged upward.
pub fn sample_grid<F>(field: F, grid: &GridSpec) -> Result<GridValues, ExtractError>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, ExtractError> + Sync,
{
    grid.validate()?;
    let n = grid.nodes_per_axis();
    let slabs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let points: Vec<Vec3> = (0..n)
                .flat_map(|j| (0..n).map(move |i| grid.node(i, j, k)))
                .collect();
            let values = field(&points)?;
            if values.len() != points.len() {
                return Err(ExtractError::Grid(format!(
                    "field returned {} values for {} points",
                    values.len(),
                    points.len()
                )));
            }
            if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                let node = [bad % n, bad / n, k];
                return Err(ExtractError::NonFinite {
                    node,
                    position: points[bad],
                    value: values[bad],
                });
            }
            Ok(values)
        })
        .collect::<Result<_, _>>()?;
    let iso = grid.iso_value;
    let values = slabs
        .concat()
        .into_iter()
        .map(|v| if v == iso { iso + ISO_NUDGE } else { v })
        .collect();
    Ok(GridValues { grid: *grid, values })
}

/// Coarse-to-fine sampling for distance-like fields. The grid is refined by
/// halving from `resolution / coarse_factor`; at each level only the cells
/// that can hold the iso surface get their finer nodes evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarrowBand {
    /// Power of two.
    pub coarse_factor: usize,
    /// Assumed bound on the field's gradient norm.
    pub lipschitz: f64,
}

impl Default for NarrowBand {
    fn default() -> Self {
        Self {
            coarse_factor: 8,
            lipschitz: 2.0,
        }
    }
}

impl NarrowBand {
    /// Whether the band applies to `grid`; otherwise every node is sampled.
    pub fn fits(&self, grid: &GridSpec) -> bool {
        let f = self.coarse_factor;
        f >= 2 && f.is_power_of_two() && grid.resolution % f == 0 && grid.resolution / f >= 8
    }
}

fn evaluate_nodes<F>(field: &F, grid: &GridSpec, nodes: &[usize]) -> Result<Vec<f64>, ExtractError>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, ExtractError> + Sync,
{
    let n = grid.nodes_per_axis();
    let node_of = |q: usize| [q % n, q / n % n, q / (n * n)];
    let chunks: Vec<Vec<f64>> = nodes
        .par_chunks(n * n)
        .map(|chunk| {
            let points: Vec<Vec3> = chunk
                .iter()
                .map(|&q| {
                    let [i, j, k] = node_of(q);
                    grid.node(i, j, k)
                })
                .collect();
            let values = field(&points)?;
            if values.len() != points.len() {
                return Err(ExtractError::Grid(format!(
                    "field returned {} values for {} points",
                    values.len(),
                    points.len()
                )));
            }
            if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                return Err(ExtractError::NonFinite {
                    node: node_of(chunk[bad]),
                    position: points[bad],
                    value: values[bad],
                });
            }
            Ok(values)
        })
        .collect::<Result<_, _>>()?;
    let iso = grid.iso_value;
    Ok(chunks
        .concat()
        .into_iter()
        .map(|v| if v == iso { iso + ISO_NUDGE } else { v })
        .collect())
}

/// Like [`sample_grid`] for fields whose gradient norm stays below
/// `band.lipschitz`. A cell is refined when its corners have both signs or
/// all lie within `lipschitz × diagonal` of the iso value; any other cell
/// cannot contain the surface, and its finer nodes take trilinear values of
/// the right sign. Every node of a cell crossed by the surface is therefore
/// evaluated exactly and the triangulation matches full sampling.
pub fn sample_grid_banded<F>(field: F, grid: &GridSpec, band: &NarrowBand) -> Result<GridValues, ExtractError>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, ExtractError> + Sync,
{
    grid.validate()?;
    if !band.fits(grid) {
        return sample_grid(field, grid);
    }
    let iso = grid.iso_value;
    let mut level = GridSpec {
        resolution: grid.resolution / band.coarse_factor,
        ..*grid
    };
    // report bad nodes in the indices of the requested grid
    let rescale = |e: ExtractError, r: usize| match e {
        ExtractError::NonFinite { node, position, value } => ExtractError::NonFinite {
            node: node.map(|a| a * (grid.resolution / r)),
            position,
            value,
        },
        other => other,
    };
    let mut values = sample_grid(&field, &level).map_err(|e| rescale(e, level.resolution))?.values;
    let mut exact = vec![true; values.len()];
    let mut evaluated = values.len();
    while level.resolution < grid.resolution {
        let r = level.resolution;
        let (n, m) = (r + 1, 2 * r + 1);
        let fine = GridSpec {
            resolution: 2 * r,
            ..*grid
        };
        let margin = band.lipschitz * level.cell_diagonal();
        let mut next = vec![0.0; m * m * m];
        let mut next_exact = vec![false; m * m * m];
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    // parents along each axis: the node itself or its two neighbours
                    let span = |a: usize| if a % 2 == 0 { (a / 2, a / 2) } else { (a / 2, a / 2 + 1) };
                    let ((i0, i1), (j0, j1), (k0, k1)) = (span(i), span(j), span(k));
                    let mut sum = 0.0;
                    for (kk, jj, ii) in [(k0, j0, i0), (k0, j0, i1), (k0, j1, i0), (k0, j1, i1), (k1, j0, i0), (k1, j0, i1), (k1, j1, i0), (k1, j1, i1)] {
                        sum += values[ii + n * (jj + n * kk)];
                    }
                    let q = i + m * (j + m * k);
                    if i % 2 == 0 && j % 2 == 0 && k % 2 == 0 {
                        let p = i / 2 + n * (j / 2 + n * (k / 2));
                        next[q] = values[p];
                        next_exact[q] = exact[p];
                    } else {
                        next[q] = sum / 8.0;
                    }
                }
            }
        }
        let mut wanted = vec![false; m * m * m];
        for ck in 0..r {
            for cj in 0..r {
                for ci in 0..r {
                    let corner: [f64; 8] = std::array::from_fn(|c| {
                        let o = CORNERS[c];
                        values[(ci + o[0]) + n * ((cj + o[1]) + n * (ck + o[2]))]
                    });
                    let near = corner.iter().all(|v| (v - iso).abs() <= margin);
                    let mixed = corner.iter().any(|&v| v < iso) && corner.iter().any(|&v| v >= iso);
                    if near || mixed {
                        for dk in 0..3 {
                            for dj in 0..3 {
                                for di in 0..3 {
                                    wanted[(2 * ci + di) + m * ((2 * cj + dj) + m * (2 * ck + dk))] = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        let targets: Vec<usize> = (0..m * m * m).filter(|&q| wanted[q] && !next_exact[q]).collect();
        let exact_values = evaluate_nodes(&field, &fine, &targets).map_err(|e| rescale(e, fine.resolution))?;
        for (&q, v) in targets.iter().zip(exact_values) {
            next[q] = v;
            next_exact[q] = true;
        }
        evaluated += targets.len();
        values = next;
        exact = next_exact;
        level = fine;
    }
    log::debug!("narrow band: {evaluated} of {} nodes evaluated", values.len());
    Ok(GridValues { grid: *grid, values })
}

/// Triangulates the iso surface of sampled values. Vertices on shared cell
/// edges are welded; triangles wind so their normals face increasing field.
pub fn triangulate(samples: &GridValues) -> Mesh {
    let grid = &samples.grid;
    let n = grid.nodes_per_axis();
    let iso = grid.iso_value;
    let below = |v: f64| v < iso;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    // vertex index per (min node, axis) edge
    let mut edge_vertex = vec![u32::MAX; 3 * n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let a = [i, j, k];
                let va = samples.get(i, j, k);
                for axis in 0..3 {
                    if a[axis] + 1 >= n {
                        continue;
                    }
                    let mut b = a;
                    b[axis] += 1;
                    let vb = samples.get(b[0], b[1], b[2]);
                    if below(va) == below(vb) {
                        continue;
                    }
                    let t = (iso - va) / (vb - va);
                    let pa = grid.node(a[0], a[1], a[2]);
                    let mut p = pa;
                    p[axis] = pa[axis] + t * (grid.node(b[0], b[1], b[2])[axis] - pa[axis]);
                    let g = vec3::lerp(samples.gradient(a), samples.gradient(b), t);
                    edge_vertex[3 * samples.index(i, j, k) + axis] = vertices.len() as u32;
                    vertices.push(p);
                    normals.push(vec3::normalize(g));
                }
            }
        }
    }

    let table = case_table();
    // cube edge -> (corner offset of its lower end, axis)
    let edge_key: [([usize; 3], usize); 12] = std::array::from_fn(|e| {
        let [a, b] = EDGES[e].map(|c| CORNERS[c]);
        let axis = (0..3).find(|&x| a[x] != b[x]).expect("edge spans one axis");
        (std::array::from_fn(|x| a[x].min(b[x])), axis)
    });
    let mut triangles = Vec::new();
    for k in 0..grid.resolution {
        for j in 0..grid.resolution {
            for i in 0..grid.resolution {
                let mut case = 0;
                for (c, off) in CORNERS.iter().enumerate() {
                    if below(samples.get(i + off[0], j + off[1], k + off[2])) {
                        case |= 1 << c;
                    }
                }
                for tri in &table[case] {
                    triangles.push(tri.map(|e| {
                        let (off, axis) = edge_key[e as usize];
                        let idx = samples.index(i + off[0], j + off[1], k + off[2]);
                        edge_vertex[3 * idx + axis] as usize
                    }));
                }
            }
        }
    }
    let mut mesh = Mesh::new(vertices, triangles);
    mesh.vertex_normals = Some(normals);
    mesh
}

/// Iso surface of a batched field over `grid`.
pub fn marching_cubes_batched<F>(field: F, grid: &GridSpec) -> Result<Mesh, ExtractError>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, ExtractError> + Sync,
{
    Ok(triangulate(&sample_grid(field, grid)?))
}

/// Iso surface of a pointwise field over `grid`.
pub fn marching_cubes<F>(field: F, grid: &GridSpec) -> Result<Mesh, ExtractError>
where
    F: Fn(Vec3) -> f64 + Sync,
{
    marching_cubes_batched(|pts| Ok(pts.iter().map(|&p| field(p)).collect()), grid)
}
