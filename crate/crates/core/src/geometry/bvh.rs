//! Exact point-to-mesh distance over an AABB hierarchy, signed with
//! angle-weighted pseudonormals.

use std::collections::HashMap;

use super::mesh::corner_angle;
use super::vec3::{self, Vec3};
use super::Mesh;

const LEAF_SIZE: usize = 4;

/// Which part of a triangle the closest point lies on. Indices are mesh
/// vertex indices or the triangle index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Vertex(usize),
    Edge(usize, usize),
    Face(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestHit {
    pub distance2: f64,
    pub point: Vec3,
    pub triangle: usize,
    pub feature: Feature,
}

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `[start, start+count)` into `order`. Inner: children indices.
    kind: NodeKind,
}

#[derive(Clone, Copy, Debug)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

/// Immutable acceleration structure; queries take `&self` and may run from
/// many threads.
#[derive(Clone, Debug)]
pub struct BvhIndex {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    nodes: Vec<Node>,
    order: Vec<usize>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
}

impl BvhIndex {
    pub fn build(mesh: &Mesh) -> Self {
        let n = mesh.triangles.len();
        let face_normals: Vec<Vec3> = (0..n).map(|t| mesh.face_normal(t)).collect();
        let mut vertex_normals = vec![[0.0; 3]; mesh.vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Vec3> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = mesh.corners(t);
            let fn_ = face_normals[t];
            for k in 0..3 {
                let angle = corner_angle(p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                vertex_normals[tri[k]] = vec3::add(vertex_normals[tri[k]], vec3::scale(fn_, angle));
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let e = edge_normals.entry((a.min(b), a.max(b))).or_insert([0.0; 3]);
                // both incident faces meet the edge at angle π
                *e = vec3::add(*e, fn_);
            }
        }
        let centroids: Vec<Vec3> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0)
            })
            .collect();
        let mut index = Self {
            vertices: mesh.vertices.clone(),
            triangles: mesh.triangles.clone(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n).collect(),
            face_normals,
            vertex_normals,
            edge_normals,
        };
        if n > 0 {
            index.build_node(0, n, &centroids);
        }
        index
    }

    fn tri_bounds(&self, t: usize) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &v in &self.triangles[t] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.vertices[v][k]);
                hi[k] = hi[k].max(self.vertices[v][k]);
            }
        }
        (lo, hi)
    }

    fn build_node(&mut self, start: usize, count: usize, centroids: &[Vec3]) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut clo = [f64::INFINITY; 3];
        let mut chi = [f64::NEG_INFINITY; 3];
        for &t in &self.order[start..start + count] {
            let (a, b) = self.tri_bounds(t);
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
                clo[k] = clo[k].min(centroids[t][k]);
                chi[k] = chi[k].max(centroids[t][k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, count },
        });
        if count <= LEAF_SIZE {
            return id;
        }
        let extent = vec3::sub(chi, clo);
        let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
            0
        } else if extent[1] >= extent[2] {
            1
        } else {
            2
        };
        self.order[start..start + count].sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let half = count / 2;
        let left = self.build_node(start, half, centroids);
        let right = self.build_node(start + half, count - half, centroids);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Triangle indices per leaf, in traversal order.
    pub fn leaves(&self) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { start, count } => Some(self.order[start..start + count].to_vec()),
                NodeKind::Inner { .. } => None,
            })
            .collect()
    }

    pub fn closest(&self, p: Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack = vec![(0usize, box_distance2(p, self.nodes[0].lo, self.nodes[0].hi))];
        while let Some((id, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            match self.nodes[id].kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start..start + count] {
                        let hit = self.closest_on_triangle(p, t);
                        if hit.distance2 < best_d2 {
                            best_d2 = hit.distance2;
                            best = Some(hit);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = box_distance2(p, self.nodes[left].lo, self.nodes[left].hi);
                    let dr = box_distance2(p, self.nodes[right].lo, self.nodes[right].hi);
                    // push the farther child first so the nearer is visited first
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        best
    }

    pub fn closest_on_triangle(&self, p: Vec3, t: usize) -> ClosestHit {
        let tri = self.triangles[t];
        let [a, b, c] = tri.map(|i| self.vertices[i]);
        let (point, feature) = closest_point_triangle(p, a, b, c);
        let feature = match feature {
            LocalFeature::Vertex(k) => Feature::Vertex(tri[k]),
            LocalFeature::Edge(i, j) => Feature::Edge(tri[i], tri[j]),
            LocalFeature::Face => Feature::Face(t),
        };
        ClosestHit {
            distance2: vec3::norm2(vec3::sub(p, point)),
            point,
            triangle: t,
            feature,
        }
    }

    pub fn pseudonormal(&self, feature: Feature) -> Vec3 {
        match feature {
            Feature::Face(t) => self.face_normals[t],
            Feature::Vertex(v) => self.vertex_normals[v],
            Feature::Edge(a, b) => self.edge_normals[&(a.min(b), a.max(b))],
        }
    }

    /// Sign of `(p − closest)·n` at a hit; negative means inside.
    pub fn sign_of(&self, p: Vec3, hit: &ClosestHit) -> f64 {
        let s = vec3::dot(vec3::sub(p, hit.point), self.pseudonormal(hit.feature));
        if s < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Exact signed distance, negative inside.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let hit = self.closest(p).expect("signed_distance on an empty index");
        let d = hit.distance2.sqrt();
        if d == 0.0 {
            0.0
        } else {
            self.sign_of(p, &hit) * d
        }
    }

    pub fn unsigned_distance(&self, p: Vec3) -> f64 {
        self.closest(p)
            .map(|h| h.distance2.sqrt())
            .unwrap_or(f64::INFINITY)
    }

    /// Number of triangles a ray `origin + s·dir, s > 0` crosses.
    pub fn ray_crossings(&self, origin: Vec3, dir: Vec3) -> usize {
        (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
                ray_hits_triangle(origin, dir, a, b, c)
            })
            .count()
    }

    /// Inside test by crossing parity, majority over three fixed rays.
    pub fn inside_by_parity(&self, p: Vec3) -> bool {
        const DIRS: [Vec3; 3] = [
            [0.5773, 0.5774, 0.5775],
            [-0.2672, 0.8018, -0.5346],
            [0.8729, -0.2182, 0.4364],
        ];
        let votes = DIRS
            .iter()
            .filter(|&&d| self.ray_crossings(p, d) % 2 == 1)
            .count();
        votes >= 2
    }
}

fn box_distance2(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LocalFeature {
    Vertex(usize),
    Edge(usize, usize),
    Face,
}

/// Closest point on triangle `abc` by Voronoi-region classification.
fn closest_point_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, LocalFeature) {
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, LocalFeature::Vertex(0));
    }
    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, LocalFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (vec3::add(a, vec3::scale(ab, v)), LocalFeature::Edge(0, 1));
    }
    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, LocalFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (vec3::add(a, vec3::scale(ac, w)), LocalFeature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (vec3::add(b, vec3::scale(vec3::sub(c, b), w)), LocalFeature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (
        vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w))),
        LocalFeature::Face,
    )
}

/// Möller–Trumbore, counting only hits strictly in front of the origin.
fn ray_hits_triangle(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> bool {
    let e1 = vec3::sub(b, a);
    let e2 = vec3::sub(c, a);
    let h = vec3::cross(d, e2);
    let det = vec3::dot(e1, h);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv = 1.0 / det;
    let s = vec3::sub(o, a);
    let u = inv * vec3::dot(s, h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = vec3::cross(s, e1);
    let v = inv * vec3::dot(d, q);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    inv * vec3::dot(e2, q) > 0.0
}
