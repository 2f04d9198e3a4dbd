use std::collections::HashMap;

use super::vec3::{self, Vec3};
use super::GeometryError;

/// Indexed triangle surface with optional per-vertex colors and normals.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub colors: Option<Vec<Vec3>>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

/// Twice the area below which a triangle is treated as degenerate, relative
/// to its longest edge squared.
const DEGENERATE_REL: f64 = 1e-14;

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            colors: None,
            vertex_normals: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        vec3::normalize(self.face_cross(t))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * vec3::norm(self.face_cross(t))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn is_degenerate(&self, t: usize) -> bool {
        let [a, b, c] = self.corners(t);
        let longest = vec3::norm2(vec3::sub(b, a))
            .max(vec3::norm2(vec3::sub(c, b)))
            .max(vec3::norm2(vec3::sub(a, c)));
        longest == 0.0 || vec3::norm(self.face_cross(t)) <= DEGENERATE_REL * longest
    }

    /// Checks index ranges, color ranges and buffer lengths.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(GeometryError::Invalid(format!(
                    "triangle {t} references vertex {bad}, mesh has {n}"
                )));
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(GeometryError::Invalid(format!(
                    "{} colors for {n} vertices",
                    colors.len()
                )));
            }
            if let Some((i, c)) = colors
                .iter()
                .enumerate()
                .find(|(_, c)| c.iter().any(|&x| !(0.0..=1.0).contains(&x)))
            {
                return Err(GeometryError::Invalid(format!(
                    "vertex {i} color {c:?} outside [0,1]"
                )));
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != n {
                return Err(GeometryError::Invalid(format!(
                    "{} normals for {n} vertices",
                    normals.len()
                )));
            }
        }
        Ok(())
    }

    /// Drops zero-area triangles and returns how many were removed.
    pub fn remove_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let keep: Vec<bool> = (0..before).map(|t| !self.is_degenerate(t)).collect();
        let mut i = 0;
        self.triangles.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
        before - self.triangles.len()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Undirected edge → incident triangle count.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Number of edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        self.edge_incidence().values().filter(|&&c| c != 2).count()
    }

    /// Every edge has exactly two incident triangles and each directed edge
    /// appears once (consistent orientation).
    pub fn is_watertight(&self) -> bool {
        if self.open_edge_count() != 0 {
            return false;
        }
        let mut directed = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if directed.insert(e, ()).is_some() {
                    return false;
                }
            }
        }
        true
    }

    /// Angle-weighted vertex normals.
    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_normal(t);
            let tri = self.triangles[t];
            let p = self.corners(t);
            for k in 0..3 {
                let angle = corner_angle(p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                normals[tri[k]] = vec3::add(normals[tri[k]], vec3::scale(n, angle));
            }
        }
        normals.into_iter().map(vec3::normalize).collect()
    }

    /// Removes unreferenced vertices, keeping the relative order of the rest.
    pub fn compact(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &i in tri {
                used[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut next = 0;
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = next;
                next += 1;
            }
        }
        let keep = |v: &[Vec3]| -> Vec<Vec3> {
            v.iter()
                .zip(&used)
                .filter(|(_, &u)| u)
                .map(|(x, _)| *x)
                .collect()
        };
        self.vertices = keep(&self.vertices);
        if let Some(c) = &self.colors {
            self.colors = Some(keep(c));
        }
        if let Some(n) = &self.vertex_normals {
            self.vertex_normals = Some(keep(n));
        }
        for tri in &mut self.triangles {
            for i in tri.iter_mut() {
                *i = remap[*i];
            }
        }
    }
}

/// Interior angle at `p` of the triangle `(p, q, r)`.
pub fn corner_angle(p: Vec3, q: Vec3, r: Vec3) -> f64 {
    let u = vec3::sub(q, p);
    let v = vec3::sub(r, p);
    let c = vec3::norm(vec3::cross(u, v));
    let d = vec3::dot(u, v);
    c.atan2(d)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Axis-aligned cube `[lo, hi]³`, outward oriented, 12 triangles.
    pub fn cube(lo: f64, hi: f64) -> Mesh {
        let v = |x: usize, y: usize, z: usize| {
            [
                if x == 1 { hi } else { lo },
                if y == 1 { hi } else { lo },
                if z == 1 { hi } else { lo },
            ]
        };
        let vertices = (0..8).map(|i| v(i & 1, (i >> 1) & 1, (i >> 2) & 1)).collect();
        let quads = [
            [0, 2, 3, 1], // z = lo
            [4, 5, 7, 6], // z = hi
            [0, 1, 5, 4], // y = lo
            [2, 6, 7, 3], // y = hi
            [0, 4, 6, 2], // x = lo
            [1, 3, 7, 5], // x = hi
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Mesh::new(vertices, triangles)
    }

    #[test]
    fn cube_is_watertight_and_outward() {
        let m = cube(-0.5, 0.5);
        assert!(m.is_watertight());
        for t in 0..m.triangles.len() {
            let [a, b, c] = m.corners(t);
            let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
            assert!(vec3::dot(m.face_normal(t), centroid) > 0.0);
        }
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangles_removed() {
        let mut m = cube(0.0, 1.0);
        m.vertices.push([0.5, 0.5, 0.5]);
        m.triangles.push([0, 1, 0]);
        m.triangles.push([8, 8, 8]);
        assert_eq!(m.remove_degenerate(), 2);
        assert_eq!(m.triangles.len(), 12);
    }

    #[test]
    fn validate_catches_bad_indices_and_colors() {
        let mut m = cube(0.0, 1.0);
        m.triangles.push([0, 1, 99]);
        assert!(m.validate().is_err());
        let mut m = cube(0.0, 1.0);
        m.colors = Some(vec![[0.5, 0.5, 1.5]; 8]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn vertex_normals_of_cube_point_along_diagonals() {
        let m = cube(-1.0, 1.0);
        for (v, n) in m.vertices.iter().zip(m.compute_vertex_normals()) {
            let d = vec3::normalize(*v);
            assert!((vec3::dot(d, n) - 1.0).abs() < 1e-12);
        }
    }
}
