use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::vec3::Vec3;
use crate::geometry::{Keypoints, Mesh};

use super::SynthError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Body,
    Cabin,
    Wheel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartColors {
    pub body: Vec3,
    pub cabin: Vec3,
    pub wheel: Vec3,
}

impl PartColors {
    pub fn get(&self, part: Part) -> Vec3 {
        match part {
            Part::Body => self.body,
            Part::Cabin => self.cabin,
            Part::Wheel => self.wheel,
        }
    }
}

/// Dimensions of a boxcar: a body box with a cabin box on top and four
/// cylindrical wheels beside it. +x is the front, +y the left, +z up, with
/// the wheels standing on z = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxcarParams {
    pub body_length: f64,
    pub body_width: f64,
    pub body_height: f64,
    pub cabin_length: f64,
    pub cabin_height: f64,
    pub wheel_radius: f64,
    pub part_colors: PartColors,
}

impl Default for BoxcarParams {
    fn default() -> Self {
        Self {
            body_length: 4.0,
            body_width: 1.8,
            body_height: 0.9,
            cabin_length: 2.0,
            cabin_height: 0.7,
            wheel_radius: 0.35,
            part_colors: PartColors {
                body: [0.8, 0.15, 0.1],
                cabin: [0.2, 0.45, 0.85],
                wheel: [0.12, 0.12, 0.12],
            },
        }
    }
}

/// Derived placement of every part, all closed-form in the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxcarLayout {
    pub body_bottom: f64,
    pub body_top: f64,
    pub roof: f64,
    pub cabin_rear: f64,
    pub cabin_front: f64,
    pub wheel_x: f64,
    pub wheel_y: f64,
    pub wheel_width: f64,
}

pub const KEYPOINT_NAMES: [&str; 14] = [
    "body_front_left_bottom",
    "body_front_right_bottom",
    "body_rear_left_bottom",
    "body_rear_right_bottom",
    "body_front_left_top",
    "body_front_right_top",
    "body_rear_left_top",
    "body_rear_right_top",
    "roof_front",
    "roof_rear",
    "wheel_front_left",
    "wheel_front_right",
    "wheel_rear_left",
    "wheel_rear_right",
];

impl BoxcarParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let dims = [
            ("body_length", self.body_length),
            ("body_width", self.body_width),
            ("body_height", self.body_height),
            ("cabin_length", self.cabin_length),
            ("cabin_height", self.cabin_height),
            ("wheel_radius", self.wheel_radius),
        ];
        for (name, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cabin_length >= self.body_length {
            return Err(SynthError::Params("cabin_length must be below body_length".into()));
        }
        if self.wheel_radius >= self.body_height {
            return Err(SynthError::Params("wheel_radius must be below body_height".into()));
        }
        // front and rear wheels must not touch
        if self.wheel_radius >= 0.3 * self.body_length {
            return Err(SynthError::Params("wheel_radius must be below 0.3·body_length".into()));
        }
        let colors = [self.part_colors.body, self.part_colors.cabin, self.part_colors.wheel];
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SynthError::Params("part colors must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> BoxcarLayout {
        let r = self.wheel_radius;
        let body_bottom = 0.5 * r;
        let body_top = body_bottom + self.body_height;
        let offset = -0.125 * (self.body_length - self.cabin_length);
        let wheel_width = 0.6 * r;
        let gap = 0.3 * r;
        BoxcarLayout {
            body_bottom,
            body_top,
            roof: body_top + self.cabin_height,
            cabin_rear: offset - 0.5 * self.cabin_length,
            cabin_front: offset + 0.5 * self.cabin_length,
            wheel_x: 0.3 * self.body_length,
            wheel_y: 0.5 * self.body_width + gap + 0.5 * wheel_width,
            wheel_width,
        }
    }

    /// The 14 landmarks, in [`KEYPOINT_NAMES`] order.
    pub fn keypoints(&self) -> Keypoints {
        let l = self.layout();
        let (hx, hy) = (0.5 * self.body_length, 0.5 * self.body_width);
        let r = self.wheel_radius;
        let positions = vec![
            [hx, hy, l.body_bottom],
            [hx, -hy, l.body_bottom],
            [-hx, hy, l.body_bottom],
            [-hx, -hy, l.body_bottom],
            [hx, hy, l.body_top],
            [hx, -hy, l.body_top],
            [-hx, hy, l.body_top],
            [-hx, -hy, l.body_top],
            [l.cabin_front, 0.0, l.roof],
            [l.cabin_rear, 0.0, l.roof],
            [l.wheel_x, l.wheel_y, r],
            [l.wheel_x, -l.wheel_y, r],
            [-l.wheel_x, l.wheel_y, r],
            [-l.wheel_x, -l.wheel_y, r],
        ];
        Keypoints::new(KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(), positions)
            .expect("names are unique")
    }
}

/// A generated boxcar surface with its landmarks and per-triangle parts.
#[derive(Clone, Debug)]
pub struct Boxcar {
    pub mesh: Mesh,
    pub keypoints: Keypoints,
    pub parts: Vec<Part>,
}

fn subdivide(breaks: &[f64], n: usize) -> (Vec<f64>, Vec<usize>) {
    // values along one axis plus the grid index of every breakpoint
    let mut values = vec![breaks[0]];
    let mut marks = vec![0];
    for w in breaks.windows(2) {
        for k in 1..=n {
            values.push(if k == n {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * k as f64 / n as f64
            });
        }
        marks.push(values.len() - 1);
    }
    (values, marks)
}

struct ShellBuilder {
    axes: [Vec<f64>; 3],
    index: HashMap<[usize; 3], usize>,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    parts: Vec<Part>,
}

impl ShellBuilder {
    fn vertex(&mut self, key: [usize; 3]) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.vertices.len();
        self.vertices
            .push([self.axes[0][key[0]], self.axes[1][key[1]], self.axes[2][key[2]]]);
        self.index.insert(key, i);
        i
    }

    /// Axis-aligned rectangle at grid index `at` on axis `fixed`, spanning
    /// grid ranges `ra` on axis `a` and `rb` on axis `b`, facing `outward`.
    #[allow(clippy::too_many_arguments)]
    fn face(
        &mut self,
        fixed: usize,
        at: usize,
        a: usize,
        ra: (usize, usize),
        b: usize,
        rb: (usize, usize),
        outward: f64,
        part: Part,
    ) {
        // e_a × e_b points along +fixed when (a, b, fixed) is cyclic
        let cyclic = (a + 1) % 3 == b;
        let flip = (if cyclic { 1.0 } else { -1.0 }) * outward < 0.0;
        for i in ra.0..ra.1 {
            for j in rb.0..rb.1 {
                let key = |ii: usize, jj: usize| {
                    let mut k = [0; 3];
                    k[fixed] = at;
                    k[a] = ii;
                    k[b] = jj;
                    k
                };
                let c00 = self.vertex(key(i, j));
                let c10 = self.vertex(key(i + 1, j));
                let c11 = self.vertex(key(i + 1, j + 1));
                let c01 = self.vertex(key(i, j + 1));
                if flip {
                    self.triangles.push([c00, c11, c10]);
                    self.triangles.push([c00, c01, c11]);
                } else {
                    self.triangles.push([c00, c10, c11]);
                    self.triangles.push([c00, c11, c01]);
                }
                self.parts.push(part);
                self.parts.push(part);
            }
        }
    }
}

fn body_shell(p: &BoxcarParams, l: &BoxcarLayout, n: usize) -> ShellBuilder {
    let (hx, hy) = (0.5 * p.body_length, 0.5 * p.body_width);
    let (xs, xm) = subdivide(&[-hx, l.cabin_rear, l.cabin_front, hx], n);
    let (ys, _) = subdivide(&[-hy, hy], n);
    let (zs, zm) = subdivide(&[l.body_bottom, l.body_top, l.roof], n);
    let (x_end, y_end) = (xs.len() - 1, ys.len() - 1);
    let (x_cb, x_cf) = (xm[1], xm[2]);
    let (z_t, z_r) = (zm[1], zm[2]);
    let mut s = ShellBuilder {
        axes: [xs, ys, zs],
        index: HashMap::new(),
        vertices: Vec::new(),
        triangles: Vec::new(),
        parts: Vec::new(),
    };
    use Part::{Body, Cabin};
    s.face(2, 0, 0, (0, x_end), 1, (0, y_end), -1.0, Body);
    s.face(0, x_end, 1, (0, y_end), 2, (0, z_t), 1.0, Body);
    s.face(0, 0, 1, (0, y_end), 2, (0, z_t), -1.0, Body);
    s.face(2, z_t, 0, (0, x_cb), 1, (0, y_end), 1.0, Body);
    s.face(2, z_t, 0, (x_cf, x_end), 1, (0, y_end), 1.0, Body);
    s.face(1, y_end, 0, (0, x_end), 2, (0, z_t), 1.0, Body);
    s.face(1, 0, 0, (0, x_end), 2, (0, z_t), -1.0, Body);
    s.face(0, x_cb, 1, (0, y_end), 2, (z_t, z_r), -1.0, Cabin);
    s.face(0, x_cf, 1, (0, y_end), 2, (z_t, z_r), 1.0, Cabin);
    s.face(2, z_r, 0, (x_cb, x_cf), 1, (0, y_end), 1.0, Cabin);
    s.face(1, y_end, 0, (x_cb, x_cf), 2, (z_t, z_r), 1.0, Cabin);
    s.face(1, 0, 0, (x_cb, x_cf), 2, (z_t, z_r), -1.0, Cabin);
    s
}

/// Closed cylinder with its axis along y.
fn wheel(center: Vec3, radius: f64, width: f64, segments: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = Vec::with_capacity(2 * segments + 2);
    let y = [center[1] - 0.5 * width, center[1] + 0.5 * width];
    for &yy in &y {
        for k in 0..segments {
            let th = 2.0 * PI * k as f64 / segments as f64;
            v.push([center[0] + radius * th.cos(), yy, center[2] + radius * th.sin()]);
        }
    }
    let c0 = v.len();
    v.push([center[0], y[0], center[2]]);
    v.push([center[0], y[1], center[2]]);
    let ring = |side: usize, k: usize| side * segments + k % segments;
    let mut t = Vec::with_capacity(4 * segments);
    for k in 0..segments {
        let (p0, p0n, p1, p1n) = (ring(0, k), ring(0, k + 1), ring(1, k), ring(1, k + 1));
        t.push([p0, p1n, p0n]);
        t.push([p0, p1, p1n]);
        t.push([c0 + 1, p1n, p1]);
        t.push([c0, p0, p0n]);
    }
    (v, t)
}

/// Builds the boxcar surface at tessellation level `resolution` (≥ 1).
///
/// The body and cabin form one closed shell; each wheel is its own closed
/// shell, separated from the body by a gap so the shells never intersect.
/// Vertices touched by cabin triangles carry the cabin color, wheel vertices
/// the wheel color, everything else the body color.
pub fn generate_boxcar(params: &BoxcarParams, resolution: usize) -> Result<Boxcar, SynthError> {
    params.validate()?;
    if resolution == 0 {
        return Err(SynthError::Params("resolution must be at least 1".into()));
    }
    let l = params.layout();
    let shell = body_shell(params, &l, resolution);
    let mut vertices = shell.vertices;
    let mut triangles = shell.triangles;
    let mut parts = shell.parts;
    let mut vertex_part = vec![Part::Body; vertices.len()];
    for (tri, part) in triangles.iter().zip(&parts) {
        if *part == Part::Cabin {
            for &i in tri {
                vertex_part[i] = Part::Cabin;
            }
        }
    }
    let segments = (8 * resolution).max(12);
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let center = [sx * l.wheel_x, sy * l.wheel_y, params.wheel_radius];
        let (wv, wt) = wheel(center, params.wheel_radius, l.wheel_width, segments);
        let base = vertices.len();
        vertices.extend(wv);
        vertex_part.resize(vertices.len(), Part::Wheel);
        for t in wt {
            triangles.push(t.map(|i| i + base));
            parts.push(Part::Wheel);
        }
    }
    let colors = vertex_part.iter().map(|&p| params.part_colors.get(p)).collect();
    let mesh = Mesh::new(vertices, triangles).with_colors(colors);
    Ok(Boxcar {
        mesh,
        keypoints: params.keypoints(),
        parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vec3, BvhIndex};

    /// Splits a mesh into connected components by shared vertices.
    fn components(mesh: &Mesh) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            p[i] = r;
            r
        }
        for t in &mesh.triangles {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                parent[a] = b;
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            groups.entry(find(&mut parent, t[0])).or_default().push(ti);
        }
        let mut out: Vec<_> = groups.into_values().collect();
        out.sort();
        out
    }

    #[test]
    fn default_boxcar_keypoints_and_watertightness() {
        let p = BoxcarParams::default();
        let car = generate_boxcar(&p, 3).unwrap();
        assert_eq!(car.keypoints.len(), 14);
        let l = p.layout();
        for name in ["wheel_front_left", "wheel_front_right", "wheel_rear_left", "wheel_rear_right"] {
            let k = car.keypoints.get(name).unwrap();
            assert_eq!(k[0].abs(), l.wheel_x);
            assert_eq!(k[1].abs(), l.wheel_y);
            assert_eq!(k[2], p.wheel_radius);
        }
        assert!(car.mesh.is_watertight());
        let comps = components(&car.mesh);
        assert_eq!(comps.len(), 5);
        for c in comps {
            let sub = Mesh::new(
                car.mesh.vertices.clone(),
                c.iter().map(|&t| car.mesh.triangles[t]).collect(),
            );
            assert_eq!(sub.open_edge_count(), 0);
        }
        assert_eq!(car.parts.len(), car.mesh.triangles.len());
        car.mesh.validate().unwrap();
    }

    #[test]
    fn cabin_vertices_carry_cabin_color() {
        let p = BoxcarParams::default();
        let car = generate_boxcar(&p, 2).unwrap();
        let colors = car.mesh.colors.as_ref().unwrap();
        for (t, part) in car.mesh.triangles.iter().zip(&car.parts) {
            if *part != Part::Body {
                for &i in t {
                    assert_eq!(colors[i], p.part_colors.get(*part));
                }
            }
        }
    }

    #[test]
    fn keypoints_match_closed_form() {
        let p = BoxcarParams {
            body_length: 3.3,
            body_width: 1.5,
            body_height: 1.1,
            cabin_length: 1.7,
            cabin_height: 0.5,
            wheel_radius: 0.42,
            ..BoxcarParams::default()
        };
        let k = p.keypoints();
        let bottom = 0.5 * 0.42;
        let roof = bottom + 1.1 + 0.5;
        let offset = -0.125 * (3.3 - 1.7);
        let expect = [
            ("body_rear_right_top", [-1.65, -0.75, bottom + 1.1]),
            ("roof_front", [offset + 0.85, 0.0, roof]),
            ("roof_rear", [offset - 0.85, 0.0, roof]),
            ("wheel_rear_left", [-0.3 * 3.3, 0.75 + 0.3 * 0.42 + 0.3 * 0.42, 0.42]),
        ];
        for (name, e) in expect {
            assert!(vec3::dist(k.get(name).unwrap(), e) < 1e-12, "{name}");
        }
    }

    #[test]
    fn shells_are_signed_correctly() {
        let p = BoxcarParams::default();
        let car = generate_boxcar(&p, 2).unwrap();
        let idx = BvhIndex::build(&car.mesh);
        let l = p.layout();
        // inside the cabin just above the body/cabin seam
        let inside_cabin = [0.5 * (l.cabin_rear + l.cabin_front), 0.0, l.body_top + 0.01];
        assert!(idx.signed_distance(inside_cabin) < 0.0);
        // inside a wheel
        assert!(idx.signed_distance([l.wheel_x, l.wheel_y, p.wheel_radius]) < 0.0);
        // in the gap between body and wheel
        let gap_y = 0.5 * p.body_width + 0.15 * p.wheel_radius;
        assert!(idx.signed_distance([l.wheel_x, gap_y, p.wheel_radius]) > 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = BoxcarParams {
            cabin_length: 5.0,
            ..BoxcarParams::default()
        };
        assert!(generate_boxcar(&bad, 2).is_err());
        let bad = BoxcarParams {
            wheel_radius: 1.0,
            ..BoxcarParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = BoxcarParams {
            body_width: -1.0,
            ..BoxcarParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
