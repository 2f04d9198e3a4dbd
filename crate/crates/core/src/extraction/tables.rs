//! Marching-cubes case table, built once from face rules instead of being
//! transcribed.
//!
//! On every cube face the level-set crossings are joined so that diagonal
//! inside corners stay separated. Neighbouring cells make the same choice on
//! their shared face, which keeps the surface closed. Segments are directed
//! so each boundary loop winds counter-clockwise around the normal that
//! points toward increasing field.

use std::sync::OnceLock;

/// Corner offsets in the usual numbering: bottom ring 0..4, top ring 4..8.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the 12 cube edges.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Corner cycles of the faces, counter-clockwise seen from outside.
pub(crate) const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners")
}

/// Triangles (as cube-edge triples) for a case whose bit `c` is set when
/// corner `c` lies below the iso value.
fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next = [None::<usize>; 12];
    for face in FACES {
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|i| {
                let (a, b) = (face[i], face[(i + 1) % 4]);
                (inside(a) != inside(b)).then(|| (edge_between(a, b), inside(b)))
            })
            .collect();
        for (p, &(edge, entering)) in crossings.iter().enumerate() {
            if entering {
                next[edge] = Some(crossings[(p + 1) % crossings.len()].0);
            }
        }
    }
    let mut seen = [false; 12];
    let mut triangles = Vec::new();
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut ring = vec![start];
        seen[start] = true;
        let mut at = next[start].expect("checked");
        while at != start {
            seen[at] = true;
            ring.push(at);
            at = next[at].expect("crossings pair up into loops");
        }
        for w in 1..ring.len() - 1 {
            triangles.push([ring[0] as u8, ring[w] as u8, ring[w + 1] as u8]);
        }
    }
    triangles
}

pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(triangulate_case))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(c: usize) -> [f64; 3] {
        CORNERS[c].map(|v| v as f64)
    }

    #[test]
    fn faces_wind_outward() {
        for face in FACES {
            let [a, b, c, _] = face.map(pos);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
            let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            let centre: Vec<f64> = (0..3).map(|k| face.iter().map(|&q| pos(q)[k]).sum::<f64>() / 4.0 - 0.5).collect();
            assert!(n.iter().zip(&centre).map(|(x, y)| x * y).sum::<f64>() > 0.0, "{face:?}");
        }
    }

    #[test]
    fn single_corner_cases() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        let cyc = |tri: [u8; 3], want: [u8; 3]| (0..3).any(|r| tri == [want[r], want[(r + 1) % 3], want[(r + 2) % 3]]);
        // corner 0 below: triangle on edges 0, 3, 8 facing away from the origin
        assert_eq!(t[1].len(), 1);
        assert!(cyc(t[1][0], [0, 3, 8]), "{:?}", t[1]);
        // complement flips the winding
        assert_eq!(t[254].len(), 1);
        assert!(cyc(t[254][0], [0, 8, 3]), "{:?}", t[254]);
        assert!(t.iter().all(|c| c.len() <= 6));
    }

    #[test]
    fn every_case_is_closed_on_the_cube_boundary() {
        // each crossed edge is used by exactly the loop edges that meet it
        for (case, tris) in case_table().iter().enumerate() {
            let inside = |c: usize| case & (1 << c) != 0;
            let crossed: Vec<usize> = (0..12).filter(|&e| inside(EDGES[e][0]) != inside(EDGES[e][1])).collect();
            let mut used = [false; 12];
            tris.iter().flatten().for_each(|&e| used[e as usize] = true);
            for e in 0..12 {
                assert_eq!(used[e], crossed.contains(&e), "case {case} edge {e}");
            }
            // the triangle fan of a loop with k crossings has k-2 triangles
            let mut count = std::collections::HashMap::new();
            for t in tris {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                }
            }
            let boundary = count.values().filter(|&&c| c == 1).count();
            assert_eq!(boundary, crossed.len(), "case {case}");
        }
    }
}
