//! Marching-cubes case table, generated at first use.
//!
//! Each of the 256 corner configurations is resolved face by face. On a face
//! with two crossings the crossing points are joined; on an ambiguous face
//! (two diagonal inside corners) each inside corner is cut off on its own.
//! Face decisions depend only on the face's four corners, so neighbouring
//! cubes always agree and the surface closes.
//!
//! Segments are directed so the enclosed region lies to their left when seen
//! from outside; chaining them gives oriented loops, which are then
//! triangulated.

use std::sync::OnceLock;

/// Corner `c` sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
pub(crate) fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CubeEdge {
    /// Lower-coordinate corner.
    pub corner: usize,
    pub axis: usize,
}

impl CubeEdge {
    #[cfg(test)]
    fn upper(self) -> usize {
        self.corner | (1 << self.axis)
    }

    fn midpoint(self) -> [f64; 3] {
        let mut p = corner_offset(self.corner).map(|v| v as f64);
        p[self.axis] += 0.5;
        p
    }
}

pub(crate) fn cube_edges() -> &'static [CubeEdge; 12] {
    static EDGES: OnceLock<[CubeEdge; 12]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut out = [CubeEdge { corner: 0, axis: 0 }; 12];
        let mut n = 0;
        for axis in 0..3 {
            for c in 0..8 {
                if c & (1 << axis) == 0 {
                    out[n] = CubeEdge { corner: c, axis };
                    n += 1;
                }
            }
        }
        out
    })
}

fn edge_index(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (lo ^ hi).trailing_zeros() as usize;
    cube_edges()
        .iter()
        .position(|e| e.corner == lo && e.axis == axis)
        .expect("corners are adjacent")
}

/// Corners of face `(axis, side)` in cyclic order, and its outward normal.
fn face(axis: usize, side: usize) -> ([usize; 4], [f64; 3]) {
    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
    let base = side << axis;
    let corners = [
        base,
        base | (1 << b),
        base | (1 << b) | (1 << c),
        base | (1 << c),
    ];
    let mut m = [0.0; 3];
    m[axis] = if side == 1 { 1.0 } else { -1.0 };
    (corners, m)
}

fn faces_of_edge(e: usize) -> [(usize, usize); 2] {
    let edge = cube_edges()[e];
    let lo = corner_offset(edge.corner);
    let mut out = [(0, 0); 2];
    let mut n = 0;
    for axis in 0..3 {
        if axis != edge.axis {
            out[n] = (axis, lo[axis]);
            n += 1;
        }
    }
    out
}

pub(crate) fn edges_share_face(a: usize, b: usize) -> bool {
    let fa = faces_of_edge(a);
    faces_of_edge(b).iter().any(|f| fa.contains(f))
}

/// Triangle corner in a case table: a cube edge, or the centroid of a loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TriVertex {
    Edge(u8),
    Centroid(u8),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CaseEntry {
    pub loops: Vec<Vec<u8>>,
    pub triangles: Vec<[TriVertex; 3]>,
}

pub(crate) fn case_table() -> &'static [CaseEntry] {
    static TABLE: OnceLock<Vec<CaseEntry>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mean(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut s = [0.0; 3];
    for p in points {
        for i in 0..3 {
            s[i] += p[i] / n;
        }
    }
    s
}

/// Directed segment `from -> to` with the cut-off inside corners at `c_in`.
fn directed(e1: usize, e2: usize, c_in: [f64; 3], normal: [f64; 3]) -> (usize, usize) {
    let (p, q) = (cube_edges()[e1].midpoint(), cube_edges()[e2].midpoint());
    let mid = mean(&[p, q]);
    let w = sub(mid, c_in);
    let t = cross(w, normal);
    let s = dot(sub(q, p), t);
    debug_assert!(s.abs() > 1e-12);
    if s > 0.0 {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

fn build_case(case: usize) -> CaseEntry {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        for side in 0..2 {
            let (q, m) = face(axis, side);
            let crossing: Vec<usize> = (0..4)
                .filter(|&i| inside(q[i]) != inside(q[(i + 1) % 4]))
                .collect();
            let edge = |i: usize| edge_index(q[i], q[(i + 1) % 4]);
            let pos = |c: usize| corner_offset(c).map(|v| v as f64);
            let segments: Vec<(usize, usize, [f64; 3])> = match crossing.len() {
                0 => vec![],
                2 => {
                    let ins: Vec<[f64; 3]> =
                        q.iter().filter(|&&c| inside(c)).map(|&c| pos(c)).collect();
                    vec![(edge(crossing[0]), edge(crossing[1]), mean(&ins))]
                }
                4 => (0..4)
                    .filter(|&i| inside(q[i]))
                    .map(|i| (edge((i + 3) % 4), edge(i), pos(q[i])))
                    .collect(),
                _ => unreachable!("crossings around a square come in pairs"),
            };
            for (a, b, c_in) in segments {
                let (from, to) = directed(a, b, c_in, m);
                debug_assert_eq!(next[from], usize::MAX, "case {case}: edge {from} leaves twice");
                next[from] = to;
            }
        }
    }

    let mut seen = [false; 12];
    let mut entry = CaseEntry::default();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e];
        }
        debug_assert_eq!(e, start, "case {case}: open loop");
        triangulate(&lp, entry.loops.len() as u8, &mut entry.triangles);
        entry.loops.push(lp);
    }
    entry
}

/// Fan from the first apex whose diagonals avoid pairs of edges on a common
/// face (such a diagonal would lie in the cube face); otherwise fan around the
/// loop centroid.
fn triangulate(lp: &[u8], loop_idx: u8, out: &mut Vec<[TriVertex; 3]>) {
    let n = lp.len();
    let e = |i: usize| TriVertex::Edge(lp[i % n]);
    if n == 3 {
        out.push([e(0), e(1), e(2)]);
        return;
    }
    let apex = (0..n).find(|&j| {
        (2..n - 1).all(|k| !edges_share_face(lp[j] as usize, lp[(j + k) % n] as usize))
    });
    match apex {
        Some(j) => {
            for i in 1..n - 1 {
                out.push([e(j), e(j + i), e(j + i + 1)]);
            }
        }
        None => {
            let c = TriVertex::Centroid(loop_idx);
            for i in 0..n {
                out.push([c, e(i), e(i + 1)]);
            }
        }
    }
}

/// Local position of a case-table vertex within the unit cube.
pub(crate) fn local_position(v: TriVertex, loops: &[Vec<u8>]) -> [f64; 3] {
    match v {
        TriVertex::Edge(e) => cube_edges()[e as usize].midpoint(),
        TriVertex::Centroid(l) => {
            let pts: Vec<[f64; 3]> = loops[l as usize]
                .iter()
                .map(|&e| cube_edges()[e as usize].midpoint())
                .collect();
            mean(&pts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_distinct_edges() {
        let edges = cube_edges();
        for (i, e) in edges.iter().enumerate() {
            assert_eq!(edge_index(e.corner, e.upper()), i);
        }
    }

    #[test]
    fn trivial_cases_empty() {
        assert!(case_table()[0].triangles.is_empty());
        assert!(case_table()[255].triangles.is_empty());
    }

    #[test]
    fn every_crossing_edge_in_exactly_one_loop() {
        for (case, entry) in case_table().iter().enumerate() {
            let mut used = [0; 12];
            for lp in &entry.loops {
                for &e in lp {
                    used[e as usize] += 1;
                }
            }
            for (i, e) in cube_edges().iter().enumerate() {
                let crosses = (case >> e.corner & 1) != (case >> e.upper() & 1);
                assert_eq!(used[i], usize::from(crosses), "case {case} edge {i}");
            }
        }
    }

    #[test]
    fn single_corner_is_one_outward_triangle() {
        for c in 0..8 {
            let entry = &case_table()[1 << c];
            assert_eq!(entry.triangles.len(), 1);
            let [a, b, d] = entry.triangles[0].map(|v| local_position(v, &entry.loops));
            let n = cross(sub(b, a), sub(d, a));
            let corner = corner_offset(c).map(|v| v as f64);
            // Normal points away from the inside corner.
            assert!(dot(n, sub(a, corner)) > 0.0, "corner {c}");
        }
    }

    #[test]
    fn complement_cases_reverse_orientation_on_unambiguous_cases() {
        // Case with corners 0 and 1 inside vs its complement: same loop, opposite
        // direction.
        let a = &case_table()[0b0000_0011];
        let b = &case_table()[0b1111_1100];
        assert_eq!(a.loops.len(), 1);
        let mut rev = b.loops[0].clone();
        rev.reverse();
        let k = rev.iter().position(|&e| e == a.loops[0][0]).unwrap();
        rev.rotate_left(k);
        assert_eq!(rev, a.loops[0]);
    }
}
