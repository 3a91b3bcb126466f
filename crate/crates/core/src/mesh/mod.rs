//! Triangle meshes: extraction, smoothing, measurement and export.

mod io;
mod marching;
mod smooth;
mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{export_mesh, read_ply, write_obj, write_ply, write_stl, MeshFormat};
pub use marching::{marching_cubes, marching_cubes_unpadded};
pub use smooth::{build_adjacency, laplacian_smooth, laplacian_smooth_with, AdjacencyMatrix};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    /// Positions in mm.
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = TriangleMesh {
            vertices,
            triangles,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n > u32::MAX as usize {
            return Err(Error::Mesh("too many vertices".into()));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(Error::Mesh(format!("triangle {i} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Mesh(format!("triangle {i} is degenerate: {t:?}")));
            }
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    fn corners(&self, t: &[u32; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    /// Unique undirected edges, as `(lo, hi)` vertex pairs.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| undirected(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.triangle_count() as i64
    }

    /// Axis-aligned bounds, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    /// Reverses every triangle.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }

    /// Moves every vertex by `offset` mm.
    pub fn translated(&self, offset: [f64; 3]) -> TriangleMesh {
        TriangleMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]])
                .collect(),
            triangles: self.triangles.clone(),
        }
    }
}

fn undirected(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed enclosed volume, `Σ det(v0, v1, v2) / 6`; positive for outward
/// orientation.
pub fn mesh_volume(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            dot(a, cross(b, c))
        })
        .sum::<f64>()
        / 6.0
}

pub fn mesh_surface_area(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            let n = cross(sub(b, a), sub(c, a));
            0.5 * dot(n, n).sqrt()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatertightReport {
    pub watertight: bool,
    /// Edges used by a single triangle.
    pub boundary_edges: usize,
    /// Edges used by three or more triangles.
    pub non_manifold_edges: usize,
    /// Edges used twice in the same direction.
    pub misoriented_edges: usize,
}

/// Watertight iff every edge is used exactly twice, once in each direction.
pub fn check_watertight(mesh: &TriangleMesh) -> WatertightReport {
    let mut uses: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = uses.entry(undirected(a, b)).or_default();
            if a < b {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    let mut r = WatertightReport {
        watertight: true,
        boundary_edges: 0,
        non_manifold_edges: 0,
        misoriented_edges: 0,
    };
    for &(fwd, back) in uses.values() {
        match fwd + back {
            1 => r.boundary_edges += 1,
            2 if fwd != 1 => r.misoriented_edges += 1,
            2 => {}
            _ => r.non_manifold_edges += 1,
        }
    }
    r.watertight = r.boundary_edges == 0 && r.non_manifold_edges == 0 && r.misoriented_edges == 0;
    r
}

/// Sum over edges of (forward uses − backward uses); zero on every edge of a
/// consistently oriented closed mesh.
pub fn orientation_imbalance(mesh: &TriangleMesh) -> i64 {
    let mut net: HashMap<(u32, u32), i64> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *net.entry(undirected(a, b)).or_default() += if a < b { 1 } else { -1 };
        }
    }
    net.values().map(|v| v.abs()).sum()
}

/// Axis-aligned box `[lo, hi]` with 12 outward triangles.
pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> TriangleMesh {
    let vertices = (0..8)
        .map(|c| {
            [
                if c & 1 == 0 { lo[0] } else { hi[0] },
                if c & 2 == 0 { lo[1] } else { hi[1] },
                if c & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
        .collect();
    let triangles = vec![
        [0, 2, 3],
        [0, 3, 1], // z = lo
        [4, 5, 7],
        [4, 7, 6], // z = hi
        [0, 1, 5],
        [0, 5, 4], // y = lo
        [2, 6, 7],
        [2, 7, 3], // y = hi
        [0, 4, 6],
        [0, 6, 2], // x = lo
        [1, 3, 7],
        [1, 7, 5], // x = hi
    ];
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Regular tetrahedron centred on the origin with unit circumradius.
pub fn regular_tetrahedron() -> TriangleMesh {
    let s = 1.0 / 3f64.sqrt();
    TriangleMesh {
        vertices: vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
        triangles: vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    }
}
