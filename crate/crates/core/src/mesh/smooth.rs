//! Uniform-weight graph Laplacian smoothing over a sparse vertex adjacency.

use rayon::prelude::*;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Symmetric vertex adjacency in compressed sparse row form with unit edge
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    row_sums: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.row_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_sums.is_empty()
    }

    /// Neighbours of vertex `v`, ascending.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }
}

/// Deduplicated union of triangle edges, stored in both directions.
pub fn build_adjacency(mesh: &TriangleMesh) -> AdjacencyMatrix {
    let n = mesh.vertices.len();
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(mesh.triangles.len() * 6);
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            pairs.push((a, b));
            pairs.push((b, a));
        }
    }
    pairs.par_sort_unstable();
    pairs.dedup();
    let mut offsets = vec![0usize; n + 1];
    for &(a, _) in &pairs {
        offsets[a as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let neighbors: Vec<u32> = pairs.into_iter().map(|(_, b)| b).collect();
    let row_sums = (0..n).map(|v| (offsets[v + 1] - offsets[v]) as f64).collect();
    AdjacencyMatrix {
        offsets,
        neighbors,
        row_sums,
    }
}

/// `iterations` rounds of `v <- (1 - λ)·v + λ·mean(neighbours)`, all vertices
/// updated simultaneously. Topology is unchanged; isolated vertices stay put.
pub fn laplacian_smooth(mesh: &TriangleMesh, lambda: f64, iterations: usize) -> Result<TriangleMesh> {
    let adj = build_adjacency(mesh);
    laplacian_smooth_with(mesh, &adj, lambda, iterations)
}

/// As [`laplacian_smooth`] with a precomputed adjacency.
pub fn laplacian_smooth_with(
    mesh: &TriangleMesh,
    adj: &AdjacencyMatrix,
    lambda: f64,
    iterations: usize,
) -> Result<TriangleMesh> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "smoothing weight must be in [0, 1], got {lambda}"
        )));
    }
    if adj.len() != mesh.vertices.len() {
        return Err(Error::InvalidArgument(
            "adjacency does not match the mesh".into(),
        ));
    }
    let mut out = mesh.clone();
    if lambda == 0.0 {
        return Ok(out);
    }
    let mut next = out.vertices.clone();
    for _ in 0..iterations {
        let cur = &out.vertices;
        next.par_iter_mut().enumerate().for_each(|(i, v)| {
            let nb = adj.neighbors(i);
            if nb.is_empty() {
                *v = cur[i];
                return;
            }
            let mut s = [0.0; 3];
            for &j in nb {
                let p = cur[j as usize];
                s[0] += p[0];
                s[1] += p[1];
                s[2] += p[2];
            }
            let w = adj.row_sums[i];
            for k in 0..3 {
                v[k] = (1.0 - lambda) * cur[i][k] + lambda * (s[k] / w);
            }
        });
        std::mem::swap(&mut out.vertices, &mut next);
    }
    Ok(out)
}
