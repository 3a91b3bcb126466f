//! Marching cubes over a binary mask.
//!
//! The field is vertex-centred: each voxel value sits at the voxel centre and
//! cubes span eight neighbouring centres. With a 0/1 field and iso 0.5 the
//! linear edge interpolant always lands on the edge midpoint.

use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::{case_table, cube_edges, local_position, TriVertex};
use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;

/// Surface of the nonzero voxels of `mask`, padded by one empty voxel on
/// every side so the result is closed even where the mask touches the border.
pub fn marching_cubes(mask: &VoxelGrid) -> Result<TriangleMesh> {
    marching_cubes_unpadded(&mask.padded(1))
}

/// Marching cubes without padding. Foreground touching the outer voxel layer
/// yields an open surface.
pub fn marching_cubes_unpadded(mask: &VoxelGrid) -> Result<TriangleMesh> {
    if !mask.is_binary() {
        return Err(Error::InvalidArgument(
            "marching cubes needs a binary mask".into(),
        ));
    }
    let [nx, ny, nz] = mask.dims();
    if nx < 2 || ny < 2 || nz < 2 {
        return Ok(TriangleMesh::default());
    }
    let labels = mask.labels();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let table = case_table();
    let edges = cube_edges();

    // Per z-layer of cubes: triangles over global vertex keys, plus centroid
    // positions in local layer order.
    let layers: Vec<(Vec<[Key; 3]>, Vec<[f64; 3]>)> = (0..nz - 1)
        .into_par_iter()
        .map(|z| {
            let mut tris = Vec::new();
            let mut centroids = Vec::new();
            for y in 0..ny - 1 {
                for x in 0..nx - 1 {
                    let mut case = 0usize;
                    for c in 0..8 {
                        let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                        if labels[idx(x + dx, y + dy, z + dz)] != 0 {
                            case |= 1 << c;
                        }
                    }
                    let entry = &table[case];
                    if entry.triangles.is_empty() {
                        continue;
                    }
                    let mut centroid_keys: Vec<Option<Key>> = vec![None; entry.loops.len()];
                    for t in &entry.triangles {
                        tris.push(t.map(|v| match v {
                            TriVertex::Edge(e) => {
                                let e = edges[e as usize];
                                let (dx, dy, dz) =
                                    (e.corner & 1, (e.corner >> 1) & 1, (e.corner >> 2) & 1);
                                Key::Edge((idx(x + dx, y + dy, z + dz) * 3 + e.axis) as u64)
                            }
                            TriVertex::Centroid(l) => {
                                *centroid_keys[l as usize].get_or_insert_with(|| {
                                    let p = local_position(v, &entry.loops);
                                    centroids.push([x as f64 + p[0], y as f64 + p[1], z as f64 + p[2]]);
                                    Key::Centroid(centroids.len() - 1)
                                })
                            }
                        }));
                    }
                }
            }
            (tris, centroids)
        })
        .collect();

    let tpl = mask.template();
    let to_mm = |p: [f64; 3]| {
        [
            tpl.origin_mm[0] + p[0] * tpl.spacing_mm[0],
            tpl.origin_mm[1] + p[1] * tpl.spacing_mm[1],
            tpl.origin_mm[2] + p[2] * tpl.spacing_mm[2],
        ]
    };
    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (tris, centroids) in layers {
        let mut local: Vec<Option<u32>> = vec![None; centroids.len()];
        for t in tris {
            triangles.push(t.map(|k| match k {
                Key::Edge(key) => *index.entry(key).or_insert_with(|| {
                    let vox = (key / 3) as usize;
                    let axis = (key % 3) as usize;
                    let mut p = [
                        (vox % nx) as f64,
                        ((vox / nx) % ny) as f64,
                        (vox / (nx * ny)) as f64,
                    ];
                    p[axis] += 0.5;
                    vertices.push(to_mm(p));
                    (vertices.len() - 1) as u32
                }),
                Key::Centroid(i) => *local[i].get_or_insert_with(|| {
                    vertices.push(to_mm(centroids[i]));
                    (vertices.len() - 1) as u32
                }),
            }));
        }
    }
    let mesh = TriangleMesh {
        vertices,
        triangles,
    };
    debug_assert!(mesh.validate().is_ok());
    Ok(mesh)
}

#[derive(Debug, Clone, Copy)]
enum Key {
    Edge(u64),
    Centroid(usize),
}
