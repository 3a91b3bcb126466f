//! Multi-label voxel volumes and their on-disk formats.
//!
//! Labels are stored flat in x-fastest order: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. `origin_mm` is the physical position of the
//! center of voxel `(0, 0, 0)`.

mod nifti;
mod raw;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::read_nifti;
pub use raw::{read_raw, sidecar_path, write_raw, RawSliceReader, Sidecar, SidecarDtype};

/// Geometry of a grid without its labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTemplate {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl GridTemplate {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        let t = GridTemplate {
            dims,
            spacing_mm,
            origin_mm,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        self.dims[0]
            .checked_mul(self.dims[1])
            .and_then(|v| v.checked_mul(self.dims[2]))
            .ok_or_else(|| Error::InvalidGrid("voxel count overflows".into()))?;
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Volume of a single voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm[0] * self.spacing_mm[1] * self.spacing_mm[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Physical position (mm) of the center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + x as f64 * self.spacing_mm[0],
            self.origin_mm[1] + y as f64 * self.spacing_mm[1],
            self.origin_mm[2] + z as f64 * self.spacing_mm[2],
        ]
    }
}

/// Axis-aligned multi-label volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    template: GridTemplate,
    labels: Vec<u16>,
    /// Voxel-to-world affine (3 rows of 4) of the source file, when it had one.
    affine: Option<[[f64; 4]; 3]>,
}

impl VoxelGrid {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        labels: Vec<u16>,
    ) -> Result<Self> {
        Self::from_template(GridTemplate::new(dims, spacing_mm, origin_mm)?, labels)
    }

    pub fn from_template(template: GridTemplate, labels: Vec<u16>) -> Result<Self> {
        template.validate()?;
        if labels.len() != template.voxel_count() {
            return Err(Error::InvalidGrid(format!(
                "labels length {} does not match dims {:?}",
                labels.len(),
                template.dims
            )));
        }
        Ok(VoxelGrid {
            template,
            labels,
            affine: None,
        })
    }

    pub fn zeros(template: GridTemplate) -> Result<Self> {
        let n = template.voxel_count();
        Self::from_template(template, vec![0; n])
    }

    pub fn with_affine(mut self, affine: Option<[[f64; 4]; 3]>) -> Self {
        self.affine = affine;
        self
    }

    pub fn template(&self) -> &GridTemplate {
        &self.template
    }

    pub fn dims(&self) -> [usize; 3] {
        self.template.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.template.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.template.origin_mm
    }

    pub fn affine(&self) -> Option<&[[f64; 4]; 3]> {
        self.affine.as_ref()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u16> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.template.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u16) {
        let i = self.template.index(x, y, z);
        self.labels[i] = value;
    }

    /// z-slices in storage order, each `nx * ny` labels long.
    pub fn slices(&self) -> std::slice::ChunksExact<'_, u16> {
        self.labels.chunks_exact(self.template.slice_len())
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&v| v <= 1)
    }

    /// Binary mask of the voxels equal to `structure_id`.
    pub fn extract_mask(&self, structure_id: u16) -> VoxelGrid {
        let labels = self
            .labels
            .iter()
            .map(|&v| u16::from(v == structure_id))
            .collect();
        VoxelGrid {
            template: self.template,
            labels,
            affine: self.affine,
        }
    }

    /// Sub-grid of voxels `lo..=hi` (inclusive corners); the origin moves so
    /// physical positions are unchanged.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<VoxelGrid> {
        let d = self.template.dims;
        if (0..3).any(|k| lo[k] > hi[k] || hi[k] >= d[k]) {
            return Err(Error::InvalidArgument(format!(
                "crop {lo:?}..={hi:?} outside grid {d:?}"
            )));
        }
        let s = self.template.spacing_mm;
        let o = self.template.origin_mm;
        let template = GridTemplate::new(
            [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1],
            s,
            [0, 1, 2].map(|k| o[k] + lo[k] as f64 * s[k]),
        )?;
        let nx = template.dims[0];
        let mut labels = Vec::with_capacity(template.voxel_count());
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let src = self.template.index(lo[0], y, z);
                labels.extend_from_slice(&self.labels[src..src + nx]);
            }
        }
        Ok(VoxelGrid {
            template,
            labels,
            affine: None,
        })
    }

    /// Inclusive voxel bounding box of every nonzero label.
    pub fn label_bounds(&self) -> std::collections::BTreeMap<u16, ([usize; 3], [usize; 3])> {
        let [nx, ny, _] = self.template.dims;
        let mut out = std::collections::BTreeMap::new();
        for (i, &v) in self.labels.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            let e = out.entry(v).or_insert((p, p));
            for k in 0..3 {
                e.0[k] = e.0[k].min(p[k]);
                e.1[k] = e.1[k].max(p[k]);
            }
        }
        out
    }

    /// Copy with a border of `pad` zero voxels on every side; the origin
    /// moves so physical positions of existing voxels are unchanged.
    pub fn padded(&self, pad: usize) -> VoxelGrid {
        let [nx, ny, nz] = self.template.dims;
        let dims = [nx + 2 * pad, ny + 2 * pad, nz + 2 * pad];
        let s = self.template.spacing_mm;
        let o = self.template.origin_mm;
        let template = GridTemplate {
            dims,
            spacing_mm: s,
            origin_mm: [
                o[0] - pad as f64 * s[0],
                o[1] - pad as f64 * s[1],
                o[2] - pad as f64 * s[2],
            ],
        };
        let mut labels = vec![0u16; template.voxel_count()];
        for z in 0..nz {
            for y in 0..ny {
                let src = self.template.index(0, y, z);
                let dst = template.index(pad, y + pad, z + pad);
                labels[dst..dst + nx].copy_from_slice(&self.labels[src..src + nx]);
            }
        }
        VoxelGrid {
            template,
            labels,
            affine: None,
        }
    }
}

/// Supported on-disk encodings for [`read_label_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridFormat {
    RawSidecar,
    Nifti1,
}

impl GridFormat {
    /// Guess from the file name: `.nii` / `.nii.gz` are NIfTI, anything else raw.
    pub fn from_path(path: &Path) -> GridFormat {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            GridFormat::Nifti1
        } else {
            GridFormat::RawSidecar
        }
    }
}

pub fn read_label_grid(path: impl AsRef<Path>, format: GridFormat) -> Result<VoxelGrid> {
    match format {
        GridFormat::RawSidecar => read_raw(path.as_ref()),
        GridFormat::Nifti1 => read_nifti(path.as_ref()),
    }
}

/// Writes the canonical raw-sidecar form: little-endian u16 payload at
/// `path` plus JSON sidecar at `<path>.json`.
pub fn write_label_grid(grid: &VoxelGrid, path: impl AsRef<Path>, compress: bool) -> Result<()> {
    write_raw(grid, path.as_ref(), compress)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let t = GridTemplate::new([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(t.index(1, 0, 0), 1);
        assert_eq!(t.index(0, 1, 0), 3);
        assert_eq!(t.index(0, 0, 1), 12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(VoxelGrid::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], vec![0; 8]).is_err());
        assert!(VoxelGrid::new([2, 2, 0], [1.0; 3], [0.0; 3], vec![]).is_err());
        assert!(VoxelGrid::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0; 7]).is_err());
    }

    #[test]
    fn extract_mask_matches_label() {
        let g = VoxelGrid::new([2, 2, 1], [1.0; 3], [0.0; 3], vec![0, 5, 7, 5]).unwrap();
        assert_eq!(g.extract_mask(5).labels(), &[0, 1, 0, 1]);
        assert_eq!(g.extract_mask(9).labels(), &[0, 0, 0, 0]);
        assert_eq!(g.extract_mask(5).template(), g.template());
    }

    #[test]
    fn crop_and_bounds() {
        let mut g = VoxelGrid::new([4, 3, 2], [1.0, 2.0, 3.0], [1.0; 3], vec![0; 24]).unwrap();
        g.set(1, 1, 0, 4);
        g.set(2, 2, 1, 4);
        g.set(3, 0, 1, 6);
        let b = g.label_bounds();
        assert_eq!(b[&4], ([1, 1, 0], [2, 2, 1]));
        assert_eq!(b[&6], ([3, 0, 1], [3, 0, 1]));
        let c = g.crop([1, 1, 0], [2, 2, 1]).unwrap();
        assert_eq!(c.dims(), [2, 2, 2]);
        assert_eq!(c.get(0, 0, 0), 4);
        assert_eq!(c.get(1, 1, 1), 4);
        assert_eq!(c.template().voxel_center(0, 0, 0), g.template().voxel_center(1, 1, 0));
        assert!(g.crop([0, 0, 0], [4, 0, 0]).is_err());
    }

    #[test]
    fn padding_keeps_physical_positions() {
        let mut g = VoxelGrid::new([2, 2, 2], [2.0, 1.0, 0.5], [10.0, 0.0, -1.0], vec![0; 8])
            .unwrap();
        g.set(1, 0, 1, 3);
        let p = g.padded(1);
        assert_eq!(p.dims(), [4, 4, 4]);
        assert_eq!(p.get(2, 1, 2), 3);
        assert_eq!(
            p.template().voxel_center(2, 1, 2),
            g.template().voxel_center(1, 0, 1)
        );
        assert_eq!(p.labels().iter().filter(|&&v| v != 0).count(), 1);
    }
}
