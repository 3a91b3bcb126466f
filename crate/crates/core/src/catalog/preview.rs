//! Orthogonal maximum-label projections written as RGB PNGs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::InvalidArgument(format!("unknown axis {other:?}"))),
        }
    }
}

/// Largest label along `axis` for every pixel of the orthogonal plane.
/// Projecting along x or y puts z on the vertical, highest slice on top.
pub fn max_label_projection(grid: &VoxelGrid, axis: Axis) -> (usize, usize, Vec<u16>) {
    let [nx, ny, nz] = grid.dims();
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut img = vec![0u16; w * h];
    for (z, slice) in grid.slices().enumerate() {
        for y in 0..ny {
            let row = &slice[y * nx..(y + 1) * nx];
            match axis {
                Axis::X => {
                    let m = row.iter().copied().max().unwrap_or(0);
                    let p = &mut img[(nz - 1 - z) * w + y];
                    *p = (*p).max(m);
                }
                Axis::Y => {
                    let dst = &mut img[(nz - 1 - z) * w..(nz - z) * w];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d = (*d).max(v);
                    }
                }
                Axis::Z => {
                    let dst = &mut img[y * w..(y + 1) * w];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d = (*d).max(v);
                    }
                }
            }
        }
    }
    (w, h, img)
}

/// Stable pseudo-random colour per label; background is black.
pub fn label_color(label: u16) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let h = (label as u32).wrapping_mul(2_654_435_761);
    [
        64 + (h >> 24) as u8 % 192,
        64 + (h >> 16) as u8 % 192,
        64 + (h >> 8) as u8 % 192,
    ]
}

pub fn encode_png<W: Write>(w: W, width: usize, height: usize, labels: &[u16]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Catalog(format!("png: {e}")))?;
    let data: Vec<u8> = labels.iter().flat_map(|&l| label_color(l)).collect();
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Catalog(format!("png: {e}")))
}

/// Writes `x.png`, `y.png` and `z.png` into `dir`.
pub fn write_previews(grid: &VoxelGrid, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for axis in Axis::ALL {
        let (w, h, img) = max_label_projection(grid, axis);
        let path = dir.join(format!("{}.png", axis.as_str()));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        encode_png(std::io::BufWriter::new(file), w, h, &img)?;
    }
    Ok(())
}
