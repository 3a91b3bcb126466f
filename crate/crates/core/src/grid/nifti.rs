//! Read-only NIfTI-1 subset: single-file `.nii` / `.nii.gz` label volumes.
//!
//! Only `uint8`, `int16` (non-negative) and `uint16` voxels are accepted.
//! The orientation matrix must be axis-aligned; voxels are never resampled
//! or reordered, so left/right stays exactly as stored.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{GridTemplate, VoxelGrid};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_UINT16: i16 = 512;

/// Relative tolerance for treating off-diagonal affine terms as zero.
const AXIS_TOL: f64 = 1e-6;

#[derive(Clone, Copy)]
struct Endian {
    little: bool,
}

impl Endian {
    fn i16(self, b: &[u8], at: usize) -> i16 {
        let a = [b[at], b[at + 1]];
        if self.little {
            i16::from_le_bytes(a)
        } else {
            i16::from_be_bytes(a)
        }
    }

    fn i32(self, b: &[u8], at: usize) -> i32 {
        let a = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        if self.little {
            i32::from_le_bytes(a)
        } else {
            i32::from_be_bytes(a)
        }
    }

    fn f32(self, b: &[u8], at: usize) -> f32 {
        let a = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        if self.little {
            f32::from_le_bytes(a)
        } else {
            f32::from_be_bytes(a)
        }
    }

    fn u16(self, b: &[u8]) -> u16 {
        if self.little {
            u16::from_le_bytes([b[0], b[1]])
        } else {
            u16::from_be_bytes([b[0], b[1]])
        }
    }
}

fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn quaternion_affine(e: Endian, h: &[u8], pixdim: &[f64; 8]) -> [[f64; 4]; 3] {
    let b = f64::from(e.f32(h, 256));
    let c = f64::from(e.f32(h, 260));
    let d = f64::from(e.f32(h, 264));
    let offset = [
        f64::from(e.f32(h, 268)),
        f64::from(e.f32(h, 272)),
        f64::from(e.f32(h, 276)),
    ];
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let scale = [pixdim[1], pixdim[2], pixdim[3] * qfac];
    let mut m = [[0.0; 4]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for j in 0..3 {
            row[j] = r[i][j] * scale[j];
        }
        row[3] = offset[i];
    }
    m
}

fn check_axis_aligned(m: &[[f64; 4]; 3]) -> Result<()> {
    let scale = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j].abs())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Err(Error::Nifti("orientation matrix is all zero".into()));
    }
    for (i, row) in m.iter().enumerate() {
        if row[i].abs() <= AXIS_TOL * scale {
            return Err(Error::Nifti(format!(
                "affine is not axis-aligned: voxel axis {i} does not map onto world axis {i} \
                 (permuted or rotated orientation); resample to an axis-aligned orientation \
                 before ingest, reorienting silently would swap laterality"
            )));
        }
        for (j, v) in row.iter().take(3).enumerate() {
            if i != j && v.abs() > AXIS_TOL * scale {
                return Err(Error::Nifti(format!(
                    "affine is not axis-aligned: term [{i}][{j}] = {v} (oblique or rotated \
                     acquisition); resample to an axis-aligned orientation before ingest"
                )));
            }
        }
    }
    Ok(())
}

pub fn read_nifti(path: &Path) -> Result<VoxelGrid> {
    let bytes = load_bytes(path)?;
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Nifti(format!(
            "file too short for a NIfTI-1 header: {} bytes",
            bytes.len()
        )));
    }
    let e = if (Endian { little: true }).i32(&bytes, 0) == HEADER_LEN as i32 {
        Endian { little: true }
    } else if (Endian { little: false }).i32(&bytes, 0) == HEADER_LEN as i32 {
        Endian { little: false }
    } else {
        return Err(Error::Nifti("sizeof_hdr is not 348".into()));
    };
    let h = &bytes[..HEADER_LEN];
    match &h[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::Nifti(
                "header/image pair (.hdr/.img) files are not supported".into(),
            ))
        }
        _ => return Err(Error::Nifti("bad magic, expected \"n+1\"".into())),
    }

    let dim: Vec<i16> = (0..8).map(|k| e.i16(h, 40 + 2 * k)).collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) || dim[4..=ndim as usize].iter().any(|&d| d != 1) {
        return Err(Error::Nifti(format!(
            "expected a single 3-D volume, got dim = {dim:?}"
        )));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(Error::Nifti(format!("non-positive dims {:?}", &dim[1..4])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = e.i16(h, 70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        other => {
            return Err(Error::Nifti(format!(
                "unsupported datatype code {other}; label maps must be uint8, int16 or uint16"
            )))
        }
    };

    let mut pixdim = [0.0f64; 8];
    for (k, p) in pixdim.iter_mut().enumerate() {
        *p = f64::from(e.f32(h, 76 + 4 * k));
    }
    let slope = e.f32(h, 112);
    let inter = e.f32(h, 116);
    if !(slope == 0.0 || slope == 1.0) || inter != 0.0 {
        return Err(Error::Nifti(format!(
            "scaled voxel values (scl_slope={slope}, scl_inter={inter}) are not label data"
        )));
    }

    let qform_code = e.i16(h, 252);
    let sform_code = e.i16(h, 254);
    let affine = if sform_code > 0 {
        let mut m = [[0.0; 4]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f64::from(e.f32(h, 280 + 16 * i + 4 * j));
            }
        }
        Some(m)
    } else if qform_code > 0 {
        Some(quaternion_affine(e, h, &pixdim))
    } else {
        None
    };
    if let Some(m) = &affine {
        check_axis_aligned(m)?;
    }
    let origin = affine.map_or([0.0; 3], |m| [m[0][3], m[1][3], m[2][3]]);
    let template = GridTemplate::new(dims, [pixdim[1], pixdim[2], pixdim[3]], origin)
        .map_err(|err| Error::Nifti(err.to_string()))?;

    let offset = e.f32(h, 108);
    let offset = if offset < HEADER_LEN as f32 + 4.0 {
        HEADER_LEN + 4
    } else {
        offset as usize
    };
    let need = template.voxel_count() * width;
    let available = bytes.len().saturating_sub(offset);
    if available < need {
        return Err(Error::LengthMismatch {
            expected: need as u64,
            found: available as u64,
        });
    }
    let data = &bytes[offset..offset + need];
    let labels: Vec<u16> = match datatype {
        DT_UINT8 => data.iter().map(|&b| u16::from(b)).collect(),
        DT_UINT16 => data.chunks_exact(2).map(|c| e.u16(c)).collect(),
        _ => {
            let mut out = Vec::with_capacity(template.voxel_count());
            for c in data.chunks_exact(2) {
                let v = e.u16(c) as i16;
                if v < 0 {
                    return Err(Error::Nifti(format!(
                        "negative label {v} in int16 volume"
                    )));
                }
                out.push(v as u16);
            }
            out
        }
    };
    Ok(VoxelGrid::from_template(template, labels)?.with_affine(affine))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal little-endian NIfTI-1 writer for tests.
    pub(crate) fn nifti_bytes(
        dims: [i16; 3],
        pixdim: [f32; 3],
        datatype: i16,
        sform: Option<[[f32; 4]; 3]>,
        data: &[u8],
    ) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim = [3i16, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (k, d) in dim.iter().enumerate() {
            h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        let pd = [1.0f32, pixdim[0], pixdim[1], pixdim[2], 1.0, 1.0, 1.0, 1.0];
        for (k, p) in pd.iter().enumerate() {
            h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&1f32.to_le_bytes());
        if let Some(m) = sform {
            h[254..256].copy_from_slice(&1i16.to_le_bytes());
            for i in 0..3 {
                for j in 0..4 {
                    let at = 280 + 16 * i + 4 * j;
                    h[at..at + 4].copy_from_slice(&m[i][j].to_le_bytes());
                }
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(data);
        h
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn reads_uint16_with_spacing_from_pixdim() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = (0u16..8).flat_map(|v| v.to_le_bytes()).collect();
        let sform = [
            [0.5, 0.0, 0.0, 10.0],
            [0.0, 0.75, 0.0, 20.0],
            [0.0, 0.0, 2.0, 30.0],
        ];
        let p = write(
            dir.path(),
            "a.nii",
            &nifti_bytes([2, 2, 2], [0.5, 0.75, 2.0], DT_UINT16, Some(sform), &data),
        );
        let g = read_nifti(&p).unwrap();
        assert_eq!(g.labels(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(g.spacing_mm(), [0.5, 0.75, 2.0]);
        assert_eq!(g.origin_mm(), [10.0, 20.0, 30.0]);
        assert!(g.affine().is_some());
    }

    #[test]
    fn flipped_axes_are_accepted_without_reordering() {
        let dir = tempfile::tempdir().unwrap();
        let sform = [
            [-1.0, 0.0, 0.0, 5.0],
            [0.0, -1.0, 0.0, 5.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let p = write(
            dir.path(),
            "f.nii",
            &nifti_bytes([2, 1, 1], [1.0; 3], DT_UINT8, Some(sform), &[3, 9]),
        );
        assert_eq!(read_nifti(&p).unwrap().labels(), &[3, 9]);
    }

    #[test]
    fn rejects_oblique_affine_with_message() {
        let dir = tempfile::tempdir().unwrap();
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let sform = [[s, -s, 0.0, 0.0], [s, s, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let p = write(
            dir.path(),
            "o.nii",
            &nifti_bytes([1, 1, 1], [1.0; 3], DT_UINT8, Some(sform), &[1]),
        );
        let err = read_nifti(&p).unwrap_err().to_string();
        assert!(err.contains("axis-aligned"), "{err}");
    }

    #[test]
    fn rejects_unsupported_datatype_and_negative_int16() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "f32.nii",
            &nifti_bytes([1, 1, 1], [1.0; 3], 16, None, &[0, 0, 0, 0]),
        );
        assert!(matches!(read_nifti(&p), Err(Error::Nifti(_))));

        let neg: Vec<u8> = [-1i16, 2].iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = write(
            dir.path(),
            "neg.nii",
            &nifti_bytes([2, 1, 1], [1.0; 3], DT_INT16, None, &neg),
        );
        assert!(read_nifti(&p).unwrap_err().to_string().contains("negative"));

        let pos: Vec<u8> = [7i16, 2].iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = write(
            dir.path(),
            "pos.nii",
            &nifti_bytes([2, 1, 1], [1.0; 3], DT_INT16, None, &pos),
        );
        assert_eq!(read_nifti(&p).unwrap().labels(), &[7, 2]);
    }

    #[test]
    fn reads_gzip_file() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let plain = nifti_bytes([3, 1, 1], [1.0; 3], DT_UINT8, None, &[4, 5, 6]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&plain).unwrap();
        let p = write(dir.path(), "g.nii.gz", &enc.finish().unwrap());
        assert_eq!(read_nifti(&p).unwrap().labels(), &[4, 5, 6]);
    }

    #[test]
    fn qform_identity_quaternion() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = nifti_bytes([1, 1, 1], [2.0, 2.0, 2.0], DT_UINT8, None, &[1]);
        bytes[252..254].copy_from_slice(&1i16.to_le_bytes());
        bytes[268..272].copy_from_slice(&(-4f32).to_le_bytes());
        let p = write(dir.path(), "q.nii", &bytes);
        let g = read_nifti(&p).unwrap();
        let a = g.affine().unwrap();
        assert_eq!(a[0][0], 2.0);
        assert_eq!(a[1][1], 2.0);
        assert_eq!(g.origin_mm(), [-4.0, 0.0, 0.0]);
    }
}
