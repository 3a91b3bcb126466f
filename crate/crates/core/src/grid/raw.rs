//! Raw little-endian payload plus JSON sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{GridTemplate, VoxelGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidecarDtype {
    U8,
    U16,
}

impl SidecarDtype {
    fn width(self) -> usize {
        match self {
            SidecarDtype::U8 => 1,
            SidecarDtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: SidecarDtype,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gzip: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<[[f64; 4]; 3]>,
}

impl Sidecar {
    fn template(&self, path: &Path) -> Result<GridTemplate> {
        GridTemplate::new(self.dims, self.spacing_mm, self.origin_mm).map_err(|e| Error::Sidecar {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_sidecar(payload: &Path) -> Result<Sidecar> {
    let path = sidecar_path(payload);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingSidecar(path))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path,
        message: e.to_string(),
    })
}

fn open_payload(path: &Path, gzip: bool) -> Result<Box<dyn Read + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, file);
    Ok(if gzip {
        Box::new(GzDecoder::new(reader))
    } else {
        Box::new(reader)
    })
}

/// Reads `n` bytes, or reports how many were actually available.
fn read_exact_or_count(r: &mut dyn Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Count the bytes remaining in a stream.
fn drain(r: &mut dyn Read) -> std::io::Result<u64> {
    std::io::copy(r, &mut std::io::sink())
}

/// Streams z-slices of a raw-sidecar volume without loading the payload.
///
/// Working memory is one slice of raw bytes plus the caller's slice buffer.
pub struct RawSliceReader {
    path: PathBuf,
    template: GridTemplate,
    dtype: SidecarDtype,
    reader: Box<dyn Read + Send>,
    bytes: Vec<u8>,
    next_z: usize,
    finished: bool,
}

impl RawSliceReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let sidecar = read_sidecar(&path)?;
        let template = sidecar.template(&path)?;
        let reader = open_payload(&path, sidecar.gzip)?;
        Ok(RawSliceReader {
            bytes: vec![0; template.slice_len() * sidecar.dtype.width()],
            path,
            template,
            dtype: sidecar.dtype,
            reader,
            next_z: 0,
            finished: false,
        })
    }

    pub fn template(&self) -> &GridTemplate {
        &self.template
    }

    fn expected_bytes(&self) -> u64 {
        (self.template.voxel_count() * self.dtype.width()) as u64
    }

    /// Fills `out` with the next slice; `Ok(false)` once every slice was read.
    pub fn next_slice_into(&mut self, out: &mut Vec<u16>) -> Result<bool> {
        if self.finished {
            return Ok(false);
        }
        if self.next_z == self.template.dims[2] {
            self.finished = true;
            let extra = drain(&mut self.reader).map_err(|e| Error::io(&self.path, e))?;
            if extra > 0 {
                return Err(Error::LengthMismatch {
                    expected: self.expected_bytes(),
                    found: self.expected_bytes() + extra,
                });
            }
            return Ok(false);
        }
        let got = read_exact_or_count(&mut self.reader, &mut self.bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        if got < self.bytes.len() {
            self.finished = true;
            let found = (self.next_z * self.bytes.len() + got) as u64;
            return Err(Error::LengthMismatch {
                expected: self.expected_bytes(),
                found,
            });
        }
        decode_into(&self.bytes, self.dtype, out);
        self.next_z += 1;
        Ok(true)
    }
}

impl Iterator for RawSliceReader {
    type Item = Result<Vec<u16>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut out = Vec::new();
        match self.next_slice_into(&mut out) {
            Ok(true) => Some(Ok(out)),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

fn decode_into(bytes: &[u8], dtype: SidecarDtype, out: &mut Vec<u16>) {
    out.clear();
    match dtype {
        SidecarDtype::U8 => out.extend(bytes.iter().map(|&b| u16::from(b))),
        SidecarDtype::U16 => out.extend(
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]])),
        ),
    }
}

pub fn read_raw(path: &Path) -> Result<VoxelGrid> {
    let sidecar = read_sidecar(path)?;
    let template = sidecar.template(path)?;
    let mut reader = open_payload(path, sidecar.gzip)?;
    let expected = template.voxel_count() * sidecar.dtype.width();
    let mut bytes = vec![0u8; expected];
    let got = read_exact_or_count(&mut reader, &mut bytes).map_err(|e| Error::io(path, e))?;
    let extra = if got == expected {
        drain(&mut reader).map_err(|e| Error::io(path, e))?
    } else {
        0
    };
    if got != expected || extra != 0 {
        return Err(Error::LengthMismatch {
            expected: expected as u64,
            found: got as u64 + extra,
        });
    }
    let mut labels = Vec::with_capacity(template.voxel_count());
    decode_into(&bytes, sidecar.dtype, &mut labels);
    Ok(VoxelGrid::from_template(template, labels)?.with_affine(sidecar.affine))
}

pub fn write_raw(grid: &VoxelGrid, path: &Path, compress: bool) -> Result<()> {
    let t = grid.template();
    let sidecar = Sidecar {
        dims: t.dims,
        spacing_mm: t.spacing_mm,
        origin_mm: t.origin_mm,
        dtype: SidecarDtype::U16,
        gzip: compress,
        affine: grid.affine().copied(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let buffered = BufWriter::with_capacity(1 << 20, file);
    let mut sink: Box<dyn Write> = if compress {
        Box::new(GzEncoder::new(buffered, Compression::fast()))
    } else {
        Box::new(buffered)
    };
    let mut chunk = Vec::with_capacity(t.slice_len() * 2);
    for slice in grid.slices() {
        chunk.clear();
        for v in slice {
            chunk.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&chunk).map_err(|e| Error::io(path, e))?;
    }
    sink.flush().map_err(|e| Error::io(path, e))?;
    drop(sink);

    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_sidecar(dir: &Path, name: &str, json: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(sidecar_path(&p), json).unwrap();
        p
    }

    #[test]
    fn reads_hand_written_u16_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_sidecar(
            dir.path(),
            "a.lvol",
            r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"u16"}"#,
        );
        // voxel i holds label 0x0100 * i + i
        let bytes: Vec<u8> = (0u8..8).flat_map(|i| [i, i]).collect();
        std::fs::write(&p, &bytes).unwrap();
        let g = read_raw(&p).unwrap();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let i = (x + 2 * y + 4 * z) as u16;
                    assert_eq!(g.get(x, y, z), i * 0x0101);
                }
            }
        }
        assert_eq!(g.get(0, 0, 0), 0);
        assert_eq!(g.get(1, 0, 0), 0x0101);
    }

    #[test]
    fn u8_is_widened() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_sidecar(
            dir.path(),
            "b.lvol",
            r#"{"dims":[4,1,1],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"u8"}"#,
        );
        std::fs::write(&p, [0u8, 1, 200, 255]).unwrap();
        assert_eq!(read_raw(&p).unwrap().labels(), &[0, 1, 200, 255]);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_sidecar(
            dir.path(),
            "c.lvol",
            r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"u16"}"#,
        );
        std::fs::write(&p, [0u8; 15]).unwrap();
        assert!(matches!(
            read_raw(&p),
            Err(Error::LengthMismatch {
                expected: 16,
                found: 15
            })
        ));
        std::fs::write(&p, [0u8; 17]).unwrap();
        assert!(matches!(read_raw(&p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.lvol");
        std::fs::write(&p, [0u8; 16]).unwrap();
        assert!(matches!(read_raw(&p), Err(Error::MissingSidecar(_))));
    }

    #[test]
    fn zero_grid_payload_is_128_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.lvol");
        let g = VoxelGrid::new([4, 4, 4], [1.0; 3], [0.0; 3], vec![0; 64]).unwrap();
        write_raw(&g, &p, false).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 128);
        assert!(bytes.iter().all(|&b| b == 0));
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side["dtype"], "u16");
        assert!(side.get("gzip").is_none());
    }

    #[test]
    fn gzip_payload_decompresses_to_two_bytes_per_voxel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.lvol");
        let labels: Vec<u16> = (0..60).map(|i| (i * 37 % 11) as u16).collect();
        let g = VoxelGrid::new([3, 4, 5], [0.5, 1.0, 2.0], [1.0, 2.0, 3.0], labels).unwrap();
        write_raw(&g, &p, true).unwrap();
        let mut decoded = Vec::new();
        GzDecoder::new(File::open(&p).unwrap())
            .read_to_end(&mut decoded)
            .unwrap();
        assert_eq!(decoded.len(), 2 * 60);
        let side: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert!(side.gzip);
        assert_eq!(read_raw(&p).unwrap(), g);
    }

    #[test]
    fn slice_reader_streams_every_slice() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.lvol");
        let labels: Vec<u16> = (0..24).collect();
        let g = VoxelGrid::new([2, 3, 4], [1.0; 3], [0.0; 3], labels).unwrap();
        write_raw(&g, &p, true).unwrap();
        let slices: Vec<Vec<u16>> = RawSliceReader::open(&p)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(slices.len(), 4);
        assert_eq!(slices.concat(), g.labels());
    }

    #[test]
    fn slice_reader_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_sidecar(
            dir.path(),
            "t.lvol",
            r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"u16"}"#,
        );
        std::fs::write(&p, [0u8; 12]).unwrap();
        let results: Vec<_> = RawSliceReader::open(&p).unwrap().collect();
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(Error::LengthMismatch { .. })));
        assert_eq!(results.len(), 2);
    }
}
