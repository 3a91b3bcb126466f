//! Mesh file formats: binary little-endian PLY, Wavefront OBJ, binary STL.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{cross, sub, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    PlyBinary,
    Obj,
    StlBinary,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "ply" => Some(MeshFormat::PlyBinary),
            "obj" => Some(MeshFormat::Obj),
            "stl" => Some(MeshFormat::StlBinary),
            _ => None,
        }
    }
}

impl std::str::FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply-binary" => Ok(MeshFormat::PlyBinary),
            "obj" => Ok(MeshFormat::Obj),
            "stl" | "stl-binary" => Ok(MeshFormat::StlBinary),
            other => Err(Error::InvalidArgument(format!("unknown mesh format {other:?}"))),
        }
    }
}

pub fn export_mesh(mesh: &TriangleMesh, format: MeshFormat, path: &Path) -> Result<()> {
    mesh.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        MeshFormat::PlyBinary => write_ply(mesh, &mut w),
        MeshFormat::Obj => write_obj(mesh, &mut w),
        MeshFormat::StlBinary => write_stl(mesh, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\ncomment phantomforge\n\
         element vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    let mut buf = Vec::with_capacity(mesh.vertices.len() * 12 + mesh.triangles.len() * 13);
    for v in &mesh.vertices {
        for c in v {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for &i in t {
            buf.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn write_obj<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn write_stl<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    let mut header = [0u8; 80];
    let tag = b"phantomforge binary stl";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(mesh.triangles.len() as u32).to_le_bytes())?;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let n = if len > 0.0 { n.map(|x| x / len) } else { [0.0; 3] };
        for p in [n, a, b, c] {
            for x in p {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.write_all(&[0, 0])?;
    }
    Ok(())
}

/// Reads binary little-endian PLY with float or double positions and
/// triangular faces. Extra vertex properties are skipped.
pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::Mesh(format!("{}: {m}", path.display()));

    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Mesh("unexpected end of PLY header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props: Vec<(String, usize)> = Vec::new();
    let mut list_types: Option<(usize, usize)> = None;
    let mut current = "";
    loop {
        let l = next_line(&mut r)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(bad(&format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                n_vertices = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = Some(n.parse::<usize>().map_err(|_| bad("bad face count"))?);
                current = "face";
            }
            ["element", other, _] => return Err(bad(&format!("unsupported element {other}"))),
            ["property", "list", count, index, _] if current == "face" => {
                list_types = Some((
                    type_size(count).ok_or_else(|| bad("bad list count type"))?,
                    type_size(index).ok_or_else(|| bad("bad list index type"))?,
                ));
            }
            ["property", ty, name] if current == "vertex" => {
                let size = type_size(ty).ok_or_else(|| bad("bad property type"))?;
                vertex_props.push((format!("{ty}:{name}"), size));
            }
            ["end_header"] => break,
            _ => return Err(bad(&format!("unsupported header line {l:?}"))),
        }
    }
    let nv = n_vertices.ok_or_else(|| bad("no vertex element"))?;
    let nf = n_faces.unwrap_or(0);
    let (count_size, index_size) = list_types.unwrap_or((1, 4));
    let stride: usize = vertex_props.iter().map(|p| p.1).sum();
    let mut offsets = [None; 3];
    let mut off = 0;
    for (name, size) in &vertex_props {
        let (ty, prop) = name.split_once(':').expect("formatted above");
        if let Some(axis) = ["x", "y", "z"].iter().position(|a| *a == prop) {
            if !matches!(ty, "float" | "float32" | "double" | "float64") {
                return Err(bad("positions must be float or double"));
            }
            offsets[axis] = Some((off, *size));
        }
        off += size;
    }
    let [Some(ox), Some(oy), Some(oz)] = offsets else {
        return Err(bad("missing x/y/z property"));
    };
    let offsets = [ox, oy, oz];

    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let need = nv * stride;
    if body.len() < need {
        return Err(bad("truncated vertex data"));
    }
    let vertices: Vec<[f64; 3]> = (0..nv)
        .map(|i| {
            let row = &body[i * stride..(i + 1) * stride];
            offsets.map(|(o, size)| read_float(&row[o..o + size]))
        })
        .collect();
    let mut pos = need;
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        if body.len() < pos + count_size {
            return Err(bad("truncated face data"));
        }
        let count = read_uint(&body[pos..pos + count_size]);
        pos += count_size;
        if count != 3 {
            return Err(bad("only triangular faces are supported"));
        }
        if body.len() < pos + 3 * index_size {
            return Err(bad("truncated face data"));
        }
        let mut t = [0u32; 3];
        for v in t.iter_mut() {
            *v = read_uint(&body[pos..pos + index_size]) as u32;
            pos += index_size;
        }
        triangles.push(t);
    }
    TriangleMesh::new(vertices, triangles)
}

fn type_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn read_float(b: &[u8]) -> f64 {
    match b.len() {
        4 => f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64,
        _ => f64::from_le_bytes(b.try_into().expect("8 bytes")),
    }
}

fn read_uint(b: &[u8]) -> u64 {
    let mut v = [0u8; 8];
    v[..b.len()].copy_from_slice(b);
    u64::from_le_bytes(v)
}
