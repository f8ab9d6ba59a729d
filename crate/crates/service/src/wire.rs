//! Binary mesh wire format, little endian:
//! `u32 nV, u32 nF, f32 positions[3 nV], u32 indices[3 nF], u16 labels[nV]`.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use hsi_core::geometry::{Point, TriMesh};

pub fn encode_mesh(mesh: &TriMesh, labels: &[u16]) -> Vec<u8> {
    let nv = mesh.vertex_count();
    let nf = mesh.faces.len();
    let mut out = Vec::with_capacity(8 + nv * 14 + nf * 12);
    out.write_u32::<LittleEndian>(nv as u32).unwrap();
    out.write_u32::<LittleEndian>(nf as u32).unwrap();
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            out.write_f32::<LittleEndian>(c as f32).unwrap();
        }
    }
    for f in &mesh.faces {
        for &i in f {
            out.write_u32::<LittleEndian>(i).unwrap();
        }
    }
    for i in 0..nv {
        out.write_u16::<LittleEndian>(labels.get(i).copied().unwrap_or(0)).unwrap();
    }
    out
}

/// Inverse of [`encode_mesh`] (positions come back in single precision).
pub fn decode_mesh(bytes: &[u8]) -> std::io::Result<(TriMesh, Vec<u16>)> {
    let mut r = bytes;
    let nv = r.read_u32::<LittleEndian>()? as usize;
    let nf = r.read_u32::<LittleEndian>()? as usize;
    let need = nv.checked_mul(14).and_then(|a| nf.checked_mul(12).map(|b| a + b));
    if need != Some(r.len()) {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "mesh payload has the wrong length"));
    }
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = r.read_f32::<LittleEndian>()? as f64;
        let y = r.read_f32::<LittleEndian>()? as f64;
        let z = r.read_f32::<LittleEndian>()? as f64;
        verts.push(Point::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push([
            r.read_u32::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
        ]);
    }
    let mut labels = Vec::with_capacity(nv);
    for _ in 0..nv {
        labels.push(r.read_u16::<LittleEndian>()?);
    }
    let mesh = TriMesh::new(verts, faces).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    Ok((mesh, labels))
}
