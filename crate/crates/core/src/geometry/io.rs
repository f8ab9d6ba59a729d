//! OBJ and PLY readers/writers.
//!
//! OBJ: `v` positions and `f` faces (polygons are fan-triangulated, `a/b/c`
//! index forms and negative indices accepted). PLY: ASCII or binary
//! little-endian, positions with optional normals and an optional integer
//! per-vertex property named `label`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::mesh::{validate_faces, Point, TriMesh, Vector};
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, GeometryError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(GeometryError::UnknownFormat(path.display().to_string())),
        }
    }
}

/// A mesh plus the optional per-vertex labels found in the file.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriMesh,
    pub labels: Option<Vec<u16>>,
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, GeometryError> {
    Ok(load_labeled_mesh(path, format)?.mesh)
}

pub fn load_labeled_mesh(path: &Path, format: MeshFormat) -> Result<LoadedMesh, GeometryError> {
    let file = fs::File::open(path).map_err(|e| GeometryError::Io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    match format {
        MeshFormat::Obj => Ok(LoadedMesh {
            mesh: parse_obj(&mut reader)?,
            labels: None,
        }),
        MeshFormat::Ply => parse_ply(&mut reader),
    }
}

pub fn parse_obj(reader: &mut impl BufRead) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut face_counter = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GeometryError::Io("obj".into(), e))?;
        let mut it = line.split_whitespace();
        let parse_err = |msg: &str| GeometryError::Parse {
            line: lineno + 1,
            message: msg.to_string(),
        };
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err("bad vertex coordinate"))?;
                if xyz.len() != 3 {
                    return Err(parse_err("vertex needs three coordinates"));
                }
                vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("vn") => {
                let xyz: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err("bad normal"))?;
                if xyz.len() != 3 {
                    return Err(parse_err("normal needs three components"));
                }
                normals.push(Vector::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first.parse().map_err(|_| parse_err("bad face index"))?;
                    let resolved = if raw > 0 {
                        raw - 1
                    } else if raw < 0 {
                        vertices.len() as i64 + raw
                    } else {
                        return Err(parse_err("face index 0 is invalid in OBJ"));
                    };
                    if resolved < 0 {
                        return Err(GeometryError::FaceIndexOutOfRange {
                            face: face_counter,
                            index: 0,
                            vertex_count: vertices.len(),
                        });
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
                face_counter += 1;
            }
            _ => {}
        }
    }
    validate_faces(vertices.len(), &faces)?;
    let n = vertices.len();
    let mesh = TriMesh {
        vertices,
        faces,
        normals: None,
    };
    if normals.len() == n && n > 0 {
        mesh.with_normals(normals)
    } else {
        Ok(mesh)
    }
}

pub fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), GeometryError> {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).map_err(|e| GeometryError::Io(path.display().to_string(), e))?;
    fs::write(path, buf).map_err(|e| GeometryError::Io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn read_binary(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            PlyType::I8 => r.read_i8()? as f64,
            PlyType::U8 => r.read_u8()? as f64,
            PlyType::I16 => r.read_i16::<LittleEndian>()? as f64,
            PlyType::U16 => r.read_u16::<LittleEndian>()? as f64,
            PlyType::I32 => r.read_i32::<LittleEndian>()? as f64,
            PlyType::U32 => r.read_u32::<LittleEndian>()? as f64,
            PlyType::F32 => r.read_f32::<LittleEndian>()? as f64,
            PlyType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn parse_ply(reader: &mut impl BufRead) -> Result<LoadedMesh, GeometryError> {
    let header_err = |m: &str| GeometryError::Parse {
        line: 0,
        message: format!("ply header: {m}"),
    };
    let mut line = String::new();
    let read_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<(), GeometryError> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| GeometryError::Io("ply".into(), e))?;
        if n == 0 {
            return Err(GeometryError::Parse {
                line: 0,
                message: "unexpected end of ply header".into(),
            });
        }
        Ok(())
    };
    read_line(reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(header_err("missing magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        read_line(reader, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLe),
            ["format", other, ..] => return Err(header_err(&format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| header_err("bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| header_err("property before element"))?;
                el.properties.push(PlyProperty::List(
                    name.to_string(),
                    PlyType::parse(ct).ok_or_else(|| header_err("bad list count type"))?,
                    PlyType::parse(it).ok_or_else(|| header_err("bad list item type"))?,
                ));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| header_err("property before element"))?;
                el.properties.push(PlyProperty::Scalar(
                    name.to_string(),
                    PlyType::parse(ty).ok_or_else(|| header_err("bad property type"))?,
                ));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let encoding = encoding.ok_or_else(|| header_err("missing format line"))?;

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut labels = Vec::new();
    let mut has_normals = false;
    let mut has_labels = false;
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let mut ascii_tokens: Option<std::vec::IntoIter<String>> = None;
    if encoding == PlyEncoding::Ascii {
        let mut rest = String::new();
        reader
            .read_to_string(&mut rest)
            .map_err(|e| GeometryError::Io("ply".into(), e))?;
        ascii_tokens = Some(
            rest.split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
                .into_iter(),
        );
    }
    let truncated = || GeometryError::Parse {
        line: 0,
        message: "ply body truncated".into(),
    };
    let mut next_value = |ty: PlyType, reader: &mut dyn BufRead| -> Result<f64, GeometryError> {
        match ascii_tokens.as_mut() {
            Some(toks) => toks
                .next()
                .ok_or_else(truncated)?
                .parse::<f64>()
                .map_err(|_| GeometryError::Parse {
                    line: 0,
                    message: "bad ply ascii value".into(),
                }),
            None => ty.read_binary(&mut ReadAdapter(reader)).map_err(|_| truncated()),
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            let names: Vec<&str> = el
                .properties
                .iter()
                .map(|p| match p {
                    PlyProperty::Scalar(n, _) | PlyProperty::List(n, _, _) => n.as_str(),
                })
                .collect();
            has_normals = ["nx", "ny", "nz"].iter().all(|n| names.contains(n));
            has_labels = names.contains(&"label");
            if !["x", "y", "z"].iter().all(|n| names.contains(n)) {
                return Err(header_err("vertex element lacks x/y/z"));
            }
        }
        for item in 0..el.count {
            let mut pos = [0.0; 3];
            let mut nrm = [0.0; 3];
            let mut label = 0.0;
            for prop in &el.properties {
                match prop {
                    PlyProperty::Scalar(name, ty) => {
                        let v = next_value(*ty, reader)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => pos[0] = v,
                                "y" => pos[1] = v,
                                "z" => pos[2] = v,
                                "nx" => nrm[0] = v,
                                "ny" => nrm[1] = v,
                                "nz" => nrm[2] = v,
                                "label" => label = v,
                                _ => {}
                            }
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let n = next_value(*ct, reader)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(next_value(*it, reader)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(GeometryError::DegenerateFace { face: item });
                            }
                            if let Some(&bad) = idx.iter().find(|&&x| x < 0.0) {
                                return Err(GeometryError::FaceIndexOutOfRange {
                                    face: item,
                                    index: bad as usize,
                                    vertex_count: vertices.len(),
                                });
                            }
                            for k in 1..n - 1 {
                                faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Point::new(pos[0], pos[1], pos[2]));
                if has_normals {
                    normals.push(Vector::new(nrm[0], nrm[1], nrm[2]));
                }
                if has_labels {
                    if label < 0.0 || label > u16::MAX as f64 {
                        return Err(GeometryError::Parse {
                            line: 0,
                            message: format!("vertex {item}: label {label} out of range"),
                        });
                    }
                    labels.push(label as u16);
                }
            }
        }
    }
    validate_faces(vertices.len(), &faces)?;
    let mut mesh = TriMesh {
        vertices,
        faces,
        normals: None,
    };
    if has_normals {
        mesh = mesh.with_normals(normals)?;
    }
    Ok(LoadedMesh {
        mesh,
        labels: has_labels.then_some(labels),
    })
}

struct ReadAdapter<'a>(&'a mut dyn BufRead);

impl Read for ReadAdapter<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.0.read(buf)
    }
}

/// Writes binary little-endian PLY with f32 positions, optional normals and
/// optional `label` (ushort), faces as `uchar`/`int` lists.
pub fn write_ply(mesh: &TriMesh, labels: Option<&[u16]>, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if mesh.normals.is_some() {
        writeln!(w, "property float nx")?;
        writeln!(w, "property float ny")?;
        writeln!(w, "property float nz")?;
    }
    if labels.is_some() {
        writeln!(w, "property ushort label")?;
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for k in 0..3 {
            w.write_f32::<LittleEndian>(v[k] as f32)?;
        }
        if let Some(ns) = &mesh.normals {
            for k in 0..3 {
                w.write_f32::<LittleEndian>(ns[i][k] as f32)?;
            }
        }
        if let Some(l) = labels {
            w.write_u16::<LittleEndian>(l[i])?;
        }
    }
    for f in &mesh.faces {
        w.write_u8(3)?;
        for &i in f {
            w.write_i32::<LittleEndian>(i as i32)?;
        }
    }
    Ok(())
}

pub fn save_ply(mesh: &TriMesh, labels: Option<&[u16]>, path: &Path) -> Result<(), GeometryError> {
    let mut buf = Vec::new();
    write_ply(mesh, labels, &mut buf).map_err(|e| GeometryError::Io(path.display().to_string(), e))?;
    fs::write(path, buf).map_err(|e| GeometryError::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    #[test]
    fn minimal_obj() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let mesh = parse_obj(&mut Cursor::new(src)).unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn obj_out_of_range_face_reports_index() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        match parse_obj(&mut Cursor::new(src)) {
            Err(GeometryError::FaceIndexOutOfRange { face, index, .. }) => {
                assert_eq!(face, 0);
                assert_eq!(index, 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn obj_degenerate_face_rejected() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\n";
        assert!(matches!(
            parse_obj(&mut Cursor::new(src)),
            Err(GeometryError::DegenerateFace { face: 1 })
        ));
    }

    #[test]
    fn obj_slash_forms_and_quads() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3//3 4\n";
        let mesh = parse_obj(&mut Cursor::new(src)).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    fn random_mesh(n: usize, seed: u64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let faces = (0..n - 2).map(|i| [i as u32, i as u32 + 1, i as u32 + 2]).collect();
        TriMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn obj_round_trip_1000_vertices() {
        let mesh = random_mesh(1000, 11);
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let back = parse_obj(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.faces, mesh.faces);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).amax() <= 1e-6);
        }
    }

    #[test]
    fn ply_binary_round_trip_with_labels() {
        let mesh = random_mesh(1000, 12);
        let labels: Vec<u16> = (0..1000).map(|i| (i % 7) as u16).collect();
        let mut buf = Vec::new();
        write_ply(&mesh, Some(&labels), &mut buf).unwrap();
        let back = parse_ply(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.mesh.faces, mesh.faces);
        assert_eq!(back.labels.unwrap(), labels);
        for (a, b) in back.mesh.vertices.iter().zip(&mesh.vertices) {
            // f32 storage
            assert!((a - b).amax() <= 1e-6 * 5.0f64.max(b.coords.amax()));
        }
    }

    #[test]
    fn ply_ascii_with_normals() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
                   property float nx\nproperty float ny\nproperty float nz\nproperty int label\n\
                   element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                   0 0 0 0 0 1 2\n1 0 0 0 0 1 2\n0 1 0 0 0 1 3\n3 0 1 2\n";
        let loaded = parse_ply(&mut Cursor::new(src)).unwrap();
        assert_eq!(loaded.mesh.face_count(), 1);
        assert_eq!(loaded.labels, Some(vec![2, 2, 3]));
        assert!(loaded.mesh.normals.is_some());
    }

    #[test]
    fn ply_truncated_body_errors() {
        let mesh = random_mesh(10, 1);
        let mut buf = Vec::new();
        write_ply(&mesh, None, &mut buf).unwrap();
        buf.truncate(buf.len() - 7);
        assert!(parse_ply(&mut Cursor::new(buf)).is_err());
    }
}
