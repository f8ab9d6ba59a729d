//! Versioned checkpoint container: a JSON header (config, class names,
//! training metadata, blob table) followed by little-endian blobs.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{param_layout, CvaeError, EpochStats, Model, ModelConfig, Result};
use crate::autodiff::Tensor;
use crate::geometry::{Point, TriMesh};
use crate::meshnet::{MeshHierarchy, SparseMatrix, SpiralIndex};

const MAGIC: &[u8; 8] = b"HSICKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub steps: u64,
    pub epochs_completed: usize,
    pub stopped_early: bool,
    pub train_frames: usize,
    pub val_frames: usize,
    /// Total loss per optimizer step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
    pub final_contact_accuracy: Option<f64>,
}

impl TrainingMetadata {
    pub fn untrained(seed: u64) -> Self {
        Self {
            seed,
            steps: 0,
            epochs_completed: 0,
            stopped_early: false,
            train_frames: 0,
            val_frames: 0,
            step_losses: Vec::new(),
            epochs: Vec::new(),
            final_contact_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    class_names: Vec<String>,
    metadata: TrainingMetadata,
    blobs: Vec<BlobEntry>,
}

fn put_sparse(out: &mut Vec<u8>, m: &SparseMatrix) {
    for v in [m.rows as u32, m.cols as u32, m.values.len() as u32] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    m.row_ptr.iter().for_each(|&v| out.write_u32::<LittleEndian>(v).unwrap());
    m.col_idx.iter().for_each(|&v| out.write_u32::<LittleEndian>(v).unwrap());
    m.values.iter().for_each(|&v| out.write_f64::<LittleEndian>(v).unwrap());
}

fn get_sparse(r: &mut impl Read) -> std::io::Result<SparseMatrix> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let nnz = r.read_u32::<LittleEndian>()? as usize;
    let mut row_ptr = vec![0u32; rows + 1];
    r.read_u32_into::<LittleEndian>(&mut row_ptr)?;
    let mut col_idx = vec![0u32; nnz];
    r.read_u32_into::<LittleEndian>(&mut col_idx)?;
    let mut values = vec![0f64; nnz];
    r.read_f64_into::<LittleEndian>(&mut values)?;
    Ok(SparseMatrix {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
    })
}

fn hierarchy_bytes(h: &MeshHierarchy) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_u32::<LittleEndian>(h.levels.len() as u32).unwrap();
    for m in &h.levels {
        out.write_u32::<LittleEndian>(m.vertex_count() as u32).unwrap();
        out.write_u32::<LittleEndian>(m.face_count() as u32).unwrap();
        for p in &m.vertices {
            for c in [p.x, p.y, p.z] {
                out.write_f64::<LittleEndian>(c).unwrap();
            }
        }
        for f in &m.faces {
            for &i in f {
                out.write_u32::<LittleEndian>(i).unwrap();
            }
        }
    }
    for m in h.down.iter().chain(&h.up) {
        put_sparse(&mut out, m);
    }
    out
}

fn read_hierarchy(bytes: &[u8]) -> std::result::Result<MeshHierarchy, String> {
    let mut r = Cursor::new(bytes);
    let io = |e: std::io::Error| e.to_string();
    let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        let nv = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let nf = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut xyz = vec![0f64; nv * 3];
        r.read_f64_into::<LittleEndian>(&mut xyz).map_err(io)?;
        let mut idx = vec![0u32; nf * 3];
        r.read_u32_into::<LittleEndian>(&mut idx).map_err(io)?;
        let mesh = TriMesh::new(
            xyz.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect(),
            idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )
        .map_err(|e| e.to_string())?;
        levels.push(mesh);
    }
    let maps = n.saturating_sub(1);
    let mut down = Vec::with_capacity(maps);
    for _ in 0..maps {
        down.push(get_sparse(&mut r).map_err(io)?);
    }
    let mut up = Vec::with_capacity(maps);
    for _ in 0..maps {
        up.push(get_sparse(&mut r).map_err(io)?);
    }
    Ok(MeshHierarchy { levels, down, up })
}

impl Checkpoint {
    pub fn untrained(model: Model, seed: u64) -> Self {
        Self {
            model,
            metadata: TrainingMetadata::untrained(seed),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut blobs = Vec::new();
        let mut data = Vec::new();
        let mut add = |name: String, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>| {
            blobs.push(BlobEntry {
                name,
                dtype: dtype.into(),
                shape,
                offset: data.len() as u64,
                bytes: bytes.len() as u64,
            });
            data.extend(bytes);
        };
        for (name, t) in m.param_names().into_iter().zip(&m.params) {
            let mut b = Vec::with_capacity(t.data.len() * 4);
            t.data.iter().for_each(|&v| b.write_f32::<LittleEndian>(v).unwrap());
            add(format!("param/{name}"), "f32", vec![t.rows, t.cols], b);
        }
        add("hierarchy".into(), "u8", vec![], hierarchy_bytes(&m.hierarchy));
        for (k, s) in m.spirals.iter().enumerate() {
            let mut b = Vec::with_capacity(s.indices.len() * 4);
            s.indices.iter().for_each(|&v| b.write_u32::<LittleEndian>(v).unwrap());
            add(format!("spiral/{k}"), "u32", vec![s.vertex_count(), s.length], b);
        }
        let header = Header {
            format: "hsi-checkpoint".into(),
            config: m.config.clone(),
            class_names: m.class_names.clone(),
            metadata: self.metadata.clone(),
            blobs,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
        out.extend(json);
        out.extend(data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CvaeError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut r = Cursor::new(&bytes[8..]);
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = r.read_u64::<LittleEndian>()? as usize;
        let start: usize = 20;
        let body = start.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[start..body]).map_err(|e| bad(&format!("header: {e}")))?;
        let data = &bytes[body..];
        let blob = |name: &str| -> Result<&[u8]> {
            let e = header
                .blobs
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| bad(&format!("missing blob {name}")))?;
            let (a, n) = (e.offset as usize, e.bytes as usize);
            data.get(a..a + n).ok_or_else(|| bad(&format!("truncated blob {name}")))
        };
        let hierarchy = Arc::new(read_hierarchy(blob("hierarchy")?).map_err(|e| bad(&e))?);
        let layout = param_layout(&header.config, &hierarchy.level_sizes());
        let mut params = Vec::with_capacity(layout.len());
        for (name, r, c) in layout {
            let b = blob(&format!("param/{name}"))?;
            if b.len() != r * c * 4 {
                return Err(bad(&format!("parameter {name} has wrong size")));
            }
            let mut v = vec![0f32; r * c];
            Cursor::new(b).read_f32_into::<LittleEndian>(&mut v)?;
            params.push(Tensor::from_vec(r, c, v));
        }
        let mut spirals = Vec::new();
        for k in 0..header.config.pool_levels {
            let b = blob(&format!("spiral/{k}"))?;
            let mut v = vec![0u32; b.len() / 4];
            Cursor::new(b).read_u32_into::<LittleEndian>(&mut v)?;
            spirals.push(SpiralIndex {
                length: header.config.spiral_length,
                indices: v,
            });
        }
        Ok(Self {
            model: Model {
                config: header.config,
                class_names: header.class_names,
                hierarchy,
                spirals,
                params,
            },
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
