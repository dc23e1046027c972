//! Volume files: one JSON header line, a newline, then the raw little-endian
//! payload in x-fastest order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use mcpm_core::{Dims, ScalarField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ORDER: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32le,
    U32le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dims: [usize; 3],
    pub order: String,
    pub dtype: Dtype,
    pub extent: [[f32; 3]; 2],
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl FieldHeader {
    pub fn new(dims: Dims, dtype: Dtype, meta: serde_json::Value) -> Self {
        Self {
            dims: dims.as_array(),
            order: ORDER.to_string(),
            dtype,
            extent: [[0.0; 3], [1.0; 3]],
            meta,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub header: FieldHeader,
    pub payload: Payload,
}

impl FieldFile {
    pub fn from_scalar(field: &ScalarField, meta: serde_json::Value) -> Self {
        Self {
            header: FieldHeader::new(field.dims, Dtype::F32le, meta),
            payload: Payload::F32(field.values.clone()),
        }
    }

    pub fn from_labels(dims: Dims, labels: &[u32], meta: serde_json::Value) -> Self {
        Self {
            header: FieldHeader::new(dims, Dtype::U32le, meta),
            payload: Payload::U32(labels.to_vec()),
        }
    }

    pub fn dims(&self) -> Dims {
        let [nx, ny, nz] = self.header.dims;
        Dims::new(nx, ny, nz)
    }

    pub fn into_scalar(self) -> Option<ScalarField> {
        let dims = self.dims();
        match self.payload {
            Payload::F32(v) => Some(ScalarField::from_values(dims, v)),
            Payload::U32(_) => None,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec(&self.header).expect("header serializes");
        bytes.push(b'\n');
        match &self.payload {
            Payload::F32(v) => bytes.extend(v.iter().flat_map(|x| x.to_le_bytes())),
            Payload::U32(v) => bytes.extend(v.iter().flat_map(|x| x.to_le_bytes())),
        }
        let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| CliError::io(path, e))
    }

    /// Parses the header before touching the payload and checks that the
    /// payload holds exactly `4 * nx * ny * nz` bytes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line).map_err(|e| CliError::io(path, e))?;
        if line.last() != Some(&b'\n') {
            return Err(CliError::format(path, "missing header line"));
        }
        let header: FieldHeader =
            serde_json::from_slice(&line).map_err(|e| CliError::format(path, format!("bad header: {e}")))?;
        if header.order != ORDER {
            return Err(CliError::format(path, format!("unsupported order {:?}", header.order)));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| CliError::io(path, e))?;
        let n = header.voxel_count();
        if body.len() != 4 * n {
            return Err(CliError::format(
                path,
                format!("payload has {} bytes, expected {}", body.len(), 4 * n),
            ));
        }
        let words = body.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let payload = match header.dtype {
            Dtype::F32le => Payload::F32(words.map(f32::from_le_bytes).collect()),
            Dtype::U32le => Payload::U32(words.map(u32::from_le_bytes).collect()),
        };
        Ok(Self { header, payload })
    }
}

pub fn write_scalar(path: impl AsRef<Path>, field: &ScalarField, meta: serde_json::Value) -> Result<()> {
    FieldFile::from_scalar(field, meta).write(path)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<(ScalarField, serde_json::Value)> {
    let path = path.as_ref();
    let file = FieldFile::read(path)?;
    let meta = file.header.meta.clone();
    let field = file
        .into_scalar()
        .ok_or_else(|| CliError::format(path, "expected an f32le payload"))?;
    Ok((field, meta))
}
