//! VVOL1 volume container.
//!
//! One UTF-8 JSON header line terminated by `\n`, immediately followed by the
//! raw little-endian payload in x-fastest order:
//!
//! ```text
//! {"magic":"VVOL1","kind":"scalar","dims":[48,48,48],"spacing_mm":[2.0,2.0,2.0],"dtype":"f64","unit":"V/cm"}\n
//! <nx*ny*nz * sizeof(dtype) bytes>
//! ```
//!
//! `kind` is `labels` (dtype `u8`) or `scalar` (dtype `f32` or `f64`). Scalar
//! fields are written as `f64` by default so that a save/load cycle is
//! bit-exact; `f32` is available for compact exports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume, ScalarField, Unit};

pub const MAGIC: &str = "VVOL1";
const MAX_HEADER_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Labels,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub magic: String,
    pub kind: Kind,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<Unit>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabelVolume),
    Scalar(ScalarField),
}

#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Labels(&'a LabelVolume),
    Scalar(&'a ScalarField, Dtype),
}

impl<'a> From<&'a LabelVolume> for VolumeRef<'a> {
    fn from(v: &'a LabelVolume) -> Self {
        VolumeRef::Labels(v)
    }
}

impl<'a> From<&'a ScalarField> for VolumeRef<'a> {
    fn from(f: &'a ScalarField) -> Self {
        VolumeRef::Scalar(f, Dtype::F64)
    }
}

pub fn write_volume<W: Write>(mut w: W, volume: VolumeRef<'_>) -> Result<()> {
    let header = match volume {
        VolumeRef::Labels(v) => Header {
            magic: MAGIC.into(),
            kind: Kind::Labels,
            dims: v.meta().dims,
            spacing_mm: v.meta().spacing,
            dtype: Dtype::U8,
            unit: None,
        },
        VolumeRef::Scalar(f, dtype) => {
            if dtype == Dtype::U8 {
                return Err(Error::Invalid("scalar fields cannot be stored as u8".into()));
            }
            if let Some(i) = f.values().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            Header {
                magic: MAGIC.into(),
                kind: Kind::Scalar,
                dims: f.meta().dims,
                spacing_mm: f.meta().spacing,
                dtype,
                unit: Some(f.unit()),
            }
        }
    };
    let line = serde_json::to_string(&header)?;
    let io = |e| Error::io("<stream>", e);
    w.write_all(line.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    match volume {
        VolumeRef::Labels(v) => w.write_all(v.labels()).map_err(io)?,
        VolumeRef::Scalar(f, Dtype::F32) => {
            let mut buf = Vec::with_capacity(f.values().len() * 4);
            for &v in f.values() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        VolumeRef::Scalar(f, _) => {
            let mut buf = Vec::with_capacity(f.values().len() * 8);
            for &v in f.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_volume<R: BufRead>(mut r: R) -> Result<Volume> {
    let mut line = Vec::new();
    let io = |e| Error::io("<stream>", e);
    (&mut r)
        .take(MAX_HEADER_BYTES as u64)
        .read_until(b'\n', &mut line)
        .map_err(io)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Header("missing newline-terminated JSON header".into()));
    }
    line.pop();
    let header: Header = serde_json::from_slice(&line).map_err(|e| Error::Header(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::Header(format!("bad magic {:?}", header.magic)));
    }
    let meta = GridMeta::new(header.dims, header.spacing_mm).map_err(|e| Error::Header(e.to_string()))?;
    match (header.kind, header.dtype) {
        (Kind::Labels, Dtype::U8) | (Kind::Scalar, Dtype::F32) | (Kind::Scalar, Dtype::F64) => {}
        (kind, dtype) => return Err(Error::Header(format!("kind {kind:?} cannot use dtype {dtype:?}"))),
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    let expected = meta.len() * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }

    match header.kind {
        Kind::Labels => Ok(Volume::Labels(LabelVolume::new(meta, payload)?)),
        Kind::Scalar => {
            let unit = header
                .unit
                .ok_or_else(|| Error::Header("scalar volume without unit".into()))?;
            let values: Vec<f64> = match header.dtype {
                Dtype::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                _ => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            Ok(Volume::Scalar(ScalarField::new(meta, values, unit)?))
        }
    }
}

pub fn save_volume<'a>(path: &Path, volume: impl Into<VolumeRef<'a>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_volume(BufWriter::new(file), volume.into()).map_err(|e| with_path(e, path))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_volume(BufReader::new(file)).map_err(|e| with_path(e, path))
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    match load_volume(path)? {
        Volume::Labels(v) => Ok(v),
        Volume::Scalar(_) => Err(Error::Header(format!("{} holds a scalar field, expected labels", path.display()))),
    }
}

pub fn load_scalar(path: &Path) -> Result<ScalarField> {
    match load_volume(path)? {
        Volume::Scalar(f) => Ok(f),
        Volume::Labels(_) => Err(Error::Header(format!("{} holds labels, expected a scalar field", path.display()))),
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}
