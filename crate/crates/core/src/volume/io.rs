//! `DGV1` binary volume files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DGV1" | u8 dtype | u32 X | u32 Y | u32 Z | [u16 s, labels only] | payload
//! ```
//!
//! dtype 1 is a scalar f32 volume, 2 a u16 label volume, 3 a two-channel f32
//! disease-coordinate map stored channel-major.

use std::path::Path;

use super::{voxel_count, DcMap, Dims, LabelVolume, Volume3D};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DGV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Float32 = 1,
    Label16 = 2,
    DcFloat32 = 3,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::Float32),
            2 => Ok(DType::Label16),
            3 => Ok(DType::DcFloat32),
            other => Err(Error::Format(format!("dtype: unknown code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(Volume3D),
    Labels(LabelVolume),
    Dc(DcMap),
}

impl AnyVolume {
    pub fn into_scalar(self) -> Result<Volume3D> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            _ => Err(Error::Format("dtype: expected a scalar volume".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Labels(v) => Ok(v),
            _ => Err(Error::Format("dtype: expected a label volume".into())),
        }
    }

    pub fn into_dc(self) -> Result<DcMap> {
        match self {
            AnyVolume::Dc(v) => Ok(v),
            _ => Err(Error::Format("dtype: expected a disease-coordinate map".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyVolume::Scalar(v) => encode_f32(DType::Float32, v.dims(), v.data()),
            AnyVolume::Dc(m) => encode_f32(DType::DcFloat32, m.dims(), m.data()),
            AnyVolume::Labels(l) => {
                let mut out = header(DType::Label16, l.dims());
                out.extend_from_slice(&(l.num_structures() as u16).to_le_bytes());
                for &v in l.labels() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let dtype = DType::from_code(r.take(1, "dtype")?[0])?;
        let mut dims: Dims = [0; 3];
        for (axis, name) in ["X", "Y", "Z"].iter().enumerate() {
            dims[axis] = r.u32(name)? as usize;
        }
        let n = voxel_count(dims);
        match dtype {
            DType::Float32 => {
                let data = r.f32_payload(n)?;
                Ok(AnyVolume::Scalar(Volume3D::new(dims, data)?))
            }
            DType::DcFloat32 => {
                let data = r.f32_payload(2 * n)?;
                Ok(AnyVolume::Dc(DcMap::new(dims, data)?))
            }
            DType::Label16 => {
                let s = u16::from_le_bytes(r.take(2, "s")?.try_into().unwrap());
                let payload = r.payload(n, 2)?;
                let labels: Vec<u16> = payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect();
                if let Some(&bad) = labels.iter().find(|&&l| l > s) {
                    return Err(Error::Format(format!(
                        "labels: value {bad} exceeds declared structure count {s}"
                    )));
                }
                Ok(AnyVolume::Labels(LabelVolume::new(dims, labels, s)?))
            }
        }
    }
}

fn header(dtype: DType, dims: Dims) -> Vec<u8> {
    let mut out = Vec::with_capacity(17);
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn encode_f32(dtype: DType, dims: Dims, data: &[f64]) -> Vec<u8> {
    let mut out = header(dtype, dims);
    out.reserve(4 * data.len());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!("{field}: truncated header")));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn payload(&mut self, count: usize, width: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() != count * width {
            return Err(Error::Format(format!(
                "payload length: expected {count} values ({} bytes), found {} bytes",
                count * width,
                rest.len()
            )));
        }
        self.pos = self.bytes.len();
        Ok(rest)
    }

    fn f32_payload(&mut self, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .payload(count, 4)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    AnyVolume::from_bytes(&bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_scalar(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_f32(DType::Float32, v.dims(), v.data()),
    )
}

pub fn write_labels(v: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &AnyVolume::Labels(v.clone()).to_bytes())
}

pub fn write_dcmap(m: &DcMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_f32(DType::DcFloat32, m.dims(), m.data()),
    )
}
