//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic      b"DCN1"
//! version    u32
//! config     c: u64, deconv layers: u32, task: u8 (0 = classification, 1 = regression),
//!            l: u64, seed: u64, scalar width in bytes: u8 (4 or 8)
//! count      u32
//! per param  id length: u32, id: UTF-8, shape: 4 × u64, data: raw LE scalars
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Task};
use crate::tensor::{Precision, Scalar, Shape4, Tensor4};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCN1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Configuration block of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.to_string(),
            message: format!("truncated checkpoint at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("value {v} does not fit in usize")))
    }

    fn err(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_string(),
            message,
        }
    }
}

fn parse_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let input_channels = r.usize()?;
    let deconv_layers = r.u32()? as usize;
    let task_tag = r.u8()?;
    let outputs = r.usize()?;
    let seed = r.u64()?;
    let precision = match r.u8()? {
        4 => Precision::Single,
        8 => Precision::Double,
        w => return Err(r.err(format!("unsupported scalar width {w}"))),
    };
    let task = match (task_tag, outputs) {
        (0, classes) => Task::Classification { classes },
        (1, 1) => Task::Regression,
        (t, l) => return Err(r.err(format!("invalid task tag {t} with {l} outputs"))),
    };
    let config = ModelConfig {
        input_channels,
        deconv_layers,
        task,
        seed,
        precision,
    };
    config.validate().map_err(|e| r.err(e.to_string()))?;
    Ok(CheckpointHeader { version, config })
}

/// Reads only the configuration block, e.g. to pick the scalar type before loading.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    parse_header(&mut Reader {
        bytes: &bytes,
        pos: 0,
        path: &name,
    })
}

impl<T: Scalar> Model<T> {
    /// Serializes configuration and parameters. Only standard models (built
    /// from a [`ModelConfig`]) can be checkpointed.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = self
            .config()
            .ok_or_else(|| Error::Config("only models built from a ModelConfig can be checkpointed".into()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.input_channels as u64).to_le_bytes());
        out.extend_from_slice(&(config.deconv_layers as u32).to_le_bytes());
        let (tag, outputs) = match config.task {
            Task::Classification { classes } => (0u8, classes),
            Task::Regression => (1u8, 1),
        };
        out.push(tag);
        out.extend_from_slice(&(outputs as u64).to_le_bytes());
        out.extend_from_slice(&config.seed.to_le_bytes());
        out.push(T::PRECISION.bytes() as u8);
        let params = self.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, p) in self.param_names().iter().zip(params) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in p.shape().dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path: source };
        let header = parse_header(&mut r)?;
        if header.config.precision != T::PRECISION {
            return Err(r.err(format!(
                "checkpoint stores {} precision, requested {}",
                header.config.precision,
                T::PRECISION
            )));
        }
        let mut model = Model::<T>::build(&header.config)?;
        let names = model.param_names();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(r.err(format!("expected {} parameter tensors, found {count}", names.len())));
        }
        let width = T::PRECISION.bytes();
        let mut values = Vec::with_capacity(count);
        for (name, current) in names.iter().zip(model.params()) {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("parameter id is not UTF-8".into()))?;
            if id != name {
                return Err(r.err(format!("expected parameter '{name}', found '{id}'")));
            }
            let dims = [r.usize()?, r.usize()?, r.usize()?, r.usize()?];
            let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| r.err(e.to_string()))?;
            if shape != current.shape() {
                return Err(r.err(format!("parameter '{id}' has shape {shape}, model expects {}", current.shape())));
            }
            let raw = r.take(shape.len() * width)?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            values.push(Tensor4::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        model.set_params(values)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model<f64> {
        let cfg = ModelConfig {
            precision: Precision::Double,
            ..ModelConfig::new(5, 4, Task::Classification { classes: 3 }, 42)
        };
        Model::build(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = m.to_bytes().unwrap();
        let back = Model::<f64>::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = small().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DCN1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(bytes[20], 0);
        assert_eq!(u64::from_le_bytes(bytes[21..29].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[29..37].try_into().unwrap()), 42);
        assert_eq!(bytes[37], 8);
        let first_id_len = u32::from_le_bytes(bytes[42..46].try_into().unwrap()) as usize;
        assert_eq!(&bytes[46..46 + first_id_len], b"L1.weight");
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = small().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Model::<f64>::from_bytes(&bad, "m"), Err(Error::Format { .. })));
        assert!(matches!(Model::<f64>::from_bytes(&bytes[..bytes.len() - 3], "m"), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Model::<f64>::from_bytes(&extra, "m"), Err(Error::Format { .. })));
        assert!(matches!(Model::<f32>::from_bytes(&bytes, "m"), Err(Error::Format { .. })));
    }

    #[test]
    fn custom_architecture_cannot_be_saved() {
        let m = Model::<f64>::from_architecture(crate::model::Architecture::reduced(3, Task::Regression), 0).unwrap();
        assert!(matches!(m.to_bytes(), Err(Error::Config(_))));
    }
}
