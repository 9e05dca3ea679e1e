//! Little-endian model file: magic, version, stage count, length-prefixed JSON
//! config, then every stage's named f32 tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{param_specs, UNet, UNetConfig};
use super::train::{ModelBundle, PipelineConfig};
use super::UnetError;
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"SKLB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ConfigBlob {
    unet: UNetConfig,
    pipeline: PipelineConfig,
}

/// Shape with trailing unit axes dropped (biases become 1-D).
fn stored_dims(shape: [usize; 4]) -> Vec<usize> {
    let mut d = shape.to_vec();
    while d.len() > 1 && d.last() == Some(&1) {
        d.pop();
    }
    d
}

pub fn encode_model(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(bundle.stages.len() as u32).to_le_bytes());
    let blob = serde_json::to_vec(&ConfigBlob {
        unet: bundle.unet,
        pipeline: bundle.pipeline,
    })
    .expect("config serializes");
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    for net in &bundle.stages {
        out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
        for (name, t) in net.names().iter().zip(net.params()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dims = stored_dims(t.shape());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], UnetError> {
        if self.buf.len() < n {
            return Err(UnetError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, UnetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, UnetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelBundle, UnetError> {
    let mut r = Reader { buf: bytes };
    if bytes.len() < 4 {
        return Err(UnetError::Truncated);
    }
    if r.take(4)? != MAGIC {
        return Err(UnetError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(UnetError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_stages = r.u32()? as usize;
    let blob_len = usize::try_from(r.u64()?).map_err(|_| UnetError::Truncated)?;
    let blob: ConfigBlob =
        serde_json::from_slice(r.take(blob_len)?).map_err(|e| UnetError::Format(format!("config: {e}")))?;
    blob.unet.validate()?;
    if n_stages != blob.pipeline.n_stages {
        return Err(UnetError::Format(format!(
            "{n_stages} stages stored but the config says {}",
            blob.pipeline.n_stages
        )));
    }
    let expected = param_specs(&blob.unet).len();
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let count = r.u32()? as usize;
        if count != expected {
            return Err(UnetError::Format(format!("{count} tensors, expected {expected}")));
        }
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| UnetError::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let ndim = r.u32()? as usize;
            if ndim == 0 || ndim > 4 {
                return Err(UnetError::Format(format!("{name}: {ndim} dimensions")));
            }
            let mut shape = [1usize; 4];
            for d in shape.iter_mut().take(ndim) {
                *d = r.u32()? as usize;
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(UnetError::Truncated)?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if !data.iter().all(|v| v.is_finite()) {
                return Err(UnetError::Format(format!("{name} holds non-finite values")));
            }
            named.push((name, Tensor::from_vec(shape, data)?));
        }
        stages.push(UNet::from_params(blob.unet, named)?);
    }
    if !r.buf.is_empty() {
        return Err(UnetError::Format(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(ModelBundle {
        unet: blob.unet,
        pipeline: blob.pipeline,
        stages,
    })
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<(), UnetError> {
    std::fs::write(path, encode_model(bundle)).map_err(|source| UnetError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelBundle, UnetError> {
    let bytes = std::fs::read(path).map_err(|source| UnetError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_model(&bytes)
}
