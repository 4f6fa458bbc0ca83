//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SSASCKPT"
//! version      u32      1
//! config_len   u64
//! config       config_len bytes of UTF-8 JSON
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   role       u8       0 parameter, 1 buffer, 2 frozen
//!   ndim       u32
//!   dims       ndim x u64
//!   values     prod(dims) x f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AsNetwork, NetworkConfig, SsNetwork};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::SlrHead;

pub const MAGIC: &[u8; 8] = b"SSASCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Parameter = 0,
    Buffer = 1,
    Frozen = 2,
}

impl TensorRole {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(TensorRole::Parameter),
            1 => Ok(TensorRole::Buffer),
            2 => Ok(TensorRole::Frozen),
            other => Err(Error::Checkpoint(format!("unknown tensor role {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub role: TensorRole,
    pub tensor: Tensor,
}

/// Which stage produced a checkpoint, plus everything needed to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub stage: String,
    pub network: NetworkConfig,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.role as u8);
            let shape = t.tensor.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let config: CheckpointConfig = serde_json::from_slice(r.take(len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let role = TensorRole::from_byte(r.take(1)?[0])?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.push(NamedTensor { name, role, tensor });
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    fn expect_stage(&self, stage: &str) -> Result<()> {
        if self.config.stage != stage {
            return Err(Error::Checkpoint(format!("expected a {stage} checkpoint, found {}", self.config.stage)));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn collect(
    params: Vec<(&'static str, &Tensor)>,
    buffers: Vec<(&'static str, &Tensor)>,
    frozen: Vec<(&'static str, &Tensor)>,
) -> Vec<NamedTensor> {
    let tag =
        |role| move |(n, t): (&'static str, &Tensor)| NamedTensor { name: n.to_string(), role, tensor: t.clone() };
    params
        .into_iter()
        .map(tag(TensorRole::Parameter))
        .chain(buffers.into_iter().map(tag(TensorRole::Buffer)))
        .chain(frozen.into_iter().map(tag(TensorRole::Frozen)))
        .collect()
}

fn restore(dst: &mut Tensor, ckpt: &Checkpoint, name: &str) -> Result<()> {
    let src = ckpt.get(name)?;
    if src.shape() != dst.shape() {
        return Err(Error::Checkpoint(format!(
            "{name}: shape {:?} does not match network {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    *dst = src.clone();
    Ok(())
}

fn restore_all(dst: Vec<&mut Tensor>, names: &[&'static str], ckpt: &Checkpoint) -> Result<()> {
    for (t, name) in dst.into_iter().zip(names) {
        restore(t, ckpt, name)?;
    }
    Ok(())
}

impl SsNetwork {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: CheckpointConfig {
                stage: "ss".into(),
                network: self.config.clone(),
                lambda: self.grl_mmd.lambda(),
            },
            tensors: collect(self.named_params(), self.encoder.buffers(), Vec::new()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_stage("ss")?;
        let mut net = SsNetwork::init(&ckpt.config.network, ckpt.config.lambda)?;
        let names: Vec<_> = net.named_params().into_iter().map(|(n, _)| n).collect();
        restore_all(net.params_mut(), &names, ckpt)?;
        let names: Vec<_> = net.encoder.buffers().into_iter().map(|(n, _)| n).collect();
        restore_all(net.encoder.buffers_mut(), &names, ckpt)?;
        Ok(net)
    }
}

impl AsNetwork {
    pub fn checkpoint(&self) -> Checkpoint {
        let frozen = vec![("frozen_head.omega", &self.frozen().omega), ("frozen_head.bias", &self.frozen().bias)];
        Checkpoint {
            config: CheckpointConfig {
                stage: "as".into(),
                network: self.config.clone(),
                lambda: self.grl_dcls.lambda(),
            },
            tensors: collect(self.named_params(), self.encoder.buffers(), frozen),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_stage("as")?;
        let mut net = AsNetwork::init(&ckpt.config.network, ckpt.config.lambda, None)?;
        let names: Vec<_> = net.named_params().into_iter().map(|(n, _)| n).collect();
        restore_all(net.params_mut(), &names, ckpt)?;
        let names: Vec<_> = net.encoder.buffers().into_iter().map(|(n, _)| n).collect();
        restore_all(net.encoder.buffers_mut(), &names, ckpt)?;
        let frozen = SlrHead::new(
            ckpt.get("frozen_head.omega")?.clone(),
            ckpt.get("frozen_head.bias")?.clone(),
            ckpt.config.network.radius,
        )?;
        if &frozen.omega != ckpt.get("frozen_head.omega")? {
            return Err(Error::Checkpoint("frozen head rows are not unit norm".into()));
        }
        net.set_frozen(frozen);
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            input_dim: 3,
            hidden_dim: 4,
            feature_dim: 2,
            num_classes: 2,
            source_ids: vec![0, 2],
            radius: 1.0,
            noise_variance: 0.01,
            seed: 5,
        }
    }

    #[test]
    fn ss_round_trip_is_bit_exact() {
        let mut net = SsNetwork::init(&cfg(), 1.0).unwrap();
        net.encoder.norm1.running_mean = Tensor::vector(vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        let bytes = net.checkpoint().to_bytes().unwrap();
        let back = SsNetwork::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.checkpoint().to_bytes().unwrap(), bytes);
        assert_eq!(back.encoder.norm1.running_mean, net.encoder.norm1.running_mean);
    }

    #[test]
    fn as_round_trip_keeps_frozen_head() {
        let ss = SsNetwork::init(&cfg(), 1.0).unwrap();
        let net = AsNetwork::init(&cfg(), 2.0, Some(ss.domain_head.clone())).unwrap();
        let bytes = net.checkpoint().to_bytes().unwrap();
        let back = AsNetwork::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.frozen(), &ss.domain_head);
        assert_eq!(back.checkpoint().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_bytes_are_rejected() {
        let bytes = SsNetwork::init(&cfg(), 1.0).unwrap().checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn stage_mismatch_is_rejected() {
        let ckpt = SsNetwork::init(&cfg(), 1.0).unwrap().checkpoint();
        assert!(AsNetwork::from_checkpoint(&ckpt).is_err());
    }
}
