//! Checkpoint file layout (little-endian):
//!
//! ```text
//! "CKPT" | version: u16 = 1
//! meta_count: u32 | meta_count x ( key: str16 | value: str16 )
//! param_count: u32 | param_count x record
//! state_count: u32 | state_count x record          (optimizer moments)
//!
//! record = name: str16 | rank: u8 | rank x dim: u32 | payload: f64...
//! str16  = len: u16 | UTF-8 bytes
//! ```
//!
//! Optimizer scalars (kind, learning rate, step, decay terms) live in the
//! metadata under `optimizer.*`; moment tensors are stored as
//! `m/<param>` and `v/<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::optim::{OptimizerKind, OptimizerState};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamSet,
    pub optimizer: Option<OptimizerState>,
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Argument(format!("string too long for checkpoint ({} bytes)", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, tensor: &Tensor) -> Result<()> {
    put_str(out, name)?;
    out.push(tensor.shape().len() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut metadata = self.metadata.clone();
        let mut state_records: Vec<(String, &Tensor)> = Vec::new();
        if let Some(opt) = &self.optimizer {
            metadata.insert("optimizer.kind".into(), opt.kind.name().into());
            metadata.insert("optimizer.learning_rate".into(), opt.learning_rate.to_string());
            metadata.insert("optimizer.epsilon".into(), opt.epsilon.to_string());
            metadata.insert("optimizer.step".into(), opt.step.to_string());
            match opt.kind {
                OptimizerKind::Adam { beta1, beta2 } => {
                    metadata.insert("optimizer.beta1".into(), beta1.to_string());
                    metadata.insert("optimizer.beta2".into(), beta2.to_string());
                }
                OptimizerKind::RmsProp { decay } => {
                    metadata.insert("optimizer.decay".into(), decay.to_string());
                }
            }
            for (id, name, _) in self.params.iter() {
                if let Some(m) = opt.first.get(id.0) {
                    state_records.push((format!("m/{name}"), m));
                }
                state_records.push((format!("v/{name}"), &opt.second[id.0]));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
        for (k, v) in &metadata {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, tensor) in self.params.iter() {
            put_record(&mut out, name, tensor)?;
        }
        out.extend_from_slice(&(state_records.len() as u32).to_le_bytes());
        for (name, tensor) in state_records {
            put_record(&mut out, &name, tensor)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, record: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.error("bad magic, expected `CKPT`"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(&format!("unsupported version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let mut params = ParamSet::new();
        for _ in 0..r.u32()? {
            r.record += 1;
            let (name, tensor) = r.tensor_record()?;
            params
                .insert(name, tensor)
                .map_err(|e| r.error(&e.to_string()))?;
        }
        let mut state: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..r.u32()? {
            r.record += 1;
            let (name, tensor) = r.tensor_record()?;
            state.insert(name, tensor);
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }

        let optimizer = match metadata.get("optimizer.kind").map(String::as_str) {
            None => None,
            Some(kind) => Some(restore_optimizer(kind, &metadata, &params, &mut state)?),
        };
        for key in metadata.keys().cloned().collect::<Vec<_>>() {
            if key.starts_with("optimizer.") {
                metadata.remove(&key);
            }
        }
        Ok(Checkpoint {
            metadata,
            params,
            optimizer,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn meta_f64(metadata: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    metadata
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            record: 0,
            message: format!("missing or invalid metadata `{key}`"),
        })
}

fn restore_optimizer(
    kind: &str,
    metadata: &BTreeMap<String, String>,
    params: &ParamSet,
    state: &mut BTreeMap<String, Tensor>,
) -> Result<OptimizerState> {
    let kind = match kind {
        "adam" => OptimizerKind::Adam {
            beta1: meta_f64(metadata, "optimizer.beta1")?,
            beta2: meta_f64(metadata, "optimizer.beta2")?,
        },
        "rmsprop" => OptimizerKind::RmsProp {
            decay: meta_f64(metadata, "optimizer.decay")?,
        },
        other => {
            return Err(Error::Format {
                record: 0,
                message: format!("unknown optimizer `{other}`"),
            })
        }
    };
    let mut opt = OptimizerState::new(kind, params, meta_f64(metadata, "optimizer.learning_rate")?);
    opt.epsilon = meta_f64(metadata, "optimizer.epsilon")?;
    opt.step = meta_f64(metadata, "optimizer.step")? as u64;
    for (id, name, tensor) in params.iter() {
        let mut take = |prefix: &str| -> Result<Tensor> {
            let t = state.remove(&format!("{prefix}/{name}")).ok_or_else(|| Error::Format {
                record: 0,
                message: format!("missing optimizer state `{prefix}/{name}`"),
            })?;
            if t.shape() != tensor.shape() {
                return Err(Error::Format {
                    record: 0,
                    message: format!("optimizer state `{prefix}/{name}` has the wrong shape"),
                });
            }
            Ok(t)
        };
        if matches!(kind, OptimizerKind::Adam { .. }) {
            opt.first[id.0] = take("m")?;
        }
        opt.second[id.0] = take("v")?;
    }
    Ok(opt)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Format {
            record: self.record,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(self.error("truncated checkpoint")),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw)
            .map(str::to_string)
            .map_err(|_| self.error("string is not UTF-8"))
    }

    fn tensor_record(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = self.take(n.checked_mul(8).ok_or_else(|| self.error("tensor too large"))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| self.error(&e.to_string()))?;
        Ok((name, tensor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, GradSet, ParamSpec};

    fn sample() -> ParamSet {
        init_params(
            &[
                ParamSpec::new("layer.weight", &[3, 4]),
                ParamSpec::new("layer.bias", &[3]),
                ParamSpec::new("head.weight", &[4]),
            ],
            5,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_with_optimizer() {
        let mut params = sample();
        let mut opt = OptimizerState::adam(&params, 0.001);
        let mut g = GradSet::zeros_like(&params);
        g.add_l2(&params, 0.3);
        opt.apply(&mut params, &g).unwrap();

        let ckpt = Checkpoint {
            metadata: BTreeMap::from([("model".to_string(), "ngnn".to_string())]),
            params,
            optimizer: Some(opt),
        };
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rmsprop_round_trip() {
        let params = sample();
        let opt = OptimizerState::rmsprop(&params, 0.01);
        let ckpt = Checkpoint {
            metadata: BTreeMap::new(),
            params,
            optimizer: Some(opt),
        };
        assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap(), ckpt);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let ckpt = Checkpoint {
            metadata: BTreeMap::new(),
            params: sample(),
            optimizer: None,
        };
        let bytes = ckpt.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
    }
}
