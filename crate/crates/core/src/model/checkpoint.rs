//! Binary checkpoint container.
//!
//! Layout (little-endian): `"EEGC"` | u16 version | u32 length + config text |
//! u32 parameter count | per parameter: u16 name length + UTF-8 name, u8 rank,
//! u64 per dim, f64 data.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::parse_kv;
use crate::model::{Model, ModelConfig};
use crate::numerics::{Rng, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EEGC";
pub const CHECKPOINT_VERSION: u16 = 1;

const STEP_KEY: &str = "checkpoint.step";
const SEED_KEY: &str = "checkpoint.seed";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub seed: u64,
    /// Parameters in model order.
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, seed: u64) -> Self {
        Self {
            config: model.config().clone(),
            step,
            seed,
            params: model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn config_text(&self) -> String {
        let mut kv = self.config.to_kv();
        kv.insert(STEP_KEY.into(), self.step.to_string());
        kv.insert(SEED_KEY.into(), self.seed.to_string());
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config_text();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(at(0, "bad magic, expected EEGC"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(at(
                4,
                format!("version mismatch: file has {version}, reader supports {CHECKPOINT_VERSION}"),
            ));
        }
        let text_len = r.u32("config length")? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(text_len, "config text")?)
            .map_err(|_| at(text_at, "config text is not UTF-8"))?;
        let mut kv = parse_kv(text)?;
        let step = take_u64(&mut kv, STEP_KEY)?;
        let seed = take_u64(&mut kv, SEED_KEY)?;
        let config = ModelConfig::from_kv(&kv)?;
        let expected = config.to_kv();
        if let Some(k) = kv.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unknown config key `{k}`")));
        }
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| at(name_at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    at(r.pos, format!("truncated payload for parameter `{name}`"))
                })?;
            let data_at = r.pos;
            let raw = r.take(n * 8, "parameter data")?;
            let mut data = Vec::with_capacity(n);
            for (i, c) in raw.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                if !v.is_finite() {
                    return Err(at(
                        data_at + 8 * i,
                        format!("non-finite value in parameter `{name}`"),
                    ));
                }
                data.push(v);
            }
            if params.iter().any(|(n, _): &(String, Tensor)| *n == name) {
                return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
            }
            params.push((name, Tensor::from_raw(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(at(r.pos, format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, step, seed, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model this checkpoint was saved from.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), &Rng::new(self.seed))?;
        self.load_into(&mut model, |_| false)?;
        Ok(model)
    }

    /// Copies every checkpoint tensor into `model`. Names must match
    /// exactly, except that model parameters selected by `skip` may be
    /// absent from the checkpoint (they keep their current values).
    pub fn load_into(&self, model: &mut Model, skip: impl Fn(&str) -> bool) -> Result<()> {
        let theirs: BTreeMap<&str, &Tensor> = self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in model.params().iter() {
            match theirs.get(p.name.as_str()) {
                None if skip(&p.name) => {}
                None => return Err(Error::Checkpoint(format!("missing parameter `{}`", p.name))),
                Some(t) if t.shape() != p.value.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch for parameter `{}`: checkpoint {:?}, model {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        for (name, _) in &self.params {
            if model.params().id(name).is_none() {
                return Err(Error::Checkpoint(format!("unexpected parameter `{name}`")));
            }
        }
        for (name, t) in &self.params {
            if !skip(name) {
                model.set_param(name, t.clone())?;
            }
        }
        Ok(())
    }
}

impl Model {
    /// Backbone from `ckpt` with a freshly initialized head of `head_outputs`
    /// logits. Any head stored in the checkpoint is discarded.
    pub fn from_pretrained(ckpt: &Checkpoint, head_outputs: usize, rng: &Rng) -> Result<Model> {
        let mut cfg = ckpt.config.clone();
        cfg.head_outputs = head_outputs;
        let mut model = Model::new(cfg, rng)?;
        let backbone = Checkpoint {
            params: ckpt
                .params
                .iter()
                .filter(|(n, _)| !Model::is_head_param(n))
                .cloned()
                .collect(),
            ..ckpt.clone()
        };
        backbone.load_into(&mut model, Model::is_head_param)?;
        Ok(model)
    }
}

fn at(offset: usize, message: impl Into<String>) -> Error {
    Error::format(offset as u64, message)
}

fn take_u64(kv: &mut BTreeMap<String, String>, key: &str) -> Result<u64> {
    let v = kv
        .remove(key)
        .ok_or_else(|| Error::Checkpoint(format!("config is missing `{key}`")))?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{key}`")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(at(
                self.pos,
                format!("truncated payload: need {n} bytes for {what}, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
