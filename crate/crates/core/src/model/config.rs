use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::PatchConfig;
use crate::signal_io::WINDOW_SAMPLES;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Small,
    Base,
    Large,
}

impl Preset {
    /// `(encoder layers, codebook size)`.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Preset::Small => (6, 512),
            Preset::Base => (8, 1024),
            Preset::Large => (12, 2048),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Small => "small",
            Preset::Base => "base",
            Preset::Large => "large",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            "base" => Ok(Preset::Base),
            "large" => Ok(Preset::Large),
            other => Err(Error::Config(format!("unknown preset `{other}` (small|base|large)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub codebook_size: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    /// Classification head width: 0 = no head (pretraining), 1 = binary
    /// logit, >= 2 = softmax classes.
    pub head_outputs: usize,
    pub patch: PatchConfig,
    /// Samples per input window along the time axis.
    pub window_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Small)
    }
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let (encoder_layers, codebook_size) = p.dims();
        Self {
            encoder_layers,
            decoder_layers: 3,
            hidden_dim: 128,
            heads: 4,
            ffn_dim: 512,
            codebook_size,
            dropout: 0.1,
            ln_eps: 1e-5,
            head_outputs: 0,
            patch: PatchConfig::default(),
            window_len: WINDOW_SAMPLES,
        }
    }

    pub fn patch_count(&self) -> usize {
        self.patch.patch_count(self.window_len).unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.patch.feature_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate_spectral(self.window_len)?;
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook_size must be at least 2".into()));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` lines, sorted by key.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("model.encoder_layers", self.encoder_layers.to_string());
        put("model.decoder_layers", self.decoder_layers.to_string());
        put("model.hidden_dim", self.hidden_dim.to_string());
        put("model.heads", self.heads.to_string());
        put("model.ffn_dim", self.ffn_dim.to_string());
        put("model.codebook_size", self.codebook_size.to_string());
        put("model.dropout", format!("{:?}", self.dropout));
        put("model.ln_eps", format!("{:?}", self.ln_eps));
        put("model.head_outputs", self.head_outputs.to_string());
        put("patch.len", self.patch.patch_len.to_string());
        put("patch.stride", self.patch.stride.to_string());
        put("patch.log_eps", format!("{:?}", self.patch.log_eps));
        put("patch.window_len", self.window_len.to_string());
        m
    }

    /// Applies one `key = value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "model.preset" => {
                let keep = (self.patch, self.window_len, self.head_outputs);
                *self = ModelConfig::preset(value.parse()?);
                (self.patch, self.window_len, self.head_outputs) = keep;
            }
            "model.encoder_layers" => self.encoder_layers = num(key, value)?,
            "model.decoder_layers" => self.decoder_layers = num(key, value)?,
            "model.hidden_dim" => self.hidden_dim = num(key, value)?,
            "model.heads" => self.heads = num(key, value)?,
            "model.ffn_dim" => self.ffn_dim = num(key, value)?,
            "model.codebook_size" => self.codebook_size = num(key, value)?,
            "model.dropout" => self.dropout = num(key, value)?,
            "model.ln_eps" => self.ln_eps = num(key, value)?,
            "model.head_outputs" => self.head_outputs = num(key, value)?,
            "patch.len" => self.patch.patch_len = num(key, value)?,
            "patch.stride" => self.patch.stride = num(key, value)?,
            "patch.log_eps" => self.patch.log_eps = num(key, value)?,
            "patch.window_len" => self.window_len = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses [`ModelConfig::to_text`] output; every model key must be present.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let expected = cfg.to_kv();
        for key in expected.keys() {
            let v = kv
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("config is missing `{key}`")))?;
            cfg.apply(key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_sizes() {
        let s = ModelConfig::preset(Preset::Small);
        assert_eq!((s.encoder_layers, s.codebook_size, s.decoder_layers, s.hidden_dim), (6, 512, 3, 128));
        let b = ModelConfig::preset(Preset::Base);
        assert_eq!((b.encoder_layers, b.codebook_size), (8, 1024));
        let l = ModelConfig::preset(Preset::Large);
        assert_eq!((l.encoder_layers, l.codebook_size), (12, 2048));
        assert_eq!(s.patch_count(), 12);
        assert_eq!(s.feature_dim(), 128);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::preset(Preset::Base);
        c.dropout = 0.3;
        c.head_outputs = 5;
        let kv = parse_kv(&c.to_text()).unwrap();
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::default();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.codebook_size = 1;
        assert!(c.validate().is_err());
        assert!("huge".parse::<Preset>().is_err());
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("novalue").is_err());
    }
}
