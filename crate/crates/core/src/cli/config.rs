//! Run configuration: flat `key = value` text plus command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::{NbMode, NgramOrders};
use crate::error::{Error, Result};
use crate::model::{parse_kv, ModelConfig, Preset};
use crate::numerics::Rng;
use crate::signal_io::SynthSpec;
use crate::training::{Regime, TrainConfig};

pub const DEFAULT_SEED: u64 = 7;

/// Model keys a preset owns; setting them beside `--preset` is a conflict.
const PRESET_KEYS: [&str; 2] = ["model.encoder_layers", "model.codebook_size"];

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub orders: NgramOrders,
    pub topk: usize,
    pub alpha: f64,
    pub mode: NbMode,
    /// Class whose n-grams are ranked and localized.
    pub target_class: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            orders: NgramOrders::default(),
            topk: 5,
            alpha: 1.0,
            mode: NbMode::Counts,
            target_class: 1,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub regime: Option<String>,
    pub paper_sign: bool,
    pub ngrams: Option<String>,
    pub topk: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Root seed; every subsystem draws from a labelled fork of it.
    pub seed: u64,
    pub model: ModelConfig,
    /// True when any `model.*` or `patch.*` value was given explicitly.
    pub model_explicit: bool,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    /// Fraction of each class held out for validation and evaluation.
    pub holdout_fraction: f64,
    /// Downstream class count; 2 yields a single binary logit.
    pub classes: usize,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: DEFAULT_SEED,
            model: ModelConfig::default(),
            model_explicit: false,
            train: TrainConfig {
                regime: Regime::Finetune,
                ..TrainConfig::default()
            },
            synth: SynthSpec::default(),
            holdout_fraction: 0.25,
            classes: 2,
            analysis: AnalysisConfig::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn pair<T: FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("`{key}` expects `lo,hi`, got `{v}`")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

impl RunConfig {
    /// Reads an optional config file and layers the overrides on top.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let kv = parse_kv(&text).map_err(|e| match path {
            Some(p) => Error::Config(format!("{}: {e}", p.display())),
            None => e,
        })?;
        Self::from_kv(&kv, overrides)
    }

    pub fn from_kv(kv: &BTreeMap<String, String>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = overrides.preset {
            if let Some(k) = PRESET_KEYS.iter().find(|k| kv.contains_key(**k)) {
                return Err(Error::Config(format!("--preset {p} conflicts with `{k}` in the config file")));
            }
            cfg.model.apply("model.preset", &p.to_string())?;
            cfg.model_explicit = true;
        } else if let Some(v) = kv.get("model.preset") {
            cfg.apply("model.preset", v)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "model.preset") {
            cfg.apply(k, v)?;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(r) = &overrides.regime {
            cfg.apply("train.regime", r)?;
        }
        if overrides.paper_sign {
            cfg.train.paper_sign = true;
        }
        if let Some(n) = &overrides.ngrams {
            cfg.apply("analysis.ngrams", n)?;
        }
        if let Some(k) = overrides.topk {
            cfg.analysis.topk = k;
        }
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive_seeds(&mut self) {
        let root = Rng::new(self.seed);
        self.synth.seed = root.fork("synth").seed();
        self.train.seed = root.fork("train").seed();
    }

    /// Generator for a named subsystem (`init`, `head`, `split`, ...).
    pub fn rng(&self, label: &str) -> Rng {
        Rng::new(self.seed).fork(label)
    }

    /// Head width for the configured class count.
    pub fn head_outputs(&self) -> usize {
        if self.classes == 2 {
            1
        } else {
            self.classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.holdout_fraction {} must lie in (0, 1)",
                self.holdout_fraction
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("task.classes must be at least 2".into()));
        }
        if self.analysis.topk == 0 {
            return Err(Error::Config("analysis.topk must be positive".into()));
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha.is_finite()) {
            return Err(Error::Config("analysis.alpha must be positive".into()));
        }
        Ok(())
    }

    /// Applies one setting; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if key.starts_with("model.") || key.starts_with("patch.") {
            if self.model.apply(key, value)? {
                self.model_explicit = true;
                return Ok(());
            }
        } else if key.starts_with("train.")
            && self.train.apply(key, value)? {
                return Ok(());
            }
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = num(key, value)?,
            "synth.channels" => s.channel_count = num(key, value)?,
            "synth.windows_per_class" => s.windows_per_class = num(key, value)?,
            "synth.theta_uv" => s.background.theta_uv = pair(key, value)?,
            "synth.alpha_uv" => s.background.alpha_uv = pair(key, value)?,
            "synth.beta_uv" => s.background.beta_uv = pair(key, value)?,
            "synth.noise_uv" => s.background.noise_uv = num(key, value)?,
            "synth.noise_exponent" => s.background.noise_exponent = num(key, value)?,
            "synth.burst_hz" => s.event.burst_hz = num(key, value)?,
            "synth.amplitude_ratio" => s.event.amplitude_ratio = num(key, value)?,
            "synth.duration_s" => s.event.duration_s = pair(key, value)?,
            "synth.affected_channels" => s.event.affected_channels = pair(key, value)?,
            "data.holdout_fraction" => self.holdout_fraction = num(key, value)?,
            "task.classes" => self.classes = num(key, value)?,
            "analysis.ngrams" => self.analysis.orders = value.parse()?,
            "analysis.topk" => self.analysis.topk = num(key, value)?,
            "analysis.alpha" => self.analysis.alpha = num(key, value)?,
            "analysis.mode" => self.analysis.mode = value.parse()?,
            "analysis.target_class" => self.analysis.target_class = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Resolved settings as config text, suitable for `--config`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        for (k, v) in self.model.to_kv() {
            if k != "model.head_outputs" {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        let t = &self.train;
        let _ = writeln!(s, "train.regime = {}", t.regime);
        for (k, v) in [
            ("lr", format!("{:?}", t.adam.lr)),
            ("beta1", format!("{:?}", t.adam.beta1)),
            ("beta2", format!("{:?}", t.adam.beta2)),
            ("eps", format!("{:?}", t.adam.eps)),
            ("batch_size", t.batch_size.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("lambda", format!("{:?}", t.lambda)),
            ("beta", format!("{:?}", t.beta)),
            ("paper_sign", t.paper_sign.to_string()),
            ("eval_interval", t.eval_interval.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
        ] {
            let _ = writeln!(s, "train.{k} = {v}");
        }
        let sy = &self.synth;
        let (b, e) = (&sy.background, &sy.event);
        let _ = writeln!(s, "synth.channels = {}", sy.channel_count);
        let _ = writeln!(s, "synth.windows_per_class = {}", sy.windows_per_class);
        let _ = writeln!(s, "synth.theta_uv = {:?},{:?}", b.theta_uv.0, b.theta_uv.1);
        let _ = writeln!(s, "synth.alpha_uv = {:?},{:?}", b.alpha_uv.0, b.alpha_uv.1);
        let _ = writeln!(s, "synth.beta_uv = {:?},{:?}", b.beta_uv.0, b.beta_uv.1);
        let _ = writeln!(s, "synth.noise_uv = {:?}", b.noise_uv);
        let _ = writeln!(s, "synth.noise_exponent = {:?}", b.noise_exponent);
        let _ = writeln!(s, "synth.burst_hz = {:?}", e.burst_hz);
        let _ = writeln!(s, "synth.amplitude_ratio = {:?}", e.amplitude_ratio);
        let _ = writeln!(s, "synth.duration_s = {:?},{:?}", e.duration_s.0, e.duration_s.1);
        let _ = writeln!(s, "synth.affected_channels = {},{}", e.affected_channels.0, e.affected_channels.1);
        let _ = writeln!(s, "data.holdout_fraction = {:?}", self.holdout_fraction);
        let _ = writeln!(s, "task.classes = {}", self.classes);
        let a = &self.analysis;
        let _ = writeln!(s, "analysis.ngrams = {}", a.orders);
        let _ = writeln!(s, "analysis.topk = {}", a.topk);
        let _ = writeln!(s, "analysis.alpha = {:?}", a.alpha);
        let _ = writeln!(s, "analysis.mode = {}", a.mode);
        let _ = writeln!(s, "analysis.target_class = {}", a.target_class);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> BTreeMap<String, String> {
        parse_kv(text).unwrap()
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::from_kv(&kv("model.hiden_dim = 8\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("unknown config key `model.hiden_dim`"), "{err}");
        let err = RunConfig::from_kv(&kv("train.seed = 3\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("train.seed"), "{err}");
    }

    #[test]
    fn overrides_win_over_file_values() {
        let o = Overrides {
            seed: Some(11),
            regime: Some("finetune".into()),
            topk: Some(3),
            ngrams: Some("2".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::from_kv(
            &kv("seed = 5\ntrain.regime = supervised\nanalysis.topk = 9\nanalysis.ngrams = 3,4\n"),
            &o,
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.train.regime.to_string(), "finetune");
        assert_eq!(cfg.analysis.topk, 3);
        assert_eq!(cfg.analysis.orders.orders(), &[2]);
    }

    #[test]
    fn preset_applies_before_explicit_dims() {
        let cfg = RunConfig::from_kv(&kv("model.hidden_dim = 32\nmodel.preset = base\n"), &Overrides::default()).unwrap();
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.model.encoder_layers, 8);
        let o = Overrides {
            preset: Some(Preset::Large),
            ..Overrides::default()
        };
        let err = RunConfig::from_kv(&kv("model.codebook_size = 16\n"), &o).unwrap_err();
        assert!(err.to_string().contains("conflicts with `model.codebook_size`"), "{err}");
    }

    #[test]
    fn subsystem_seeds_are_independent_forks() {
        let a = RunConfig::default();
        let b = RunConfig::from_kv(&kv("seed = 8\n"), &Overrides::default()).unwrap();
        assert_ne!(a.synth.seed, a.train.seed);
        assert_ne!(a.synth.seed, b.synth.seed);
        let again = RunConfig::from_kv(&kv("seed = 8\n"), &Overrides::default()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::from_kv(
            &kv("seed = 3\nmodel.hidden_dim = 16\nsynth.duration_s = 1.5,3\ntrain.paper_sign = true\nanalysis.mode = presence\n"),
            &Overrides::default(),
        )
        .unwrap();
        let back = RunConfig::from_kv(&kv(&cfg.to_text()), &Overrides::default()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = RunConfig::from_kv(&kv("synth.duration_s = 2\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("synth.duration_s"), "{err}");
        let err = RunConfig::from_kv(&kv("data.holdout_fraction = 1.5\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("holdout_fraction"), "{err}");
    }
}
