//! Pretraining and fine-tuning loops, evaluation and loss-curve CSVs.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::model::{perplexity_of_indices, Batch, Checkpoint, Model, ModelConfig};
use crate::numerics::{Graph, Rng};
use crate::training::loss::{pretrain_objective, task_loss, DEFAULT_BETA, PAPER_SIGN_BETA};
use crate::training::metrics::{binary_report, macro_metrics, EvalReport};
use crate::training::optim::{Adam, AdamConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Pretrain,
    Supervised,
    LinearProbe,
    Finetune,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Pretrain => "pretrain",
            Regime::Supervised => "supervised",
            Regime::LinearProbe => "linear_probe",
            Regime::Finetune => "finetune",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Regime::Pretrain),
            "supervised" => Ok(Regime::Supervised),
            "linear_probe" => Ok(Regime::LinearProbe),
            "finetune" => Ok(Regime::Finetune),
            _ => Err(Error::Config(format!(
                "unknown regime `{s}` (expected supervised, linear_probe or finetune)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Weight of the pretraining objective added to the task loss when fine-tuning.
    pub lambda: f64,
    pub beta: f64,
    /// Use the objective exactly as printed (commitment term subtracted).
    pub paper_sign: bool,
    /// Validation interval in steps; 0 evaluates only at start and end.
    pub eval_interval: usize,
    /// Checkpoint interval in steps; 0 saves only the final model.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            max_steps: 1000,
            seed: 0,
            regime: Regime::Pretrain,
            lambda: 0.1,
            beta: DEFAULT_BETA,
            paper_sign: false,
            eval_interval: 50,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn commitment_weight(&self) -> f64 {
        if self.paper_sign {
            PAPER_SIGN_BETA
        } else {
            self.beta
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        Ok(())
    }

    /// Applies one `train.*` setting. Returns `false` for foreign keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "train.lr" => self.adam.lr = num(key, value)?,
            "train.beta1" => self.adam.beta1 = num(key, value)?,
            "train.beta2" => self.adam.beta2 = num(key, value)?,
            "train.eps" => self.adam.eps = num(key, value)?,
            "train.batch_size" => self.batch_size = num(key, value)?,
            "train.max_steps" => self.max_steps = num(key, value)?,
            "train.regime" => self.regime = value.parse()?,
            "train.lambda" => self.lambda = num(key, value)?,
            "train.beta" => self.beta = num(key, value)?,
            "train.paper_sign" => self.paper_sign = num(key, value)?,
            "train.eval_interval" => self.eval_interval = num(key, value)?,
            "train.checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One row of the pretraining loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
    pub perplexity: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,recon,codebook,commitment,total,perplexity";

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.recon, r.codebook, r.commitment, r.total, r.perplexity
        );
    }
    s
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOutcome {
    pub train_curve: Vec<LossRow>,
    /// Eval-mode loss over the validation set, at step 0, every
    /// `eval_interval` steps and at the end.
    pub val_curve: Vec<LossRow>,
    pub steps: usize,
}

/// Seeded epoch-wise shuffling into fixed-size batches.
struct Batcher {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, rng: Rng) -> Self {
        Self {
            rng,
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// Eval-mode pretraining loss over `data`, row-weighted across chunks.
pub fn evaluate_pretrain(model: &Model, data: &[FeatureTensor], beta: f64, chunk: usize) -> Result<LossRow> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no windows to evaluate".into()));
    }
    let (mut recon, mut cb, mut commit, mut rows) = (0.0, 0.0, 0.0, 0usize);
    let mut tokens = Vec::new();
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&FeatureTensor> = part.iter().collect();
        let batch = Batch::new(&refs)?;
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &batch, None)?;
        let p = pretrain_objective(&mut g, &fw, beta)?.parts(&g, beta);
        let r = batch.rows();
        recon += p.recon * r as f64;
        cb += p.codebook_term * r as f64;
        commit += p.commitment_term * r as f64;
        rows += r;
        tokens.extend(fw.tokens);
    }
    let n = rows as f64;
    let (recon, cb, commit) = (recon / n, cb / n, commit / n);
    Ok(LossRow {
        step: 0,
        recon,
        codebook: cb,
        commitment: commit,
        total: recon + cb + beta * commit,
        perplexity: perplexity_of_indices(&tokens, model.config().codebook_size),
    })
}

/// Optimizes the pretraining objective. `on_checkpoint` is called every
/// `checkpoint_interval` steps and once at the end. On divergence the model
/// keeps the last finite parameters and an error is returned.
pub fn pretrain(
    model: &mut Model,
    train: &[FeatureTensor],
    val: &[FeatureTensor],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("pretraining needs at least one window".into()));
    }
    let beta = cfg.commitment_weight();
    let root = Rng::new(cfg.seed);
    let mut batches = Batcher::new(train.len(), cfg.batch_size, root.fork("batches"));
    let mut dropout = root.fork("dropout");
    model.params_mut().set_trainable(|_| true);
    let mut opt = Adam::new(cfg.adam, model.params());
    let mut out = PretrainOutcome::default();

    let record_val = |model: &Model, step: usize, out: &mut PretrainOutcome| -> Result<()> {
        if !val.is_empty() {
            let mut row = evaluate_pretrain(model, val, beta, cfg.batch_size)?;
            row.step = step;
            info!("step {step}: val recon {:.5} total {:.5} perplexity {:.2}", row.recon, row.total, row.perplexity);
            out.val_curve.push(row);
        }
        Ok(())
    };
    record_val(model, 0, &mut out)?;

    for step in 1..=cfg.max_steps {
        let idx = batches.next();
        let refs: Vec<&FeatureTensor> = idx.iter().map(|&i| &train[i]).collect();
        let batch = Batch::new(&refs)?;
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &batch, Some(&mut dropout))?;
        let loss = pretrain_objective(&mut g, &fw, beta)?;
        let parts = loss.parts(&g, beta);
        if !parts.total.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("total loss is {}", parts.total),
            });
        }
        let grads = g.backward(loss.total)?;
        model.params_mut().zero_grad();
        grads.accumulate_into(&g, model.params_mut());
        opt.step(model.params_mut()).map_err(|e| Error::Diverged {
            step,
            reason: e.to_string(),
        })?;
        let row = LossRow {
            step,
            recon: parts.recon,
            codebook: parts.codebook_term,
            commitment: parts.commitment_term,
            total: parts.total,
            perplexity: perplexity_of_indices(&fw.tokens, model.config().codebook_size),
        };
        debug!("step {step}: {row:?}");
        out.train_curve.push(row);
        out.steps = step;
        if cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != cfg.max_steps {
            record_val(model, step, &mut out)?;
        }
        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 && step != cfg.max_steps {
            on_checkpoint(&Checkpoint::from_model(model, step as u64, cfg.seed))?;
        }
    }
    if cfg.max_steps > 0 {
        record_val(model, cfg.max_steps, &mut out)?;
    }
    on_checkpoint(&Checkpoint::from_model(model, out.steps as u64, cfg.seed))?;
    Ok(out)
}

/// One row of the fine-tuning curve. `pretrain_total` is zero unless the
/// regime adds the pretraining objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneRow {
    pub step: usize,
    pub task: f64,
    pub pretrain_total: f64,
    pub total: f64,
}

pub const FINETUNE_CSV_HEADER: &str = "step,task,pretrain_total,total";

pub fn finetune_curve_csv(rows: &[FinetuneRow]) -> String {
    let mut s = format!("{FINETUNE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.task, r.pretrain_total, r.total);
    }
    s
}

/// Builds the starting model for a downstream regime.
pub fn model_for_regime(
    regime: Regime,
    checkpoint: Option<&Checkpoint>,
    config: &ModelConfig,
    head_outputs: usize,
    rng: &Rng,
) -> Result<Model> {
    if head_outputs == 0 {
        return Err(Error::Config("downstream head needs at least one output".into()));
    }
    match (regime, checkpoint) {
        (Regime::Pretrain, _) => Err(Error::Config("pretrain is not a downstream regime".into())),
        (Regime::Supervised, _) => {
            let mut cfg = checkpoint.map_or_else(|| config.clone(), |c| c.config.clone());
            cfg.head_outputs = head_outputs;
            Model::new(cfg, rng)
        }
        (r, None) => Err(Error::Config(format!("{r} requires --checkpoint"))),
        (_, Some(ck)) => Model::from_pretrained(ck, head_outputs, rng),
    }
}

/// Trains a model with a head under `cfg.regime`.
pub fn finetune(
    model: &mut Model,
    features: &[FeatureTensor],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<FinetuneRow>> {
    cfg.validate()?;
    let regime = cfg.regime;
    if regime == Regime::Pretrain {
        return Err(Error::Config("pretrain is not a downstream regime".into()));
    }
    if !model.has_head() {
        return Err(Error::Config("model has no classification head".into()));
    }
    if features.is_empty() {
        return Err(Error::InvalidInput("fine-tuning needs at least one labeled window".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} windows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let beta = cfg.commitment_weight();
    let root = Rng::new(cfg.seed);
    let mut batches = Batcher::new(features.len(), cfg.batch_size, root.fork("batches"));
    let mut dropout = root.fork("dropout");
    match regime {
        Regime::LinearProbe => model.params_mut().set_trainable(Model::is_head_param),
        _ => model.params_mut().set_trainable(|_| true),
    }
    let frozen: Vec<(String, Vec<u64>)> = model
        .params()
        .iter()
        .filter(|p| !p.trainable)
        .map(|p| (p.name.clone(), p.value.data().iter().map(|v| v.to_bits()).collect()))
        .collect();
    let mut opt = Adam::new(cfg.adam, model.params());
    let with_aux = regime == Regime::Finetune && cfg.lambda > 0.0;
    let mut curve = Vec::with_capacity(cfg.max_steps);

    for step in 1..=cfg.max_steps {
        let idx = batches.next();
        let refs: Vec<&FeatureTensor> = idx.iter().map(|&i| &features[i]).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let batch = Batch::new(&refs)?;
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &batch, Some(&mut dropout))?;
        let logits = model.head(&mut g, fw.decoded, batch.segments.clone())?;
        let task = task_loss(&mut g, logits, &y)?;
        let (total, aux) = if with_aux {
            let eq = pretrain_objective(&mut g, &fw, beta)?;
            let scaled = g.scale(eq.total, cfg.lambda);
            (g.add(task, scaled)?, g.value(eq.total).item())
        } else {
            (task, 0.0)
        };
        let total_v = g.value(total).item();
        if !total_v.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("total loss is {total_v}"),
            });
        }
        let grads = g.backward(total)?;
        model.params_mut().zero_grad();
        grads.accumulate_into(&g, model.params_mut());
        opt.step(model.params_mut()).map_err(|e| Error::Diverged {
            step,
            reason: e.to_string(),
        })?;
        curve.push(FinetuneRow {
            step,
            task: g.value(task).item(),
            pretrain_total: aux,
            total: total_v,
        });
    }

    for (name, bits) in &frozen {
        let now = &model.params().by_name(name).expect("parameter set is fixed").value;
        if now.data().iter().map(|v| v.to_bits()).ne(bits.iter().copied()) {
            return Err(Error::InvalidInput(format!("frozen parameter `{name}` changed during {regime}")));
        }
    }
    model.params_mut().set_trainable(|_| true);
    Ok(curve)
}

/// Per-window class scores: sigmoid probability for one logit, softmax
/// probabilities otherwise. Row-major `windows × max(2, outputs)`.
pub fn predict_scores(model: &Model, features: &[FeatureTensor], chunk: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in features.chunks(chunk.max(1)) {
        let refs: Vec<&FeatureTensor> = part.iter().collect();
        let logits = model.predict_logits(&refs)?;
        if logits.cols() == 1 {
            out.extend(logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())));
        } else {
            out.extend(logits.softmax(1)?.into_data());
        }
    }
    Ok(out)
}

pub fn evaluate(model: &Model, features: &[FeatureTensor], labels: &[usize], chunk: usize) -> Result<EvalReport> {
    if features.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} windows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let scores = predict_scores(model, features, chunk)?;
    match model.config().head_outputs {
        1 => binary_report(&scores, labels),
        k => macro_metrics(&scores, k, labels),
    }
}
