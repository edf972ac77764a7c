//! Subcommand implementations. Each reads its inputs, composes library
//! operations and writes fixed-name files under the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::analysis::{
    localization_csv, localization_text, localize, parse_token_grid_csv, temporal_iou, token_grid_csv,
    top_features_csv, NaiveBayes,
};
use crate::cli::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureTensor, PatchConfig};
use crate::model::{
    nearest_neighbor_distances, parse_kv, perplexity, usage_histogram, Checkpoint, Model, ModelConfig, TokenGrid,
};
use crate::numerics::Rng;
use crate::signal_io::{load_dataset, synth_dataset, write_dataset, Window, CANONICAL_RATE_HZ};
use crate::training::{
    auprc, auroc, evaluate, finetune, finetune_curve_csv, loss_curve_csv, macro_metrics, model_for_regime, pretrain,
    EvalReport, PretrainOutcome, Regime,
};

pub const TOKENS_DIR: &str = "tokens";
pub const TOKEN_INDEX: &str = "index.csv";
pub const TOKEN_INDEX_HEADER: &str = "window_id,file,label,split";
pub const TRUTH_SPANS: &str = "truth_spans.csv";
pub const TRUTH_SPANS_HEADER: &str = "window_id,channel,start_s,end_s";
pub const GEOMETRY: &str = "geometry.txt";

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{}: no such file", path.display())))
    }
}

/// Accepts a dataset directory or its `manifest.csv`.
pub fn manifest_path(data: &Path) -> Result<PathBuf> {
    let p = if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    };
    require_file(&p)?;
    Ok(p)
}

/// Accepts a token directory or the output directory that contains one.
pub fn tokens_path(tokens: &Path) -> Result<PathBuf> {
    let p = if tokens.join(TOKEN_INDEX).is_file() {
        tokens.to_path_buf()
    } else {
        tokens.join(TOKENS_DIR)
    };
    require_file(&p.join(TOKEN_INDEX))?;
    Ok(p)
}

/// Stratified holdout: within each label group, a shuffled
/// `round(fraction * n)` members (at least one, never all) are held out.
pub fn holdout_split(labels: &[Option<usize>], fraction: f64, rng: &Rng) -> Vec<bool> {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(*l).or_default().push(i);
    }
    let mut held = vec![false; labels.len()];
    for (label, mut idx) in groups {
        let n = idx.len();
        if n < 2 {
            continue;
        }
        let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut r = rng.fork(&format!("{label:?}"));
        r.shuffle(&mut idx);
        for &i in &idx[..k] {
            held[i] = true;
        }
    }
    held
}

fn featurize_all(windows: &[Window], cfg: &PatchConfig) -> Result<Vec<FeatureTensor>> {
    windows.iter().map(|w| featurize(w, cfg)).collect()
}

fn tokenize_all(model: &Model, features: &[FeatureTensor], chunk: usize) -> Result<Vec<TokenGrid>> {
    let mut out = Vec::with_capacity(features.len());
    for part in features.chunks(chunk.max(1)) {
        let refs: Vec<&FeatureTensor> = part.iter().collect();
        out.extend(model.tokenize(&refs)?);
    }
    Ok(out)
}

fn labels_of(windows: &[Window], classes: usize) -> Result<Vec<usize>> {
    windows
        .iter()
        .map(|w| match w.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::InvalidInput(format!("{}: label {l} outside 0..{classes}", w.id()))),
            None => Err(Error::InvalidInput(format!("{}: window has no label", w.id()))),
        })
        .collect()
}

fn split_select<T: Clone>(items: &[T], held: &[bool], want: bool) -> Vec<T> {
    items
        .iter()
        .zip(held)
        .filter(|(_, h)| **h == want)
        .map(|(x, _)| x.clone())
        .collect()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path)?;
    Checkpoint::load(path)
}

/// File-system safe stem for a window id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `synth`: records/, masks/, manifest.csv, config.txt.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (windows, entries) = synth_dataset(&cfg.synth)?;
    let manifest = write_dataset(out, &windows, &entries)?;
    write(&out.join("config.txt"), cfg.to_text())?;
    info!("wrote {} windows to {}", windows.len(), out.display());
    Ok(manifest)
}

/// `pretrain`: checkpoint.eegc, loss.csv, val_loss.csv, checkpoints/, config.txt.
pub fn cmd_pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> Result<PretrainOutcome> {
    let manifest = manifest_path(data)?;
    ensure_dir(out)?;
    let windows = load_dataset(&manifest)?;
    let mut mcfg = cfg.model.clone();
    mcfg.head_outputs = 0;
    let features = featurize_all(&windows, &mcfg.patch)?;
    let labels: Vec<Option<usize>> = windows.iter().map(|w| w.label).collect();
    let held = holdout_split(&labels, cfg.holdout_fraction, &cfg.rng("split"));
    let train = split_select(&features, &held, false);
    let val = split_select(&features, &held, true);
    let mut model = Model::new(mcfg, &cfg.rng("init"))?;
    let ck_dir = out.join("checkpoints");
    if cfg.train.checkpoint_interval > 0 {
        ensure_dir(&ck_dir)?;
    }
    let interval = cfg.train.checkpoint_interval;
    let total = cfg.train.max_steps;
    let outcome = pretrain(&mut model, &train, &val, &cfg.train, |ck| {
        let step = ck.step as usize;
        if interval > 0 && step.is_multiple_of(interval) && step < total {
            ck.save(&ck_dir.join(format!("step_{step:06}.eegc")))?;
        }
        Ok(())
    })?;
    Checkpoint::from_model(&model, outcome.steps as u64, cfg.train.seed).save(&out.join("checkpoint.eegc"))?;
    write(&out.join("loss.csv"), loss_curve_csv(&outcome.train_curve))?;
    write(&out.join("val_loss.csv"), loss_curve_csv(&outcome.val_curve))?;
    write(&out.join("config.txt"), cfg.to_text())?;
    Ok(outcome)
}

/// `tokenize`: tokens/<window>.csv, tokens/index.csv, tokens/truth_spans.csv,
/// tokens/geometry.txt.
pub fn cmd_tokenize(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<usize> {
    let manifest = manifest_path(data)?;
    let ck = load_checkpoint(checkpoint)?;
    let dir = out.join(TOKENS_DIR);
    ensure_dir(&dir)?;
    let model = ck.to_model()?;
    let windows = load_dataset(&manifest)?;
    let features = featurize_all(&windows, &model.config().patch)?;
    let grids = tokenize_all(&model, &features, cfg.train.batch_size)?;
    let labels: Vec<Option<usize>> = windows.iter().map(|w| w.label).collect();
    let held = holdout_split(&labels, cfg.holdout_fraction, &cfg.rng("split"));
    let mut index = format!("{TOKEN_INDEX_HEADER}\n");
    let mut truth = format!("{TRUTH_SPANS_HEADER}\n");
    let fs_hz = f64::from(CANONICAL_RATE_HZ);
    for ((w, grid), h) in windows.iter().zip(&grids).zip(&held) {
        let id = w.id();
        let file = format!("{}.csv", file_stem(&id));
        write(&dir.join(&file), token_grid_csv(grid, &w.channel_labels)?)?;
        let label = w.label.map(|l| l.to_string()).unwrap_or_default();
        let split = if *h { "holdout" } else { "train" };
        let _ = writeln!(index, "{id},{file},{label},{split}");
        if let Some(mask) = &w.localization_mask {
            for c in 0..mask.channels() {
                for (s, e) in mask.runs(c) {
                    let _ = writeln!(truth, "{id},{},{:?},{:?}", w.channel_labels[c], s as f64 / fs_hz, e as f64 / fs_hz);
                }
            }
        }
    }
    write(&dir.join(TOKEN_INDEX), index)?;
    write(&dir.join(TRUTH_SPANS), truth)?;
    let m = model.config();
    let geometry: String = m
        .to_kv()
        .into_iter()
        .filter(|(k, _)| k.starts_with("patch.") || k == "model.codebook_size")
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    write(&dir.join(GEOMETRY), geometry)?;
    Ok(grids.len())
}

fn check_model_agreement(cfg: &RunConfig, ck: &Checkpoint) -> Result<()> {
    if !cfg.model_explicit {
        return Ok(());
    }
    let mut mine = cfg.model.clone();
    mine.head_outputs = ck.config.head_outputs;
    let (a, b) = (mine.to_kv(), ck.config.to_kv());
    match a.iter().find(|(k, v)| b.get(*k) != Some(v)) {
        Some((k, v)) => Err(Error::Config(format!(
            "`{k} = {v}` conflicts with the checkpoint's `{}`",
            b.get(k).map(String::as_str).unwrap_or("")
        ))),
        None => Ok(()),
    }
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write(&out.join("eval.csv"), report.to_csv())?;
    write(&out.join("eval.txt"), report.to_text())
}

/// `finetune`: model.eegc, finetune_loss.csv, eval.csv, eval.txt, config.txt.
pub fn cmd_finetune(cfg: &RunConfig, checkpoint: Option<&Path>, data: &Path, out: &Path) -> Result<EvalReport> {
    let regime = cfg.train.regime;
    if regime == Regime::Pretrain {
        return Err(Error::Config("finetune needs a downstream regime (supervised|linear_probe|finetune)".into()));
    }
    if regime != Regime::Supervised && checkpoint.is_none() {
        return Err(Error::Config(format!("{regime} requires --checkpoint")));
    }
    let manifest = manifest_path(data)?;
    let ck = checkpoint.map(load_checkpoint).transpose()?;
    if let Some(ck) = &ck {
        check_model_agreement(cfg, ck)?;
    }
    ensure_dir(out)?;
    let windows = load_dataset(&manifest)?;
    let labels = labels_of(&windows, cfg.classes)?;
    let mut model = model_for_regime(regime, ck.as_ref(), &cfg.model, cfg.head_outputs(), &cfg.rng("downstream"))?;
    let features = featurize_all(&windows, &model.config().patch)?;
    let opt_labels: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    let held = holdout_split(&opt_labels, cfg.holdout_fraction, &cfg.rng("split"));
    let (train_x, train_y) = (split_select(&features, &held, false), split_select(&labels, &held, false));
    let (test_x, test_y) = (split_select(&features, &held, true), split_select(&labels, &held, true));
    let rows = finetune(&mut model, &train_x, &train_y, &cfg.train)?;
    let report = evaluate(&model, &test_x, &test_y, cfg.train.batch_size)?;
    Checkpoint::from_model(&model, rows.len() as u64, cfg.train.seed).save(&out.join("model.eegc"))?;
    write(&out.join("finetune_loss.csv"), finetune_curve_csv(&rows))?;
    write_report(out, &report)?;
    write(&out.join("config.txt"), cfg.to_text())?;
    Ok(report)
}

/// `eval`: eval.csv, eval.txt over every window of the dataset.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let manifest = manifest_path(data)?;
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.to_model()?;
    if !model.has_head() {
        return Err(Error::Checkpoint(format!("{}: checkpoint has no classification head", checkpoint.display())));
    }
    let windows = load_dataset(&manifest)?;
    if windows.is_empty() {
        return Err(Error::InvalidInput(format!("{}: dataset is empty", manifest.display())));
    }
    let classes = match model.config().head_outputs {
        1 => 2,
        k => k,
    };
    let labels = labels_of(&windows, classes)?;
    let features = featurize_all(&windows, &model.config().patch)?;
    let report = evaluate(&model, &features, &labels, cfg.train.batch_size)?;
    ensure_dir(out)?;
    write_report(out, &report)?;
    Ok(report)
}

/// One token grid listed in a token index.
#[derive(Clone, Debug)]
pub struct IndexedGrid {
    pub id: String,
    pub grid: TokenGrid,
    pub channel_labels: Vec<String>,
    pub label: Option<usize>,
    pub holdout: bool,
}

/// Reads a token directory written by [`cmd_tokenize`].
pub fn read_token_dir(dir: &Path) -> Result<(Vec<IndexedGrid>, BTreeMap<String, Vec<(f64, f64)>>, ModelConfig)> {
    let index_path = dir.join(TOKEN_INDEX);
    let text = read(&index_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(TOKEN_INDEX_HEADER) {
        return Err(Error::InvalidInput(format!("{}: expected header `{TOKEN_INDEX_HEADER}`", index_path.display())));
    }
    let mut grids = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::InvalidInput(format!("{}: malformed row {}", index_path.display(), i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let label = match f[2] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad())?),
        };
        let holdout = match f[3] {
            "holdout" => true,
            "train" => false,
            _ => return Err(bad()),
        };
        let path = dir.join(f[1]);
        let (grid, channel_labels) =
            parse_token_grid_csv(&read(&path)?).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        grids.push(IndexedGrid {
            id: f[0].to_string(),
            grid,
            channel_labels,
            label,
            holdout,
        });
    }
    let mut truth: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let truth_path = dir.join(TRUTH_SPANS);
    if truth_path.is_file() {
        for (i, line) in read(&truth_path)?.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidInput(format!("{}: malformed row {}", truth_path.display(), i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let (a, b): (f64, f64) = (f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?);
            truth.entry(f[0].to_string()).or_default().push((a, b));
        }
    }
    let geo_path = dir.join(GEOMETRY);
    let kv = parse_kv(&read(&geo_path)?)?;
    let mut geometry = ModelConfig::default();
    for (k, v) in &kv {
        if !geometry.apply(k, v)? {
            return Err(Error::InvalidInput(format!("{}: unknown key `{k}`", geo_path.display())));
        }
    }
    Ok((grids, truth, geometry))
}

/// Held-out detection and localization results of `interpret`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpretSummary {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    /// Mean temporal IoU over held-out target windows with ground truth.
    pub mean_iou: Option<f64>,
    pub localized_windows: usize,
}

/// `interpret`: nb_summary.txt, top_features.csv, nb_scores.csv,
/// localization.csv, localization.txt.
pub fn cmd_interpret(cfg: &RunConfig, tokens: &Path, out: &Path) -> Result<InterpretSummary> {
    let dir = tokens_path(tokens)?;
    let (grids, truth, geometry) = read_token_dir(&dir)?;
    let a = &cfg.analysis;
    let (mut train_g, mut train_y) = (Vec::new(), Vec::new());
    for g in grids.iter().filter(|g| !g.holdout) {
        let l = g.label.ok_or_else(|| Error::InvalidInput(format!("{}: training grid has no label", g.id)))?;
        train_g.push(g.grid.clone());
        train_y.push(l);
    }
    let nb = NaiveBayes::fit(&train_g, &train_y, &a.orders, a.alpha, a.mode)?;
    if a.target_class >= nb.classes() {
        return Err(Error::Config(format!(
            "analysis.target_class {} outside 0..{}",
            a.target_class,
            nb.classes()
        )));
    }
    let top = nb.top_features(a.target_class, a.topk)?;
    ensure_dir(out)?;

    let held: Vec<&IndexedGrid> = grids.iter().filter(|g| g.holdout && g.label.is_some()).collect();
    let mut scores_csv = String::from("window_id,split,label,score\n");
    let (mut flat, mut y) = (Vec::new(), Vec::new());
    let mut binary_scores = Vec::new();
    for g in &grids {
        let s = nb.score(&g.grid);
        let score = if nb.classes() == 2 {
            s.log_odds()
        } else {
            s.posteriors()[a.target_class]
        };
        let label = g.label.map(|l| l.to_string()).unwrap_or_default();
        let split = if g.holdout { "holdout" } else { "train" };
        let _ = writeln!(scores_csv, "{},{split},{label},{score:?}", g.id);
        if g.holdout {
            if let Some(l) = g.label {
                flat.extend(s.posteriors());
                y.push(l);
                binary_scores.push(score);
            }
        }
    }
    let (auroc_v, auprc_v) = if held.is_empty() {
        (None, None)
    } else if nb.classes() == 2 {
        let pos: Vec<bool> = y.iter().map(|&l| l == a.target_class).collect();
        (auroc(&binary_scores, &pos).ok(), auprc(&binary_scores, &pos).ok())
    } else {
        match macro_metrics(&flat, nb.classes(), &y) {
            Ok(r) => (Some(r.auroc), Some(r.auprc)),
            Err(_) => (None, None),
        }
    };

    let mut entries = Vec::new();
    let mut ious = Vec::new();
    let mut localized = 0;
    for g in held.iter().filter(|g| g.label == Some(a.target_class)) {
        let e = localize(&g.id, &g.grid, &top, &geometry.patch, geometry.window_len, &g.channel_labels)?;
        localized += 1;
        if let Some(t) = truth.get(&g.id) {
            let pred: Vec<(f64, f64)> = e.iter().map(|x| (x.start_s, x.end_s)).collect();
            ious.push(temporal_iou(&pred, t));
        }
        entries.extend(e);
    }
    let mean_iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);

    let mut summary = nb.summary();
    let _ = writeln!(summary, "training grids: {}", train_g.len());
    let _ = writeln!(summary, "held-out grids: {}", held.len());
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(summary, "held-out auroc: {}", fmt(auroc_v));
    let _ = writeln!(summary, "held-out auprc: {}", fmt(auprc_v));
    let _ = writeln!(summary, "target class: {}", a.target_class);
    let _ = writeln!(summary, "top-k: {}", a.topk);
    let _ = writeln!(summary, "localized windows: {localized}");
    let _ = writeln!(summary, "mean temporal iou: {}", fmt(mean_iou));
    write(&out.join("nb_summary.txt"), summary)?;
    write(&out.join("top_features.csv"), top_features_csv(&top))?;
    write(&out.join("nb_scores.csv"), scores_csv)?;
    write(&out.join("localization.csv"), localization_csv(&entries))?;
    write(&out.join("localization.txt"), localization_text(&entries))?;
    Ok(InterpretSummary {
        auroc: auroc_v,
        auprc: auprc_v,
        mean_iou,
        localized_windows: localized,
    })
}

/// `inspect-codebook`: codebook_usage.csv, codebook_neighbors.csv,
/// codebook_summary.txt. Usage is counted over `data` when given, otherwise
/// over the configured synthetic dataset.
pub fn cmd_inspect_codebook(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<f64> {
    let ck = load_checkpoint(checkpoint)?;
    let manifest = data.map(manifest_path).transpose()?;
    let model = ck.to_model()?;
    let (windows, source) = match &manifest {
        Some(m) => (load_dataset(m)?, "dataset".to_string()),
        None => (synth_dataset(&cfg.synth)?.0, format!("synthetic (seed {})", cfg.seed)),
    };
    let features = featurize_all(&windows, &model.config().patch)?;
    let grids = tokenize_all(&model, &features, cfg.train.batch_size)?;
    let k = model.config().codebook_size;
    let hist = usage_histogram(&grids, k);
    let total: u64 = hist.iter().sum();
    let ppl = perplexity(&hist);
    let mut usage = String::from("code,count,fraction\n");
    for (c, n) in hist.iter().enumerate() {
        let frac = if total > 0 { *n as f64 / total as f64 } else { 0.0 };
        let _ = writeln!(usage, "{c},{n},{frac:?}");
    }
    let nn = nearest_neighbor_distances(model.codebook());
    let mut neighbors = String::from("code,neighbor,distance\n");
    for (c, j, d) in &nn {
        let _ = writeln!(neighbors, "{c},{j},{d:?}");
    }
    ensure_dir(out)?;
    let used = hist.iter().filter(|&&n| n > 0).count();
    let mean_nn = if nn.is_empty() {
        0.0
    } else {
        nn.iter().map(|x| x.2).sum::<f64>() / nn.len() as f64
    };
    let mut s = String::new();
    let _ = writeln!(s, "codebook size: {k}");
    let _ = writeln!(s, "usage source: {source}");
    let _ = writeln!(s, "windows: {}", windows.len());
    let _ = writeln!(s, "tokens: {total}");
    let _ = writeln!(s, "codes used: {used}");
    let _ = writeln!(s, "perplexity: {ppl:.4}");
    let _ = writeln!(s, "mean nearest-neighbor distance: {mean_nn:.6}");
    write(&out.join("codebook_usage.csv"), usage)?;
    write(&out.join("codebook_neighbors.csv"), neighbors)?;
    write(&out.join("codebook_summary.txt"), s)?;
    Ok(ppl)
}
