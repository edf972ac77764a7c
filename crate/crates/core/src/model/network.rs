//! The vector-quantized Transformer: patch embedding, channel-independent
//! encoder, codebook lookup, shallow decoder, reconstruction projection and
//! an optional classification head.
//!
//! All `(window, channel)` sequences of a batch are stacked row-wise into one
//! `R×·` matrix with `R = Σ C_w · N`; attention is restricted to rows of the
//! same sequence, which is what makes the encoder channel-independent.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::model::quantizer::{quantize_rows, TokenGrid};
use crate::model::ModelConfig;
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Tensor, Var};

#[derive(Clone, Debug)]
struct BlockIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct ModelIds {
    patch_proj: ParamId,
    pos: ParamId,
    encoder: Vec<BlockIds>,
    codebook: ParamId,
    decoder: Vec<BlockIds>,
    out_w: ParamId,
    out_b: ParamId,
    head: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ModelIds,
}

/// Stacked model input for several windows.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `R×F` patch features.
    pub x: Tensor,
    pub patches: usize,
    pub channels: Vec<usize>,
    /// Row range `(start, len)` of each window.
    pub segments: Rc<Vec<(usize, usize)>>,
}

impl Batch {
    pub fn new(features: &[&FeatureTensor]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (n, f) = (first.patch_count(), first.feature_dim());
        let mut data = Vec::new();
        let mut channels = Vec::with_capacity(features.len());
        let mut segments = Vec::with_capacity(features.len());
        let mut row = 0;
        for ft in features {
            if ft.patch_count() != n || ft.feature_dim() != f {
                return Err(Error::Config(format!(
                    "batch mixes patch geometries: {:?} vs {:?}",
                    ft.values.shape(),
                    first.values.shape()
                )));
            }
            let c = ft.channel_count();
            data.extend_from_slice(ft.values.data());
            channels.push(c);
            segments.push((row, c * n));
            row += c * n;
        }
        Ok(Self {
            x: Tensor::new(vec![row, f], data)?,
            patches: n,
            channels,
            segments: Rc::new(segments),
        })
    }

    pub fn windows(&self) -> usize {
        self.channels.len()
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    /// Splits per-row token ids back into one grid per window.
    pub fn token_grids(&self, tokens: &[usize]) -> Vec<TokenGrid> {
        self.segments
            .iter()
            .zip(&self.channels)
            .map(|(&(start, len), &c)| {
                let idx = tokens[start..start + len].iter().map(|&t| t as u32).collect();
                TokenGrid::new(c, self.patches, idx).expect("segment matches grid shape")
            })
            .collect()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub input: Var,
    pub embedded: Var,
    /// Encoder output `H`.
    pub hidden: Var,
    /// Selected codebook rows `v_z` (differentiable w.r.t. the codebook).
    pub codes: Var,
    /// Decoder input: value of `codes`, gradient routed to `hidden`.
    pub quantized: Var,
    /// `sg[hidden]` and `sg[codes]`: same values, no gradient.
    pub sg_hidden: Var,
    pub sg_codes: Var,
    /// Decoder output before projection, `Ĥ`.
    pub decoded: Var,
    /// Reconstruction `X_rec`.
    pub recon: Var,
    pub tokens: Vec<usize>,
}

/// Quantizer state captured from a reference forward pass. Replaying a
/// forward with it fixes the token assignment and turns every stop-gradient
/// into a constant, so the objective becomes a smooth function of the
/// parameters whose exact derivative at the reference point is the
/// straight-through gradient. Used for finite-difference checks.
#[derive(Clone, Debug)]
pub struct FrozenQuantizer {
    pub tokens: Vec<usize>,
    pub hidden: Tensor,
    pub codes: Tensor,
}

impl FrozenQuantizer {
    pub fn capture(g: &Graph, fw: &Forward) -> Self {
        Self {
            tokens: fw.tokens.clone(),
            hidden: g.value(fw.hidden).clone(),
            codes: g.value(fw.codes).clone(),
        }
    }
}

struct Quantized {
    tokens: Vec<usize>,
    codes: Var,
    quantized: Var,
    sg_hidden: Var,
    sg_codes: Var,
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_raw(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-bound, bound)).collect())
        .expect("shape matches")
}

fn normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_raw(shape.to_vec(), (0..n).map(|_| rng.normal() * std).collect()).expect("shape matches")
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a Rng,
}

impl Init<'_> {
    fn add(&mut self, name: String, f: impl FnOnce(&mut Rng) -> Tensor) -> Result<ParamId> {
        let mut r = self.rng.fork(&name);
        let value = f(&mut r);
        self.store.add(name, value)
    }

    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, |r| uniform(r, &[fan_in, fan_out], bound))
    }

    fn zeros(&mut self, name: String, n: usize) -> Result<ParamId> {
        self.add(name, |_| Tensor::zeros(&[n]))
    }

    fn ones(&mut self, name: String, n: usize) -> Result<ParamId> {
        self.add(name, |_| Tensor::full(&[n], 1.0))
    }

    fn block(&mut self, prefix: &str, d: usize, ffn: usize) -> Result<BlockIds> {
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(BlockIds {
            ln1_gain: self.ones(p("ln1.gain"), d)?,
            ln1_bias: self.zeros(p("ln1.bias"), d)?,
            wq: self.linear(p("attn.wq"), d, d)?,
            wk: self.linear(p("attn.wk"), d, d)?,
            wv: self.linear(p("attn.wv"), d, d)?,
            wo: self.linear(p("attn.wo"), d, d)?,
            bo: self.zeros(p("attn.bo"), d)?,
            ln2_gain: self.ones(p("ln2.gain"), d)?,
            ln2_bias: self.zeros(p("ln2.bias"), d)?,
            w1: self.linear(p("ffn.w1"), d, ffn)?,
            b1: self.zeros(p("ffn.b1"), ffn)?,
            w2: self.linear(p("ffn.w2"), ffn, d)?,
            b2: self.zeros(p("ffn.b2"), d)?,
        })
    }
}

impl Model {
    /// Randomly initialized model. Each parameter draws from its own stream
    /// forked from `rng` by name, so adding a head leaves the backbone's
    /// initialization unchanged.
    pub fn new(config: ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let (d, f, n, k) = (
            config.hidden_dim,
            config.feature_dim(),
            config.patch_count(),
            config.codebook_size,
        );
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng };
        let patch_proj = init.linear("encoder.patch_proj".into(), f, d)?;
        let pos = init.add("encoder.pos".into(), |r| normal(r, &[n, d], 0.02))?;
        let encoder = (0..config.encoder_layers)
            .map(|i| init.block(&format!("encoder.layer{i}"), d, config.ffn_dim))
            .collect::<Result<Vec<_>>>()?;
        let codebook = init.add("quantizer.codebook".into(), |r| uniform(r, &[k, d], 1.0 / k as f64))?;
        let decoder = (0..config.decoder_layers)
            .map(|i| init.block(&format!("decoder.layer{i}"), d, config.ffn_dim))
            .collect::<Result<Vec<_>>>()?;
        let out_w = init.linear("decoder.out_proj.weight".into(), d, f)?;
        let out_b = init.zeros("decoder.out_proj.bias".into(), f)?;
        let head = if config.head_outputs > 0 {
            Some((
                init.linear("head.weight".into(), d, config.head_outputs)?,
                init.zeros("head.bias".into(), config.head_outputs)?,
            ))
        } else {
            None
        };
        Ok(Self {
            config,
            params: store,
            ids: ModelIds {
                patch_proj,
                pos,
                encoder,
                codebook,
                decoder,
                out_w,
                out_b,
                head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn codebook(&self) -> &Tensor {
        &self.params.get(self.ids.codebook).value
    }

    pub fn has_head(&self) -> bool {
        self.ids.head.is_some()
    }

    /// Replaces a parameter value by name, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = self.params.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{name}`: model {:?}, given {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(&self.params, id)
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        let rate = self.config.dropout;
        match rng {
            Some(r) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..g.value(x).len())
                    .map(|_| if r.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                g.mask_mul(x, Rc::new(mask))
            }
            _ => Ok(x),
        }
    }

    fn block(&self, g: &mut Graph, x: Var, b: &BlockIds, seq_len: usize, rng: &mut Option<&mut Rng>) -> Result<Var> {
        let eps = self.config.ln_eps;
        let (g1, b1) = (self.p(g, b.ln1_gain), self.p(g, b.ln1_bias));
        let a = g.layer_norm(x, g1, b1, eps)?;
        let (wq, wk, wv) = (self.p(g, b.wq), self.p(g, b.wk), self.p(g, b.wv));
        let q = g.matmul(a, wq)?;
        let k = g.matmul(a, wk)?;
        let v = g.matmul(a, wv)?;
        let att = g.attention(q, k, v, seq_len, self.config.heads)?;
        let wo = self.p(g, b.wo);
        let o = g.matmul(att, wo)?;
        let bo = self.p(g, b.bo);
        let o = g.add_row(o, bo)?;
        let o = self.dropout(g, o, rng)?;
        let x = g.add(x, o)?;

        let (g2, b2) = (self.p(g, b.ln2_gain), self.p(g, b.ln2_bias));
        let c = g.layer_norm(x, g2, b2, eps)?;
        let w1 = self.p(g, b.w1);
        let hdn = g.matmul(c, w1)?;
        let bb1 = self.p(g, b.b1);
        let hdn = g.add_row(hdn, bb1)?;
        let hdn = g.gelu(hdn);
        let w2 = self.p(g, b.w2);
        let f = g.matmul(hdn, w2)?;
        let bb2 = self.p(g, b.b2);
        let f = g.add_row(f, bb2)?;
        let f = self.dropout(g, f, rng)?;
        g.add(x, f)
    }

    /// `x_c · w_p + w_pos` for every stacked sequence.
    pub fn embed(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var)> {
        let n = self.config.patch_count();
        if batch.patches != n || batch.x.cols() != self.config.feature_dim() {
            return Err(Error::Config(format!(
                "features have N={} F={}, model expects N={n} F={}",
                batch.patches,
                batch.x.cols(),
                self.config.feature_dim()
            )));
        }
        let input = g.constant(batch.x.clone());
        let wp = self.p(g, self.ids.patch_proj);
        let e = g.matmul(input, wp)?;
        let pos = self.p(g, self.ids.pos);
        Ok((input, g.add_tiled(e, pos)?))
    }

    pub fn encode(&self, g: &mut Graph, embedded: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        let n = self.config.patch_count();
        let mut x = embedded;
        for b in &self.ids.encoder {
            x = self.block(g, x, b, n, rng)?;
        }
        Ok(x)
    }

    /// Nearest-codeword lookup. Returns `(tokens, codes, quantized)`: `codes`
    /// carries codebook gradients, `quantized` has the same value with the
    /// straight-through gradient path onto `hidden`.
    pub fn quantize(&self, g: &mut Graph, hidden: Var) -> Result<(Vec<usize>, Var, Var)> {
        let q = self.quantize_impl(g, hidden, None)?;
        Ok((q.tokens, q.codes, q.quantized))
    }

    fn quantize_impl(&self, g: &mut Graph, hidden: Var, frozen: Option<&FrozenQuantizer>) -> Result<Quantized> {
        let cb = self.p(g, self.ids.codebook);
        match frozen {
            None => {
                let tokens = quantize_rows(g.value(hidden), self.codebook())?;
                let codes = g.gather_rows(cb, Rc::new(tokens.clone()))?;
                let quantized = g.straight_through(hidden, codes)?;
                let sg_hidden = g.detach(hidden);
                let sg_codes = g.detach(codes);
                Ok(Quantized {
                    tokens,
                    codes,
                    quantized,
                    sg_hidden,
                    sg_codes,
                })
            }
            Some(f) => {
                if f.tokens.len() != g.value(hidden).rows() {
                    return Err(Error::Dimension("frozen quantizer does not match batch".into()));
                }
                let codes = g.gather_rows(cb, Rc::new(f.tokens.clone()))?;
                let mut offset = f.codes.clone();
                for (o, h) in offset.data_mut().iter_mut().zip(f.hidden.data()) {
                    *o -= h;
                }
                let offset = g.constant(offset);
                let quantized = g.add(hidden, offset)?;
                let sg_hidden = g.constant(f.hidden.clone());
                let sg_codes = g.constant(f.codes.clone());
                Ok(Quantized {
                    tokens: f.tokens.clone(),
                    codes,
                    quantized,
                    sg_hidden,
                    sg_codes,
                })
            }
        }
    }

    /// Decoder stack over the quantized sequence; returns `(Ĥ, X_rec)`.
    pub fn decode(&self, g: &mut Graph, quantized: Var, rng: &mut Option<&mut Rng>) -> Result<(Var, Var)> {
        let n = self.config.patch_count();
        let mut x = quantized;
        for b in &self.ids.decoder {
            x = self.block(g, x, b, n, rng)?;
        }
        let w = self.p(g, self.ids.out_w);
        let y = g.matmul(x, w)?;
        let bias = self.p(g, self.ids.out_b);
        Ok((x, g.add_row(y, bias)?))
    }

    /// Mean-pools `Ĥ` over every row of each window, then applies the head.
    pub fn head(&self, g: &mut Graph, decoded: Var, segments: Rc<Vec<(usize, usize)>>) -> Result<Var> {
        let (w, b) = self
            .ids
            .head
            .ok_or_else(|| Error::Config("model has no classification head".into()))?;
        let pooled = g.segment_mean(decoded, segments)?;
        let wv = self.p(g, w);
        let logits = g.matmul(pooled, wv)?;
        let bv = self.p(g, b);
        g.add_row(logits, bv)
    }

    /// Full forward pass. Dropout is active iff `rng` is given.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, rng: Option<&mut Rng>) -> Result<Forward> {
        self.forward_impl(g, batch, rng, None)
    }

    /// Eval-mode forward replaying a captured quantizer state.
    pub fn forward_frozen(&self, g: &mut Graph, batch: &Batch, frozen: &FrozenQuantizer) -> Result<Forward> {
        self.forward_impl(g, batch, None, Some(frozen))
    }

    fn forward_impl(
        &self,
        g: &mut Graph,
        batch: &Batch,
        mut rng: Option<&mut Rng>,
        frozen: Option<&FrozenQuantizer>,
    ) -> Result<Forward> {
        let (input, embedded) = self.embed(g, batch)?;
        let hidden = self.encode(g, embedded, &mut rng)?;
        let q = self.quantize_impl(g, hidden, frozen)?;
        let (decoded, recon) = self.decode(g, q.quantized, &mut rng)?;
        Ok(Forward {
            input,
            embedded,
            hidden,
            codes: q.codes,
            quantized: q.quantized,
            sg_hidden: q.sg_hidden,
            sg_codes: q.sg_codes,
            decoded,
            recon,
            tokens: q.tokens,
        })
    }

    /// Eval-mode token grids, one per window.
    pub fn tokenize(&self, features: &[&FeatureTensor]) -> Result<Vec<TokenGrid>> {
        let batch = Batch::new(features)?;
        let mut g = Graph::new();
        let mut none = None;
        let (_, e) = self.embed(&mut g, &batch)?;
        let h = self.encode(&mut g, e, &mut none)?;
        let tokens = quantize_rows(g.value(h), self.codebook())?;
        Ok(batch.token_grids(&tokens))
    }

    /// Eval-mode head logits, `windows × head_outputs`.
    pub fn predict_logits(&self, features: &[&FeatureTensor]) -> Result<Tensor> {
        let batch = Batch::new(features)?;
        let mut g = Graph::new();
        let fw = self.forward(&mut g, &batch, None)?;
        let logits = self.head(&mut g, fw.decoded, batch.segments.clone())?;
        Ok(g.value(logits).clone())
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::PatchConfig;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 16,
            codebook_size: 8,
            dropout: 0.0,
            ln_eps: 1e-5,
            head_outputs: 0,
            patch: PatchConfig {
                patch_len: 16,
                stride: 16,
                log_eps: 1e-6,
            },
            window_len: 48,
        }
    }

    fn features(rng: &mut Rng, c: usize, n: usize, f: usize) -> FeatureTensor {
        let t = Tensor::new(vec![c, n, f], (0..c * n * f).map(|_| rng.normal()).collect()).unwrap();
        FeatureTensor::from_values(t).unwrap()
    }

    fn set_zero(m: &mut Model, name: &str) {
        let shape = m.params().by_name(name).unwrap().value.shape().to_vec();
        m.set_param(name, Tensor::zeros(&shape)).unwrap();
    }

    #[test]
    fn toy_shapes() {
        let cfg = toy_config();
        assert_eq!(cfg.patch_count(), 4);
        assert_eq!(cfg.feature_dim(), 8);
        let m = Model::new(cfg, &Rng::new(0)).unwrap();
        let mut rng = Rng::new(1);
        let x = features(&mut rng, 2, 4, 8);
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        let fw = m.forward(&mut g, &batch, None).unwrap();
        assert_eq!(g.value(fw.recon).shape(), &[8, 8]);
        assert_eq!(g.value(fw.hidden).shape(), &[8, 8]);
        assert_eq!(fw.tokens.len(), 8);
    }

    #[test]
    fn embed_with_zero_and_identity_weights() {
        let mut cfg = toy_config();
        cfg.encoder_layers = 0;
        let mut m = Model::new(cfg, &Rng::new(0)).unwrap();
        let mut rng = Rng::new(2);
        let x = features(&mut rng, 2, 4, 8);
        set_zero(&mut m, "encoder.patch_proj");
        set_zero(&mut m, "encoder.pos");
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        let (_, e) = m.embed(&mut g, &batch).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));

        m.set_param("encoder.patch_proj", Tensor::identity(8)).unwrap();
        let mut g = Graph::new();
        let (_, e) = m.embed(&mut g, &batch).unwrap();
        assert_eq!(g.value(e).data(), x.values.data());
        let mut none = None;
        let h = m.encode(&mut g, e, &mut none).unwrap();
        assert_eq!(g.value(h).data(), x.values.data());
    }

    #[test]
    fn embed_matches_loop_oracle() {
        let m = Model::new(toy_config(), &Rng::new(4)).unwrap();
        let mut rng = Rng::new(5);
        let x = features(&mut rng, 3, 4, 8);
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        let (_, e) = m.embed(&mut g, &batch).unwrap();
        let wp = &m.params().by_name("encoder.patch_proj").unwrap().value;
        let pos = &m.params().by_name("encoder.pos").unwrap().value;
        for c in 0..3 {
            for n in 0..4 {
                for d in 0..8 {
                    let mut s = pos.data()[n * 8 + d];
                    for f in 0..8 {
                        s += x.values.data()[(c * 4 + n) * 8 + f] * wp.data()[f * 8 + d];
                    }
                    let got = g.value(e).data()[(c * 4 + n) * 8 + d];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn embed_rejects_wrong_patch_count() {
        let m = Model::new(toy_config(), &Rng::new(0)).unwrap();
        let mut rng = Rng::new(1);
        let x = features(&mut rng, 2, 5, 8);
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        assert!(matches!(m.embed(&mut g, &batch), Err(Error::Config(_))));
    }

    #[test]
    fn residual_only_layer_adds_biases() {
        let mut m = Model::new(toy_config(), &Rng::new(0)).unwrap();
        for name in [
            "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias", "ffn.w1",
            "ffn.w2",
        ] {
            set_zero(&mut m, &format!("encoder.layer0.{name}"));
        }
        let mut rng = Rng::new(9);
        let bo: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let b1: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let b2: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        m.set_param("encoder.layer0.attn.bo", Tensor::new(vec![8], bo.clone()).unwrap()).unwrap();
        m.set_param("encoder.layer0.ffn.b1", Tensor::new(vec![16], b1).unwrap()).unwrap();
        m.set_param("encoder.layer0.ffn.b2", Tensor::new(vec![8], b2.clone()).unwrap()).unwrap();
        let x = features(&mut rng, 2, 4, 8);
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        let (_, e) = m.embed(&mut g, &batch).unwrap();
        let mut none = None;
        let h = m.encode(&mut g, e, &mut none).unwrap();
        let (ev, hv) = (g.value(e).clone(), g.value(h).clone());
        for r in 0..8 {
            for d in 0..8 {
                let want = ev.row(r)[d] + bo[d] + b2[d];
                assert!((hv.row(r)[d] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_is_channel_independent() {
        let m = Model::new(toy_config(), &Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let x = features(&mut rng, 3, 4, 8);
        let perm = [2usize, 0, 1];
        let mut pdata = Vec::new();
        for &c in &perm {
            pdata.extend_from_slice(&x.values.data()[c * 32..(c + 1) * 32]);
        }
        let xp = FeatureTensor::from_values(Tensor::new(vec![3, 4, 8], pdata).unwrap()).unwrap();
        let run = |ft: &FeatureTensor| {
            let batch = Batch::new(&[ft]).unwrap();
            let mut g = Graph::new();
            let (_, e) = m.embed(&mut g, &batch).unwrap();
            let mut none = None;
            let h = m.encode(&mut g, e, &mut none).unwrap();
            g.value(h).clone()
        };
        let (h, hp) = (run(&x), run(&xp));
        for (i, &c) in perm.iter().enumerate() {
            assert_eq!(&hp.data()[i * 32..(i + 1) * 32], &h.data()[c * 32..(c + 1) * 32]);
        }
    }

    #[test]
    fn zero_layer_decoder_examples() {
        let mut cfg = toy_config();
        cfg.decoder_layers = 0;
        let mut m = Model::new(cfg, &Rng::new(0)).unwrap();
        let bias: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        set_zero(&mut m, "decoder.out_proj.weight");
        m.set_param("decoder.out_proj.bias", Tensor::new(vec![8], bias.clone()).unwrap()).unwrap();
        let mut g = Graph::new();
        let vq = g.constant(Tensor::full(&[4, 8], 3.0));
        let mut none = None;
        let (_, rec) = m.decode(&mut g, vq, &mut none).unwrap();
        for r in 0..4 {
            assert_eq!(g.value(rec).row(r), bias.as_slice());
        }
        m.set_param("decoder.out_proj.weight", Tensor::identity(8)).unwrap();
        set_zero(&mut m, "decoder.out_proj.bias");
        let mut g = Graph::new();
        let mut rng = Rng::new(1);
        let v = Tensor::new(vec![4, 8], (0..32).map(|_| rng.normal()).collect()).unwrap();
        let vq = g.constant(v.clone());
        let (_, rec) = m.decode(&mut g, vq, &mut none).unwrap();
        assert_eq!(g.value(rec), &v);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let m = Model::new(toy_config(), &Rng::new(8)).unwrap();
        let mut rng = Rng::new(1);
        let x = features(&mut rng, 2, 4, 8);
        let run = || {
            let batch = Batch::new(&[&x]).unwrap();
            let mut g = Graph::new();
            let fw = m.forward(&mut g, &batch, None).unwrap();
            g.value(fw.recon).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn head_examples() {
        let mut cfg = toy_config();
        cfg.head_outputs = 3;
        let mut m = Model::new(cfg, &Rng::new(0)).unwrap();
        set_zero(&mut m, "head.weight");
        m.set_param("head.bias", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let mut rng = Rng::new(3);
        let hh = g.constant(Tensor::new(vec![8, 8], (0..64).map(|_| rng.normal()).collect()).unwrap());
        let logits = m.head(&mut g, hh, Rc::new(vec![(0, 8)])).unwrap();
        assert_eq!(g.value(logits).data(), &[0.5, -1.0, 2.0]);

        // Pool + affine loop oracle.
        let m = Model::new(m.config().clone(), &Rng::new(5)).unwrap();
        let hv = Tensor::new(vec![8, 8], (0..64).map(|_| rng.normal()).collect()).unwrap();
        let mut g = Graph::new();
        let hh = g.constant(hv.clone());
        let logits = m.head(&mut g, hh, Rc::new(vec![(0, 8)])).unwrap();
        let w = &m.params().by_name("head.weight").unwrap().value;
        let b = &m.params().by_name("head.bias").unwrap().value;
        for o in 0..3 {
            let mut s = b.data()[o];
            for d in 0..8 {
                let mean: f64 = (0..8).map(|r| hv.row(r)[d]).sum::<f64>() / 8.0;
                s += mean * w.data()[d * 3 + o];
            }
            assert!((g.value(logits).data()[o] - s).abs() < 1e-12);
        }

        // Constant Ĥ pools to itself.
        let mut g = Graph::new();
        let row: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let hh = g.constant(Tensor::from_rows(&vec![row.clone(); 8]).unwrap());
        let pooled = g.segment_mean(hh, Rc::new(vec![(0, 8)])).unwrap();
        assert_eq!(g.value(pooled).data(), row.as_slice());
    }

    #[test]
    fn backbone_init_ignores_head() {
        let a = Model::new(toy_config(), &Rng::new(3)).unwrap();
        let mut cfg = toy_config();
        cfg.head_outputs = 1;
        let b = Model::new(cfg, &Rng::new(3)).unwrap();
        for p in a.params().iter() {
            assert_eq!(p.value, b.params().by_name(&p.name).unwrap().value);
        }
    }
}
