//! Pretraining objective and downstream task losses.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::model::{Batch, Forward, Model};
use crate::numerics::{Graph, Var};

pub const DEFAULT_BETA: f64 = 0.25;

/// Commitment weight reproducing the objective exactly as printed, where the
/// commitment term is subtracted with unit weight. That objective is
/// unbounded below; it exists for inspection only.
pub const PAPER_SIGN_BETA: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLossParts {
    pub recon: f64,
    pub codebook_term: f64,
    pub commitment_term: f64,
    pub beta: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct PretrainLossVars {
    pub recon: Var,
    pub codebook: Var,
    pub commitment: Var,
    pub total: Var,
}

impl PretrainLossVars {
    pub fn parts(&self, g: &Graph, beta: f64) -> PretrainLossParts {
        PretrainLossParts {
            recon: g.value(self.recon).item(),
            codebook_term: g.value(self.codebook).item(),
            commitment_term: g.value(self.commitment).item(),
            beta,
            total: g.value(self.total).item(),
        }
    }
}

/// `mean (X_rec - X)^2 + mean ||sg[h] - v||^2 + beta * mean ||h - sg[v]||^2`.
pub fn pretrain_objective(g: &mut Graph, fw: &Forward, beta: f64) -> Result<PretrainLossVars> {
    let recon = g.mse_mean(fw.recon, fw.input)?;
    let codebook = g.row_sq_dist_mean(fw.sg_hidden, fw.codes)?;
    let commitment = g.row_sq_dist_mean(fw.hidden, fw.sg_codes)?;
    let weighted = g.scale(commitment, beta);
    let total = g.add(recon, codebook)?;
    let total = g.add(total, weighted)?;
    Ok(PretrainLossVars {
        recon,
        codebook,
        commitment,
        total,
    })
}

/// Eval-mode loss parts for a set of windows.
pub fn pretrain_loss(model: &Model, features: &[&FeatureTensor], beta: f64) -> Result<PretrainLossParts> {
    let batch = Batch::new(features)?;
    let mut g = Graph::new();
    let fw = model.forward(&mut g, &batch, None)?;
    Ok(pretrain_objective(&mut g, &fw, beta)?.parts(&g, beta))
}

/// Binary cross-entropy for a single logit, softmax cross-entropy otherwise.
pub fn task_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let outputs = g.value(logits).cols();
    if g.value(logits).rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} labels",
            g.value(logits).rows(),
            labels.len()
        )));
    }
    if outputs == 1 {
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidInput(format!("binary head given label {bad}")));
        }
        g.bce_with_logits(logits, Rc::new(labels.iter().map(|&l| l as f64).collect()))
    } else {
        if let Some(&bad) = labels.iter().find(|&&l| l >= outputs) {
            return Err(Error::InvalidInput(format!("label {bad} outside {outputs} classes")));
        }
        g.softmax_cross_entropy(logits, Rc::new(labels.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::tests::toy_config;
    use crate::numerics::{Rng, Tensor};

    fn feats(rng: &mut Rng, c: usize) -> FeatureTensor {
        let t = Tensor::new(vec![c, 4, 8], (0..c * 32).map(|_| rng.normal()).collect()).unwrap();
        FeatureTensor::from_values(t).unwrap()
    }

    #[test]
    fn exact_fit_gives_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[4, 3], 0.5));
        let h = g.constant(Tensor::full(&[4, 3], 0.2));
        let hd = g.detach(h);
        let fw = Forward {
            input: x,
            embedded: h,
            hidden: h,
            codes: h,
            quantized: h,
            sg_hidden: hd,
            sg_codes: hd,
            decoded: h,
            recon: x,
            tokens: vec![0; 4],
        };
        let parts = pretrain_objective(&mut g, &fw, DEFAULT_BETA).unwrap().parts(&g, DEFAULT_BETA);
        assert_eq!(parts.total, 0.0);
    }

    #[test]
    fn zero_decoder_on_ones_gives_unit_recon() {
        let mut cfg = toy_config();
        cfg.decoder_layers = 0;
        let mut m = Model::new(cfg, &Rng::new(0)).unwrap();
        m.set_param("decoder.out_proj.weight", Tensor::zeros(&[8, 8])).unwrap();
        let x = FeatureTensor::from_values(Tensor::full(&[2, 4, 8], 1.0)).unwrap();
        let parts = pretrain_loss(&m, &[&x], DEFAULT_BETA).unwrap();
        assert_eq!(parts.recon, 1.0);
    }

    #[test]
    fn parts_match_straight_line_oracle() {
        let m = Model::new(toy_config(), &Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        let x = feats(&mut rng, 2);
        let batch = Batch::new(&[&x]).unwrap();
        let mut g = Graph::new();
        let fw = m.forward(&mut g, &batch, None).unwrap();
        let parts = pretrain_objective(&mut g, &fw, DEFAULT_BETA).unwrap().parts(&g, DEFAULT_BETA);

        let (h, rec) = (g.value(fw.hidden), g.value(fw.recon));
        let cb = m.codebook();
        let mut recon = 0.0;
        for (a, b) in rec.data().iter().zip(x.values.data()) {
            recon += (a - b) * (a - b);
        }
        recon /= 64.0;
        let mut dist = 0.0;
        for r in 0..8 {
            let row = h.row(r);
            let best = (0..8)
                .map(|k| cb.row(k).iter().zip(row).map(|(v, x)| (v - x) * (v - x)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            dist += best;
        }
        dist /= 8.0;
        assert!((parts.recon - recon).abs() < 1e-10);
        assert!((parts.codebook_term - dist).abs() < 1e-10);
        assert!((parts.commitment_term - dist).abs() < 1e-10);
        let total = recon + dist + DEFAULT_BETA * dist;
        assert!((parts.total - total).abs() < 1e-10);
        assert_eq!(parts.total, parts.recon + parts.codebook_term + parts.beta * parts.commitment_term);
    }

    #[test]
    fn paper_sign_keeps_total_identity() {
        let m = Model::new(toy_config(), &Rng::new(5)).unwrap();
        let mut rng = Rng::new(7);
        let x = feats(&mut rng, 2);
        let p = pretrain_loss(&m, &[&x], PAPER_SIGN_BETA).unwrap();
        assert_eq!(p.total, p.recon + p.codebook_term - p.commitment_term);
    }

    #[test]
    fn total_invariant_to_channel_permutation() {
        let m = Model::new(toy_config(), &Rng::new(2)).unwrap();
        let mut rng = Rng::new(3);
        let x = feats(&mut rng, 3);
        let mut data = Vec::new();
        for c in [1usize, 2, 0] {
            data.extend_from_slice(&x.values.data()[c * 32..(c + 1) * 32]);
        }
        let xp = FeatureTensor::from_values(Tensor::new(vec![3, 4, 8], data).unwrap()).unwrap();
        let a = pretrain_loss(&m, &[&x], DEFAULT_BETA).unwrap();
        let b = pretrain_loss(&m, &[&xp], DEFAULT_BETA).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn task_loss_rejects_bad_labels() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 1]));
        assert!(task_loss(&mut g, l, &[0, 2]).is_err());
        let l = g.constant(Tensor::zeros(&[2, 3]));
        assert!(task_loss(&mut g, l, &[0, 3]).is_err());
        let v = task_loss(&mut g, l, &[0, 2]).unwrap();
        assert!((g.value(v).item() - 3f64.ln()).abs() < 1e-12);
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::model::network::tests::toy_config;
    use crate::model::FrozenQuantizer;
    use crate::numerics::{grad_check, GradCheckOptions, Rng, Tensor};

    fn toy_batch(seed: u64) -> Batch {
        let mut rng = Rng::new(seed);
        let t = Tensor::new(vec![2, 4, 8], (0..64).map(|_| rng.normal()).collect()).unwrap();
        Batch::new(&[&FeatureTensor::from_values(t).unwrap()]).unwrap()
    }

    #[test]
    fn full_model_gradient_check() {
        let mut cfg = toy_config();
        cfg.head_outputs = 1;
        let model = Model::new(cfg, &Rng::new(21)).unwrap();
        let batch = toy_batch(22);
        let mut g = Graph::new();
        let base = model.forward(&mut g, &batch, None).unwrap();
        let frozen = FrozenQuantizer::capture(&g, &base);
        let mut store = model.params().clone();
        let report = grad_check(&mut store, &mut Rng::new(0), &GradCheckOptions::default(), |g, s| {
            let mut m = model.clone();
            *m.params_mut() = s.clone();
            let fw = m.forward_frozen(g, &batch, &frozen)?;
            let eq = pretrain_objective(g, &fw, DEFAULT_BETA)?;
            let logits = m.head(g, fw.decoded, batch.segments.clone())?;
            let task = task_loss(g, logits, &[1])?;
            let aux = g.scale(eq.total, 0.1);
            g.add(task, aux)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{:?}", report.worst);
        assert_eq!(report.per_param.len(), model.params().len());
    }

    #[test]
    fn straight_through_copies_gradient() {
        let model = Model::new(toy_config(), &Rng::new(3)).unwrap();
        let batch = toy_batch(4);
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &batch, None).unwrap();
        let recon = g.mse_mean(fw.recon, fw.input).unwrap();
        let grads = g.backward(recon).unwrap();
        let gh = grads.get(fw.hidden).unwrap();
        let gq = grads.get(fw.quantized).unwrap();
        assert_eq!(gh.data(), gq.data());
        assert!(gh.data().iter().any(|&v| v != 0.0));
    }
}
