//! Central finite-difference gradient checker.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Rng, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub samples_per_param: usize,
    /// `(parameter name, flat index)` coordinates to skip, e.g. kinks.
    pub exclude: Vec<(String, usize)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_param: 64,
            exclude: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Largest relative error seen per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub worst: Option<CoordinateCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences on a random subsample of coordinates of every trainable
/// parameter. `f` must be deterministic in the parameter values.
pub fn grad_check<F>(
    store: &mut ParamStore,
    rng: &mut Rng,
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut graph = Graph::new();
    let out = f(&mut graph, store)?;
    let grads = graph.backward(out)?;
    grads.accumulate_into(&graph, store);
    drop(graph);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, len, trainable) = {
            let p = store.get(id);
            (p.name.clone(), p.value.len(), p.trainable)
        };
        if !trainable {
            continue;
        }
        if let Some(i) = store.get(id).grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("analytic gradient of `{name}`[{i}]")));
        }
        let coords = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            let mut c = rng.choose_distinct(len, opts.samples_per_param);
            c.sort_unstable();
            c
        };
        let mut worst_here: f64 = 0.0;
        for i in coords {
            if opts.exclude.iter().any(|(n, j)| *n == name && *j == i) {
                continue;
            }
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + opts.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original - opts.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = store.get(id).grad.data()[i];
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            worst_here = worst_here.max(rel);
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(CoordinateCheck {
                    param: name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.per_param.push((name, worst_here));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use super::*;
    use crate::numerics::Tensor;

    fn store_with(name: &str, shape: &[usize], rng: &mut Rng) -> ParamStore {
        let mut s = ParamStore::new();
        s.add(name, randn(rng, shape)).unwrap();
        s
    }

    fn check(store: &mut ParamStore, f: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>) -> f64 {
        let mut rng = Rng::new(0);
        let r = grad_check(store, &mut rng, &GradCheckOptions::default(), f).unwrap();
        assert!(r.max_rel_error < 1e-6, "{:?}", r.worst);
        r.max_rel_error
    }

    #[test]
    fn square_at_three() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        let mut rng = Rng::new(0);
        let r = grad_check(&mut s, &mut rng, &GradCheckOptions::default(), |g, st| {
            let a = g.param(st, w);
            let sq = g.mul(a, a)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        let worst = r.worst.unwrap();
        assert!((worst.analytic - 6.0).abs() < 1e-12);
        assert!(r.max_rel_error < 1e-7);
    }

    #[test]
    fn abs_kink_can_be_excluded() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![2], vec![0.0, 0.7]).unwrap()).unwrap();
        let opts = GradCheckOptions {
            exclude: vec![("w".into(), 0)],
            ..Default::default()
        };
        let mut rng = Rng::new(0);
        let r = grad_check(&mut s, &mut rng, &opts, |g, st| {
            let a = g.param(st, w);
            let b = g.abs(a);
            Ok(g.sum_all(b))
        })
        .unwrap();
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-7);
    }

    fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Checks `sum(op(params) * R)` for a fixed random readout `R`.
    fn check_op(shapes: &[&[usize]], op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
        let mut rng = Rng::new(17);
        let mut s = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, sh)| s.add(format!("p{i}"), randn(&mut rng, sh)).unwrap())
            .collect();
        let readout = {
            let mut g = Graph::new();
            let vars: Vec<_> = ids.iter().map(|&id| g.param(&s, id)).collect();
            let out = op(&mut g, &vars).unwrap();
            randn(&mut rng, g.value(out).shape())
        };
        check(&mut s, |g, st| {
            let vars: Vec<_> = ids.iter().map(|&id| g.param(st, id)).collect();
            let out = op(g, &vars)?;
            let r = g.constant(readout.clone());
            let y = g.mul(out, r)?;
            Ok(g.sum_all(y))
        });
    }

    #[test]
    fn every_primitive_passes() {
        check_op(&[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
        check_op(&[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
        check_op(&[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
        check_op(&[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
        check_op(&[&[3, 4], &[4]], |g, v| g.add_row(v[0], v[1]));
        check_op(&[&[6, 4], &[3, 4]], |g, v| g.add_tiled(v[0], v[1]));
        check_op(&[&[3, 4]], |g, v| Ok(g.scale(v[0], -1.7)));
        check_op(&[&[3, 4]], |g, v| Ok(g.gelu(v[0])));
        check_op(&[&[3, 4]], |g, v| Ok(g.softmax_rows(v[0])));
        check_op(&[&[5, 6], &[6], &[6]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
        check_op(&[&[3, 4]], |g, v| g.transpose(v[0]));
        check_op(&[&[5, 3]], |g, v| g.gather_rows(v[0], Rc::new(vec![4, 0, 0, 2])));
        check_op(&[&[3, 4]], |g, v| {
            g.mask_mul(v[0], Rc::new((0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect()))
        });
        check_op(&[&[3, 4]], |g, v| Ok(g.mean_all(v[0])));
        check_op(&[&[3, 4]], |g, v| Ok(g.sum_all(v[0])));
        check_op(&[&[6, 4]], |g, v| g.segment_mean(v[0], Rc::new(vec![(0, 2), (2, 4)])));
        check_op(&[&[3, 4], &[3, 4]], |g, v| g.mse_mean(v[0], v[1]));
        check_op(&[&[3, 4], &[3, 4]], |g, v| g.row_sq_dist_mean(v[0], v[1]));
        check_op(&[&[8, 6], &[8, 6], &[8, 6]], |g, v| g.attention(v[0], v[1], v[2], 4, 2));
        check_op(&[&[4, 1]], |g, v| g.bce_with_logits(v[0], Rc::new(vec![1.0, 0.0, 0.0, 1.0])));
        check_op(&[&[4, 3]], |g, v| g.softmax_cross_entropy(v[0], Rc::new(vec![2, 0, 1, 1])));
    }

    #[test]
    fn straight_through_copies_gradient() {
        let mut s = ParamStore::new();
        let h = s.add("h", Tensor::new(vec![1, 2], vec![0.9, 0.8]).unwrap()).unwrap();
        let table = s.add("table", Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let vh = g.param(&s, h);
        let vt = g.param(&s, table);
        let picked = g.gather_rows(vt, Rc::new(vec![1])).unwrap();
        let st = g.straight_through(vh, picked).unwrap();
        assert_eq!(g.value(st).data(), &[1.0, 1.0]);
        let w = g.constant(Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap());
        let y = g.mul(st, w).unwrap();
        let out = g.sum_all(y);
        let grads = g.backward(out).unwrap();
        assert_eq!(grads.get(vh).unwrap().data(), grads.get(st).unwrap().data());
        assert_eq!(grads.get(vh).unwrap().data(), &[3.0, -2.0]);
        assert!(grads.get(vt).is_none());
    }

    #[test]
    fn bce_passes() {
        let mut rng = Rng::new(9);
        let mut s = store_with("z", &[5, 1], &mut rng);
        let z = s.id("z").unwrap();
        let targets = Rc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0]);
        let rel = check(&mut s, |g, st| {
            let v = g.param(st, z);
            let v = g.scale(v, 3.0);
            g.bce_with_logits(v, targets.clone())
        });
        assert!(rel < 1e-6, "{rel}");
    }
}
