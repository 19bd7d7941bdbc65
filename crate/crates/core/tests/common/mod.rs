#![allow(dead_code)]

use iwshift_core::{Tape, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central finite difference of `f` with respect to element `idx` of leaf `which`.
pub fn central_difference<F>(leaves: &[Tensor], which: usize, idx: usize, h: f64, f: &F) -> f64
where
    F: Fn(&mut Tape, &[iwshift_core::NodeId]) -> iwshift_core::NodeId,
{
    let eval = |delta: f64| {
        let mut perturbed = leaves.to_vec();
        perturbed[which].data_mut()[idx] += delta;
        let mut tape = Tape::new();
        let ids: Vec<_> = perturbed.into_iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &ids);
        tape.value(out).item().unwrap()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

/// Analytic gradients of `f` for every leaf.
pub fn reverse_grads<F>(leaves: &[Tensor], f: &F) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[iwshift_core::NodeId]) -> iwshift_core::NodeId,
{
    let mut tape = Tape::new();
    let ids: Vec<_> = leaves.iter().cloned().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &ids);
    tape.backward(out).unwrap();
    ids.iter()
        .zip(leaves)
        .map(|(&id, t)| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

/// Relative error with an absolute floor for values near zero.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < 1e-7 || diff / analytic.abs().max(numeric.abs()) < 1e-4
}

/// Compares reverse-mode against central differences on every leaf element,
/// or on `limit` randomly chosen elements when given.
pub fn check_gradients<F>(leaves: &[Tensor], f: F, limit: Option<(usize, u64)>) -> usize
where
    F: Fn(&mut Tape, &[iwshift_core::NodeId]) -> iwshift_core::NodeId,
{
    let grads = reverse_grads(leaves, &f);
    let mut coords: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(w, t)| (0..t.numel()).map(move |i| (w, i)))
        .collect();
    if let Some((count, seed)) = limit {
        use rand::seq::SliceRandom;
        coords.shuffle(&mut rng(seed));
        coords.truncate(count);
    }
    for &(w, i) in &coords {
        let numeric = central_difference(leaves, w, i, 1e-5, &f);
        let analytic = grads[w][i];
        assert!(
            grad_close(analytic, numeric),
            "leaf {w} element {i}: reverse {analytic} vs finite difference {numeric}"
        );
    }
    coords.len()
}

/// Compares a model's reverse-mode parameter gradients of the weighted BCE on
/// `(x, y, w)` against central differences on `count` random parameters.
/// Dropout masks are fixed by `mask_seed`, so the loss is a deterministic
/// function of the parameters.
pub fn check_model_gradients(
    model: &iwshift_core::nets::Model,
    x: &Tensor,
    y: &[f64],
    w: &[f64],
    mode: iwshift_core::nets::Mode,
    count: usize,
    seed: u64,
) -> usize {
    use rand::seq::SliceRandom;
    let loss = |m: &iwshift_core::nets::Model, tape: &mut Tape| {
        let input = tape.constant(x.clone());
        let rec = m.record(tape, input, mode, 7).unwrap();
        let l = tape.weighted_bce(rec.logits, y, w).unwrap();
        (l, rec.params)
    };
    let mut tape = Tape::new();
    let (l, params) = loss(model, &mut tape);
    tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .zip(model.params())
        .map(|(&p, t)| {
            tape.grad(p)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    let mut coords: Vec<(usize, usize)> = model
        .params()
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.numel()).map(move |i| (k, i)))
        .collect();
    coords.shuffle(&mut rng(seed));
    coords.truncate(count);
    let h = 1e-5;
    for &(k, i) in &coords {
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[k].data_mut()[i] += delta;
            let mut tape = Tape::new();
            let (l, _) = loss(&m, &mut tape);
            tape.value(l).item().unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(
            grad_close(analytic[k][i], numeric),
            "parameter tensor {k} element {i}: reverse {} vs finite difference {numeric}",
            analytic[k][i]
        );
    }
    coords.len()
}
