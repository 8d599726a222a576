//! Central finite-difference check of [`Graph::backward`].

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::exec::{Forward, Lambdas, NodeTape};
use crate::engine::graph::Graph;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Gradients smaller than this are treated as zero when forming relative
/// errors.
pub const GRAD_FLOOR: f64 = 1e-7;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub eps: f64,
    pub checked: usize,
    /// Parameters rejected because `w ± eps` crosses a causal-set,
    /// pooling, ReLU or horizon boundary where the loss has a kink.
    pub skipped_boundary: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Fraction of checked parameters whose analytic and numeric gradients
    /// are both below [`GRAD_FLOOR`].
    pub zero_grad_fraction: f64,
    pub worst: Option<GradcheckEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(GRAD_FLOOR);
    (a - n).abs() / scale
}

/// Hash of every discrete choice made by a forward pass: ReLU masks,
/// causal sets, pooling winners, firing flags and weight-sum deficits. The
/// loss is smooth in the parameters as long as this does not change.
fn signature(graph: &Graph, fwd: &Forward) -> u64 {
    let mut h = DefaultHasher::new();
    if let Some(t) = &fwd.encoder {
        t.active_signature(
            &mut h,
            graph.params.data(graph.enc.gamma),
            graph.params.data(graph.enc.beta),
            graph.encoder.input.plane(),
        );
    }
    for s in &fwd.samples {
        for (id, v) in s.values.iter().enumerate() {
            for t in v {
                h.write_u8(t.is_finite() as u8);
            }
            match s.tape(id) {
                Some(NodeTape::Conv(tape)) => tape.signature(&mut h),
                Some(NodeTape::Pool(arg)) => arg.iter().for_each(|&a| h.write_u32(a)),
                _ => {}
            }
        }
    }
    for id in graph.weight_params() {
        let p = graph.params.get(id);
        for row in p.data.chunks_exact(p.row_len()) {
            h.write_u8((row.iter().sum::<f64>() < 1.0) as u8);
        }
    }
    h.finish()
}

fn eval(graph: &Graph, images: &[f64], labels: &[usize], lambdas: Lambdas) -> Result<(f64, u64)> {
    let fwd = graph.forward(images, labels.len(), true, true, Exec::Sequential)?;
    let loss = graph.loss(&fwd, labels, lambdas)?.breakdown.total;
    Ok((loss, signature(graph, &fwd)))
}

/// Compares analytic gradients with central differences on `n_params`
/// trainable scalars drawn uniformly at random. The encoder runs in training
/// mode so batch normalization statistics are part of the checked function.
///
/// Samples whose perturbation changes the forward pass's discrete structure
/// are redrawn (up to `20 * n_params` attempts) and counted in
/// `skipped_boundary`.
pub fn finite_diff_check(
    graph: &Graph,
    images: &[f64],
    labels: &[usize],
    lambdas: Lambdas,
    eps: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let fwd = graph.forward(images, labels.len(), true, true, Exec::Sequential)?;
    let base_sig = signature(graph, &fwd);
    let analytic = graph.backward(&fwd, images, labels, lambdas, Exec::Sequential)?;
    drop(fwd);

    let slots: Vec<(usize, usize)> = graph
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind.trainable())
        .flat_map(|(id, p)| (0..p.data.len()).map(move |i| (id, i)))
        .collect();
    if slots.is_empty() {
        return Err(Error::Domain("graph has no trainable parameters".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = graph.clone();
    let mut errs = Vec::with_capacity(n_params);
    let mut zeros = 0usize;
    let mut skipped = 0usize;
    let mut worst: Option<GradcheckEntry> = None;
    let mut attempts = 0usize;
    while errs.len() < n_params && attempts < 20 * n_params.max(1) {
        attempts += 1;
        let (id, i) = slots[rng.gen_range(0..slots.len())];
        let w0 = graph.params.data(id)[i];
        g.params.data_mut(id)[i] = w0 + eps;
        let plus = eval(&g, images, labels, lambdas);
        g.params.data_mut(id)[i] = w0 - eps;
        let minus = eval(&g, images, labels, lambdas);
        g.params.data_mut(id)[i] = w0;
        let ((lp, sp), (lm, sm)) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m),
            // A negative delay probe leaves the valid domain: a boundary too.
            (Err(Error::Contract(_)), _) | (_, Err(Error::Contract(_))) => {
                skipped += 1;
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        if sp != base_sig || sm != base_sig {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[id][i];
        if a.abs() < GRAD_FLOOR && numeric.abs() < GRAD_FLOOR {
            zeros += 1;
        }
        let e = rel_err(a, numeric);
        if worst.as_ref().is_none_or(|w| e > w.rel_err) {
            worst = Some(GradcheckEntry {
                param: graph.params.get(id).name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err: e,
            });
        }
        errs.push(e);
    }
    if errs.is_empty() {
        return Err(Error::Domain(
            "every sampled parameter sits on a non-differentiable boundary".into(),
        ));
    }
    let n = errs.len();
    Ok(GradcheckReport {
        eps,
        checked: n,
        skipped_boundary: skipped,
        max_rel_err: errs.iter().copied().fold(0.0, f64::max),
        mean_rel_err: errs.iter().sum::<f64>() / n as f64,
        zero_grad_fraction: zeros as f64 / n as f64,
        worst,
    })
}
