//! Classification, weight-sum and branch-overlap losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::T_MAX;

/// Individual loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub weight_penalty: f64,
    pub overlap: f64,
    pub total: f64,
    pub lambda_weight: f64,
    pub lambda_overlap: f64,
}

/// Output times as seen by the loss: silent outputs sit at the horizon.
fn effective(o: f64) -> f64 {
    if o.is_finite() {
        o
    } else {
        T_MAX
    }
}

fn check_label(o: &[f64], y: usize) -> Result<()> {
    if y >= o.len() {
        return Err(Error::Domain(format!(
            "label {y} out of range for {} classes",
            o.len()
        )));
    }
    Ok(())
}

fn softmax_neg(o: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = o.iter().map(|&t| -effective(t)).collect();
    let m = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = neg.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy over the softmax of negated output spike times: the correct
/// class should fire first.
pub fn loss_ce(o: &[f64], y: usize) -> Result<f64> {
    check_label(o, y)?;
    let neg: Vec<f64> = o.iter().map(|&t| -effective(t)).collect();
    let m = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + neg.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - neg[y])
}

/// `dL/dO_c = [c == y] - p_c`; silent outputs are constants and get zero.
pub fn loss_ce_grad(o: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(o, y)?;
    let p = softmax_neg(o);
    Ok(o.iter()
        .enumerate()
        .map(|(c, t)| {
            if !t.is_finite() {
                0.0
            } else {
                (c == y) as u8 as f64 - p[c]
            }
        })
        .collect())
}

/// Index of the earliest output spike (lowest index on ties).
pub fn predict(o: &[f64]) -> usize {
    o.iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bt), (i, &t)| if t < bt { (i, t) } else { (bi, bt) },
        )
        .0
}

/// Penalizes neurons whose input weights sum to less than 1. `rows` yields
/// one weight vector per neuron.
pub fn loss_weight<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    rows.into_iter()
        .map(|r| (1.0 - r.iter().sum::<f64>()).max(0.0))
        .sum()
}

/// Mean over the spikes that actually fired; `None` when there are none.
pub fn finite_mean(t: &[f64]) -> Option<f64> {
    let (s, n) = t
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Result of [`loss_overlap`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overlap {
    pub value: f64,
    /// Pairs where either branch had no spikes and therefore contributed 0.
    pub empty_pairs: Vec<usize>,
}

/// Sum over blocks of the squared gap between the mean conv-branch spike
/// time and the mean delayed-skip spike time.
pub fn loss_overlap(pairs: &[(&[f64], &[f64])]) -> Overlap {
    let mut out = Overlap::default();
    for (i, (conv, skip)) in pairs.iter().enumerate() {
        match (finite_mean(conv), finite_mean(skip)) {
            (Some(a), Some(b)) => out.value += (a - b).powi(2),
            _ => out.empty_pairs.push(i),
        }
    }
    out
}

/// Gradient of one overlap term with respect to each branch's spike times,
/// scaled by `scale`. Adds into `g_conv` / `g_skip`.
pub fn loss_overlap_grad(
    conv: &[f64],
    skip: &[f64],
    scale: f64,
    g_conv: &mut [f64],
    g_skip: &mut [f64],
) {
    let (Some(a), Some(b)) = (finite_mean(conv), finite_mean(skip)) else {
        return;
    };
    let na = conv.iter().filter(|v| v.is_finite()).count() as f64;
    let nb = skip.iter().filter(|v| v.is_finite()).count() as f64;
    let d = 2.0 * (a - b) * scale;
    for (g, t) in g_conv.iter_mut().zip(conv) {
        if t.is_finite() {
            *g += d / na;
        }
    }
    for (g, t) in g_skip.iter_mut().zip(skip) {
        if t.is_finite() {
            *g -= d / nb;
        }
    }
}

pub fn total_loss(
    ce: f64,
    weight_penalty: f64,
    overlap: f64,
    lambda_weight: f64,
    lambda_overlap: f64,
) -> LossBreakdown {
    LossBreakdown {
        ce,
        weight_penalty,
        overlap,
        total: ce + lambda_weight * weight_penalty + lambda_overlap * overlap,
        lambda_weight,
        lambda_overlap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ce_examples() {
        let l = loss_ce(&[0.5, 1.0], 0).unwrap();
        assert_relative_eq!(l, -(1.0 / (1.0 + (-0.5f64).exp())).ln(), epsilon = 1e-12);
        assert_relative_eq!(l, 0.474077, epsilon = 1e-6);
        assert_relative_eq!(loss_ce(&[2.0; 7], 3).unwrap(), 7f64.ln(), epsilon = 1e-12);
        assert!(loss_ce(&[0.0, 50.0], 0).unwrap() < 1e-20);
        assert!(loss_ce(&[0.0], 1).is_err());
    }

    #[test]
    fn ce_treats_silence_as_horizon() {
        let a = loss_ce(&[1.0, f64::INFINITY], 0).unwrap();
        let b = loss_ce(&[1.0, T_MAX], 0).unwrap();
        assert_eq!(a, b);
        let g = loss_ce_grad(&[1.0, f64::INFINITY], 0).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let o = [0.3, 1.1, 0.7];
        let g = loss_ce_grad(&o, 2).unwrap();
        for c in 0..3 {
            let mut p = o;
            let mut m = o;
            p[c] += 1e-6;
            m[c] -= 1e-6;
            let fd = (loss_ce(&p, 2).unwrap() - loss_ce(&m, 2).unwrap()) / 2e-6;
            assert_relative_eq!(g[c], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn weight_penalty_examples() {
        assert_relative_eq!(loss_weight([&[0.1, 0.3][..]]), 0.6, epsilon = 1e-12);
        assert_eq!(loss_weight([&[0.5, 0.6][..], &[1.0][..]]), 0.0);
        assert_relative_eq!(loss_weight([&[0.5][..], &[0.7, 0.5][..]]), 0.5);
    }

    #[test]
    fn overlap_examples() {
        let a = [1.0, 1.0];
        assert_eq!(loss_overlap(&[(&a, &a)]).value, 0.0);
        let b = [1.5, f64::INFINITY];
        assert_relative_eq!(loss_overlap(&[(&a, &b)]).value, 0.25);
        let c = [1.2];
        let two = loss_overlap(&[(&a, &b), (&a, &c)]);
        assert_relative_eq!(two.value, 0.29, epsilon = 1e-12);
        let silent = [f64::INFINITY];
        let o = loss_overlap(&[(&a, &silent)]);
        assert_eq!((o.value, o.empty_pairs), (0.0, vec![0]));
    }

    #[test]
    fn overlap_grad_matches_finite_differences() {
        let conv = vec![1.0, 2.0, f64::INFINITY];
        let skip = vec![0.2, 0.4];
        let mut gc = vec![0.0; 3];
        let mut gs = vec![0.0; 2];
        loss_overlap_grad(&conv, &skip, 1.0, &mut gc, &mut gs);
        let f = |c: &[f64], s: &[f64]| loss_overlap(&[(c, s)]).value;
        let mut p = conv.clone();
        p[0] += 1e-6;
        let mut m = conv.clone();
        m[0] -= 1e-6;
        assert_relative_eq!(gc[0], (f(&p, &skip) - f(&m, &skip)) / 2e-6, epsilon = 1e-7);
        let mut p = skip.clone();
        p[1] += 1e-6;
        let mut m = skip.clone();
        m[1] -= 1e-6;
        assert_relative_eq!(gs[1], (f(&conv, &p) - f(&conv, &m)) / 2e-6, epsilon = 1e-7);
        assert_eq!(gc[2], 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let b = total_loss(0.5, 0.6, 0.25, 1.0, 1e-6);
        assert_relative_eq!(b.total, 1.10000025, epsilon = 1e-15);
        assert_eq!(total_loss(0.5, 0.6, 0.25, 1.0, 0.0).total, 1.1);
    }

    #[test]
    fn prediction_is_earliest_spike() {
        assert_eq!(predict(&[2.0, 0.5, f64::INFINITY]), 1);
        assert_eq!(predict(&[f64::INFINITY, f64::INFINITY]), 0);
    }
}
