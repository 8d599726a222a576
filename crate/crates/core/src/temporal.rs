//! Closed-form spike times for a non-leaky integrate-and-fire neuron.
//!
//! A neuron receiving input spikes at times `t_k` with weights `w_k` and an
//! exponentially decaying synaptic current fires when its membrane potential
//! first reaches 1. Substituting `z = exp(t)` turns the threshold equation
//! into a rational expression over the *causal set* (the inputs that arrive
//! before the output spike):
//!
//! ```text
//! z_out = sum_{k in C} w_k z_k / (sum_{k in C} w_k - 1)
//! ```
//!
//! Everything downstream (layers, engine, training) is built on
//! [`solve_spike_time`] and [`spike_time_grad`].

use crate::error::{Error, Result};

/// Horizon of the simulation in time units. Spikes at or after this time are
/// treated as "no spike".
pub const T_MAX: f64 = 10.0;

/// `exp(T_MAX)`: the z-space sentinel for a neuron that never fires.
pub const Z_MAX: f64 = 22_026.465_794_806_718;

/// Candidate causal sets whose weight sum does not exceed `1 + DENOM_EPS`
/// are rejected.
pub const DENOM_EPS: f64 = 1e-6;

/// Maps a spike time to z-space, clamping at [`Z_MAX`].
pub fn z_of_time(t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("spike time must be >= 0, got {t}")));
    }
    Ok(z_of_time_unchecked(t))
}

/// Inverse of [`z_of_time`]; `z >= Z_MAX` maps to `+inf`.
pub fn time_of_z(z: f64) -> Result<f64> {
    if z.is_nan() || z < 1.0 {
        return Err(Error::Domain(format!("z must be >= 1, got {z}")));
    }
    Ok(time_of_z_unchecked(z))
}

/// Hot-path variant used by layers, which only ever hold valid times.
#[inline]
pub(crate) fn z_of_time_unchecked(t: f64) -> f64 {
    if t >= T_MAX {
        Z_MAX
    } else {
        t.exp()
    }
}

#[inline]
pub(crate) fn time_of_z_unchecked(z: f64) -> f64 {
    if z >= Z_MAX {
        f64::INFINITY
    } else {
        z.ln()
    }
}

/// Clamps a time to the horizon: anything at or past [`T_MAX`] becomes `+inf`.
#[inline]
pub(crate) fn clamp_horizon(t: f64) -> f64 {
    if t >= T_MAX {
        f64::INFINITY
    } else {
        t
    }
}

/// One presynaptic spike as seen by the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseInput {
    pub z: f64,
    pub w: f64,
}

impl SynapseInput {
    pub fn new(z: f64, w: f64) -> Self {
        Self { z, w }
    }

    /// Builds an input from a spike time instead of a z-value.
    pub fn at_time(t: f64, w: f64) -> Result<Self> {
        Ok(Self {
            z: z_of_time(t)?,
            w,
        })
    }
}

/// Result of [`solve_spike_time`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSolve {
    /// Output spike in z-space, [`Z_MAX`] when the neuron stays silent.
    pub z_out: f64,
    /// Causal-set membership, aligned with the solver inputs.
    pub causal_mask: Vec<bool>,
    /// `sum_{k in C} w_k - 1`; zero for silent neurons.
    pub denom: f64,
}

impl SpikeSolve {
    pub fn fired(&self) -> bool {
        self.z_out < Z_MAX
    }

    pub fn t_out(&self) -> f64 {
        time_of_z_unchecked(self.z_out)
    }
}

/// Outcome of scanning a sorted input list: the causal prefix length, the
/// output z and the denominator. `None` means the neuron does not fire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PrefixSolve {
    pub len: usize,
    pub z_out: f64,
    pub denom: f64,
}

/// Scans inputs already sorted by ascending z. `z_at(i)` and `w_at(i)` give
/// the i-th sorted input; all z are finite and below [`Z_MAX`].
#[inline]
pub(crate) fn scan_sorted(
    n: usize,
    z_at: impl Fn(usize) -> f64,
    w_at: impl Fn(usize) -> f64,
) -> Option<PrefixSolve> {
    let mut sum_w = 0.0;
    let mut sum_wz = 0.0;
    for i in 0..n {
        let z = z_at(i);
        let w = w_at(i);
        sum_w += w;
        sum_wz += w * z;
        let denom = sum_w - 1.0;
        if denom > DENOM_EPS {
            let cand = sum_wz / denom;
            if cand >= z && (i + 1 == n || cand < z_at(i + 1)) {
                if cand >= Z_MAX {
                    return None;
                }
                return Some(PrefixSolve {
                    len: i + 1,
                    z_out: cand,
                    denom,
                });
            }
        }
    }
    None
}

/// Solves for the first output spike of a single neuron.
///
/// Inputs are sorted by z (stable, so ties keep input order). Inputs at or
/// beyond [`Z_MAX`] never join the causal set. A silent neuron is a valid
/// result, not an error.
pub fn solve_spike_time(inputs: &[SynapseInput]) -> SpikeSolve {
    let mut order: Vec<usize> = (0..inputs.len()).filter(|&i| inputs[i].z < Z_MAX).collect();
    order.sort_by(|&a, &b| inputs[a].z.total_cmp(&inputs[b].z));

    let mut causal_mask = vec![false; inputs.len()];
    match scan_sorted(order.len(), |i| inputs[order[i]].z, |i| inputs[order[i]].w) {
        Some(p) => {
            for &idx in &order[..p.len] {
                causal_mask[idx] = true;
            }
            SpikeSolve {
                z_out: p.z_out,
                causal_mask,
                denom: p.denom,
            }
        }
        None => SpikeSolve {
            z_out: Z_MAX,
            causal_mask,
            denom: 0.0,
        },
    }
}

/// Gradients of `z_out` with respect to every input, scaled by `upstream`.
///
/// Returns `(dz, dw)`. Inside the causal set `dz_out/dz_j = w_j / denom` and
/// `dz_out/dw_j = (z_j - z_out) / denom`; everything else is zero.
pub fn spike_time_grad(
    solve: &SpikeSolve,
    inputs: &[SynapseInput],
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if solve.causal_mask.len() != inputs.len() {
        return Err(Error::Contract(format!(
            "solve covers {} inputs but {} were given",
            solve.causal_mask.len(),
            inputs.len()
        )));
    }
    let mut dz = vec![0.0; inputs.len()];
    let mut dw = vec![0.0; inputs.len()];
    if !solve.fired() {
        return Ok((dz, dw));
    }
    let scale = upstream / solve.denom;
    for (j, inp) in inputs.iter().enumerate() {
        if solve.causal_mask[j] {
            dz[j] = inp.w * scale;
            dw[j] = (inp.z - solve.z_out) * scale;
        }
    }
    Ok((dz, dw))
}

/// Reference spike time obtained by evaluating the membrane potential
/// `V(t) = sum_k U(t - t_k) w_k (1 - exp(-(t - t_k)))` on a uniform grid.
///
/// Inputs are given in the time domain as `(t_k, w_k)`. Returns the first
/// grid time with `V >= 1`, or `+inf` if none is found before `horizon`.
/// This is a slow test oracle; it shares no code with the solver.
pub fn membrane_oracle(inputs: &[(f64, f64)], dt: f64, horizon: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("oracle step must be > 0, got {dt}")));
    }
    let steps = (horizon / dt).ceil() as usize;
    for s in 0..=steps {
        let t = s as f64 * dt;
        let v: f64 = inputs
            .iter()
            .filter(|(tk, _)| t >= *tk)
            .map(|(tk, w)| w * (1.0 - (-(t - tk)).exp()))
            .sum();
        if v >= 1.0 {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solve(pairs: &[(f64, f64)]) -> SpikeSolve {
        let inputs: Vec<_> = pairs
            .iter()
            .map(|&(z, w)| SynapseInput::new(z, w))
            .collect();
        solve_spike_time(&inputs)
    }

    #[test]
    fn z_time_conversions() {
        assert_eq!(z_of_time(0.0).unwrap(), 1.0);
        assert_relative_eq!(z_of_time(2f64.ln()).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(z_of_time(f64::INFINITY).unwrap(), Z_MAX);
        assert!(z_of_time(-0.1).is_err());

        assert_eq!(time_of_z(1.0).unwrap(), 0.0);
        assert_relative_eq!(
            time_of_z(2.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(time_of_z(Z_MAX).unwrap(), f64::INFINITY);
        assert!(time_of_z(0.5).is_err());
        assert_relative_eq!(Z_MAX, T_MAX.exp(), max_relative = 1e-15);
    }

    #[test]
    fn single_strong_input() {
        let s = solve(&[(1.0, 2.0)]);
        assert_relative_eq!(s.z_out, 2.0);
        assert_eq!(s.causal_mask, vec![true]);
        assert_relative_eq!(s.denom, 1.0);
        // V(t) = 2(1 - e^-t) reaches 1 at ln 2.
        assert_relative_eq!(s.t_out(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn unit_weight_never_fires() {
        let s = solve(&[(1.0, 1.0)]);
        assert!(!s.fired());
        assert_eq!(s.z_out, Z_MAX);
        assert_eq!(s.causal_mask, vec![false]);
        assert_eq!(s.denom, 0.0);
    }

    #[test]
    fn late_inhibition_is_not_causal() {
        let s = solve(&[(1.0, 3.0), (2.0, -5.0)]);
        assert_relative_eq!(s.z_out, 1.5);
        assert_eq!(s.causal_mask, vec![true, false]);
    }

    #[test]
    fn two_input_causal_set() {
        let s = solve(&[(1.0, 0.6), (1.5, 0.9)]);
        assert_relative_eq!(s.z_out, 3.9, epsilon = 1e-12);
        assert_eq!(s.causal_mask, vec![true, true]);
        assert_relative_eq!(s.denom, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_and_sentinel_inputs() {
        assert!(!solve(&[]).fired());
        let s = solve(&[(Z_MAX, 5.0)]);
        assert!(!s.fired());
        // A sentinel input is ignored even when listed first.
        let s = solve(&[(Z_MAX, 5.0), (1.0, 2.0)]);
        assert_relative_eq!(s.z_out, 2.0);
        assert_eq!(s.causal_mask, vec![false, true]);
    }

    #[test]
    fn boundary_tie_goes_to_non_causal_side() {
        // Candidate from the first input is exactly 2.0, the second input's z.
        let s = solve(&[(1.0, 2.0), (2.0, 1.0)]);
        assert_eq!(s.causal_mask, vec![true, true]);
        // With {0,1}: (2 + 2) / (3 - 1) = 2.0 = z_1, so the first prefix was
        // rejected (2.0 < 2.0 fails) and the full set accepted.
        assert_relative_eq!(s.z_out, 2.0);
    }

    #[test]
    fn gradients_match_hand_values() {
        let inputs = vec![SynapseInput::new(1.0, 0.6), SynapseInput::new(1.5, 0.9)];
        let s = solve_spike_time(&inputs);
        let (dz, dw) = spike_time_grad(&s, &inputs, 1.0).unwrap();
        assert_relative_eq!(dw[0], -5.8, epsilon = 1e-12);
        assert_relative_eq!(dz[0], 1.2, epsilon = 1e-12);

        // Central differences, eps = 1e-5.
        let eps = 1e-5;
        let f = |inp: &[SynapseInput]| solve_spike_time(inp).z_out;
        for j in 0..2 {
            let mut p = inputs.clone();
            let mut m = inputs.clone();
            p[j].w += eps;
            m[j].w -= eps;
            let fd_w = (f(&p) - f(&m)) / (2.0 * eps);
            assert_relative_eq!(fd_w, dw[j], max_relative = 1e-6);
            let mut p = inputs.clone();
            let mut m = inputs.clone();
            p[j].z += eps;
            m[j].z -= eps;
            let fd_z = (f(&p) - f(&m)) / (2.0 * eps);
            assert_relative_eq!(fd_z, dz[j], max_relative = 1e-6);
        }
    }

    #[test]
    fn silent_and_non_causal_gradients_are_zero() {
        let inputs = vec![SynapseInput::new(1.0, 1.0)];
        let s = solve_spike_time(&inputs);
        let (dz, dw) = spike_time_grad(&s, &inputs, 3.0).unwrap();
        assert_eq!((dz[0], dw[0]), (0.0, 0.0));

        let inputs = vec![SynapseInput::new(1.0, 3.0), SynapseInput::new(2.0, -5.0)];
        let s = solve_spike_time(&inputs);
        let (dz, dw) = spike_time_grad(&s, &inputs, 1.0).unwrap();
        assert_eq!((dz[1], dw[1]), (0.0, 0.0));
        assert!(spike_time_grad(&s, &inputs[..1], 1.0).is_err());
    }

    #[test]
    fn oracle_examples() {
        let dt = 1e-4;
        let t = membrane_oracle(&[(0.0, 2.0)], dt, 20.0).unwrap();
        assert!((t - 2f64.ln()).abs() <= dt);
        assert_eq!(
            membrane_oracle(&[(0.0, 1.0)], dt, 20.0).unwrap(),
            f64::INFINITY
        );
        let t = membrane_oracle(&[(0.0, 3.0), (std::f64::consts::LN_2, -5.0)], dt, 20.0).unwrap();
        assert!((t - 1.5f64.ln()).abs() <= dt, "{t}");
        assert!(membrane_oracle(&[], 0.0, 1.0).is_err());
    }
}
