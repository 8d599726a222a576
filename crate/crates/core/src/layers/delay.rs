//! Learnable delay block and addition-based merging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::clamp_horizon;
use crate::tensor::{Shape3, TimeTensor};

/// How many independent delays a block learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One delay shared by the whole layer.
    Layer,
    /// One delay per channel.
    Channel,
    /// One delay per spatial position, shared across channels.
    Pixel,
}

impl Granularity {
    pub fn param_len(self, shape: Shape3) -> usize {
        match self {
            Granularity::Layer => 1,
            Granularity::Channel => shape.c,
            Granularity::Pixel => shape.plane(),
        }
    }

    /// Index of the delay that applies to flat element `i` of `shape`.
    #[inline]
    pub fn param_index(self, shape: Shape3, i: usize) -> usize {
        match self {
            Granularity::Layer => 0,
            Granularity::Channel => i / shape.plane(),
            Granularity::Pixel => i % shape.plane(),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(Granularity::Layer),
            "channel" => Ok(Granularity::Channel),
            "pixel" => Ok(Granularity::Pixel),
            other => Err(Error::config(format!(
                "unknown delay granularity {other:?}"
            ))),
        }
    }
}

/// Delay values `theta` together with their granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayParams {
    pub granularity: Granularity,
    pub theta: Vec<f64>,
}

/// `t' = t + theta` for one sample. Silent inputs stay silent and shifted
/// spikes past the horizon become silent.
pub fn delay_forward(
    shape: Shape3,
    granularity: Granularity,
    theta: &[f64],
    t_in: &[f64],
) -> Result<Vec<f64>> {
    if theta.len() != granularity.param_len(shape) {
        return Err(Error::Contract(format!(
            "{granularity:?} delay for {shape} needs {} values, got {}",
            granularity.param_len(shape),
            theta.len()
        )));
    }
    if let Some(bad) = theta.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("negative delay {bad}")));
    }
    Ok(t_in
        .iter()
        .enumerate()
        .map(|(i, &t)| clamp_horizon(t + theta[granularity.param_index(shape, i)]))
        .collect())
}

/// Backward of [`delay_forward`]: each delayed spike passes its gradient to
/// the input and to the delay that moved it.
pub fn delay_backward(
    shape: Shape3,
    granularity: Granularity,
    t_out: &[f64],
    g_out: &[f64],
    g_in: &mut [f64],
    g_theta: &mut [f64],
) {
    for (i, (&t, &g)) in t_out.iter().zip(g_out).enumerate() {
        if t.is_finite() && g != 0.0 {
            g_in[i] += g;
            g_theta[granularity.param_index(shape, i)] += g;
        }
    }
}

pub fn delay_apply(x: &TimeTensor, params: &DelayParams) -> Result<TimeTensor> {
    let shape = x.sample_shape()?;
    let mut data = Vec::with_capacity(x.data().len());
    for s in x.samples() {
        data.extend(delay_forward(shape, params.granularity, &params.theta, s)?);
    }
    Ok(TimeTensor::from_raw(x.shape().to_vec(), data))
}

/// Merging two branches by adding spike times; a silent operand silences the
/// output.
#[inline]
pub fn add_times(a: f64, b: f64) -> f64 {
    clamp_horizon(a + b)
}

pub fn add_skip(conv_out: &TimeTensor, skip: &TimeTensor) -> Result<TimeTensor> {
    if conv_out.shape() != skip.shape() {
        return Err(Error::config(format!(
            "add_skip operands differ: {:?} vs {:?}",
            conv_out.shape(),
            skip.shape()
        )));
    }
    let data = conv_out
        .data()
        .iter()
        .zip(skip.data())
        .map(|(&a, &b)| add_times(a, b))
        .collect();
    Ok(TimeTensor::from_raw(conv_out.shape().to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_delay_is_identity() {
        let x = TimeTensor::new(vec![1, 2, 1, 2], vec![0.0, 1.0, f64::INFINITY, 2.5]).unwrap();
        for g in [Granularity::Layer, Granularity::Channel, Granularity::Pixel] {
            let theta = vec![0.0; g.param_len(Shape3::new(2, 1, 2))];
            let y = delay_apply(
                &x,
                &DelayParams {
                    granularity: g,
                    theta,
                },
            )
            .unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn channel_delays_shift_each_channel() {
        let x = TimeTensor::new(vec![1, 2, 1, 2], vec![0.0, 1.0, 2.0, f64::INFINITY]).unwrap();
        let p = DelayParams {
            granularity: Granularity::Channel,
            theta: vec![0.3, 0.5],
        };
        let y = delay_apply(&x, &p).unwrap();
        assert_relative_eq!(y.data()[0], 0.3);
        assert_relative_eq!(y.data()[1], 1.3);
        assert_relative_eq!(y.data()[2], 2.5);
        assert!(y.data()[3].is_infinite());
    }

    #[test]
    fn delay_rejects_bad_params() {
        let x = TimeTensor::filled(vec![1, 2, 1, 1], 0.0).unwrap();
        let neg = DelayParams {
            granularity: Granularity::Layer,
            theta: vec![-0.1],
        };
        assert!(matches!(delay_apply(&x, &neg), Err(Error::Contract(_))));
        let short = DelayParams {
            granularity: Granularity::Channel,
            theta: vec![0.1],
        };
        assert!(delay_apply(&x, &short).is_err());
    }

    #[test]
    fn add_skip_sums_times() {
        let a = TimeTensor::new(vec![1, 3], vec![1.2, 0.4, f64::INFINITY]).unwrap();
        let b = TimeTensor::new(vec![1, 3], vec![0.8, 0.0, 0.1]).unwrap();
        let y = add_skip(&a, &b).unwrap();
        assert_relative_eq!(y.data()[0], 2.0);
        assert_eq!(y.data()[1], 0.4);
        assert!(y.data()[2].is_infinite());
        let zeros = TimeTensor::filled(vec![1, 3], 0.0).unwrap();
        assert_eq!(add_skip(&a, &zeros).unwrap(), a);
        let wrong = TimeTensor::filled(vec![1, 2], 0.0).unwrap();
        assert!(add_skip(&a, &wrong).is_err());
    }
}
