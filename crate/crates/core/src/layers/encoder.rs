//! Real-valued input encoder: `t = ReLU(BN(Conv(x)))`.
//!
//! This is the only non-spiking layer. It is evaluated on a whole batch at
//! once because batch normalization couples the samples in training mode.

use crate::error::{Error, Result};
use crate::par::{map_indexed, Exec};
use crate::tensor::{Shape3, TimeTensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderGeom {
    pub input: Shape3,
    pub channels: usize,
    pub kernel: usize,
}

impl EncoderGeom {
    /// Same-size convolution (stride 1, padding `kernel / 2`).
    pub fn output(&self) -> Shape3 {
        Shape3::new(self.channels, self.input.h, self.input.w)
    }

    pub fn fan_in(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }
}

/// Borrowed view of the encoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderParams<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
}

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    training: bool,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl EncoderTape {
    pub fn active_signature(
        &self,
        h: &mut impl std::hash::Hasher,
        gamma: &[f64],
        beta: &[f64],
        plane: usize,
    ) {
        for (i, &x) in self.x_hat.iter().enumerate() {
            let c = (i / plane) % gamma.len();
            h.write_u8((gamma[c] * x + beta[c] > 0.0) as u8);
        }
    }
}

fn conv_sample(geom: &EncoderGeom, weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let Shape3 { c: cin, h, w } = geom.input;
    let k = geom.kernel;
    let pad = k / 2;
    let plane = h * w;
    let mut y = vec![0.0; geom.channels * plane];
    for co in 0..geom.channels {
        let out = &mut y[co * plane..(co + 1) * plane];
        out.fill(bias[co]);
        for ci in 0..cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut out[oy * w..(oy + 1) * w];
                        let dx = kx as isize - pad as isize;
                        let lo = (-dx).max(0) as usize;
                        let hi = (w as isize - dx).min(w as isize) as usize;
                        for ox in lo..hi {
                            orow[ox] += wv * row[(ox as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Encodes a batch of images (`batch * input.len()` values) into spike times.
pub fn encoder_forward(
    geom: &EncoderGeom,
    params: &EncoderParams<'_>,
    images: &[f64],
    batch: usize,
    training: bool,
    exec: Exec,
) -> Result<(Vec<Vec<f64>>, EncoderTape)> {
    let n_in = geom.input.len();
    if images.len() != batch * n_in || batch == 0 {
        return Err(Error::Contract(format!(
            "encoder expects {batch} images of {}, got {} values",
            geom.input,
            images.len()
        )));
    }
    if params.weight.len() != geom.channels * geom.fan_in() {
        return Err(Error::Contract("encoder kernel has the wrong size".into()));
    }
    let c = geom.channels;
    let plane = geom.input.plane();
    let pre: Vec<Vec<f64>> = map_indexed(exec, batch, |b| {
        conv_sample(
            geom,
            params.weight,
            params.bias,
            &images[b * n_in..(b + 1) * n_in],
        )
    });

    let (mean, var) = if training {
        let count = (batch * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let s: f64 = pre
                .iter()
                .map(|y| y[ch * plane..(ch + 1) * plane].iter().sum::<f64>())
                .sum();
            mean[ch] = s / count;
            let v: f64 = pre
                .iter()
                .map(|y| {
                    y[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            var[ch] = v / count;
        }
        (mean, var)
    } else {
        (params.running_mean.to_vec(), params.running_var.to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut x_hat = Vec::with_capacity(batch * c * plane);
    let mut out = Vec::with_capacity(batch);
    for y in &pre {
        let mut t = Vec::with_capacity(c * plane);
        for (i, &v) in y.iter().enumerate() {
            let ch = i / plane;
            let xh = (v - mean[ch]) * inv_std[ch];
            x_hat.push(xh);
            let a = params.gamma[ch] * xh + params.beta[ch];
            t.push(if a > 0.0 { a } else { 0.0 });
        }
        if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: 0,
                msg: format!("encoder produced {} at element {pos}", t[pos]),
            });
        }
        out.push(t);
    }
    Ok((
        out,
        EncoderTape {
            x_hat,
            inv_std,
            training,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Gradients of the encoder parameters.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Backward pass. `g_out[b]` is `dL/dt` for sample `b`.
pub fn encoder_backward(
    geom: &EncoderGeom,
    params: &EncoderParams<'_>,
    tape: &EncoderTape,
    images: &[f64],
    g_out: &[Vec<f64>],
    exec: Exec,
) -> EncoderGrads {
    let c = geom.channels;
    let plane = geom.input.plane();
    let per = c * plane;
    let batch = g_out.len();
    let count = (batch * plane) as f64;

    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    // dL/d(pre-activation after BN), masked by ReLU.
    let mut dy_hat = vec![0.0; batch * per];
    for (b, g) in g_out.iter().enumerate() {
        for i in 0..per {
            let ch = i / plane;
            let xh = tape.x_hat[b * per + i];
            if params.gamma[ch] * xh + params.beta[ch] > 0.0 {
                let d = g[i];
                dy_hat[b * per + i] = d;
                g_gamma[ch] += d * xh;
                g_beta[ch] += d;
            }
        }
    }
    // Through the normalization into the conv output.
    let mut dpre = vec![0.0; batch * per];
    for ch in 0..c {
        let gamma = params.gamma[ch];
        let inv = tape.inv_std[ch];
        if tape.training {
            let (mut s1, mut s2) = (0.0, 0.0);
            for b in 0..batch {
                for p in 0..plane {
                    let i = b * per + ch * plane + p;
                    let dxh = dy_hat[i] * gamma;
                    s1 += dxh;
                    s2 += dxh * tape.x_hat[i];
                }
            }
            for b in 0..batch {
                for p in 0..plane {
                    let i = b * per + ch * plane + p;
                    let dxh = dy_hat[i] * gamma;
                    dpre[i] = inv * (dxh - s1 / count - tape.x_hat[i] * s2 / count);
                }
            }
        } else {
            for b in 0..batch {
                for p in 0..plane {
                    let i = b * per + ch * plane + p;
                    dpre[i] = dy_hat[i] * gamma * inv;
                }
            }
        }
    }

    let Shape3 { c: cin, h, w } = geom.input;
    let k = geom.kernel;
    let pad = k / 2;
    let n_in = geom.input.len();
    let partial: Vec<(Vec<f64>, Vec<f64>)> = map_indexed(exec, batch, |b| {
        let x = &images[b * n_in..(b + 1) * n_in];
        let d = &dpre[b * per..(b + 1) * per];
        let mut gw = vec![0.0; c * cin * k * k];
        let mut gb = vec![0.0; c];
        for co in 0..c {
            let dch = &d[co * plane..(co + 1) * plane];
            gb[co] = dch.iter().sum();
            for ci in 0..cin {
                let src = &x[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let lo = (-dx).max(0) as usize;
                        let hi = (w as isize - dx).min(w as isize) as usize;
                        let mut acc = 0.0;
                        for oy in 0..h {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let drow = &dch[oy * w..(oy + 1) * w];
                            for ox in lo..hi {
                                acc += drow[ox] * row[(ox as isize + dx) as usize];
                            }
                        }
                        gw[((co * cin + ci) * k + ky) * k + kx] = acc;
                    }
                }
            }
        }
        (gw, gb)
    });
    let mut weight = vec![0.0; c * cin * k * k];
    let mut bias = vec![0.0; c];
    for (gw, gb) in partial {
        weight.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
        bias.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
    }
    EncoderGrads {
        weight,
        bias,
        gamma: g_gamma,
        beta: g_beta,
    }
}

/// Exponential moving update of the running statistics (unbiased variance).
pub fn update_running_stats(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    tape: &EncoderTape,
    samples_per_channel: usize,
) {
    let n = samples_per_channel as f64;
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    for c in 0..running_mean.len() {
        running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * tape.batch_mean[c];
        running_var[c] =
            (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * tape.batch_var[c] * unbias;
    }
}

/// Convenience wrapper returning a `[B, C, H, W]` spike-time tensor.
pub fn encode_input(
    geom: &EncoderGeom,
    params: &EncoderParams<'_>,
    images: &[f64],
    batch: usize,
    training: bool,
) -> Result<TimeTensor> {
    let (out, _) = encoder_forward(geom, params, images, batch, training, Exec::Sequential)?;
    TimeTensor::from_samples(geom.output(), &out)
}
