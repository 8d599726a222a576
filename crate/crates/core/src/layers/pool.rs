//! Min-time pooling: the earliest spike in each window propagates.

use crate::error::{Error, Result};
use crate::tensor::{Shape3, TimeTensor};

/// Output shape of a pooling window. Windows that run past the border are
/// clipped (ceil mode), so `7x7` pools to `4x4` with window 2 / stride 2.
pub fn pool_output(input: Shape3, window: usize, stride: usize) -> Result<Shape3> {
    if window == 0 || stride == 0 || input.is_empty() {
        return Err(Error::config(format!(
            "pool window {window} stride {stride} does not fit {input}"
        )));
    }
    let span = |n: usize| {
        if n <= window {
            1
        } else {
            (n - window).div_ceil(stride) + 1
        }
    };
    Ok(Shape3::new(input.c, span(input.h), span(input.w)))
}

/// Forward pass for one sample; also returns the winning input index per
/// output (`u32::MAX` when the whole window is silent).
pub fn pool_forward(
    input: Shape3,
    window: usize,
    stride: usize,
    t_in: &[f64],
) -> Result<(Vec<f64>, Vec<u32>)> {
    let out = pool_output(input, window, stride)?;
    let mut t_out = vec![f64::INFINITY; out.len()];
    let mut arg = vec![u32::MAX; out.len()];
    for c in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let o = (c * out.h + oy) * out.w + ox;
                let mut best = f64::INFINITY;
                for iy in oy * stride..(oy * stride + window).min(input.h) {
                    for ix in ox * stride..(ox * stride + window).min(input.w) {
                        let i = (c * input.h + iy) * input.w + ix;
                        if t_in[i] < best {
                            best = t_in[i];
                            arg[o] = i as u32;
                        }
                    }
                }
                t_out[o] = best;
            }
        }
    }
    Ok((t_out, arg))
}

pub fn pool_backward(arg: &[u32], g_out: &[f64], g_in: &mut [f64]) {
    for (&a, &g) in arg.iter().zip(g_out) {
        if a != u32::MAX {
            g_in[a as usize] += g;
        }
    }
}

/// Pools every sample of a `[B, C, H, W]` tensor.
pub fn min_time_pool(x: &TimeTensor, window: usize, stride: usize) -> Result<TimeTensor> {
    let shape = x.sample_shape()?;
    let out = pool_output(shape, window, stride)?;
    let mut data = Vec::with_capacity(x.batch() * out.len());
    for s in x.samples() {
        data.extend(pool_forward(shape, window, stride, s)?.0);
    }
    Ok(TimeTensor::from_raw(
        vec![x.batch(), out.c, out.h, out.w],
        data,
    ))
}
