//! Channel split, concatenation, shuffle and zero-time padding.
//!
//! All of these only move spike times around, so each is expressed as an
//! index map `out[i] = in[map[i]]` that the engine can reuse for backward.

use crate::error::{Error, Result};
use crate::tensor::{Shape3, TimeTensor};

/// Marks an output position that is not fed by any input.
pub const NO_SOURCE: u32 = u32::MAX;

/// Index map selecting channels `start..start + len`.
pub fn slice_map(input: Shape3, start: usize, len: usize) -> Result<Vec<u32>> {
    if start + len > input.c {
        return Err(Error::config(format!(
            "channel slice {start}..{} out of range for {input}",
            start + len
        )));
    }
    let plane = input.plane();
    Ok((start * plane..(start + len) * plane)
        .map(|i| i as u32)
        .collect())
}

/// Source channel for each output channel of a `groups`-way shuffle:
/// channels viewed as `(groups, C / groups)`, transposed and flattened.
pub fn shuffle_channels(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::config(format!(
            "{channels} channels cannot be shuffled in {groups} groups"
        )));
    }
    let per = channels / groups;
    Ok((0..channels)
        .map(|o| (o % groups) * per + o / groups)
        .collect())
}

pub fn shuffle_map(input: Shape3, groups: usize) -> Result<Vec<u32>> {
    let src = shuffle_channels(input.c, groups)?;
    let plane = input.plane();
    Ok(src
        .iter()
        .flat_map(|&c| (c * plane..(c + 1) * plane).map(|i| i as u32))
        .collect())
}

/// Pads `input` to `channels` channels; new channels have no source and hold
/// a spike at t = 0, the identity of time addition.
pub fn pad_map(input: Shape3, channels: usize) -> Result<Vec<u32>> {
    if channels < input.c {
        return Err(Error::config(format!(
            "cannot pad {input} down to {channels} channels"
        )));
    }
    let n = input.len();
    Ok((0..channels * input.plane())
        .map(|i| if i < n { i as u32 } else { NO_SOURCE })
        .collect())
}

pub fn gather(map: &[u32], t_in: &[f64], fill: f64) -> Vec<f64> {
    map.iter()
        .map(|&i| {
            if i == NO_SOURCE {
                fill
            } else {
                t_in[i as usize]
            }
        })
        .collect()
}

pub fn scatter_add(map: &[u32], g_out: &[f64], g_in: &mut [f64]) {
    for (&i, &g) in map.iter().zip(g_out) {
        if i != NO_SOURCE {
            g_in[i as usize] += g;
        }
    }
}

fn per_sample(x: &TimeTensor, out: Shape3, map: &[u32], fill: f64) -> TimeTensor {
    let mut data = Vec::with_capacity(x.batch() * out.len());
    for s in x.samples() {
        data.extend(gather(map, s, fill));
    }
    TimeTensor::from_raw(vec![x.batch(), out.c, out.h, out.w], data)
}

/// Splits channels in half: the first half feeds the convolution branch, the
/// second half the skip branch.
pub fn channel_split(x: &TimeTensor) -> Result<(TimeTensor, TimeTensor)> {
    let shape = x.sample_shape()?;
    if shape.c % 2 != 0 {
        return Err(Error::config(format!(
            "cannot split {} channels in half",
            shape.c
        )));
    }
    let half = shape.c / 2;
    let out = Shape3::new(half, shape.h, shape.w);
    Ok((
        per_sample(x, out, &slice_map(shape, 0, half)?, 0.0),
        per_sample(x, out, &slice_map(shape, half, half)?, 0.0),
    ))
}

/// Concatenates along channels, `a` first.
pub fn concat_channels(a: &TimeTensor, b: &TimeTensor) -> Result<TimeTensor> {
    let (sa, sb) = (a.sample_shape()?, b.sample_shape()?);
    if a.batch() != b.batch() || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::config(format!("cannot concatenate {sa} with {sb}")));
    }
    let out = Shape3::new(sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(a.batch() * out.len());
    for (x, y) in a.samples().zip(b.samples()) {
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    Ok(TimeTensor::from_raw(
        vec![a.batch(), out.c, out.h, out.w],
        data,
    ))
}

pub fn channel_shuffle(x: &TimeTensor, groups: usize) -> Result<TimeTensor> {
    let shape = x.sample_shape()?;
    Ok(per_sample(x, shape, &shuffle_map(shape, groups)?, 0.0))
}
