//! Temporal convolution and dense layers.
//!
//! Every output neuron runs the closed-form solver over its receptive field.
//! All output channels at one spatial location share the same input spikes,
//! so the inputs are sorted once per location and each filter only performs
//! the prefix scan.

use crate::error::{Error, Result};
use crate::temporal::{scan_sorted, z_of_time_unchecked, Z_MAX};
use crate::tensor::{Shape3, TimeTensor};

/// Geometry of a temporal convolution. A dense layer is the special case of a
/// 1x1 kernel over a flattened `F x 1 x 1` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: Shape3,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn dense(in_features: usize, out_features: usize) -> Self {
        Self {
            input: Shape3::flat(in_features),
            out_channels: out_features,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn output(&self) -> Result<Shape3> {
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
                return Err(Error::config(format!(
                    "kernel {} stride {} padding {} does not fit input {}",
                    self.kernel, self.stride, self.padding, self.input
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok(Shape3::new(
            self.out_channels,
            span(self.input.h)?,
            span(self.input.w)?,
        ))
    }

    /// Number of synapses per output neuron.
    pub fn fan_in(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.fan_in()
    }
}

/// Saved forward state needed by [`conv_backward`].
#[derive(Debug, Clone, Default)]
pub struct ConvTape {
    /// Sorted (ascending z) inputs per output location, concatenated.
    z: Vec<f64>,
    input_idx: Vec<u32>,
    col: Vec<u32>,
    loc_offset: Vec<u32>,
    /// Per output neuron `(channel, location)`: causal prefix length (0 = silent).
    prefix: Vec<u32>,
    denom: Vec<f64>,
    z_out: Vec<f64>,
}

impl ConvTape {
    /// Causal prefix length of an output neuron (0 when silent). Neurons are
    /// indexed `channel * locations + location`.
    pub fn causal_len(&self, neuron: usize) -> usize {
        self.prefix[neuron] as usize
    }

    /// Feeds the causal structure into a hasher: two forward passes with equal
    /// signatures select the same causal sets everywhere.
    pub fn signature(&self, h: &mut impl std::hash::Hasher) {
        let locs = self.loc_offset.len() - 1;
        for (n, &p) in self.prefix.iter().enumerate() {
            h.write_u32(p);
            let start = self.loc_offset[n % locs] as usize;
            // Order inside the causal set does not matter, only membership.
            let set = self.col[start..start + p as usize]
                .iter()
                .fold(0u64, |acc, &c| {
                    acc.wrapping_add((c as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                });
            h.write_u64(set);
        }
    }
}

/// Forward pass for one sample. `t_in` has `geom.input.len()` spike times and
/// `weight` is laid out `(out_channel, in_channel, ky, kx)`.
pub fn conv_forward(geom: &ConvGeom, weight: &[f64], t_in: &[f64]) -> Result<(Vec<f64>, ConvTape)> {
    let out = geom.output()?;
    if t_in.len() != geom.input.len() || weight.len() != geom.weight_len() {
        return Err(Error::Contract(format!(
            "conv expects {} inputs and {} weights, got {} and {}",
            geom.input.len(),
            geom.weight_len(),
            t_in.len(),
            weight.len()
        )));
    }
    let Shape3 {
        c: cin,
        h: hin,
        w: win,
    } = geom.input;
    let k = geom.kernel;
    let fan_in = geom.fan_in();
    let locs = out.plane();

    let mut tape = ConvTape {
        z: Vec::with_capacity(locs * fan_in),
        input_idx: Vec::with_capacity(locs * fan_in),
        col: Vec::with_capacity(locs * fan_in),
        loc_offset: Vec::with_capacity(locs + 1),
        prefix: vec![0; out.len()],
        denom: vec![0.0; out.len()],
        z_out: vec![Z_MAX; out.len()],
    };
    let mut t_out = vec![f64::INFINITY; out.len()];
    let mut patch: Vec<(f64, u32, u32)> = Vec::with_capacity(fan_in);
    tape.loc_offset.push(0);

    for oy in 0..out.h {
        for ox in 0..out.w {
            patch.clear();
            for ci in 0..cin {
                for ky in 0..k {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy as usize >= hin {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if ix < 0 || ix as usize >= win {
                            continue;
                        }
                        let idx = (ci * hin + iy as usize) * win + ix as usize;
                        let z = z_of_time_unchecked(t_in[idx]);
                        if z < Z_MAX {
                            let col = (ci * k + ky) * k + kx;
                            patch.push((z, idx as u32, col as u32));
                        }
                    }
                }
            }
            // Columns are unique within a patch, so this order is total and
            // ties in z fall back to receptive-field order.
            patch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            let start = tape.z.len();
            for &(z, idx, col) in &patch {
                tape.z.push(z);
                tape.input_idx.push(idx);
                tape.col.push(col);
            }
            tape.loc_offset.push(tape.z.len() as u32);

            let zs = &tape.z[start..];
            let cols = &tape.col[start..];
            let loc = oy * out.w + ox;
            for co in 0..out.c {
                let row = &weight[co * fan_in..(co + 1) * fan_in];
                if let Some(p) = scan_sorted(zs.len(), |i| zs[i], |i| row[cols[i] as usize]) {
                    let n = co * locs + loc;
                    tape.prefix[n] = p.len as u32;
                    tape.denom[n] = p.denom;
                    tape.z_out[n] = p.z_out;
                    t_out[n] = p.z_out.ln();
                }
            }
        }
    }
    Ok((t_out, tape))
}

/// Backward pass for one sample. `g_out` holds `dL/dt_out`; the input-time
/// gradient is accumulated into `g_in` and the weight gradient into `g_w`.
pub fn conv_backward(
    geom: &ConvGeom,
    weight: &[f64],
    tape: &ConvTape,
    g_out: &[f64],
    g_in: &mut [f64],
    g_w: &mut [f64],
) -> Result<()> {
    let out = geom.output()?;
    if g_out.len() != out.len() || tape.prefix.len() != out.len() {
        return Err(Error::Contract("conv tape does not match the layer".into()));
    }
    let fan_in = geom.fan_in();
    let locs = out.plane();
    for loc in 0..locs {
        let start = tape.loc_offset[loc] as usize;
        for co in 0..out.c {
            let n = co * locs + loc;
            let len = tape.prefix[n] as usize;
            let g = g_out[n];
            if len == 0 || g == 0.0 {
                continue;
            }
            let z_out = tape.z_out[n];
            // dL/dz_out = dL/dt_out / z_out, then divided by the denominator.
            let scale = g / (z_out * tape.denom[n]);
            let row = &weight[co * fan_in..(co + 1) * fan_in];
            let gw_row = &mut g_w[co * fan_in..(co + 1) * fan_in];
            for e in start..start + len {
                let z = tape.z[e];
                let col = tape.col[e] as usize;
                g_in[tape.input_idx[e] as usize] += scale * row[col] * z;
                gw_row[col] += scale * (z - z_out);
            }
        }
    }
    Ok(())
}

/// Applies a temporal dense layer to every sample of `x` (`[B, F_in]` or any
/// feature map, which is flattened). `weights` is `(F_out, F_in)` row-major.
pub fn temporal_dense(x: &TimeTensor, weights: &[f64], out_features: usize) -> Result<TimeTensor> {
    let f_in = x.sample_shape()?.len();
    let geom = ConvGeom::dense(f_in, out_features);
    let mut data = Vec::with_capacity(x.batch() * out_features);
    for s in x.samples() {
        data.extend(conv_forward(&geom, weights, s)?.0);
    }
    Ok(TimeTensor::from_raw(vec![x.batch(), out_features], data))
}

/// Applies a temporal convolution to a `[B, C, H, W]` tensor. The kernel is
/// `(C_out, C_in, k, k)`; padded positions contribute no synapse.
pub fn temporal_conv2d(
    x: &TimeTensor,
    kernel: &[f64],
    out_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
) -> Result<TimeTensor> {
    let geom = ConvGeom {
        input: x.sample_shape()?,
        out_channels,
        kernel: kernel_size,
        stride,
        padding,
    };
    let out = geom.output()?;
    if kernel.len() != geom.weight_len() {
        return Err(Error::config(format!(
            "kernel has {} values, expected {}",
            kernel.len(),
            geom.weight_len()
        )));
    }
    let mut data = Vec::with_capacity(x.batch() * out.len());
    for s in x.samples() {
        data.extend(conv_forward(&geom, kernel, s)?.0);
    }
    Ok(TimeTensor::from_raw(
        vec![x.batch(), out.c, out.h, out.w],
        data,
    ))
}
