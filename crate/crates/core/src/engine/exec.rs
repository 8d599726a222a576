//! Forward evaluation, loss and reverse-mode gradients over a [`Graph`].

use crate::engine::graph::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::layers::channels::{gather, scatter_add};
use crate::layers::conv::{conv_backward, conv_forward, ConvTape};
use crate::layers::delay::{add_times, delay_backward, delay_forward};
use crate::layers::encoder::{encoder_backward, encoder_forward, EncoderParams, EncoderTape};
use crate::layers::pool::{pool_backward, pool_forward};
use crate::par::{try_map_indexed, Exec};
use crate::training::loss::{loss_ce, loss_ce_grad, predict, total_loss, LossBreakdown};

/// Parameter gradients and per-sample encoder gradients of one batch chunk.
type ChunkGrads = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Fixed number of gradient accumulation chunks. The reduction order depends
/// only on the batch size, so results do not depend on the worker count.
pub const GRAD_CHUNKS: usize = 16;

#[derive(Debug, Clone)]
pub enum NodeTape {
    None,
    Conv(ConvTape),
    Pool(Vec<u32>),
}

/// Every node's spike times for one sample, plus what backward needs.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub values: Vec<Vec<f64>>,
    tapes: Vec<NodeTape>,
}

impl SampleTrace {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tape(&self, node: NodeId) -> Option<&NodeTape> {
        self.tapes.get(node)
    }
}

/// Result of a batch forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub samples: Vec<SampleTrace>,
    pub encoder: Option<EncoderTape>,
    pub training: bool,
}

impl Forward {
    pub fn batch(&self) -> usize {
        self.samples.len()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(SampleTrace::output)
    }

    fn recorded(&self) -> bool {
        self.encoder.is_some() && self.samples.iter().all(|s| !s.tapes.is_empty())
    }
}

/// Loss terms for a batch plus classification counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    pub correct: usize,
    /// Blocks whose overlap term was skipped because a branch never fired.
    pub overlap_empty: Vec<usize>,
}

/// Loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub weight: f64,
    pub overlap: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            weight: 1.0,
            overlap: 1e-6,
        }
    }
}

/// Batch statistics of one overlap pair: `(mean_conv, n_conv, mean_skip, n_skip)`.
fn branch_means(fwd: &Forward, conv: NodeId, skip: NodeId) -> Option<(f64, f64, f64, f64)> {
    let acc = |id: NodeId| {
        fwd.samples
            .iter()
            .flat_map(|s| s.values[id].iter())
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1))
    };
    let (sa, na) = acc(conv);
    let (sb, nb) = acc(skip);
    (na > 0 && nb > 0).then(|| (sa / na as f64, na as f64, sb / nb as f64, nb as f64))
}

impl Graph {
    pub(crate) fn encoder_params(&self) -> EncoderParams<'_> {
        let p = &self.params;
        EncoderParams {
            weight: p.data(self.enc.weight),
            bias: p.data(self.enc.bias),
            gamma: p.data(self.enc.gamma),
            beta: p.data(self.enc.beta),
            running_mean: p.data(self.enc.running_mean),
            running_var: p.data(self.enc.running_var),
        }
    }

    /// Encodes a batch of images. `training` selects batch statistics for the
    /// normalization; running statistics are not updated here.
    pub fn forward(
        &self,
        images: &[f64],
        batch: usize,
        training: bool,
        record: bool,
        exec: Exec,
    ) -> Result<Forward> {
        let (enc, tape) = encoder_forward(
            &self.encoder,
            &self.encoder_params(),
            images,
            batch,
            training,
            exec,
        )?;
        let mut fwd = self.forward_encoded(enc, record, exec)?;
        fwd.training = training;
        if record {
            fwd.encoder = Some(tape);
        }
        Ok(fwd)
    }

    /// Runs the temporal layers on precomputed encoder spike times.
    pub fn forward_encoded(
        &self,
        encoded: Vec<Vec<f64>>,
        record: bool,
        exec: Exec,
    ) -> Result<Forward> {
        let n_enc = self.nodes[0].shape.len();
        if let Some(bad) = encoded.iter().find(|e| e.len() != n_enc) {
            return Err(Error::Contract(format!(
                "encoder output has {} values, expected {n_enc}",
                bad.len()
            )));
        }
        let samples = try_map_indexed(exec, encoded.len(), |b| {
            self.forward_sample(encoded[b].clone(), record)
        })?;
        Ok(Forward {
            samples,
            encoder: None,
            training: false,
        })
    }

    fn forward_sample(&self, enc: Vec<f64>, record: bool) -> Result<SampleTrace> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut tapes = Vec::with_capacity(if record { self.nodes.len() } else { 0 });
        values.push(enc);
        if record {
            tapes.push(NodeTape::None);
        }
        for (id, node) in self.nodes.iter().enumerate().skip(1) {
            let x = &values[node.inputs[0]];
            let (out, tape) = match &node.op {
                Op::Encoder => {
                    return Err(Error::Contract("encoder must be the first node".into()))
                }
                Op::Conv { geom, weight } => {
                    let (t, tape) = conv_forward(geom, self.params.data(*weight), x)?;
                    (t, NodeTape::Conv(tape))
                }
                Op::MinPool { window, stride } => {
                    let (t, arg) =
                        pool_forward(self.nodes[node.inputs[0]].shape, *window, *stride, x)?;
                    (t, NodeTape::Pool(arg))
                }
                Op::Gather { map, fill } => (gather(map, x, *fill), NodeTape::None),
                Op::Concat => {
                    let mut t = x.clone();
                    t.extend_from_slice(&values[node.inputs[1]]);
                    (t, NodeTape::None)
                }
                Op::Delay { granularity, theta } => (
                    delay_forward(node.shape, *granularity, self.params.data(*theta), x)?,
                    NodeTape::None,
                ),
                Op::Add => {
                    let y = &values[node.inputs[1]];
                    (
                        x.iter().zip(y).map(|(&a, &b)| add_times(a, b)).collect(),
                        NodeTape::None,
                    )
                }
            };
            if out.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric {
                    node: id,
                    msg: format!("{} produced NaN", node.name),
                });
            }
            values.push(out);
            if record {
                tapes.push(tape);
            }
        }
        Ok(SampleTrace { values, tapes })
    }

    /// Cross-entropy (batch mean), weight-sum penalty and branch overlap.
    pub fn loss(&self, fwd: &Forward, labels: &[usize], lambdas: Lambdas) -> Result<BatchLoss> {
        if labels.len() != fwd.batch() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "{} labels for a batch of {}",
                labels.len(),
                fwd.batch()
            )));
        }
        let mut ce = 0.0;
        let mut correct = 0;
        for (o, &y) in fwd.outputs().zip(labels) {
            ce += loss_ce(o, y)?;
            correct += (predict(o) == y) as usize;
        }
        ce /= labels.len() as f64;
        let mut overlap = 0.0;
        let mut overlap_empty = Vec::new();
        for (i, (conv, skip)) in self.overlap_pairs().enumerate() {
            match branch_means(fwd, conv, skip) {
                Some((a, _, b, _)) => overlap += (a - b).powi(2),
                None => overlap_empty.push(i),
            }
        }
        Ok(BatchLoss {
            breakdown: total_loss(
                ce,
                self.weight_penalty(),
                overlap,
                lambdas.weight,
                lambdas.overlap,
            ),
            correct,
            overlap_empty,
        })
    }

    /// Gradient of the total loss for every parameter slot (buffers get
    /// zeros). `fwd` must come from [`Graph::forward`] with `record = true`
    /// on the same `images`.
    pub fn backward(
        &self,
        fwd: &Forward,
        images: &[f64],
        labels: &[usize],
        lambdas: Lambdas,
        exec: Exec,
    ) -> Result<Vec<Vec<f64>>> {
        if !fwd.recorded() {
            return Err(Error::Contract(
                "backward needs a forward pass recorded with tapes".into(),
            ));
        }
        let batch = fwd.batch();
        if labels.len() != batch || batch == 0 {
            return Err(Error::Contract(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        let overlap: Vec<(NodeId, NodeId, f64, f64)> = self
            .overlap_pairs()
            .filter_map(|(conv, skip)| {
                branch_means(fwd, conv, skip).map(|(a, na, b, nb)| {
                    let d = 2.0 * (a - b) * lambdas.overlap;
                    (conv, skip, d / na, -d / nb)
                })
            })
            .collect();

        let chunks = GRAD_CHUNKS.min(batch);
        let bounds = |c: usize| (c * batch / chunks, (c + 1) * batch / chunks);
        let partial = try_map_indexed(exec, chunks, |c| -> Result<ChunkGrads> {
            let (lo, hi) = bounds(c);
            let mut grads = self.params.zeros_like();
            let mut g_enc = Vec::with_capacity(hi - lo);
            for (s, &y) in fwd.samples[lo..hi].iter().zip(&labels[lo..hi]) {
                g_enc.push(self.backward_sample(s, y, batch, &overlap, &mut grads)?);
            }
            Ok((grads, g_enc))
        })?;

        let mut grads = self.params.zeros_like();
        let mut g_enc = Vec::with_capacity(batch);
        for (g, e) in partial {
            for (acc, part) in grads.iter_mut().zip(g) {
                acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
            g_enc.extend(e);
        }

        let tape = fwd.encoder.as_ref().expect("checked by recorded()");
        let eg = encoder_backward(
            &self.encoder,
            &self.encoder_params(),
            tape,
            images,
            &g_enc,
            exec,
        );
        grads[self.enc.weight] = eg.weight;
        grads[self.enc.bias] = eg.bias;
        grads[self.enc.gamma] = eg.gamma;
        grads[self.enc.beta] = eg.beta;

        if lambdas.weight != 0.0 {
            for id in self.weight_params().collect::<Vec<_>>() {
                let p = self.params.get(id);
                let n = p.row_len();
                for (row, g) in p.data.chunks_exact(n).zip(grads[id].chunks_exact_mut(n)) {
                    if row.iter().sum::<f64>() < 1.0 {
                        g.iter_mut().for_each(|v| *v -= lambdas.weight);
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Backpropagates one sample into `grads`; returns `dL/dt` at the encoder
    /// output.
    fn backward_sample(
        &self,
        s: &SampleTrace,
        label: usize,
        batch: usize,
        overlap: &[(NodeId, NodeId, f64, f64)],
        grads: &mut [Vec<f64>],
    ) -> Result<Vec<f64>> {
        let mut g: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.shape.len()])
            .collect();
        let out = self.output();
        for (gv, d) in g[out].iter_mut().zip(loss_ce_grad(s.output(), label)?) {
            *gv = d / batch as f64;
        }
        for &(conv, skip, dc, ds) in overlap {
            for (gv, t) in g[conv].iter_mut().zip(&s.values[conv]) {
                if t.is_finite() {
                    *gv += dc;
                }
            }
            for (gv, t) in g[skip].iter_mut().zip(&s.values[skip]) {
                if t.is_finite() {
                    *gv += ds;
                }
            }
        }
        for id in (1..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            let g_out = std::mem::take(&mut g[id]);
            if g_out.iter().all(|&v| v == 0.0) {
                continue;
            }
            let x = node.inputs[0];
            match (&node.op, &s.tapes[id]) {
                (Op::Conv { geom, weight }, NodeTape::Conv(tape)) => {
                    conv_backward(
                        geom,
                        self.params.data(*weight),
                        tape,
                        &g_out,
                        &mut g[x],
                        &mut grads[*weight],
                    )?;
                }
                (Op::MinPool { .. }, NodeTape::Pool(arg)) => pool_backward(arg, &g_out, &mut g[x]),
                (Op::Gather { map, .. }, _) => scatter_add(map, &g_out, &mut g[x]),
                (Op::Concat, _) => {
                    let n = g[x].len();
                    g[x].iter_mut().zip(&g_out[..n]).for_each(|(a, b)| *a += b);
                    let y = node.inputs[1];
                    g[y].iter_mut().zip(&g_out[n..]).for_each(|(a, b)| *a += b);
                }
                (Op::Delay { granularity, theta }, _) => {
                    delay_backward(
                        node.shape,
                        *granularity,
                        &s.values[id],
                        &g_out,
                        &mut g[x],
                        &mut grads[*theta],
                    );
                }
                (Op::Add, _) => {
                    let y = node.inputs[1];
                    for (i, (&t, &d)) in s.values[id].iter().zip(&g_out).enumerate() {
                        if t.is_finite() {
                            g[x][i] += d;
                            g[y][i] += d;
                        }
                    }
                }
                (op, _) => {
                    return Err(Error::Contract(format!(
                        "missing tape for {} ({op:?})",
                        node.name
                    )))
                }
            }
        }
        Ok(std::mem::take(&mut g[0]))
    }

    /// Output spike times for a batch in evaluation mode.
    pub fn predict_times(&self, images: &[f64], batch: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(images, batch, false, false, exec)?;
        Ok(fwd
            .samples
            .into_iter()
            .map(|mut s| s.values.pop().unwrap_or_default())
            .collect())
    }
}
