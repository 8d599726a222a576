//! Accuracy, latency, early-exit spike rates, FLOPs, energy and spike-timing
//! histograms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::exec::Forward;
use crate::engine::graph::{BlockKind, Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::temporal::T_MAX;
use crate::training::loss::predict;

/// Energy per multiply-accumulate, in picojoules.
pub const E_MAC_PJ: f64 = 4.6;
/// Energy per accumulate, in picojoules.
pub const E_AC_PJ: f64 = 0.9;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Mean first-output-spike time over samples that fired at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub mean: f64,
    pub silent: usize,
}

pub fn measure_latency<'a>(outputs: impl IntoIterator<Item = &'a [f64]>) -> Latency {
    let (mut sum, mut n, mut silent) = (0.0, 0usize, 0usize);
    for o in outputs {
        let t = o.iter().copied().fold(f64::INFINITY, f64::min);
        if t.is_finite() {
            sum += t;
            n += 1;
        } else {
            silent += 1;
        }
    }
    Latency {
        mean: if n > 0 { sum / n as f64 } else { f64::NAN },
        silent,
    }
}

/// Work of one layer for the energy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub flops: f64,
    /// The real-valued encoder always performs MACs.
    pub mac: bool,
}

/// Conv: `2 k^2 C_in C_out H_out W_out`; dense: `2 F_in F_out`; pooling,
/// channel moves, delays and additions are free.
pub fn count_flops(graph: &Graph) -> Vec<LayerFlops> {
    let e = &graph.encoder;
    let out = e.output();
    let mut layers = vec![LayerFlops {
        name: graph.nodes[0].name.clone(),
        flops: 2.0 * (e.kernel * e.kernel * e.input.c * out.c * out.h * out.w) as f64,
        mac: true,
    }];
    for (_, node, geom) in graph.compute_nodes() {
        let o = node.shape;
        layers.push(LayerFlops {
            name: node.name.clone(),
            flops: 2.0 * (geom.kernel * geom.kernel * geom.input.c * o.c * o.h * o.w) as f64,
            mac: false,
        });
    }
    layers
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
    pub ratio: f64,
}

/// `E_ANN = sum f * E_MAC`, `E_SNN = sum f * r * E_AC`.
pub fn estimate_energy(flops: &[f64], rates: &[f64]) -> Result<Energy> {
    if flops.len() != rates.len() {
        return Err(Error::Domain(format!(
            "{} FLOP entries but {} rates",
            flops.len(),
            rates.len()
        )));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Domain(format!("spike rate {r} outside [0, 1]")));
    }
    let e_ann: f64 = flops.iter().map(|f| f * E_MAC_PJ).sum();
    let e_snn: f64 = flops.iter().zip(rates).map(|(f, r)| f * r * E_AC_PJ).sum();
    Ok(Energy {
        e_ann_pj: e_ann,
        e_snn_pj: e_snn,
        ratio: e_snn / e_ann,
    })
}

/// Energy with the encoder counted as MAC work in both models.
fn energy_with_encoder(layers: &[LayerFlops], rates: &[f64]) -> Result<Energy> {
    let (mac, spiking): (Vec<_>, Vec<_>) = layers.iter().zip(rates).partition(|(l, _)| l.mac);
    let mac_pj: f64 = mac.iter().map(|(l, _)| l.flops * E_MAC_PJ).sum();
    let f: Vec<f64> = spiking.iter().map(|(l, _)| l.flops).collect();
    let r: Vec<f64> = spiking.iter().map(|(_, r)| **r).collect();
    let e = estimate_energy(&f, &r)?;
    let e_ann = e.e_ann_pj + mac_pj;
    let e_snn = e.e_snn_pj + mac_pj;
    Ok(Energy {
        e_ann_pj: e_ann,
        e_snn_pj: e_snn,
        ratio: e_snn / e_ann,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    /// Percent of the layer's neurons that fire before the sample exits.
    pub spike_rate: f64,
    /// Percent of the layer's input neurons that fire before exit; this is
    /// what drives accumulate operations.
    pub input_spike_rate: f64,
    pub flops: f64,
}

/// Evaluation summary serialized by `eval` and `energy-report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: usize,
    /// Percent correct.
    pub accuracy: f64,
    pub latency: f64,
    /// Samples whose output layer never fired (excluded from latency).
    pub silent_samples: usize,
    pub layers: Vec<LayerReport>,
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
    pub energy_ratio: f64,
}

/// Per-layer early-exit firing counts accumulated over samples.
#[derive(Debug, Default)]
struct RateAcc {
    out: Vec<f64>,
    inp: Vec<f64>,
}

fn early_exit_rates(graph: &Graph, fwd: &Forward, layers: &[NodeId], acc: &mut RateAcc) {
    acc.out.resize(layers.len(), 0.0);
    acc.inp.resize(layers.len(), 0.0);
    for s in &fwd.samples {
        let t_exit = s.output().iter().copied().fold(f64::INFINITY, f64::min);
        let frac = |id: NodeId| {
            let v = &s.values[id];
            v.iter().filter(|&&t| t < t_exit).count() as f64 / v.len() as f64
        };
        for (k, &id) in layers.iter().enumerate() {
            acc.out[k] += frac(id);
            acc.inp[k] += frac(graph.nodes[id].inputs[0]);
        }
    }
}

/// Runs the whole dataset in evaluation mode and gathers accuracy, latency,
/// early-exit spike rates and the energy estimate.
pub fn run_report(graph: &Graph, data: &Dataset, exec: Exec) -> Result<RunReport> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let layers: Vec<NodeId> = graph.compute_nodes().map(|(id, _, _)| id).collect();
    let mut acc = RateAcc::default();
    let mut correct = 0usize;
    let (mut lat_sum, mut lat_n, mut silent) = (0.0, 0usize, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let fwd = graph.forward(&x, chunk.len(), false, false, exec)?;
        early_exit_rates(graph, &fwd, &layers, &mut acc);
        for (o, &label) in fwd.outputs().zip(&y) {
            correct += (predict(o) == label) as usize;
        }
        let l = measure_latency(fwd.outputs());
        silent += l.silent;
        if l.silent < chunk.len() {
            lat_n += chunk.len() - l.silent;
            lat_sum += l.mean * (chunk.len() - l.silent) as f64;
        }
    }
    let n = data.len() as f64;
    let flops = count_flops(graph);
    let mut reports = Vec::with_capacity(flops.len());
    // Encoder first: it is real-valued and always active.
    let mut rates = vec![1.0];
    reports.push(LayerReport {
        name: flops[0].name.clone(),
        spike_rate: 100.0,
        input_spike_rate: 100.0,
        flops: flops[0].flops,
    });
    for (k, f) in flops.iter().enumerate().skip(1) {
        let (o, i) = (acc.out[k - 1] / n, acc.inp[k - 1] / n);
        rates.push(i);
        reports.push(LayerReport {
            name: f.name.clone(),
            spike_rate: 100.0 * o,
            input_spike_rate: 100.0 * i,
            flops: f.flops,
        });
    }
    let e = energy_with_encoder(&flops, &rates)?;
    Ok(RunReport {
        samples: data.len(),
        accuracy: 100.0 * correct as f64 / n,
        latency: if lat_n > 0 {
            lat_sum / lat_n as f64
        } else {
            f64::NAN
        },
        silent_samples: silent,
        layers: reports,
        e_ann_pj: e.e_ann_pj,
        e_snn_pj: e.e_snn_pj,
        energy_ratio: e.ratio,
    })
}

/// Accuracy (percent) and mean latency only; used after every epoch.
pub fn evaluate(graph: &Graph, data: &Dataset, exec: Exec) -> Result<(f64, Latency)> {
    let mut correct = 0usize;
    let mut outputs = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        for (o, label) in graph
            .predict_times(&x, chunk.len(), exec)?
            .into_iter()
            .zip(y)
        {
            correct += (predict(&o) == label) as usize;
            outputs.push(o);
        }
    }
    let acc = if data.is_empty() {
        f64::NAN
    } else {
        100.0 * correct as f64 / data.len() as f64
    };
    Ok((acc, measure_latency(outputs.iter().map(Vec::as_slice))))
}

/// Spike-time histogram of one layer or skip-block branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub layer: String,
    /// `main` for plain layers; `conv`, `skip` or `merged` inside blocks.
    pub branch: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub sentinel: u64,
    /// Exact sum of the finite spike times.
    pub sum: f64,
}

impl Histogram {
    fn new(layer: &str, branch: &str, bins: usize) -> Self {
        Self {
            layer: layer.into(),
            branch: branch.into(),
            edges: (0..=bins).map(|i| T_MAX * i as f64 / bins as f64).collect(),
            counts: vec![0; bins],
            sentinel: 0,
            sum: 0.0,
        }
    }

    fn add(&mut self, t: f64) {
        if !t.is_finite() {
            self.sentinel += 1;
            return;
        }
        let bins = self.counts.len();
        let b = ((t / T_MAX) * bins as f64)
            .floor()
            .clamp(0.0, (bins - 1) as f64) as usize;
        self.counts[b] += 1;
        self.sum += t;
    }

    pub fn finite(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.finite() + self.sentinel
    }

    /// Mean finite spike time, `None` if nothing fired.
    pub fn mean(&self) -> Option<f64> {
        let n = self.finite();
        (n > 0).then(|| self.sum / n as f64)
    }
}

/// Histograms of every temporal layer plus the conv / skip / merged
/// branches of each skip block, over the whole dataset in evaluation mode.
pub fn timing_histograms(
    graph: &Graph,
    data: &Dataset,
    bins: usize,
    exec: Exec,
) -> Result<Vec<Histogram>> {
    if bins == 0 {
        return Err(Error::Domain("histograms need at least one bin".into()));
    }
    let mut targets: Vec<(NodeId, Histogram)> = graph
        .compute_nodes()
        .map(|(id, n, _)| (id, Histogram::new(&n.name, "main", bins)))
        .collect();
    for b in &graph.blocks {
        for (branch, id) in [("conv", b.conv), ("skip", b.skip), ("merged", b.merged)] {
            targets.push((id, Histogram::new(&b.name, branch, bins)));
        }
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk);
        let fwd = graph.forward(&x, chunk.len(), false, false, exec)?;
        for s in &fwd.samples {
            for (id, h) in &mut targets {
                s.values[*id].iter().for_each(|&t| h.add(t));
            }
        }
    }
    Ok(targets.into_iter().map(|(_, h)| h).collect())
}

/// Absolute gap between the mean conv-branch and skip-branch spike times of
/// each concat block, in block order.
pub fn branch_mean_gaps(graph: &Graph, hists: &[Histogram]) -> Vec<Option<f64>> {
    graph
        .blocks
        .iter()
        .filter(|b| b.kind == BlockKind::Concat)
        .map(|b| {
            let mean = |branch: &str| {
                hists
                    .iter()
                    .find(|h| h.layer == b.name && h.branch == branch)
                    .and_then(Histogram::mean)
            };
            Some((mean("conv")? - mean("skip")?).abs())
        })
        .collect()
}

/// CSV with columns `layer,branch,bin_left,bin_right,count`. Silent neurons
/// are reported in an extra row per histogram with both bin edges `inf`.
pub fn write_histogram_csv(mut w: impl Write, hists: &[Histogram]) -> Result<()> {
    writeln!(w, "layer,branch,bin_left,bin_right,count")?;
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                h.layer,
                h.branch,
                h.edges[i],
                h.edges[i + 1],
                c
            )?;
        }
        writeln!(w, "{},{},inf,inf,{}", h.layer, h.branch, h.sentinel)?;
    }
    Ok(())
}

/// Whether any node in `graph` is a learnable delay.
pub fn has_delays(graph: &Graph) -> bool {
    graph.nodes.iter().any(|n| matches!(n.op, Op::Delay { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn latency_mean_skips_silent_samples() {
        let a = [1.5, 3.0];
        let b = [4.0, 2.5];
        let c = [f64::INFINITY, f64::INFINITY];
        let l = measure_latency([&a[..], &b[..], &c[..]]);
        assert_eq!((l.mean, l.silent), (2.0, 1));
    }

    #[test]
    fn energy_examples() {
        let e = estimate_energy(&[1000.0], &[0.5]).unwrap();
        assert_relative_eq!(e.e_ann_pj, 4600.0, epsilon = 1e-9);
        assert_relative_eq!(e.e_snn_pj, 450.0, epsilon = 1e-9);
        assert_relative_eq!(e.ratio, 450.0 / 4600.0);
        assert_eq!(
            estimate_energy(&[10.0, 20.0], &[0.0, 0.0])
                .unwrap()
                .e_snn_pj,
            0.0
        );
        assert!(estimate_energy(&[1.0], &[]).is_err());
        assert!(estimate_energy(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn flop_formulas() {
        use crate::layers::arch::{make_architecture, ArchKind};
        use crate::layers::delay::Granularity;
        use crate::tensor::Shape3;
        let cfg = make_architecture(
            ArchKind::ConcatSkipDelay,
            Shape3::new(1, 28, 28),
            10,
            32,
            Granularity::Channel,
            0.5,
        )
        .unwrap();
        let g = Graph::build(&cfg, 0).unwrap();
        let f = count_flops(&g);
        let names: Vec<_> = f.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["conv1", "conv2", "conv3", "conv4", "conv5", "fc"]);
        assert_eq!(f[0].flops, 2.0 * 9.0 * 32.0 * 784.0);
        // 3x3, 16 -> 16 on 7x7 inside the first concat block.
        assert_eq!(f[2].flops, 2.0 * 9.0 * 16.0 * 16.0 * 49.0);
        assert_eq!(f[5].flops, 2.0 * 64.0 * 16.0 * 10.0);
    }

    #[test]
    fn histogram_conserves_counts() {
        let mut h = Histogram::new("conv3", "main", 4);
        for t in [0.0, 2.4, 2.6, 9.99, 10.0, f64::INFINITY] {
            h.add(t);
        }
        assert_eq!(h.counts, vec![2, 1, 0, 2]);
        assert_eq!((h.sentinel, h.total()), (1, 6));
        let mut out = Vec::new();
        write_histogram_csv(&mut out, &[h]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 6);
        assert!(s.ends_with("conv3,main,inf,inf,1\n"));
    }
}
