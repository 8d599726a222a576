//! Static computation graph built from a [`ModelConfig`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::layers::arch::{ConvSpec, LayerSpec, ModelConfig};
use crate::layers::channels::{pad_map, shuffle_map, slice_map};
use crate::layers::conv::ConvGeom;
use crate::layers::delay::Granularity;
use crate::layers::encoder::EncoderGeom;
use crate::layers::pool::pool_output;
use crate::tensor::Shape3;

pub type NodeId = usize;

/// Expected input-weight sum of a freshly initialized temporal neuron.
///
/// Padding contributes no synapses, so a corner neuron of a 3x3 conv only
/// sees 4 of its 9 taps. With a sum of 3 it still crosses threshold; at 1.5
/// the border of small feature maps stays silent and the head goes dead.
pub const INIT_WEIGHT_SUM: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Batch-level `ReLU(BN(Conv(x)))`; always node 0.
    Encoder,
    /// Temporal convolution (dense layers use a 1x1 geometry).
    Conv {
        geom: ConvGeom,
        weight: ParamId,
    },
    MinPool {
        window: usize,
        stride: usize,
    },
    /// `out[i] = in[map[i]]`, unmapped positions take `fill`.
    Gather {
        map: Vec<u32>,
        fill: f64,
    },
    /// Channel concatenation of two inputs.
    Concat,
    Delay {
        granularity: Granularity,
        theta: ParamId,
    },
    /// Elementwise spike-time addition of two inputs.
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Shape3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Add,
    Concat,
}

/// Branch nodes of one skip block, used for the overlap loss and timing
/// histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    pub name: String,
    pub kind: BlockKind,
    /// Output of the convolution branch.
    pub conv: NodeId,
    /// Skip branch as it enters the merge (after pooling / delay).
    pub skip: NodeId,
    pub merged: NodeId,
    pub delayed: bool,
}

/// Encoder parameter slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSlots {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub config: ModelConfig,
    pub encoder: EncoderGeom,
    pub enc: EncoderSlots,
    pub nodes: Vec<Node>,
    pub params: ParamStore,
    pub blocks: Vec<BlockInfo>,
}

struct Builder {
    nodes: Vec<Node>,
    params: ParamStore,
    rng: ChaCha8Rng,
    weight_sum: f64,
}

impl Builder {
    fn push(
        &mut self,
        name: impl Into<String>,
        op: Op,
        inputs: Vec<NodeId>,
        shape: Shape3,
    ) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn shape(&self, id: NodeId) -> Shape3 {
        self.nodes[id].shape
    }

    fn temporal_weights(
        &mut self,
        name: &str,
        out: usize,
        fan_in: usize,
        shape: Vec<usize>,
    ) -> ParamId {
        let hi = 2.0 * self.weight_sum / fan_in as f64;
        let data = (0..out * fan_in)
            .map(|_| self.rng.gen_range(0.0..hi))
            .collect();
        self.params
            .add(format!("{name}.weight"), shape, ParamKind::Weight, data)
    }

    fn conv(&mut self, layer: usize, spec: &ConvSpec, x: NodeId) -> Result<NodeId> {
        let geom = ConvGeom {
            input: self.shape(x),
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
        };
        if spec.out_channels == 0 {
            return Err(Error::config_at(
                layer,
                format!("{} has no output channels", spec.name),
            ));
        }
        let out = geom
            .output()
            .map_err(|e| Error::config_at(layer, e.to_string()))?;
        let k = spec.kernel;
        let w = self.temporal_weights(
            &spec.name,
            spec.out_channels,
            geom.fan_in(),
            vec![spec.out_channels, geom.input.c, k, k],
        );
        Ok(self.push(
            spec.name.clone(),
            Op::Conv { geom, weight: w },
            vec![x],
            out,
        ))
    }
}

impl Graph {
    /// Builds the graph and initializes every parameter from `seed`.
    ///
    /// Temporal weights are uniform in `[0, 2 * INIT_WEIGHT_SUM / fan_in]` so
    /// every neuron starts well above the firing threshold.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Graph> {
        Self::build_with_init(config, seed, INIT_WEIGHT_SUM)
    }

    /// Like [`Graph::build`] with a custom expected weight sum per neuron.
    pub fn build_with_init(config: &ModelConfig, seed: u64, weight_sum: f64) -> Result<Graph> {
        config.validate()?;
        if !(weight_sum > 0.0) {
            return Err(Error::config(format!(
                "initial weight sum must be positive, got {weight_sum}"
            )));
        }
        let encoder = EncoderGeom {
            input: config.input,
            channels: config.encoder.channels,
            kernel: config.encoder.kernel,
        };
        let mut b = Builder {
            nodes: Vec::new(),
            params: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            weight_sum,
        };

        let c = encoder.channels;
        let fan_in = encoder.fan_in();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let kw: Vec<f64> = (0..c * fan_in)
            .map(|_| b.rng.gen_range(-bound..bound))
            .collect();
        let kb: Vec<f64> = (0..c).map(|_| b.rng.gen_range(-bound..bound)).collect();
        let k = encoder.kernel;
        let enc = EncoderSlots {
            weight: b.params.add(
                "conv1.weight",
                vec![c, encoder.input.c, k, k],
                ParamKind::EncoderWeight,
                kw,
            ),
            bias: b.params.add("conv1.bias", vec![c], ParamKind::Bias, kb),
            gamma: b
                .params
                .add("conv1.bn.gamma", vec![c], ParamKind::Norm, vec![1.0; c]),
            beta: b
                .params
                .add("conv1.bn.beta", vec![c], ParamKind::Norm, vec![0.0; c]),
            running_mean: b.params.add(
                "conv1.bn.running_mean",
                vec![c],
                ParamKind::Buffer,
                vec![0.0; c],
            ),
            running_var: b.params.add(
                "conv1.bn.running_var",
                vec![c],
                ParamKind::Buffer,
                vec![1.0; c],
            ),
        };
        let mut x = b.push("conv1", Op::Encoder, vec![], encoder.output());
        let mut blocks = Vec::new();

        for (li, layer) in config.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::MinPool { window, stride } => {
                    let out = pool_output(b.shape(x), *window, *stride)
                        .map_err(|e| Error::config_at(li, e.to_string()))?;
                    b.push(
                        format!("pool{li}"),
                        Op::MinPool {
                            window: *window,
                            stride: *stride,
                        },
                        vec![x],
                        out,
                    )
                }
                LayerSpec::Conv(spec) => b.conv(li, spec, x)?,
                LayerSpec::Dense { name, out_features } => {
                    let geom = ConvGeom::dense(b.shape(x).len(), *out_features);
                    let w = b.temporal_weights(
                        name,
                        *out_features,
                        geom.fan_in(),
                        vec![*out_features, geom.fan_in()],
                    );
                    b.push(
                        name.clone(),
                        Op::Conv { geom, weight: w },
                        vec![x],
                        Shape3::flat(*out_features),
                    )
                }
                LayerSpec::AddBlock { convs } => {
                    let input = x;
                    let mut y = x;
                    for spec in convs {
                        y = b.conv(li, spec, y)?;
                    }
                    let target = b.shape(y);
                    let name = format!("block{li}");
                    let mut skip = input;
                    let stride: usize = convs.iter().map(|c| c.stride).product();
                    if stride > 1 {
                        let out = pool_output(b.shape(skip), stride, stride)
                            .map_err(|e| Error::config_at(li, e.to_string()))?;
                        skip = b.push(
                            format!("{name}.skip_pool"),
                            Op::MinPool {
                                window: stride,
                                stride,
                            },
                            vec![skip],
                            out,
                        );
                    }
                    let s = b.shape(skip);
                    if s.h != target.h || s.w != target.w {
                        return Err(Error::config_at(
                            li,
                            format!("skip path {s} cannot match conv branch {target}"),
                        ));
                    }
                    if s.c != target.c {
                        let map = pad_map(s, target.c)
                            .map_err(|e| Error::config_at(li, e.to_string()))?;
                        skip = b.push(
                            format!("{name}.skip_pad"),
                            Op::Gather { map, fill: 0.0 },
                            vec![skip],
                            target,
                        );
                    }
                    let merged = b.push(format!("{name}.add"), Op::Add, vec![y, skip], target);
                    blocks.push(BlockInfo {
                        name,
                        kind: BlockKind::Add,
                        conv: y,
                        skip,
                        merged,
                        delayed: false,
                    });
                    merged
                }
                LayerSpec::ConcatBlock { conv, delay } => {
                    let s = b.shape(x);
                    if !s.c.is_multiple_of(2) {
                        return Err(Error::config_at(
                            li,
                            format!("cannot split {} channels in half", s.c),
                        ));
                    }
                    let half = s.c / 2;
                    let hs = Shape3::new(half, s.h, s.w);
                    let name = format!("block{li}");
                    let a = b.push(
                        format!("{name}.split_conv"),
                        Op::Gather {
                            map: slice_map(s, 0, half)?,
                            fill: 0.0,
                        },
                        vec![x],
                        hs,
                    );
                    let mut skip = b.push(
                        format!("{name}.split_skip"),
                        Op::Gather {
                            map: slice_map(s, half, half)?,
                            fill: 0.0,
                        },
                        vec![x],
                        hs,
                    );
                    let y = b.conv(li, conv, a)?;
                    if b.shape(y) != hs {
                        return Err(Error::config_at(
                            li,
                            format!(
                                "conv branch produces {} but the skip branch is {hs}",
                                b.shape(y)
                            ),
                        ));
                    }
                    if let Some(d) = delay {
                        let n = d.granularity.param_len(hs);
                        let theta = b.params.add(
                            format!("{name}.delay"),
                            vec![n],
                            ParamKind::Delay,
                            vec![d.init; n],
                        );
                        skip = b.push(
                            format!("{name}.delay"),
                            Op::Delay {
                                granularity: d.granularity,
                                theta,
                            },
                            vec![skip],
                            hs,
                        );
                    }
                    let cat = b.push(format!("{name}.concat"), Op::Concat, vec![y, skip], s);
                    let map = shuffle_map(s, 2).map_err(|e| Error::config_at(li, e.to_string()))?;
                    let merged = b.push(
                        format!("{name}.shuffle"),
                        Op::Gather { map, fill: 0.0 },
                        vec![cat],
                        s,
                    );
                    blocks.push(BlockInfo {
                        name,
                        kind: BlockKind::Concat,
                        conv: y,
                        skip,
                        merged,
                        delayed: delay.is_some(),
                    });
                    merged
                }
            };
        }
        if b.shape(x).len() != config.classes {
            return Err(Error::config_at(
                config.layers.len() - 1,
                "head does not produce one output per class",
            ));
        }
        Ok(Graph {
            config: config.clone(),
            encoder,
            enc,
            nodes: b.nodes,
            params: b.params,
            blocks,
        })
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// Temporal conv and dense nodes in execution order.
    pub fn compute_nodes(&self) -> impl Iterator<Item = (NodeId, &Node, &ConvGeom)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Conv { geom, .. } => Some((i, n, geom)),
                _ => None,
            })
    }

    /// Temporal weight matrices, as `(param, rows)`.
    pub fn weight_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Conv { weight, .. } => Some(weight),
            _ => None,
        })
    }

    /// Current weight-sum penalty over all temporal neurons.
    pub fn weight_penalty(&self) -> f64 {
        self.weight_params()
            .map(|id| {
                let p = self.params.get(id);
                crate::training::loss::loss_weight(p.data.chunks_exact(p.row_len()))
            })
            .sum()
    }

    /// `(conv branch, delayed skip)` node pairs entering the overlap loss.
    pub fn overlap_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.blocks
            .iter()
            .filter(|b| b.delayed)
            .map(|b| (b.conv, b.skip))
    }

    pub fn input_len(&self) -> usize {
        self.encoder.input.len()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }
}
