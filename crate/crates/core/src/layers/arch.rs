//! Declarative architecture descriptions and the four reference networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::delay::Granularity;
use crate::tensor::Shape3;

/// Which of the reference architectures to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Baseline,
    AddSkip,
    ConcatSkip,
    ConcatSkipDelay,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Baseline,
        ArchKind::AddSkip,
        ArchKind::ConcatSkip,
        ArchKind::ConcatSkipDelay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Baseline => "baseline",
            ArchKind::AddSkip => "add_skip",
            ArchKind::ConcatSkip => "concat_skip",
            ArchKind::ConcatSkipDelay => "concat_skip_delay",
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub name: String,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub granularity: Granularity,
    pub init: f64,
}

/// One entry of the temporal layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    MinPool {
        window: usize,
        stride: usize,
    },
    Conv(ConvSpec),
    /// Residual block: the conv chain and a pooled skip path merged by adding
    /// spike times.
    AddBlock {
        convs: Vec<ConvSpec>,
    },
    /// Split / transform first half / optionally delay second half / concat /
    /// shuffle.
    ConcatBlock {
        conv: ConvSpec,
        #[serde(default)]
        delay: Option<DelaySpec>,
    },
    Dense {
        name: String,
        out_features: usize,
    },
}

/// Complete network description; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Option<ArchKind>,
    pub input: Shape3,
    pub classes: usize,
    pub encoder: EncoderSpec,
    pub layers: Vec<LayerSpec>,
}

fn default_kernel() -> usize {
    3
}

fn one() -> usize {
    1
}

fn conv(name: &str, out_channels: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        name: name.to_string(),
        out_channels,
        kernel: 3,
        stride,
        padding: 1,
    }
}

/// Builds one of the reference networks:
/// `Conv-BN-ReLU(w) - MinPool(2) - Conv(w, s2) - Conv(w) - Conv(2w, s2) - Conv(2w) - FC`.
///
/// `width` is the encoder channel count (32 in the full-size network).
pub fn make_architecture(
    kind: ArchKind,
    input: Shape3,
    classes: usize,
    width: usize,
    granularity: Granularity,
    delay_init: f64,
) -> Result<ModelConfig> {
    if width == 0 || !width.is_multiple_of(2) {
        return Err(Error::config(format!(
            "width must be a positive even number, got {width}"
        )));
    }
    let w = width;
    let pool = LayerSpec::MinPool {
        window: 2,
        stride: 2,
    };
    let head = LayerSpec::Dense {
        name: "fc".into(),
        out_features: classes,
    };
    let delay = DelaySpec {
        granularity,
        init: delay_init,
    };
    let layers = match kind {
        ArchKind::Baseline => vec![
            pool,
            LayerSpec::Conv(conv("conv2", w, 2)),
            LayerSpec::Conv(conv("conv3", w, 1)),
            LayerSpec::Conv(conv("conv4", 2 * w, 2)),
            LayerSpec::Conv(conv("conv5", 2 * w, 1)),
            head,
        ],
        ArchKind::AddSkip => vec![
            pool,
            LayerSpec::AddBlock {
                convs: vec![conv("conv2", w, 2), conv("conv3", w, 1)],
            },
            LayerSpec::AddBlock {
                convs: vec![conv("conv4", 2 * w, 2), conv("conv5", 2 * w, 1)],
            },
            head,
        ],
        ArchKind::ConcatSkip | ArchKind::ConcatSkipDelay => {
            let delay = (kind == ArchKind::ConcatSkipDelay).then_some(delay);
            vec![
                pool,
                LayerSpec::Conv(conv("conv2", w, 2)),
                LayerSpec::ConcatBlock {
                    conv: conv("conv3", w / 2, 1),
                    delay,
                },
                LayerSpec::Conv(conv("conv4", 2 * w, 2)),
                LayerSpec::ConcatBlock {
                    conv: conv("conv5", w, 1),
                    delay,
                },
                head,
            ]
        }
    };
    let cfg = ModelConfig {
        arch: Some(kind),
        input,
        classes,
        encoder: EncoderSpec {
            channels: w,
            kernel: 3,
        },
        layers,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ModelConfig {
    /// Structural checks that do not need shape propagation (the graph
    /// builder checks shapes).
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("layer list is empty"));
        }
        if self.input.is_empty() {
            return Err(Error::config(format!(
                "input shape {} is empty",
                self.input
            )));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be positive"));
        }
        if self.encoder.channels == 0 || self.encoder.kernel.is_multiple_of(2) {
            return Err(Error::config(
                "encoder needs channels > 0 and an odd kernel",
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match layer {
                LayerSpec::Dense { out_features, .. } => {
                    if !last {
                        return Err(Error::config_at(i, "dense layer must be the last layer"));
                    }
                    if *out_features != self.classes {
                        return Err(Error::config_at(
                            i,
                            format!(
                                "head has {out_features} outputs for {} classes",
                                self.classes
                            ),
                        ));
                    }
                }
                _ if last => return Err(Error::config_at(i, "last layer must be dense")),
                LayerSpec::AddBlock { convs } if convs.is_empty() => {
                    return Err(Error::config_at(i, "add block without convolutions"))
                }
                LayerSpec::ConcatBlock { delay: Some(d), .. } if !(d.init >= 0.0) => {
                    return Err(Error::config_at(i, "delay init must be >= 0"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
