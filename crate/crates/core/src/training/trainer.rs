//! Mini-batch training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::exec::Lambdas;
use crate::engine::graph::Graph;
use crate::error::{Error, Result};
use crate::layers::arch::{make_architecture, ArchKind, ModelConfig};
use crate::layers::delay::Granularity;
use crate::layers::encoder::update_running_stats;
use crate::metrics::evaluate;
use crate::par::Exec;
use crate::tensor::Shape3;
use crate::training::optim::{adam_step, clip_grad_norm, cosine_lr, AdamConfig, AdamState};

/// Training hyperparameters and the architecture to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_weight: f64,
    pub lambda_overlap: f64,
    pub seed: u64,
    pub architecture: ArchKind,
    pub granularity: Granularity,
    pub delay_init: f64,
    /// Encoder channel count; 32 in the full-size network.
    pub width: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    /// Scale temporal-weight steps by `1 / fan_in` (see [`AdamConfig`]).
    pub fan_in_lr: bool,
    /// Filled from the dataset when absent.
    pub input: Option<[usize; 3]>,
    pub classes: Option<usize>,
    /// Explicit layer list; overrides `architecture`, `width` and the delay
    /// settings when present.
    pub model: Option<ModelConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 6e-4,
            weight_decay: 1e-3,
            lambda_weight: 1.0,
            lambda_overlap: 1e-6,
            seed: 0,
            architecture: ArchKind::ConcatSkipDelay,
            granularity: Granularity::Channel,
            delay_init: 0.5,
            width: 32,
            grad_clip: 5.0,
            fan_in_lr: false,
            input: None,
            classes: None,
            model: None,
        }
    }
}

impl TrainConfig {
    /// Range checks; reports the offending field as a JSON pointer.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| {
            Err(Error::Schema {
                pointer: format!("/{field}"),
                msg,
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_weight", self.lambda_weight),
            ("lambda_overlap", self.lambda_overlap),
            ("delay_init", self.delay_init),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, format!("must be a finite value >= 0, got {v}"));
            }
        }
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return bad(
                "width",
                format!("must be a positive even number, got {}", self.width),
            );
        }
        if self.classes == Some(0) {
            return bad("classes", "must be positive".into());
        }
        Ok(())
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            weight: self.lambda_weight,
            overlap: self.lambda_overlap,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            fan_in_scaled: self.fan_in_lr,
            ..AdamConfig::default()
        }
    }

    /// Builds the architecture for `input` samples and `classes` outputs.
    pub fn resolve_model(&self, input: Shape3, classes: usize) -> Result<ModelConfig> {
        self.validate()?;
        if let Some([c, h, w]) = self.input {
            if Shape3::new(c, h, w) != input {
                return Err(Error::Dataset(format!(
                    "config input {c}x{h}x{w} but samples are {input}"
                )));
            }
        }
        if let Some(k) = self.classes {
            if k != classes {
                return Err(Error::Dataset(format!(
                    "config declares {k} classes but the data has {classes}"
                )));
            }
        }
        match &self.model {
            Some(m) => {
                if m.input != input || m.classes != classes {
                    return Err(Error::Dataset(format!(
                        "model expects {} with {} classes, data is {input} with {classes}",
                        m.input, m.classes
                    )));
                }
                m.validate()?;
                Ok(m.clone())
            }
            None => make_architecture(
                self.architecture,
                input,
                classes,
                self.width,
                self.granularity,
                self.delay_init,
            ),
        }
    }

    /// Resolves input shape and class count against `data`. A declared class
    /// count may exceed the labels present (e.g. a subset).
    pub fn model_config(&self, data: &Dataset) -> Result<ModelConfig> {
        let present = data.classes();
        let classes = match self.classes {
            Some(k) if k < present => {
                return Err(Error::Dataset(format!(
                    "config declares {k} classes but the dataset has label {}",
                    present - 1
                )))
            }
            Some(k) => k,
            None => present,
        };
        self.resolve_model(data.shape()?, classes)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_weight: f64,
    pub loss_overlap: f64,
    /// Percent, measured on the training batches as they were seen.
    pub train_acc: f64,
    pub test_acc: f64,
    pub latency: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,lr,loss_total,loss_ce,loss_weight,loss_overlap,train_acc,test_acc,latency";

pub fn write_history_csv(mut w: impl Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.loss_total,
            r.loss_ce,
            r.loss_weight,
            r.loss_overlap,
            r.train_acc,
            r.test_acc,
            r.latency
        )?;
    }
    Ok(())
}

pub struct TrainOutcome {
    pub graph: Graph,
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh network. The result depends only on `cfg` (including its
/// seed) and the data, not on the number of workers.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord, &Graph),
) -> Result<TrainOutcome> {
    let model = cfg.model_config(train_set)?;
    if !test_set.is_empty() && test_set.dims != train_set.dims {
        return Err(Error::Dataset(
            "train and test samples have different shapes".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut graph = Graph::build(&model, cfg.seed)?;
    let mut opt = AdamState::new(&graph.params);
    let adam = cfg.adam();
    let lambdas = cfg.lambdas();
    let plane = graph.encoder.input.plane();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_DA7A);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        order.shuffle(&mut rng);
        let (mut total, mut ce, mut wp, mut ov) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_set.batch(chunk);
            let fwd = graph.forward(&x, chunk.len(), true, true, exec)?;
            let loss = graph.loss(&fwd, &y, lambdas)?;
            let mut grads = graph.backward(&fwd, &x, &y, lambdas, exec)?;
            if let Some(tape) = &fwd.encoder {
                let (rm, rv) = (graph.enc.running_mean, graph.enc.running_var);
                let mut mean = graph.params.data(rm).to_vec();
                let mut var = graph.params.data(rv).to_vec();
                update_running_stats(&mut mean, &mut var, tape, chunk.len() * plane);
                graph.params.data_mut(rm).copy_from_slice(&mean);
                graph.params.data_mut(rv).copy_from_slice(&var);
            }
            drop(fwd);
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    node: graph.output(),
                    msg: format!("non-finite gradient in epoch {epoch}"),
                });
            }
            clip_grad_norm(&graph.params, &mut grads, cfg.grad_clip);
            adam_step(&mut graph.params, &grads, &mut opt, lr, &adam)?;

            let b = &loss.breakdown;
            total += b.total;
            ce += b.ce;
            wp += b.weight_penalty;
            ov += b.overlap;
            correct += loss.correct;
            batches += 1;
        }
        let (test_acc, latency) = if test_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (a, l) = evaluate(&graph, test_set, exec)?;
            (a, l.mean)
        };
        let n = batches as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            loss_total: total / n,
            loss_ce: ce / n,
            loss_weight: wp / n,
            loss_overlap: ov / n,
            train_acc: 100.0 * correct as f64 / train_set.len() as f64,
            test_acc,
            latency,
        };
        on_epoch(&rec, &graph);
        history.push(rec);
    }
    Ok(TrainOutcome {
        graph,
        optimizer: opt,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr), (100, 128, 6e-4));
        assert_eq!(
            (c.weight_decay, c.lambda_weight, c.lambda_overlap),
            (1e-3, 1.0, 1e-6)
        );
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let c = TrainConfig {
            lr: -1.0,
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/lr"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn history_csv_has_documented_columns() {
        let mut out = Vec::new();
        write_history_csv(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), HISTORY_HEADER);
    }
}
