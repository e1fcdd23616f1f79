//! The optimisation loop: Adam at a constant learning rate over the mixed
//! dataset, JSONL loss logging, checkpointing and the ablation switches.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{parse_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::backbones::{DepthConfig, EncoderConfig};
use crate::datasets::Dataset;
use crate::imaging::{DogParams, ImageTensor};
use crate::network::StyleModel;
use crate::objective::{total_loss, LossReport, LossWeights, Objective, StyleTarget};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub no_dog: bool,
    pub no_depth: bool,
    pub no_synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub ablations: Ablations,
    /// Seeds network initialisation and the data order.
    pub seed: u64,
    /// Square training resolution; style Grams are cached at this size too.
    pub resolution: usize,
    pub encoder: EncoderConfig,
    pub depth: DepthConfig,
    pub dog: DogParams,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Stops early; `None` runs `epochs` full passes.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            ablations: Ablations::default(),
            seed: 0,
            resolution: 360,
            encoder: EncoderConfig::default(),
            depth: DepthConfig::default(),
            dog: DogParams::default(),
            checkpoint_every: 1000,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(4) || self.resolution > 4096 {
            return Err(Error::config(
                "resolution must be a positive multiple of 4 no larger than 4096",
            ));
        }
        self.weights.validate()?;
        self.dog.kernels()?;
        Ok(())
    }

    /// Weights after applying the ablation switches.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            dog: if self.ablations.no_dog {
                0.0
            } else {
                self.weights.dog
            },
            depth: if self.ablations.no_depth {
                0.0
            } else {
                self.weights.depth
            },
            ..self.weights
        }
    }

    /// SHA-256 of the canonical JSON of every field that shapes the
    /// optimisation trajectory. Run length and checkpoint cadence are
    /// excluded so a run can be resumed and extended.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(o) = v.as_object_mut() {
            o.remove("max_steps");
            o.remove("checkpoint_every");
        }
        canonical_hash(&v)
    }
}

/// SHA-256 of [`canonical_json`].
pub fn canonical_hash(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(canonical_json(v).as_bytes()))
}

/// JSON with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(o) => {
                let mut keys: Vec<&String> = o.keys().collect();
                keys.sort();
                Value::Object(keys.into_iter().map(|k| (k.clone(), sort(&o[k]))).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

/// One line of the training log. Loss fields are weighted contributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub content: f64,
    pub style: f64,
    pub depth: f64,
    pub dog: f64,
    pub total: f64,
    pub wall_ms: u64,
}

impl LogRecord {
    fn new(step: u64, r: &LossReport, wall_ms: u64) -> Self {
        Self {
            step,
            content: r.content,
            style: r.style,
            depth: r.depth,
            dog: r.dog,
            total: r.total,
            wall_ms,
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Mean of `total` over the `window` records ending at `step` (1-based).
pub fn moving_average(log: &[LogRecord], step: u64, window: usize) -> Option<f64> {
    let end = log.iter().position(|r| r.step == step)? + 1;
    let start = end.checked_sub(window)?;
    Some(log[start..end].iter().map(|r| r.total).sum::<f64>() / window as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: StyleModel<f32>,
    pub adam: AdamState,
    pub steps: u64,
    pub log: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub encoder_checksum_before: String,
    pub encoder_checksum_after: String,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a Dataset,
    objective: Objective,
    out_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Builds the frozen backbones and caches the style Grams at the dataset
    /// resolution.
    pub fn new(config: TrainConfig, dataset: &'a Dataset, style: &ImageTensor) -> Result<Self> {
        config.validate()?;
        if config.ablations.no_synthetic && dataset.manifest().synthetic_count > 0 {
            return Err(Error::config(
                "no_synthetic ablation requires a dataset without synthetic frames",
            ));
        }
        let (h, w) = dataset.resize_to();
        if (h, w) != (config.resolution, config.resolution) {
            return Err(Error::config(format!(
                "dataset is resized to {h}x{w} but the config trains at {0}x{0}",
                config.resolution
            )));
        }
        let encoder = config.encoder.build()?;
        let target = StyleTarget::new(&encoder, style, Some((h, w)))?;
        let objective = Objective {
            encoder,
            depth: config.depth.build(),
            target,
            weights: config.effective_weights(),
            dog: config.dog,
        };
        Ok(Self {
            config,
            dataset,
            objective,
            out_dir: None,
        })
    }

    /// Directory for the log and checkpoints. Without one nothing is written.
    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn total_steps(&self) -> u64 {
        let per_epoch = self.dataset.batches_per_epoch(self.config.batch_size) as u64;
        self.config
            .max_steps
            .unwrap_or(self.config.epochs * per_epoch)
    }

    fn checkpoint(&self, model: &StyleModel<f32>, adam: &AdamState, step: u64) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.config_hash(),
            step,
            params: model.flat_params(),
            adam: adam.clone(),
        }
    }

    /// Runs to [`Trainer::total_steps`], starting fresh or from `resume`.
    pub fn run(&self, resume: Option<Checkpoint>) -> Result<TrainOutcome> {
        let encoder_checksum_before = self.objective.encoder.checksum();
        let (mut model, mut adam, start) = match resume {
            Some(c) => {
                c.verify_config(&self.config.config_hash())?;
                (c.model()?, c.adam, c.step)
            }
            None => {
                let m = StyleModel::<f32>::build(self.config.seed);
                let n = m.param_count();
                (m, AdamState::new(n), 0)
            }
        };
        let mut log_file = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
                let path = dir.join(LOG_FILE);
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(start > 0)
                    .write(true)
                    .truncate(start == 0)
                    .open(&path)
                    .map_err(Error::io(&path))?;
                Some((f, path))
            }
            None => None,
        };
        let per_epoch = self.dataset.batches_per_epoch(self.config.batch_size) as u64;
        let total = self.total_steps();
        let mut log = Vec::new();
        let mut checkpoints = Vec::new();
        let clock = Instant::now();
        for step in start..total {
            let batch = self.dataset.batch_at(
                step / per_epoch,
                (step % per_epoch) as usize,
                self.config.batch_size,
            )?;
            let result = self.train_step(&mut model, &mut adam, &batch, step + 1);
            let report = match result {
                Ok(r) => r,
                Err(e) => {
                    if let Some(dir) = &self.out_dir {
                        self.checkpoint(&model, &adam, step)
                            .save(&dir.join(LAST_GOOD_CHECKPOINT))?;
                    }
                    return Err(e);
                }
            };
            let record = LogRecord::new(step + 1, &report, clock.elapsed().as_millis() as u64);
            if let Some((f, path)) = &mut log_file {
                writeln!(f, "{}", serde_json::to_string(&record)?)
                    .map_err(Error::io(path.as_path()))?;
            }
            log::debug!("step {} total {:.4}", record.step, record.total);
            log.push(record);
            let every = self.config.checkpoint_every;
            if let Some(dir) = &self.out_dir {
                if every > 0 && (step + 1) % every == 0 {
                    let path = dir.join(checkpoint_name(step + 1));
                    self.checkpoint(&model, &adam, step + 1).save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        if let Some(dir) = &self.out_dir {
            let path = dir.join(FINAL_CHECKPOINT);
            self.checkpoint(&model, &adam, total.max(start))
                .save(&path)?;
            checkpoints.push(path);
        }
        Ok(TrainOutcome {
            model,
            adam,
            steps: total.max(start),
            log,
            checkpoints,
            encoder_checksum_before,
            encoder_checksum_after: self.objective.encoder.checksum(),
        })
    }

    fn train_step(
        &self,
        model: &mut StyleModel<f32>,
        adam: &mut AdamState,
        batch: &[ImageTensor],
        step: u64,
    ) -> Result<LossReport> {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::stack(
            &batch.iter().map(|i| i.to_tensor()).collect::<Vec<_>>(),
        ));
        let params = model.param_vars(&g);
        let yhat = model.forward_with(x, &params)?;
        let terms = self.objective.terms(x, yhat)?;
        let components = terms.components(&self.objective.target.layer_names());
        let report = total_loss(&self.objective.weights, &components).map_err(|e| match e {
            Error::NonFiniteLoss { component, .. } => Error::NonFiniteLoss { component, step },
            other => other,
        })?;
        let grads = g.backward(terms.total);
        let grads: Vec<Tensor<f32>> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
        if !grads.iter().all(|t| t.is_finite()) {
            return Err(Error::NonFiniteLoss {
                component: "gradient".into(),
                step,
            });
        }
        adam.step(
            &self.config.adam,
            self.config.learning_rate,
            &mut model.params_mut(),
            &grads,
        );
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_run_length_only() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            max_steps: Some(5),
            checkpoint_every: 3,
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = TrainConfig {
            weights: LossWeights {
                dog: 1.0,
                ..a.weights
            },
            ..a.clone()
        };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn ablations_zero_their_weight() {
        let c = TrainConfig {
            ablations: Ablations {
                no_dog: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let w = c.effective_weights();
        assert_eq!((w.dog, w.depth), (0.0, 1e3));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"d":2,"c":3}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":3,"d":2},"b":1}"#);
    }
}
