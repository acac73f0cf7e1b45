//! Training: the epoch loop with seeded shuffling, optimizer steps, a full
//! validation pass per epoch, best-epoch weight retention, and patience-based
//! early stopping.

pub mod eval;
pub mod sweep;

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::cross_entropy;
use crate::model::Network;
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::Scalar;
use eval::accuracy;

/// RNG stream id for weight initialization, derived from the run seed.
pub const INIT_STREAM: u64 = 1;
/// RNG stream id for the training loop (shuffling and dropout).
pub const TRAIN_STREAM: u64 = 2;

/// Which validation metric early stopping watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    /// Validation loss; lower is better.
    ValLoss,
    /// Validation accuracy; higher is better.
    ValAcc,
}

impl Monitor {
    pub fn parse(name: &str) -> Result<Monitor> {
        match name {
            "val_loss" => Ok(Monitor::ValLoss),
            "val_acc" => Ok(Monitor::ValAcc),
            other => Err(Error::config(format!(
                "unknown monitor '{other}' (expected val_loss or val_acc)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Monitor::ValLoss => "val_loss",
            Monitor::ValAcc => "val_acc",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Monitor::ValLoss)
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub monitor: Monitor,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub adam_eps_inside_sqrt: bool,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.0003,
            optimizer: OptimizerKind::Adam,
            max_epochs: 100,
            patience: 4,
            seed: 42,
            monitor: Monitor::ValLoss,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            adam_eps_inside_sqrt: adam.eps_inside_sqrt,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be at least 1".to_string()));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("max epochs must be at least 1".to_string()));
        }
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be a positive real, got {}",
                self.learning_rate
            )));
        }
        self.adam_config().validate()?;
        if !(0.0..1.0).contains(&self.rmsprop_rho) {
            return Err(Error::config(format!(
                "rmsprop rho must lie in [0, 1), got {}",
                self.rmsprop_rho
            )));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::config(format!(
                "rmsprop epsilon must be positive, got {}",
                self.rmsprop_epsilon
            )));
        }
        Ok(())
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            eps_inside_sqrt: self.adam_eps_inside_sqrt,
        }
    }

    pub fn build_optimizer<T: Scalar>(&self) -> Optimizer<T> {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.learning_rate),
            OptimizerKind::Adam => Optimizer::adam(self.adam_config()),
            OptimizerKind::RmsProp => {
                Optimizer::rmsprop(self.learning_rate, self.rmsprop_rho, self.rmsprop_epsilon)
            }
        }
    }
}

/// One epoch's metrics. `wall_seconds` is measured, so it is excluded from
/// determinism comparisons and can be stripped for byte-level diffs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc,
            self.wall_seconds
        )
    }
}

/// Renders epoch logs as CSV, with optional `# ` comment lines up front.
pub fn logs_to_csv(logs: &[EpochLog], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(EpochLog::CSV_HEADER);
    out.push('\n');
    for log in logs {
        out.push_str(&log.to_csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The monitored metric failed to improve for `patience` epochs.
    EarlyStop,
    /// The epoch budget ran out first.
    MaxEpochs,
}

impl StopReason {
    pub fn describe(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early stop",
            StopReason::MaxEpochs => "max epochs",
        }
    }
}

/// Result of [`train`]; the network itself holds the best-epoch weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub stop: StopReason,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Monitored metric value at that epoch.
    pub best_value: f64,
}

/// Incremental early-stopping tracker: feed one monitored value per epoch,
/// in order; `observe` answers whether training should halt after it.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    lower_is_better: bool,
    best: Option<f64>,
    best_epoch: usize,
    last_epoch: usize,
}

impl EarlyStop {
    pub fn new(patience: usize, lower_is_better: bool) -> EarlyStop {
        EarlyStop { patience, lower_is_better, best: None, best_epoch: 0, last_epoch: 0 }
    }

    /// Records the next epoch's value. Returns true when the best value is
    /// now `patience` or more epochs old. Only strict improvement resets the
    /// counter, so a plateau at the best value still runs the patience down.
    pub fn observe(&mut self, value: f64) -> bool {
        self.last_epoch += 1;
        let improved = match self.best {
            None => true,
            Some(best) if self.lower_is_better => value < best,
            Some(best) => value > best,
        };
        if improved {
            self.best = Some(value);
            self.best_epoch = self.last_epoch;
        }
        self.last_epoch - self.best_epoch >= self.patience
    }

    /// 1-based epoch of the best value seen so far; 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best
    }

    /// True when the most recent observation set a new best.
    pub fn just_improved(&self) -> bool {
        self.best_epoch == self.last_epoch && self.last_epoch > 0
    }
}

/// Batch form of the early-stopping rule over a lower-is-better series:
/// true when the best value is `patience` or more entries before the end.
pub fn early_stop(values: &[f64], patience: usize) -> bool {
    let mut tracker = EarlyStop::new(patience, true);
    let mut stop = false;
    for &v in values {
        stop = tracker.observe(v);
    }
    stop
}

/// Loss and accuracy of one full pass in eval mode, batched to bound memory.
pub fn validate_pass<T: Scalar>(
    net: &Network<T>,
    set: &Dataset<T>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0.0;
    for chunk in indices.chunks(batch_size) {
        let (images, targets) = set.batch(chunk)?;
        let probs = net.forward(&images)?;
        let ce = cross_entropy(&probs, &targets)?;
        loss_sum += ce.sum.to_f64();
        correct += accuracy(&probs, &chunk.iter().map(|&i| set.labels()[i]).collect::<Vec<_>>())?
            * chunk.len() as f64;
    }
    Ok((loss_sum / set.len() as f64, correct / set.len() as f64))
}

/// Runs the full training loop. Per epoch: seeded shuffle, batch iteration
/// (final partial batch included), one optimizer step per batch, then a full
/// validation pass in eval mode. The network is left holding the weights of
/// the best monitored epoch, not the last one.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty".to_string()));
    }
    if cfg.batch_size > train_set.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {}-sample training set",
            cfg.batch_size,
            train_set.len()
        )));
    }
    for (name, set) in [("training", train_set), ("validation", val_set)] {
        if set.classes() != net.classes() {
            return Err(Error::shape(format!(
                "{name} set has {} classes but the network predicts {}",
                set.classes(),
                net.classes()
            )));
        }
    }

    let mut rng = Rng::derive(cfg.seed, TRAIN_STREAM);
    let mut optimizer: Optimizer<T> = cfg.build_optimizer();
    let mut stopper = EarlyStop::new(cfg.patience, cfg.monitor.lower_is_better());
    let mut logs = Vec::new();
    let mut best_weights = net.snapshot();
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, targets) = train_set.batch(chunk)?;
            let (probs, caches) = net.forward_train(&images, &mut rng)?;
            let ce = cross_entropy(&probs, &targets)?;
            let batch_loss = ce.mean.to_f64();
            if !batch_loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {}",
                    batch_no + 1
                )));
            }
            loss_sum += ce.sum.to_f64();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
            correct += accuracy(&probs, &labels)? * chunk.len() as f64;
            let grads = net.backward(&caches, &ce.grad_logits)?;
            optimizer.step(net.params_mut(), &grads.tensors())?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct / train_set.len() as f64;
        let (val_loss, val_acc) = validate_pass(net, val_set, cfg.batch_size)?;
        logs.push(EpochLog {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        let monitored = match cfg.monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValAcc => val_acc,
        };
        let should_stop = stopper.observe(monitored);
        if stopper.just_improved() {
            best_weights = net.snapshot();
        }
        if should_stop {
            stop = StopReason::EarlyStop;
            break;
        }
    }

    net.restore(&best_weights)?;
    Ok(TrainOutcome {
        logs,
        stop,
        best_epoch: stopper.best_epoch(),
        best_value: stopper.best_value().expect("at least one epoch ran"),
    })
}
