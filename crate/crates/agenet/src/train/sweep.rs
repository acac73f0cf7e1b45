//! Random hyperparameter search: uniform draws from per-axis candidate sets
//! (log-uniform for the learning rate), one independent training run per
//! draw, results ranked by best validation accuracy.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::rng::Rng;
use crate::tensor::Scalar;
use crate::train::{train, TrainConfig, TrainOutcome, INIT_STREAM};

/// Candidate sets (and the learning-rate range) the search draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpace {
    /// Log-uniform sampling range, inclusive of both endpoints.
    pub learning_rate: (f64, f64),
    /// How many conv layers the sampled stack has.
    pub conv_layers: Vec<usize>,
    /// First-layer filter count; later layers double it per layer.
    pub conv_filters: Vec<usize>,
    pub conv_kernel_size: Vec<usize>,
    /// Hidden dense widths; the class count is appended automatically.
    pub dense_units: Vec<Vec<usize>>,
    pub dropout_rate: Vec<f64>,
}

impl Default for SweepSpace {
    fn default() -> SweepSpace {
        SweepSpace {
            learning_rate: (3e-5, 1e-2),
            conv_layers: vec![3, 4, 5],
            conv_filters: vec![16, 32, 64],
            conv_kernel_size: vec![3],
            dense_units: vec![vec![256, 128]],
            dropout_rate: vec![0.1, 0.187, 0.3],
        }
    }
}

impl SweepSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config(format!(
                "learning-rate range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        for (axis, empty) in [
            ("conv_layers", self.conv_layers.is_empty()),
            ("conv_filters", self.conv_filters.is_empty()),
            ("conv_kernel_size", self.conv_kernel_size.is_empty()),
            ("dense_units", self.dense_units.is_empty()),
            ("dropout_rate", self.dropout_rate.is_empty()),
        ] {
            if empty {
                return Err(Error::config(format!("sweep axis {axis} has no candidates")));
            }
        }
        if self.conv_layers.iter().any(|&n| n == 0) {
            return Err(Error::config("conv layer counts must be at least 1".to_string()));
        }
        if self.dense_units.iter().any(|stack| stack.is_empty()) {
            return Err(Error::config("dense candidates need at least one hidden width".to_string()));
        }
        Ok(())
    }

    /// Draws one configuration. Draw order is fixed (learning rate, layer
    /// count, base filters, kernel size, dense stack, dropout rate, trial
    /// seed) so a given stream always yields the same trial.
    pub fn sample(
        &self,
        base_model: &ModelConfig,
        base_train: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<(ModelConfig, TrainConfig)> {
        let (lo, hi) = self.learning_rate;
        // The draw happens unconditionally to keep the stream aligned; a
        // degenerate range returns its endpoint without the ln/exp roundtrip.
        let log_draw = rng.uniform(lo.ln(), hi.ln());
        let learning_rate = if lo == hi { lo } else { log_draw.exp() };
        let layers = *rng.choose(&self.conv_layers);
        let base_filters = *rng.choose(&self.conv_filters);
        let kernel = *rng.choose(&self.conv_kernel_size);
        let hidden = rng.choose(&self.dense_units).clone();
        let dropout = *rng.choose(&self.dropout_rate);
        let seed = rng.next_u64();

        let classes = *base_model.dense_units.last().expect("validated config has dense layers");
        let first_stride = base_model.conv_strides.first().copied().unwrap_or(1);
        let mut strides = vec![1; layers];
        strides[0] = first_stride;
        let mut dense_units = hidden;
        dense_units.push(classes);
        let model = ModelConfig {
            input_shape: base_model.input_shape,
            // The reference pattern: filter counts double per layer.
            conv_filters: (0..layers).map(|i| base_filters << i).collect(),
            conv_kernel_size: kernel,
            conv_strides: strides,
            // Every block pools except the last; every block drops out.
            pool_layers: (1..layers).collect::<BTreeSet<_>>(),
            dropout_layers: (1..=layers).collect::<BTreeSet<_>>(),
            dropout_rate: dropout,
            dense_units,
        };
        model.validate()?;
        let train = TrainConfig { learning_rate, seed, ..base_train.clone() };
        train.validate()?;
        Ok((model, train))
    }
}

/// One completed trial, with everything needed to reproduce or rank it.
#[derive(Debug, Clone)]
pub struct TrialResult {
    /// Draw index within the sweep, 0-based.
    pub trial: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub outcome: TrainOutcome,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
}

/// Runs `budget` independent trials and returns them ranked by best
/// validation accuracy (descending), ties broken by trial index. Trials run
/// in parallel; each draws from its own derived stream, so results do not
/// depend on scheduling.
pub fn sweep<T: Scalar>(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    space: &SweepSpace,
    budget: usize,
    seed: u64,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
) -> Result<Vec<TrialResult>> {
    if budget < 1 {
        return Err(Error::config("sweep budget must be at least 1".to_string()));
    }
    space.validate()?;
    base_model.validate()?;

    let samples: Vec<(ModelConfig, TrainConfig)> = (0..budget)
        .map(|t| space.sample(base_model, base_train, &mut Rng::derive(seed, t as u64)))
        .collect::<Result<_>>()?;

    let mut results: Vec<TrialResult> = samples
        .into_par_iter()
        .enumerate()
        .map(|(trial, (model, train_cfg))| {
            let mut net: Network<T> =
                Network::build(model.clone(), &mut Rng::derive(train_cfg.seed, INIT_STREAM))?;
            let outcome = train(&mut net, train_set, val_set, &train_cfg)?;
            let best_val_acc = outcome
                .logs
                .iter()
                .map(|l| l.val_acc)
                .fold(f64::NEG_INFINITY, f64::max);
            let best_val_loss =
                outcome.logs.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
            Ok(TrialResult { trial, model, train: train_cfg, outcome, best_val_acc, best_val_loss })
        })
        .collect::<Result<_>>()?;

    results.sort_by(|a, b| {
        b.best_val_acc
            .partial_cmp(&a.best_val_acc)
            .expect("accuracies are finite")
            .then(a.trial.cmp(&b.trial))
    });
    Ok(results)
}

fn join_dash<I: IntoIterator<Item = usize>>(xs: I) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-")
}

/// One CSV row per trial: sampled hyperparameters plus the headline metrics.
pub fn results_to_csv(results: &[TrialResult], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(
        "trial,learning_rate,conv_layers,conv_filters,conv_kernel_size,dense_units,\
         dropout_rate,optimizer,batch_size,trial_seed,epochs_run,best_epoch,best_val_acc,best_val_loss\n",
    );
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.trial,
            r.train.learning_rate,
            r.model.conv_filters.len(),
            join_dash(r.model.conv_filters.iter().copied()),
            r.model.conv_kernel_size,
            join_dash(r.model.dense_units.iter().copied()),
            r.model.dropout_rate,
            r.train.optimizer.name(),
            r.train.batch_size,
            r.train.seed,
            r.outcome.logs.len(),
            r.outcome.best_epoch,
            r.best_val_acc,
            r.best_val_loss,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn base_model() -> ModelConfig {
        ModelConfig {
            input_shape: (3, 8, 8),
            conv_filters: vec![2],
            conv_kernel_size: 3,
            conv_strides: vec![1],
            pool_layers: BTreeSet::new(),
            dropout_layers: BTreeSet::new(),
            dropout_rate: 0.0,
            dense_units: vec![8, 10],
        }
    }

    fn base_train() -> TrainConfig {
        TrainConfig {
            batch_size: 5,
            max_epochs: 2,
            patience: 2,
            ..TrainConfig::default()
        }
    }

    fn point_space() -> SweepSpace {
        SweepSpace {
            learning_rate: (1e-3, 1e-3),
            conv_layers: vec![1],
            conv_filters: vec![2],
            conv_kernel_size: vec![3],
            dense_units: vec![vec![8]],
            dropout_rate: vec![0.0],
        }
    }

    fn tiny_dataset() -> Dataset<f64> {
        let shape = Shape::new(vec![3, 8, 8]).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for class in 0..10usize {
            let mut data = vec![class as f64 / 9.0; 64];
            data.extend(vec![(9 - class) as f64 / 9.0; 64]);
            data.extend(vec![(class % 3) as f64 / 2.0; 64]);
            images.push(Tensor::from_vec(shape.clone(), data).unwrap());
            labels.push(class);
        }
        Dataset::new(images, labels, 10).unwrap()
    }

    #[test]
    fn degenerate_space_yields_identical_configs() {
        let data = tiny_dataset();
        let results =
            sweep(&base_model(), &base_train(), &point_space(), 3, 11, &data, &data).unwrap();
        assert_eq!(results.len(), 3);
        for r in &results {
            assert_eq!(r.model, results[0].model);
            assert_eq!(r.train.learning_rate, 1e-3);
        }
        let seeds: BTreeSet<u64> = results.iter().map(|r| r.train.seed).collect();
        assert_eq!(seeds.len(), 3, "each trial still trains under its own derived seed");
    }

    #[test]
    fn sweep_is_reproducible_for_a_fixed_seed() {
        let data = tiny_dataset();
        let run =
            || sweep(&base_model(), &base_train(), &point_space(), 3, 17, &data, &data).unwrap();
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trial, y.trial);
            assert_eq!(x.best_val_acc, y.best_val_acc);
            assert_eq!(x.best_val_loss, y.best_val_loss);
            assert_eq!(x.train.seed, y.train.seed);
        }
    }

    #[test]
    fn learning_rates_stay_inside_the_log_uniform_bounds() {
        let space = SweepSpace::default();
        let base = ModelConfig::agenet();
        let train = TrainConfig::default();
        for t in 0..200 {
            let (_, cfg) = space.sample(&base, &train, &mut Rng::derive(5, t)).unwrap();
            assert!(
                (3e-5..=1e-2).contains(&cfg.learning_rate),
                "draw {t} escaped the range: {}",
                cfg.learning_rate
            );
        }
    }

    #[test]
    fn sampled_models_pool_everywhere_but_the_last_block() {
        let mut space = point_space();
        space.conv_layers = vec![3];
        let (model, _) =
            space.sample(&base_model(), &base_train(), &mut Rng::derive(1, 0)).unwrap();
        assert_eq!(model.conv_filters, vec![2, 4, 8], "filters double per layer");
        assert_eq!(model.pool_layers, BTreeSet::from([1, 2]));
        assert_eq!(model.dropout_layers, BTreeSet::from([1, 2, 3]));
        assert_eq!(*model.dense_units.last().unwrap(), 10, "class count survives");
    }

    #[test]
    fn results_are_sorted_by_validation_accuracy() {
        let data = tiny_dataset();
        let mut space = point_space();
        space.learning_rate = (1e-6, 1e-2);
        let results =
            sweep(&base_model(), &base_train(), &space, 4, 23, &data, &data).unwrap();
        for pair in results.windows(2) {
            assert!(
                pair[0].best_val_acc >= pair[1].best_val_acc,
                "ranking must be non-increasing"
            );
        }
    }

    #[test]
    fn sweep_rejects_empty_axes_and_zero_budget() {
        let data = tiny_dataset();
        let mut space = point_space();
        space.dropout_rate.clear();
        assert!(sweep(&base_model(), &base_train(), &space, 1, 1, &data, &data).is_err());
        assert!(
            sweep(&base_model(), &base_train(), &point_space(), 0, 1, &data, &data).is_err()
        );
    }

    #[test]
    fn results_csv_lists_one_row_per_trial() {
        let data = tiny_dataset();
        let results =
            sweep(&base_model(), &base_train(), &point_space(), 2, 31, &data, &data).unwrap();
        let csv = results_to_csv(&results, &["seed: 31".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4, "comment + header + 2 trials");
        assert!(lines[0].starts_with("# seed: 31"));
        assert!(lines[1].starts_with("trial,learning_rate,conv_layers,conv_filters"));
        assert!(lines[2].contains("8-10"), "dense stack is dash-joined");
    }
}
