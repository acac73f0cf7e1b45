//! Flat key=value run configuration. A config file sets any subset of keys;
//! `--set key=value` flags override file values; everything is validated
//! before any work starts.

use std::collections::BTreeSet;
use std::path::Path;

use agenet::data::AugmentConfig;
use agenet::error::{Error, Result};
use agenet::model::ModelConfig;
use agenet::optim::OptimizerKind;
use agenet::train::sweep::SweepSpace;
use agenet::train::{Monitor, TrainConfig};

/// Every tunable knob of the pipeline, with the reference values as defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Model architecture. Images are square RGB, so one side length suffices.
    pub input_side: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernel_size: usize,
    pub conv_strides: Vec<usize>,
    pub pool_layers: Vec<usize>,
    pub dropout_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub dense_units: Vec<usize>,
    // Training.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub monitor: Monitor,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub adam_eps_inside_sqrt: bool,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    // Augmentation.
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    // Pipeline.
    pub margin: f64,
    pub mislabel_threshold: f64,
    pub train_frac: f64,
    pub open_bin_age: f64,
    // Sweep axes.
    pub sweep_learning_rate: (f64, f64),
    pub sweep_conv_layers: Vec<usize>,
    pub sweep_conv_filters: Vec<usize>,
    pub sweep_kernel_size: Vec<usize>,
    pub sweep_dense_units: Vec<Vec<usize>>,
    pub sweep_dropout_rate: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let model = ModelConfig::agenet();
        let train = TrainConfig::default();
        let augment = AugmentConfig::default();
        let space = SweepSpace::default();
        RunConfig {
            input_side: model.input_shape.1,
            conv_filters: model.conv_filters,
            conv_kernel_size: model.conv_kernel_size,
            conv_strides: model.conv_strides,
            pool_layers: model.pool_layers.into_iter().collect(),
            dropout_layers: model.dropout_layers.into_iter().collect(),
            dropout_rate: model.dropout_rate,
            dense_units: model.dense_units,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            optimizer: train.optimizer,
            max_epochs: train.max_epochs,
            patience: train.patience,
            monitor: train.monitor,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_epsilon: train.adam_epsilon,
            adam_eps_inside_sqrt: train.adam_eps_inside_sqrt,
            rmsprop_rho: train.rmsprop_rho,
            rmsprop_epsilon: train.rmsprop_epsilon,
            flip_prob: augment.flip_prob,
            max_rotation_deg: augment.max_rotation_deg,
            zoom_min: augment.zoom_range.0,
            zoom_max: augment.zoom_range.1,
            margin: 0.4,
            mislabel_threshold: 0.4,
            train_frac: 0.8,
            open_bin_age: 70.0,
            sweep_learning_rate: space.learning_rate,
            sweep_conv_layers: space.conv_layers,
            sweep_conv_filters: space.conv_filters,
            sweep_kernel_size: space.conv_kernel_size,
            sweep_dense_units: space.dense_units,
            sweep_dropout_rate: space.dropout_rate,
        }
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: expected an integer, got '{value}'")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: expected a number, got '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

/// Comma-separated integers; an empty value means an empty list.
fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|part| parse_usize(key, part.trim())).collect()
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|part| parse_f64(key, part.trim())).collect()
}

/// `lo..hi` range, e.g. `3e-5..1e-2`.
fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| Error::config(format!("{key}: expected lo..hi, got '{value}'")))?;
    Ok((parse_f64(key, lo.trim())?, parse_f64(key, hi.trim())?))
}

/// Semicolon-separated stacks of dash-joined widths, e.g. `256-128;128-64`.
fn parse_stacks(key: &str, value: &str) -> Result<Vec<Vec<usize>>> {
    value
        .split(';')
        .map(|stack| stack.trim().split('-').map(|part| parse_usize(key, part.trim())).collect())
        .collect()
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_side" => self.input_side = parse_usize(key, value)?,
            "conv_filters" => self.conv_filters = parse_usize_list(key, value)?,
            "conv_kernel_size" => self.conv_kernel_size = parse_usize(key, value)?,
            "conv_strides" => self.conv_strides = parse_usize_list(key, value)?,
            "pool_layers" => self.pool_layers = parse_usize_list(key, value)?,
            "dropout_layers" => self.dropout_layers = parse_usize_list(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_f64(key, value)?,
            "dense_units" => self.dense_units = parse_usize_list(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "learning_rate" => self.learning_rate = parse_f64(key, value)?,
            "optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "max_epochs" => self.max_epochs = parse_usize(key, value)?,
            "patience" => self.patience = parse_usize(key, value)?,
            "monitor" => self.monitor = Monitor::parse(value)?,
            "adam_beta1" => self.adam_beta1 = parse_f64(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_f64(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse_f64(key, value)?,
            "adam_eps_inside_sqrt" => self.adam_eps_inside_sqrt = parse_bool(key, value)?,
            "rmsprop_rho" => self.rmsprop_rho = parse_f64(key, value)?,
            "rmsprop_epsilon" => self.rmsprop_epsilon = parse_f64(key, value)?,
            "flip_prob" => self.flip_prob = parse_f64(key, value)?,
            "max_rotation_deg" => self.max_rotation_deg = parse_f64(key, value)?,
            "zoom_min" => self.zoom_min = parse_f64(key, value)?,
            "zoom_max" => self.zoom_max = parse_f64(key, value)?,
            "margin" => self.margin = parse_f64(key, value)?,
            "mislabel_threshold" => self.mislabel_threshold = parse_f64(key, value)?,
            "train_frac" => self.train_frac = parse_f64(key, value)?,
            "open_bin_age" => self.open_bin_age = parse_f64(key, value)?,
            "sweep_learning_rate" => self.sweep_learning_rate = parse_range(key, value)?,
            "sweep_conv_layers" => self.sweep_conv_layers = parse_usize_list(key, value)?,
            "sweep_conv_filters" => self.sweep_conv_filters = parse_usize_list(key, value)?,
            "sweep_kernel_size" => self.sweep_kernel_size = parse_usize_list(key, value)?,
            "sweep_dense_units" => self.sweep_dense_units = parse_stacks(key, value)?,
            "sweep_dropout_rate" => self.sweep_dropout_rate = parse_f64_list(key, value)?,
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a whole config file body (`#` comments and blank lines allowed).
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::format(origin, format!("line {}: expected key=value", idx + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::format(origin, format!("line {}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// One `--set key=value` command-line override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::config(format!("override '{assignment}' is not of the form key=value"))
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let config = ModelConfig {
            input_shape: (3, self.input_side, self.input_side),
            conv_filters: self.conv_filters.clone(),
            conv_kernel_size: self.conv_kernel_size,
            conv_strides: self.conv_strides.clone(),
            pool_layers: self.pool_layers.iter().copied().collect::<BTreeSet<_>>(),
            dropout_layers: self.dropout_layers.iter().copied().collect::<BTreeSet<_>>(),
            dropout_rate: self.dropout_rate,
            dense_units: self.dense_units.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let config = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            monitor: self.monitor,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            adam_eps_inside_sqrt: self.adam_eps_inside_sqrt,
            rmsprop_rho: self.rmsprop_rho,
            rmsprop_epsilon: self.rmsprop_epsilon,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        let config = AugmentConfig {
            flip_prob: self.flip_prob,
            max_rotation_deg: self.max_rotation_deg,
            zoom_range: (self.zoom_min, self.zoom_max),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn sweep_space(&self) -> Result<SweepSpace> {
        let space = SweepSpace {
            learning_rate: self.sweep_learning_rate,
            conv_layers: self.sweep_conv_layers.clone(),
            conv_filters: self.sweep_conv_filters.clone(),
            conv_kernel_size: self.sweep_kernel_size.clone(),
            dense_units: self.sweep_dense_units.clone(),
            dropout_rate: self.sweep_dropout_rate.clone(),
        };
        space.validate()?;
        Ok(space)
    }

    /// Pipeline-level sanity checks shared by every subcommand.
    pub fn validate_pipeline(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.mislabel_threshold) {
            return Err(Error::config(format!(
                "mislabel_threshold must lie in [0, 1], got {}",
                self.mislabel_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.train_frac) {
            return Err(Error::config(format!(
                "train_frac must lie in [0, 1], got {}",
                self.train_frac
            )));
        }
        if !self.open_bin_age.is_finite() {
            return Err(Error::config(format!(
                "open_bin_age must be finite, got {}",
                self.open_bin_age
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_reference_architecture() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.input_side, 256);
        assert_eq!(cfg.conv_filters, vec![64, 128, 256, 512, 1024]);
        assert_eq!(cfg.dense_units, vec![256, 128, 10]);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 0.0003);
        assert_eq!(cfg.patience, 4);
        assert_eq!(cfg.dropout_rate, 0.187);
        assert_eq!(cfg.margin, 0.4);
        assert_eq!(cfg.mislabel_threshold, 0.4);
        assert_eq!(cfg.train_frac, 0.8);
        let model = cfg.model_config().unwrap();
        assert_eq!(model.param_count().unwrap(), 23_082_250);
    }

    #[test]
    fn file_text_overrides_defaults_and_rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nbatch_size = 8\nlearning_rate=0.01\nsweep_dense_units=64-32;32-16\n",
            Path::new("run.cfg"),
        )
        .unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.sweep_dense_units, vec![vec![64, 32], vec![32, 16]]);

        let err = cfg.apply_text("no_such_key=1\n", Path::new("run.cfg")).unwrap_err();
        assert!(err.to_string().contains("no_such_key"), "got: {err}");
        let err = cfg.apply_text("just a line\n", Path::new("run.cfg")).unwrap_err();
        assert!(err.to_string().contains("key=value"), "got: {err}");
    }

    #[test]
    fn overrides_apply_after_file_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("batch_size=8\n", Path::new("run.cfg")).unwrap();
        cfg.apply_override("batch_size=4").unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert!(cfg.apply_override("batch_size").is_err());
    }

    #[test]
    fn range_and_bool_values_parse() {
        let mut cfg = RunConfig::default();
        cfg.set("sweep_learning_rate", "1e-4..1e-2").unwrap();
        assert_eq!(cfg.sweep_learning_rate, (1e-4, 1e-2));
        cfg.set("adam_eps_inside_sqrt", "true").unwrap();
        assert!(cfg.adam_eps_inside_sqrt);
        assert!(cfg.set("adam_eps_inside_sqrt", "yes").is_err());
        assert!(cfg.set("sweep_learning_rate", "0.5").is_err());
    }

    #[test]
    fn invalid_values_are_caught_before_any_work() {
        let mut cfg = RunConfig::default();
        cfg.set("dropout_rate", "1.5").unwrap();
        assert!(cfg.model_config().is_err(), "rate 1.5 must fail model validation");
        let mut cfg = RunConfig::default();
        cfg.set("train_frac", "1.2").unwrap();
        assert!(cfg.validate_pipeline().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("patience", "0").unwrap();
        assert!(cfg.train_config(1).is_err());
    }
}
