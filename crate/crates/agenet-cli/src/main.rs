//! Batch front door for the age-estimation pipeline:
//! stats -> preprocess -> split -> (sweep | train) -> filter -> evaluate -> predict.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 I/O error,
//! 3 numerical failure. Every failure prints one diagnostic line to stderr.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use agenet::data::augment::augment;
use agenet::data::bins::BinScheme;
use agenet::data::image::{self, RgbImage};
use agenet::data::manifest::{Manifest, ManifestKind, SampleRecord};
use agenet::data::{filter_mislabelled, load_dataset, preprocess_image, Dataset};
use agenet::error::{Error, ErrorKind, Result};
use agenet::loss::ProbBatch;
use agenet::model::{io as weights_io, Network};
use agenet::rng::Rng;
use agenet::tensor::{Shape, Tensor};
use agenet::train::eval::{cross_bin_eval, expected_ages, ConfusionMatrix, MidpointTable};
use agenet::train::sweep::{results_to_csv, sweep};
use agenet::train::{logs_to_csv, train, INIT_STREAM};

use config::RunConfig;

/// Stream namespace for per-image augmentation; keeps augmentation draws
/// disjoint from the init/train streams regardless of dataset size.
const AUGMENT_STREAM_BASE: u64 = 1000;

#[derive(Parser)]
#[command(name = "agenet", version, about = "Age estimation pipeline", disable_help_subcommand = true)]
struct Cli {
    /// Root seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (falls back to AGENET_JOBS, then all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Inline config override, repeatable (e.g. --set batch_size=8).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summary statistics and a per-bin histogram for a manifest.
    Stats {
        manifest: PathBuf,
        /// Treat the manifest as processed (path,age,class,source).
        #[arg(long)]
        processed: bool,
        /// Bin scheme for the histogram.
        #[arg(long, default_value = "training")]
        scheme: String,
        /// Write the histogram CSV here instead of stdout.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Crop, resize, and bin every raw-manifest image into an output directory.
    Preprocess {
        manifest: PathBuf,
        outdir: PathBuf,
        /// Processed manifest path (default: <outdir>/manifest.csv).
        #[arg(long)]
        out_manifest: Option<PathBuf>,
    },
    /// Seeded shuffle-and-split of a manifest into train/holdout parts.
    Split {
        manifest: PathBuf,
        train_out: PathBuf,
        holdout_out: PathBuf,
        /// Treat the manifest as processed (path,age,class,source).
        #[arg(long)]
        processed: bool,
    },
    /// Train a network on processed manifests and save the best-epoch weights.
    Train {
        train_manifest: PathBuf,
        val_manifest: PathBuf,
        /// Output weights file.
        #[arg(long, default_value = "weights.agenet")]
        weights_out: PathBuf,
        /// Epoch log CSV path.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Expand the training set with augmented copies.
        #[arg(long)]
        augment: bool,
        /// Augmented copies added per training image.
        #[arg(long, default_value_t = 1)]
        augment_copies: usize,
    },
    /// Random hyperparameter search; every trial trains to early stopping.
    Sweep {
        train_manifest: PathBuf,
        val_manifest: PathBuf,
        /// Number of random trials.
        #[arg(long, default_value_t = 8)]
        budget: usize,
        /// Ranked results CSV.
        #[arg(long, default_value = "sweep_results.csv")]
        out: PathBuf,
        /// Directory for per-trial epoch logs.
        #[arg(long, default_value = "sweep_logs")]
        logs_dir: PathBuf,
    },
    /// Drop samples whose labelled bin (±1) gets too little predicted mass.
    Filter {
        weights: PathBuf,
        manifest: PathBuf,
        /// Manifest of samples that survive the filter.
        #[arg(long, default_value = "kept.csv")]
        kept: PathBuf,
        /// Manifest of samples removed by the filter.
        #[arg(long, default_value = "removed.csv")]
        removed: PathBuf,
    },
    /// Accuracy, one-off accuracy, and a confusion matrix on a processed manifest.
    Evaluate {
        weights: PathBuf,
        manifest: PathBuf,
        /// Score against a foreign bin scheme via expected ages.
        #[arg(long)]
        scheme: Option<String>,
        /// Confusion matrix CSV path.
        #[arg(long, default_value = "confusion.csv")]
        confusion: PathBuf,
    },
    /// Per-bin probabilities and the expected age for one image.
    Predict { weights: PathBuf, image: PathBuf },
    /// Export one conv block's activations as PGM images.
    FeatureMaps {
        weights: PathBuf,
        image: PathBuf,
        /// Conv block to tap, 1-based.
        layer: usize,
        outdir: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; usage errors are
            // validation failures (clap's own default would collide with
            // the I/O exit code).
            use clap::error::ErrorKind as ClapKind;
            let code = match e.kind() {
                ClapKind::DisplayHelp | ClapKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("agenet: {e}");
        std::process::exit(match e.kind() {
            ErrorKind::Validation => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        });
    }
}

fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs.or_else(|| {
        std::env::var("AGENET_JOBS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::config("--jobs must be at least 1".to_string()));
        }
        // Ignore the error: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.overrides {
        cfg.apply_override(assignment)?;
    }
    cfg.validate_pipeline()?;

    let seed = cli.seed;
    match cli.command {
        Command::Stats { manifest, processed, scheme, histogram } => {
            cmd_stats(&cfg, seed, &manifest, processed, &scheme, histogram.as_deref())
        }
        Command::Preprocess { manifest, outdir, out_manifest } => {
            cmd_preprocess(&cfg, seed, &manifest, &outdir, out_manifest.as_deref())
        }
        Command::Split { manifest, train_out, holdout_out, processed } => {
            cmd_split(&cfg, seed, &manifest, &train_out, &holdout_out, processed)
        }
        Command::Train { train_manifest, val_manifest, weights_out, log, augment, augment_copies } => {
            cmd_train(&cfg, seed, &train_manifest, &val_manifest, &weights_out, log.as_deref(), augment, augment_copies)
        }
        Command::Sweep { train_manifest, val_manifest, budget, out, logs_dir } => {
            cmd_sweep(&cfg, seed, &train_manifest, &val_manifest, budget, &out, &logs_dir)
        }
        Command::Filter { weights, manifest, kept, removed } => {
            cmd_filter(&cfg, seed, &weights, &manifest, &kept, &removed)
        }
        Command::Evaluate { weights, manifest, scheme, confusion } => {
            cmd_evaluate(&cfg, seed, &weights, &manifest, scheme.as_deref(), &confusion)
        }
        Command::Predict { weights, image } => cmd_predict(&cfg, seed, &weights, &image),
        Command::FeatureMaps { weights, image, layer, outdir } => {
            cmd_feature_maps(seed, &weights, &image, layer, &outdir)
        }
    }
}

/// Writes a whole file via a same-directory temp file and an atomic rename,
/// so a failure never leaves a partial output behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write as _;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn seed_comment(seed: u64) -> Vec<String> {
    vec![format!("seed: {seed}")]
}

fn manifest_kind(processed: bool) -> ManifestKind {
    if processed { ManifestKind::Processed } else { ManifestKind::Raw }
}

fn cmd_stats(
    cfg: &RunConfig,
    seed: u64,
    path: &Path,
    processed: bool,
    scheme_name: &str,
    histogram: Option<&Path>,
) -> Result<()> {
    let scheme = BinScheme::parse(scheme_name)?;
    let manifest = Manifest::read(path, manifest_kind(processed))?;
    if manifest.is_empty() {
        return Err(Error::data(format!("manifest {} has no records", path.display())));
    }
    let stats = manifest.stats(&scheme);

    println!("# seed: {seed}");
    println!("records {}", stats.count);
    println!("mean_age {:.4}", stats.mean_age);
    println!("std_age {:.4}", stats.std_age);
    println!("unbinned {}", stats.unbinned);

    let mut csv = String::new();
    csv.push_str(&format!("# seed: {seed}\n"));
    csv.push_str("bin,count\n");
    for (label, count) in scheme.labels().iter().zip(&stats.bin_counts) {
        csv.push_str(&format!("{label},{count}\n"));
    }
    match histogram {
        Some(out) => write_atomic(out, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let _ = cfg;
    Ok(())
}

fn cmd_preprocess(
    cfg: &RunConfig,
    seed: u64,
    manifest_path: &Path,
    outdir: &Path,
    out_manifest: Option<&Path>,
) -> Result<()> {
    use rayon::prelude::*;

    let raw = Manifest::read(manifest_path, ManifestKind::Raw)?;
    if raw.is_empty() {
        return Err(Error::data(format!("manifest {} has no records", manifest_path.display())));
    }
    let scheme = BinScheme::training();
    let comments = seed_comment(seed);

    // Process everything before writing anything, so a bad input cannot
    // leave a half-populated output directory behind.
    let processed: Vec<(String, u32, usize, String, Vec<u8>)> = raw
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let img = preprocess_image(&raw, rec, cfg.margin, cfg.input_side)?;
            let class = scheme.assign(rec.age)?;
            let name = format!("{i:05}.ppm");
            Ok((name, rec.age, class, rec.source.clone(), img.encode_ppm(&comments)))
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut records = Vec::with_capacity(processed.len());
    for (name, age, class, source, bytes) in processed {
        write_atomic(&outdir.join(&name), &bytes)?;
        records.push(SampleRecord { path: name, age, bbox: None, class: Some(class), source });
    }
    let count = records.len();
    let manifest = Manifest::new(ManifestKind::Processed, records)?;
    let out_path = match out_manifest {
        Some(p) => p.to_path_buf(),
        None => outdir.join("manifest.csv"),
    };
    // The manifest is written last: its presence marks a complete run.
    write_atomic(&out_path, manifest.to_csv(&comments).as_bytes())?;
    println!("processed {count} images into {}", outdir.display());
    Ok(())
}

fn cmd_split(
    cfg: &RunConfig,
    seed: u64,
    manifest_path: &Path,
    train_out: &Path,
    holdout_out: &Path,
    processed: bool,
) -> Result<()> {
    let manifest = Manifest::read(manifest_path, manifest_kind(processed))?;
    let (train_part, holdout_part) = manifest.split(seed, cfg.train_frac)?;
    let comments = seed_comment(seed);
    write_atomic(train_out, train_part.to_csv(&comments).as_bytes())?;
    write_atomic(holdout_out, holdout_part.to_csv(&comments).as_bytes())?;
    println!("split {} records into {} train / {} holdout", manifest.len(), train_part.len(), holdout_part.len());
    Ok(())
}

/// Loads a processed manifest, optionally adding `copies` augmented variants
/// after each original. Copy c of image i draws from its own derived stream,
/// so the result is independent of iteration order and worker count.
fn load_training_set(
    manifest: &Manifest,
    classes: usize,
    cfg: &RunConfig,
    seed: u64,
    copies: usize,
) -> Result<Dataset<f64>> {
    if copies == 0 {
        return Err(Error::config("--augment-copies must be at least 1".to_string()));
    }
    let aug_cfg = cfg.augment_config()?;
    let mut images = Vec::with_capacity(manifest.len() * (copies + 1));
    let mut labels = Vec::with_capacity(manifest.len() * (copies + 1));
    for (i, rec) in manifest.records().iter().enumerate() {
        let class = rec
            .class
            .ok_or_else(|| Error::data(format!("record {} carries no class index", rec.path)))?;
        let img = RgbImage::read_ppm(&manifest.resolve(rec))?;
        images.push(img.to_tensor());
        labels.push(class);
        for c in 0..copies {
            let stream = AUGMENT_STREAM_BASE + (i * copies + c) as u64;
            let mut rng = Rng::derive(seed, stream);
            images.push(augment(&img, &aug_cfg, &mut rng)?.to_tensor());
            labels.push(class);
        }
    }
    Dataset::new(images, labels, classes)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &RunConfig,
    seed: u64,
    train_manifest: &Path,
    val_manifest: &Path,
    weights_out: &Path,
    log: Option<&Path>,
    augment_flag: bool,
    augment_copies: usize,
) -> Result<()> {
    let model = cfg.model_config()?;
    let train_cfg = cfg.train_config(seed)?;
    let classes = model.classes();

    let train_mf = Manifest::read(train_manifest, ManifestKind::Processed)?;
    let val_mf = Manifest::read(val_manifest, ManifestKind::Processed)?;
    let train_set = if augment_flag {
        load_training_set(&train_mf, classes, cfg, seed, augment_copies)?
    } else {
        load_dataset::<f64>(&train_mf, classes)?
    };
    let val_set = load_dataset::<f64>(&val_mf, classes)?;

    let mut net: Network<f64> = Network::build(model, &mut Rng::derive(seed, INIT_STREAM))?;
    let outcome = train(&mut net, &train_set, &val_set, &train_cfg)?;

    write_atomic(weights_out, &weights_io::encode(&net))?;
    if let Some(log_path) = log {
        write_atomic(log_path, logs_to_csv(&outcome.logs, &seed_comment(seed)).as_bytes())?;
    }
    println!(
        "trained {} epochs ({}), best {} {:.6} at epoch {}",
        outcome.logs.len(),
        outcome.stop.describe(),
        train_cfg.monitor.name(),
        outcome.best_value,
        outcome.best_epoch
    );
    println!("weights written to {}", weights_out.display());
    Ok(())
}

fn cmd_sweep(
    cfg: &RunConfig,
    seed: u64,
    train_manifest: &Path,
    val_manifest: &Path,
    budget: usize,
    out: &Path,
    logs_dir: &Path,
) -> Result<()> {
    let base_model = cfg.model_config()?;
    let base_train = cfg.train_config(seed)?;
    let space = cfg.sweep_space()?;
    let classes = base_model.classes();

    let train_mf = Manifest::read(train_manifest, ManifestKind::Processed)?;
    let val_mf = Manifest::read(val_manifest, ManifestKind::Processed)?;
    let train_set = load_dataset::<f64>(&train_mf, classes)?;
    let val_set = load_dataset::<f64>(&val_mf, classes)?;

    let results = sweep(&base_model, &base_train, &space, budget, seed, &train_set, &val_set)?;

    let comments = seed_comment(seed);
    for trial in &results {
        let log_path = logs_dir.join(format!("trial{:03}.csv", trial.trial));
        write_atomic(&log_path, logs_to_csv(&trial.outcome.logs, &comments).as_bytes())?;
    }
    write_atomic(out, results_to_csv(&results, &comments).as_bytes())?;

    let best = &results[0];
    println!(
        "swept {budget} trials; best trial {} reached val accuracy {:.4} (lr {:.6e}, {} conv layers)",
        best.trial,
        best.best_val_acc,
        best.train.learning_rate,
        best.model.conv_layers()
    );
    println!("results written to {}", out.display());
    Ok(())
}

/// Forward-passes a whole dataset in eval mode, batched to bound memory,
/// and returns one probability row per sample.
fn predict_dataset(net: &Network<f64>, set: &Dataset<f64>, batch_size: usize) -> Result<ProbBatch<f64>> {
    let mut data = Vec::with_capacity(set.len() * net.classes());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, _) = set.batch(chunk)?;
        let probs = net.forward(&images)?;
        for i in 0..chunk.len() {
            data.extend_from_slice(probs.row(i));
        }
    }
    ProbBatch::from_tensor(Tensor::from_vec(Shape::new(vec![set.len(), net.classes()])?, data)?)
}

fn cmd_filter(
    cfg: &RunConfig,
    seed: u64,
    weights: &Path,
    manifest_path: &Path,
    kept_out: &Path,
    removed_out: &Path,
) -> Result<()> {
    let net: Network<f64> = weights_io::load(weights)?;
    let manifest = Manifest::read(manifest_path, ManifestKind::Processed)?;
    let set = load_dataset::<f64>(&manifest, net.classes())?;
    let probs = predict_dataset(&net, &set, cfg.batch_size)?;
    let keep = filter_mislabelled(&probs, set.labels(), cfg.mislabel_threshold)?;

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (rec, &keep_it) in manifest.records().iter().zip(&keep) {
        if keep_it {
            kept.push(rec.clone());
        } else {
            removed.push(rec.clone());
        }
    }
    let kept_n = kept.len();
    let removed_n = removed.len();
    let comments = seed_comment(seed);
    // Record paths are copied through unchanged, so the output manifests
    // stay valid when written next to the input manifest.
    let kept_mf = Manifest::new(ManifestKind::Processed, kept)?;
    let removed_mf = Manifest::new(ManifestKind::Processed, removed)?;
    write_atomic(kept_out, kept_mf.to_csv(&comments).as_bytes())?;
    write_atomic(removed_out, removed_mf.to_csv(&comments).as_bytes())?;
    println!("kept {kept_n} records, removed {removed_n} (threshold {})", cfg.mislabel_threshold);
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    seed: u64,
    weights: &Path,
    manifest_path: &Path,
    scheme: Option<&str>,
    confusion_out: &Path,
) -> Result<()> {
    let net: Network<f64> = weights_io::load(weights)?;
    let manifest = Manifest::read(manifest_path, ManifestKind::Processed)?;
    let set = load_dataset::<f64>(&manifest, net.classes())?;
    let probs = predict_dataset(&net, &set, cfg.batch_size)?;

    let mut matrix = ConfusionMatrix::new(net.classes())?;
    for i in 0..set.len() {
        let row = probs.row(i);
        let pred = agenet::tensor::argmax(row);
        matrix.record(set.labels()[i], pred)?;
    }
    let training = BinScheme::training();
    let mut csv = format!("# seed: {seed}\n");
    csv.push_str(&matrix.to_csv(&training.labels())?);
    write_atomic(confusion_out, csv.as_bytes())?;

    println!("# seed: {seed}");
    println!("samples {}", set.len());
    println!("accuracy {:.3}", matrix.accuracy());
    println!("one_off {:.3}", matrix.one_off_accuracy());

    if let Some(name) = scheme {
        let foreign = BinScheme::parse(name)?;
        let table = MidpointTable::new(&training, cfg.open_bin_age)?;
        let ages = expected_ages(&probs, &table)?;

        // Re-label records under the foreign scheme; ages in its gaps
        // cannot be scored and are reported instead.
        let mut pred_ages = Vec::new();
        let mut labels = Vec::new();
        let mut skipped = 0usize;
        for (i, rec) in manifest.records().iter().enumerate() {
            match foreign.assign(rec.age) {
                Ok(label) => {
                    pred_ages.push(ages[i]);
                    labels.push(label);
                }
                Err(_) => skipped += 1,
            }
        }
        if pred_ages.is_empty() {
            return Err(Error::data(format!(
                "no record ages fall inside the '{}' scheme's bins",
                foreign.name()
            )));
        }
        let scores = cross_bin_eval(&pred_ages, &labels, &foreign)?;
        println!("scheme {}", foreign.name());
        println!("scored {} (skipped {skipped} gap ages)", scores.count);
        println!("exact={:.3}", scores.exact);
        println!("one_off={:.3}", scores.one_off);
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, seed: u64, weights: &Path, image_path: &Path) -> Result<()> {
    let net: Network<f64> = weights_io::load(weights)?;
    let img = RgbImage::read_ppm(image_path)?;
    let (_, h, w) = net.config.input_shape;
    let img = if img.width() == w && img.height() == h {
        img
    } else {
        image::resize_bilinear(&img, w, h)?
    };
    let plane: Tensor<f64> = img.to_tensor();
    let mut dims = vec![1];
    dims.extend_from_slice(plane.dims());
    let batch = plane.reshape(Shape::new(dims)?)?;
    let probs = net.forward(&batch)?;

    let training = BinScheme::training();
    let table = MidpointTable::new(&training, cfg.open_bin_age)?;
    let ages = expected_ages(&probs, &table)?;

    println!("# seed: {seed}");
    let labels = training.labels();
    for (j, &p) in probs.row(0).iter().enumerate() {
        // The training scheme labels the 10 outputs; a custom class count
        // would leave extra rows labelled by index alone.
        let label = labels.get(j).cloned().unwrap_or_else(|| format!("class{j}"));
        println!("{label} {p:.9}");
    }
    println!("expected_age {:.4}", ages[0]);
    Ok(())
}

fn cmd_feature_maps(
    seed: u64,
    weights: &Path,
    image_path: &Path,
    layer: usize,
    outdir: &Path,
) -> Result<()> {
    let net: Network<f64> = weights_io::load(weights)?;
    let img = RgbImage::read_ppm(image_path)?;
    let (_, h, w) = net.config.input_shape;
    let img = if img.width() == w && img.height() == h {
        img
    } else {
        image::resize_bilinear(&img, w, h)?
    };
    let maps = net.feature_maps(&img.to_tensor(), layer)?;
    let dims = maps.dims().to_vec();
    let (channels, mh, mw) = (dims[0], dims[1], dims[2]);

    let comments = seed_comment(seed);
    let plane = mh * mw;
    for ch in 0..channels {
        let gray = image::normalize_to_u8(&maps.data()[ch * plane..(ch + 1) * plane]);
        let bytes = image::encode_pgm(mw, mh, &gray, &comments)?;
        write_atomic(&outdir.join(format!("layer{layer}_ch{ch:03}.pgm")), &bytes)?;
    }
    println!("wrote {channels} {mw}x{mh} feature maps for conv block {layer} to {}", outdir.display());
    Ok(())
}
