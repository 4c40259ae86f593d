use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kiqt_core::kspace::{make_mask, SamplingMask};
use kiqt_core::model::{MANIFEST_FILE, WEIGHTS_FILE};
use kiqt_core::tensorio::{write_slice, ExperimentConfig, KeyValues};
use kiqt_core::training::{derive_seed, train_ensemble, TrainOptions, TrainingSet, RUN_MANIFEST_FILE};
use log::info;

use super::{TrainArgs, MASK_STREAM};
use crate::artifacts::{self, sha256_file, unix_now};
use crate::dataset::{model_input, model_target, Dataset, DATASET_MANIFEST};

pub const CONFIG_FILE: &str = "config";
pub const MASK_FILE: &str = "mask.kiqt";

/// The training mask for `config` on `h x w` slices.
pub fn training_mask(config: &ExperimentConfig, h: usize, w: usize) -> Result<SamplingMask> {
    Ok(make_mask(config.mask_pattern, h, w, config.sampling_fraction, derive_seed(config.seed, MASK_STREAM))?)
}

pub fn default_run_id(config: &ExperimentConfig) -> String {
    format!(
        "{}_{}_{:.2}_seed{}",
        config.iqt_domain, config.mask_pattern, config.sampling_fraction, config.seed
    )
}

fn resolve_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("config {}", path.display()))?,
        None => args.profile.default_config(),
    };
    if let Some(p) = args.pattern {
        config.mask_pattern = p;
    }
    if let Some(f) = args.fraction {
        config.sampling_fraction = f;
    }
    if let Some(d) = args.domain {
        config.iqt_domain = d;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(k) = args.folds {
        config.folds = k;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let started = unix_now();
    let config = resolve_config(args)?;
    let data = Dataset::open(&args.data)?;
    let (h, w) = data.size();
    let mask = training_mask(&config, h, w)?;
    let domain = config.iqt_domain;

    let pairs = data.load_all()?;
    let inputs = pairs.iter().map(|p| model_input(p, &mask, domain)).collect::<Result<Vec<_>>>()?;
    let targets = pairs.iter().map(|p| model_target(p, domain)).collect::<Result<Vec<_>>>()?;
    drop(pairs);
    let set = TrainingSet::new(inputs, targets)?;
    if config.folds > set.len() {
        bail!("{} folds need at least as many slices, dataset has {}", config.folds, set.len());
    }

    let run_id = args.run_id.clone().unwrap_or_else(|| default_run_id(&config));
    let run_dir = args.out.join(&run_id);
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    config.save(run_dir.join(CONFIG_FILE))?;
    write_slice(&mask.to_stored(), run_dir.join(MASK_FILE))?;

    let unet = args.profile.unet(domain);
    let options = TrainOptions {
        checkpoint_dir: Some(run_dir.clone()),
        single_thread: args.single_thread,
        ..TrainOptions::new(unet)
    };
    info!(
        "training {} folds x {} epochs on {} slices ({} parameters)",
        config.folds,
        config.epochs,
        set.len(),
        unet.param_count()
    );
    let results = train_ensemble(&config, &set, &options)?;

    let manifest_path = run_dir.join(RUN_MANIFEST_FILE);
    let mut manifest = KeyValues::load(&manifest_path)?;
    manifest.insert("run_id", &run_id);
    manifest.insert("profile", args.profile.as_str());
    manifest.insert("data.path", data.root().display());
    manifest.insert("data.manifest_sha256", sha256_file(&data.root().join(DATASET_MANIFEST))?);
    manifest.insert("data.slice_count", data.len());
    manifest.insert("mask.achieved_fraction", mask.achieved_fraction);
    for (k, (_, report)) in results.iter().enumerate() {
        manifest.insert(format!("fold_{k}.initial_train_loss"), report.initial_train_loss);
        if let Some(last) = report.train_loss.last() {
            manifest.insert(format!("fold_{k}.final_train_loss"), last);
        }
    }
    manifest.insert("started_unix", started);
    manifest.insert("finished_unix", unix_now());
    artifacts::record(&mut manifest, &run_dir, &run_artifacts(&run_dir, results.len()))?;
    manifest.save(&manifest_path)?;

    println!(
        "run {run_id}: {}, {} profile, {} at {:.2}",
        config.iqt_domain.method_label(),
        args.profile.as_str(),
        config.mask_pattern,
        config.sampling_fraction
    );
    println!("{:>5} {:>12} {:>14} {:>10}", "fold", "best_epoch", "best_val_loss", "seconds");
    for (k, (_, report)) in results.iter().enumerate() {
        println!(
            "{:>5} {:>12} {:>14} {:>10.1}",
            k,
            report.best_epoch.map_or("-".to_string(), |e| e.to_string()),
            report.best_val_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
            report.wall_time.as_secs_f64()
        );
    }
    Ok(())
}

fn run_artifacts(run_dir: &Path, folds: usize) -> Vec<PathBuf> {
    let mut files = vec![run_dir.join(CONFIG_FILE), run_dir.join(MASK_FILE)];
    for k in 0..folds {
        let fold = run_dir.join(format!("fold_{k}"));
        files.push(fold.join(MANIFEST_FILE));
        files.push(fold.join(WEIGHTS_FILE));
    }
    files
}

/// Fold checkpoint directories listed in a run manifest.
pub fn fold_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = KeyValues::load(run_dir.join(RUN_MANIFEST_FILE))
        .with_context(|| format!("no trained run at {}", run_dir.display()))?;
    let count: usize = manifest.parse_value("fold_count")?;
    Ok((0..count).map(|k| run_dir.join(format!("fold_{k}"))).collect())
}
