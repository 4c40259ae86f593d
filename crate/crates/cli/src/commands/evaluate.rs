use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kiqt_core::ensemble::{combine_members, output_to_magnitude, EnsembleResult};
use kiqt_core::kspace::make_mask;
use kiqt_core::metrics::{error_map, psnr, ssim, write_csv, Method, MetricsRecord};
use kiqt_core::model::{load_checkpoint, UNetModel};
use kiqt_core::tensorio::{write_slice, Domain, ExperimentConfig, IqtDomain, KeyValues, MagnitudeSlice, MaskPattern, StoredSlice};
use kiqt_core::training::{derive_seed, RUN_MANIFEST_FILE};
use log::{info, warn};
use rayon::prelude::*;

use super::train::{fold_dirs, CONFIG_FILE};
use super::{in_pool, EvaluateArgs, MASK_STREAM};
use crate::artifacts::{self, sha256_file, unix_now};
use crate::dataset::{lowfield_baseline, model_input, slice_name, Dataset, SlicePair, DATASET_MANIFEST};
use crate::figures::{Colormap, Figure};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ENSEMBLE_METRICS_FILE: &str = "ensemble_metrics.csv";
pub const EVALUATION_MANIFEST: &str = "evaluation_manifest";

/// Peak of the normalized magnitude images.
const DATA_RANGE: f64 = 1.0;

struct TrainedRun {
    id: String,
    dir: PathBuf,
    config: ExperimentConfig,
    models: Vec<UNetModel<f32>>,
}

impl TrainedRun {
    fn load(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(dir.join(CONFIG_FILE)).with_context(|| format!("run {}", dir.display()))?;
        let manifest = KeyValues::load(dir.join(RUN_MANIFEST_FILE))?;
        let id = match manifest.get("run_id") {
            Some(id) => id.to_string(),
            None => dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned()),
        };
        let mut models = Vec::new();
        for fold in fold_dirs(dir)? {
            let (model, _) = load_checkpoint(&fold).with_context(|| format!("missing checkpoint {}", fold.display()))?;
            if model.config().domain()? != config.iqt_domain {
                bail!("checkpoint {} does not match iqt_domain {}", fold.display(), config.iqt_domain);
            }
            models.push(model);
        }
        if models.is_empty() {
            bail!("run {} has no fold checkpoints", dir.display());
        }
        Ok(TrainedRun { id, dir: dir.to_path_buf(), config, models })
    }

    fn method(&self) -> Method {
        match self.config.iqt_domain {
            IqtDomain::Kspace => Method::Kspace,
            IqtDomain::Spatial => Method::Spatial,
        }
    }

    fn trained_for(&self, pattern: MaskPattern, fraction: f64) -> bool {
        self.config.mask_pattern == pattern && (self.config.sampling_fraction - fraction).abs() < 1e-9
    }
}

/// Per-slice outcome of one run.
struct SliceOutcome {
    member_psnr: Vec<f64>,
    member_ssim: Vec<f64>,
    psnr: f64,
    ssim: f64,
    ensemble: EnsembleResult,
}

fn evaluate_slice(run: &TrainedRun, pair: &SlicePair, mask: &kiqt_core::kspace::SamplingMask) -> Result<SliceOutcome> {
    let domain = run.config.iqt_domain;
    let input = model_input(pair, mask, domain)?;
    let members = run
        .models
        .iter()
        .map(|m| Ok(output_to_magnitude(m.forward(&input)?, domain)?))
        .collect::<Result<Vec<MagnitudeSlice>>>()?;
    let mut member_psnr = Vec::with_capacity(members.len());
    let mut member_ssim = Vec::with_capacity(members.len());
    for m in &members {
        member_psnr.push(psnr(&pair.hf_mag, m, DATA_RANGE)?);
        member_ssim.push(ssim(&pair.hf_mag, m, DATA_RANGE)?);
    }
    let ensemble = combine_members(&members, domain)?;
    Ok(SliceOutcome {
        member_psnr,
        member_ssim,
        psnr: psnr(&pair.hf_mag, &ensemble.mean_image, DATA_RANGE)?,
        ssim: ssim(&pair.hf_mag, &ensemble.mean_image, DATA_RANGE)?,
        ensemble,
    })
}

fn condition_tag(pattern: MaskPattern, fraction: f64) -> String {
    format!("{pattern}_{fraction:.2}")
}

/// Requested conditions, defaulting to those the runs were trained for.
fn conditions(args: &EvaluateArgs, runs: &[TrainedRun]) -> Result<Vec<(MaskPattern, f64)>> {
    let mut patterns = args.patterns.clone();
    let mut fractions = args.fractions.clone();
    for run in runs {
        if args.patterns.is_empty() && !patterns.contains(&run.config.mask_pattern) {
            patterns.push(run.config.mask_pattern);
        }
        if args.fractions.is_empty() && !fractions.iter().any(|f| (f - run.config.sampling_fraction).abs() < 1e-9) {
            fractions.push(run.config.sampling_fraction);
        }
    }
    if patterns.is_empty() || fractions.is_empty() {
        bail!("no --pattern/--fraction given and no runs to take them from");
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        bail!("sampling fraction {f} outside (0, 1]");
    }
    Ok(patterns.iter().flat_map(|&p| fractions.iter().map(move |&f| (p, f))).collect())
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let started = unix_now();
    let data = Dataset::open(&args.data)?;
    let (h, w) = data.size();
    if args.figure_slice >= data.len() {
        bail!("--figure-slice {} out of range for {} slices", args.figure_slice, data.len());
    }
    let runs = args.runs.iter().map(|d| TrainedRun::load(d)).collect::<Result<Vec<_>>>()?;
    let conditions = conditions(args, &runs)?;
    let pairs = data.load_all()?;

    let dirs = ["masks", "figures", "recon"].map(|d| args.out.join(d));
    for d in &dirs {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let [mask_dir, figure_dir, recon_dir] = dirs;

    let mut manifest = KeyValues::new();
    manifest.insert("kind", "evaluation");
    manifest.insert("data.path", data.root().display());
    manifest.insert("data.manifest_sha256", sha256_file(&data.root().join(DATASET_MANIFEST))?);
    manifest.insert("data.regime", data.manifest().get("regime").unwrap_or("unknown"));
    manifest.insert("mask_seed", args.seed);
    manifest.insert("figure_slice", args.figure_slice);
    for (k, run) in runs.iter().enumerate() {
        manifest.insert(format!("run_{k}.id"), &run.id);
        manifest.insert(format!("run_{k}.path"), run.dir.display());
        manifest.insert(format!("run_{k}.config_hash"), run.config.hash());
        manifest.insert(format!("run_{k}.members"), run.models.len());
    }

    let mut pooled = Vec::new();
    let mut ensembled = Vec::new();
    let mut files = Vec::new();
    for &(pattern, fraction) in &conditions {
        let tag = condition_tag(pattern, fraction);
        let mask = make_mask(pattern, h, w, fraction, derive_seed(args.seed, MASK_STREAM))?;
        manifest.insert(format!("condition.{tag}.achieved_fraction"), mask.achieved_fraction);
        let mask_path = mask_dir.join(format!("{tag}.kiqt"));
        write_slice(&mask.to_stored(), &mask_path)?;
        files.push(mask_path);

        let baselines = in_pool(args.single_thread, || {
            pairs.par_iter().map(|p| lowfield_baseline(p, &mask)).collect::<Result<Vec<_>>>()
        })??;
        let mut lf_psnr = Vec::with_capacity(pairs.len());
        let mut lf_ssim = Vec::with_capacity(pairs.len());
        for (pair, lf) in pairs.iter().zip(&baselines) {
            lf_psnr.push(psnr(&pair.hf_mag, lf, DATA_RANGE)?);
            lf_ssim.push(ssim(&pair.hf_mag, lf, DATA_RANGE)?);
        }
        let lf_record = MetricsRecord::from_values(pattern, fraction, Method::LowField, &lf_psnr, &lf_ssim)?;
        pooled.push(lf_record.clone());
        ensembled.push(lf_record);

        let shown = &pairs[args.figure_slice];
        let mut recon_panels = vec![shown.hf_mag.data().clone(), baselines[args.figure_slice].data().clone()];
        let mut error_panels = vec![error_map(&shown.hf_mag, &baselines[args.figure_slice])?];
        let mut std_panels = Vec::new();
        let mut labels = vec!["HF".to_string(), "LF".to_string()];

        for run in runs.iter() {
            if !run.trained_for(pattern, fraction) {
                warn!("skipping run {} at {tag}: trained for {} at {:.2}", run.id, run.config.mask_pattern, run.config.sampling_fraction);
                continue;
            }
            info!("evaluating run {} at {tag} on {} slices", run.id, pairs.len());
            let outcomes = in_pool(args.single_thread, || {
                pairs.par_iter().map(|p| evaluate_slice(run, p, &mask)).collect::<Result<Vec<_>>>()
            })??;
            let method = run.method();
            let members = run.models.len();
            // Pooled over (member, slice) pairs, member-major.
            let pick = |f: fn(&SliceOutcome) -> &Vec<f64>| -> Vec<f64> {
                (0..members).flat_map(|m| outcomes.iter().map(move |o| f(o)[m])).collect()
            };
            pooled.push(MetricsRecord::from_values(
                pattern,
                fraction,
                method,
                &pick(|o| &o.member_psnr),
                &pick(|o| &o.member_ssim),
            )?);
            let ens_psnr: Vec<f64> = outcomes.iter().map(|o| o.psnr).collect();
            let ens_ssim: Vec<f64> = outcomes.iter().map(|o| o.ssim).collect();
            ensembled.push(MetricsRecord::from_values(pattern, fraction, method, &ens_psnr, &ens_ssim)?);

            let out_dir = recon_dir.join(&tag).join(&run.id);
            fs::create_dir_all(&out_dir)?;
            for (i, o) in outcomes.iter().enumerate() {
                let mean = out_dir.join(format!("{}_mean.kiqt", slice_name(i)));
                let std = out_dir.join(format!("{}_std.kiqt", slice_name(i)));
                write_slice(&o.ensemble.mean_image.clone().into(), &mean)?;
                let plane = StoredSlice::Plane { domain: Domain::Image, data: o.ensemble.std_map.clone(), scale: 1.0 };
                write_slice(&plane, &std)?;
                files.extend([mean, std]);
            }
            let shown_out = &outcomes[args.figure_slice].ensemble;
            recon_panels.push(shown_out.mean_image.data().clone());
            error_panels.push(error_map(&shown.hf_mag, &shown_out.mean_image)?);
            std_panels.push(shown_out.std_map.clone());
            labels.push(format!("{}:{}", method.as_str(), run.id));
        }

        let mut figures = vec![
            ("recon", Figure { panels: recon_panels, range: (0.0, 1.0), colormap: Colormap::Gray }, labels.clone()),
            ("error", Figure::nonnegative(error_panels, Colormap::Inferno), labels[1..].to_vec()),
        ];
        if !std_panels.is_empty() {
            figures.push(("uncertainty", Figure::nonnegative(std_panels, Colormap::Inferno), labels[2..].to_vec()));
        }
        for (name, figure, panel_labels) in figures {
            let path = figure_dir.join(format!("{tag}_{name}.png"));
            figure.save(&path)?;
            manifest.insert(format!("figure.{tag}_{name}.panels"), panel_labels.join(", "));
            manifest.insert(format!("figure.{tag}_{name}.range"), format!("{}, {}", figure.range.0, figure.range.1));
            files.push(path);
        }
    }

    let metrics_path = args.out.join(METRICS_FILE);
    let ensemble_path = args.out.join(ENSEMBLE_METRICS_FILE);
    fs::write(&metrics_path, write_csv(&pooled)).with_context(|| format!("writing {}", metrics_path.display()))?;
    fs::write(&ensemble_path, write_csv(&ensembled)).with_context(|| format!("writing {}", ensemble_path.display()))?;
    files.extend([metrics_path, ensemble_path]);
    manifest.insert("started_unix", started);
    manifest.insert("finished_unix", unix_now());
    artifacts::record(&mut manifest, &args.out, &files)?;
    manifest.save(args.out.join(EVALUATION_MANIFEST))?;

    println!("{:<10} {:>8} {:<6} {:>18} {:>16}", "pattern", "fraction", "method", "PSNR", "SSIM");
    for r in &ensembled {
        println!(
            "{:<10} {:>8.2} {:<6} {:>9.4} ± {:<6.4} {:>7.4} ± {:<6.4}",
            r.pattern.as_str(),
            r.fraction,
            r.method.as_str(),
            r.psnr_mean,
            r.psnr_std,
            r.ssim_mean,
            r.ssim_std
        );
    }
    Ok(())
}
