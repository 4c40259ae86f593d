//! Cross-validated training: seeded fold partition, AdamW, per-epoch
//! validation with best-checkpoint selection, and the multi-fold driver.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{combined_loss, combined_loss_grad, save_checkpoint, LossWeights, UNetConfig, UNetModel};
use crate::tensorio::{ExperimentConfig, KeyValues};
use crate::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest";
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Mixes a base seed with a stream tag (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Paired network inputs and targets, indexed by slice id.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    inputs: Vec<Array3<f32>>,
    targets: Vec<Array3<f32>>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Array3<f32>>, targets: Vec<Array3<f32>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
        }
        if let Some(first) = inputs.first() {
            let dim = first.dim();
            if inputs.iter().chain(&targets).any(|a| a.dim() != dim) {
                return Err(Error::Shape(format!("all tensors must share shape {dim:?}")));
            }
        }
        Ok(TrainingSet { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, id: usize) -> &Array3<f32> {
        &self.inputs[id]
    }

    pub fn target(&self, id: usize) -> &Array3<f32> {
        &self.targets[id]
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub train_slice_ids: Vec<usize>,
    pub val_slice_ids: Vec<usize>,
    pub derived_seed: u64,
}

/// Shuffles `slice_ids` under `seed` and cuts them into `folds` contiguous
/// validation blocks whose sizes differ by at most one (earlier blocks take
/// the remainder). Fold `i` validates on block `i` and trains on the rest.
pub fn make_folds(slice_ids: &[usize], folds: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if slice_ids.len() < folds {
        return Err(Error::InvalidArgument(format!("{} slices cannot fill {folds} folds", slice_ids.len())));
    }
    let mut ids = slice_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, rem) = (ids.len() / folds, ids.len() % folds);
    let mut start = 0;
    let mut plans = Vec::with_capacity(folds);
    for k in 0..folds {
        let end = start + base + usize::from(k < rem);
        let val = ids[start..end].to_vec();
        let train = ids[..start].iter().chain(&ids[end..]).copied().collect();
        plans.push(FoldPlan {
            fold_index: k,
            train_slice_ids: train,
            val_slice_ids: val,
            derived_seed: derive_seed(seed, k as u64 + 1),
        });
        start = end;
    }
    Ok(plans)
}

/// Degenerate plan for a single model: every slice is used for training and
/// for model selection.
pub fn single_fold_plan(slice_ids: &[usize], seed: u64) -> Result<FoldPlan> {
    if slice_ids.is_empty() {
        return Err(Error::InvalidArgument("no training slices".into()));
    }
    Ok(FoldPlan {
        fold_index: 0,
        train_slice_ids: slice_ids.to_vec(),
        val_slice_ids: slice_ids.to_vec(),
        derived_seed: derive_seed(seed, 1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss of the initial model over the training block.
    pub initial_train_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch of the lowest validation loss.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub wall_time: Duration,
}

/// Run-level settings that are not part of the experiment configuration.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub unet: UNetConfig,
    pub loss: LossWeights,
    /// Where `fold_k/` checkpoints go; nothing is written when `None`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Run on a dedicated one-thread pool.
    pub single_thread: bool,
}

impl TrainOptions {
    pub fn new(unet: UNetConfig) -> Self {
        TrainOptions { unet, loss: LossWeights::default(), checkpoint_dir: None, single_thread: false }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, weight_decay, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
            let w = f64::from(*p);
            *p = (w - self.lr * (update + self.weight_decay * w)) as f32;
        }
    }
}

fn mean_loss(model: &UNetModel<f32>, data: &TrainingSet, ids: &[usize], weights: LossWeights) -> Result<f64> {
    let losses: Vec<f64> = ids
        .par_iter()
        .map(|&id| Ok(f64::from(combined_loss(&model.forward(data.input(id))?, data.target(id), weights)?)))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / ids.len().max(1) as f64)
}

/// Mean loss and mean gradient over one mini-batch. Per-sample gradients
/// are summed in batch order, so the result does not depend on threading.
fn batch_gradient(model: &UNetModel<f32>, data: &TrainingSet, batch: &[usize], weights: LossWeights) -> Result<(f64, Vec<f64>)> {
    let per_sample: Vec<(f32, Vec<f32>)> = batch
        .par_iter()
        .map(|&id| model.loss_and_grad(data.input(id), |out| combined_loss_grad(out, data.target(id), weights)))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0f64; model.param_count()];
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += f64::from(*l);
        for (acc, &v) in grad.iter_mut().zip(g) {
            *acc += f64::from(v);
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

fn in_pool<T: Send>(single_thread: bool, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if single_thread {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(job)
    } else {
        job()
    }
}

fn fold_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("fold_{k}"))
}

fn save_fold(model: &UNetModel<f32>, dir: &Path, plan: &FoldPlan, epoch: Option<usize>, val: Option<f64>) -> Result<()> {
    let mut extra = KeyValues::new();
    extra.insert("fold_index", plan.fold_index);
    extra.insert("fold_seed", plan.derived_seed);
    extra.insert("best_epoch", epoch.map_or("none".to_string(), |e| e.to_string()));
    extra.insert("best_val_loss", val.map_or("none".to_string(), |v| v.to_string()));
    save_checkpoint(model, dir, &extra)
}

/// Trains one fold and returns its lowest-validation-loss weights.
pub fn train_fold(
    plan: &FoldPlan,
    config: &ExperimentConfig,
    data: &TrainingSet,
    options: &TrainOptions,
) -> Result<(UNetModel<f32>, TrainReport)> {
    config.validate()?;
    if plan.train_slice_ids.is_empty() || plan.val_slice_ids.is_empty() {
        return Err(Error::InvalidArgument("fold needs training and validation slices".into()));
    }
    if let Some(&bad) = plan.train_slice_ids.iter().chain(&plan.val_slice_ids).find(|&&id| id >= data.len()) {
        return Err(Error::InvalidArgument(format!("slice id {bad} out of range for {} slices", data.len())));
    }
    in_pool(options.single_thread, || {
        let started = Instant::now();
        let mut model = UNetModel::<f32>::new(options.unet, plan.derived_seed)?;
        let initial_train_loss = mean_loss(&model, data, &plan.train_slice_ids, options.loss)?;
        let ckpt = options.checkpoint_dir.as_ref().map(|d| fold_dir(d, plan.fold_index));
        let mut best = model.clone();
        let mut report = TrainReport {
            initial_train_loss,
            train_loss: Vec::with_capacity(config.epochs),
            val_loss: Vec::with_capacity(config.epochs),
            best_epoch: None,
            best_val_loss: None,
            wall_time: Duration::ZERO,
        };
        let mut adam = AdamW::new(model.param_count(), config.learning_rate, config.weight_decay);
        let mut order = plan.train_slice_ids.clone();
        for epoch in 0..config.epochs {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(plan.derived_seed, 1000 + epoch as u64)));
            let mut epoch_loss = 0.0;
            let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
            for (b, batch) in batches.iter().enumerate() {
                let (loss, grad) = batch_gradient(&model, data, batch, options.loss)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                adam.step(model.params_mut(), &grad);
                epoch_loss += loss * batch.len() as f64;
            }
            report.train_loss.push(epoch_loss / order.len() as f64);
            let val = mean_loss(&model, data, &plan.val_slice_ids, options.loss)?;
            if !val.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batches.len() });
            }
            report.val_loss.push(val);
            if report.best_val_loss.is_none_or(|b| val < b) {
                report.best_val_loss = Some(val);
                report.best_epoch = Some(epoch);
                best = model.clone();
                if let Some(dir) = &ckpt {
                    save_fold(&best, dir, plan, Some(epoch), Some(val))?;
                }
            }
        }
        if config.epochs == 0 {
            if let Some(dir) = &ckpt {
                save_fold(&best, dir, plan, None, None)?;
            }
        }
        report.wall_time = started.elapsed();
        Ok((best, report))
    })
}

/// Trains one model per fold (one model on everything when `folds == 1`)
/// and, with a checkpoint directory, writes `fold_k/` checkpoints plus a
/// run manifest.
pub fn train_ensemble(
    config: &ExperimentConfig,
    data: &TrainingSet,
    options: &TrainOptions,
) -> Result<Vec<(UNetModel<f32>, TrainReport)>> {
    config.validate()?;
    if options.unet.domain()? != config.iqt_domain {
        return Err(Error::Config(format!(
            "network has {} input channels but iqt_domain is {}",
            options.unet.in_channels,
            config.iqt_domain.as_str()
        )));
    }
    let ids = data.ids();
    let plans = if config.folds == 1 { vec![single_fold_plan(&ids, config.seed)?] } else { make_folds(&ids, config.folds, config.seed)? };
    let results = plans
        .iter()
        .map(|plan| train_fold(plan, config, data, options))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &options.checkpoint_dir {
        run_manifest(config, options, &plans, &results).save(dir.join(RUN_MANIFEST_FILE))?;
    }
    Ok(results)
}

fn run_manifest(
    config: &ExperimentConfig,
    options: &TrainOptions,
    plans: &[FoldPlan],
    results: &[(UNetModel<f32>, TrainReport)],
) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.insert("config_hash", config.hash());
    for (k, v) in config.to_key_values().iter() {
        kv.insert(format!("config.{k}"), v);
    }
    kv.insert("unet.encoder_channels", options.unet.encoder_channels.map(|c| c.to_string()).join(","));
    kv.insert("unet.bottleneck_channels", options.unet.bottleneck_channels);
    kv.insert("loss.mae_weight", options.loss.mae);
    kv.insert("loss.mse_weight", options.loss.mse);
    kv.insert("fold_count", plans.len());
    for (plan, (_, report)) in plans.iter().zip(results) {
        let k = plan.fold_index;
        kv.insert(format!("fold_{k}.seed"), plan.derived_seed);
        kv.insert(format!("fold_{k}.train_slices"), plan.train_slice_ids.len());
        kv.insert(format!("fold_{k}.val_slices"), plan.val_slice_ids.len());
        kv.insert(format!("fold_{k}.best_epoch"), report.best_epoch.map_or("none".to_string(), |e| e.to_string()));
        kv.insert(format!("fold_{k}.best_val_loss"), report.best_val_loss.map_or("none".to_string(), |v| v.to_string()));
    }
    kv
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::Rng;

    use super::*;
    use crate::model::load_checkpoint;
    use crate::tensorio::IqtDomain;

    #[test]
    fn fold_sizes_for_4000_slices() {
        let ids: Vec<usize> = (0..4000).collect();
        let plans = make_folds(&ids, 3, 1).unwrap();
        let mut sizes: Vec<usize> = plans.iter().map(|p| p.val_slice_ids.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1333, 1333, 1334]);
        let mut all = HashSet::new();
        for p in &plans {
            assert_eq!(p.train_slice_ids.len() + p.val_slice_ids.len(), 4000);
            let train: HashSet<_> = p.train_slice_ids.iter().collect();
            assert!(p.val_slice_ids.iter().all(|v| !train.contains(v)));
            for v in &p.val_slice_ids {
                assert!(all.insert(*v), "validation blocks overlap");
            }
        }
        assert_eq!(all.len(), 4000);
        assert_eq!(make_folds(&ids, 3, 1).unwrap(), plans);
        assert_ne!(make_folds(&ids, 3, 2).unwrap(), plans);
    }

    #[test]
    fn fold_errors() {
        assert!(make_folds(&[0, 1], 3, 0).is_err());
        assert!(make_folds(&[0, 1, 2], 1, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: HashSet<u64> = (0..100).map(|k| derive_seed(7, k)).collect();
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        // bias correction makes the first update exactly lr * sign(g) (up to eps)
        let mut p = vec![1.0f32, -1.0, 0.5];
        let mut opt = AdamW::new(3, 0.01, 0.0);
        opt.step(&mut p, &[2.0, -0.5, 1e-3]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-6);
        assert!((p[2] - 0.49).abs() < 1e-4);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut p = vec![2.0f32];
        let mut opt = AdamW::new(1, 0.1, 0.5);
        opt.step(&mut p, &[0.0]);
        // zero gradient: only the decay term acts, w -= lr * wd * w
        assert!((p[0] - 1.9).abs() < 1e-6);
    }

    /// Learnable toy task: map a random image to a blurred, scaled copy.
    fn toy_set(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let x = Array3::from_shape_fn((1, 16, 16), |_| rng.random_range(0.0f32..1.0));
            let t = Array3::from_shape_fn((1, 16, 16), |(_, i, j)| {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for di in -1i32..=1 {
                    for dj in -1i32..=1 {
                        let (a, b) = (i as i32 + di, j as i32 + dj);
                        if (0..16).contains(&a) && (0..16).contains(&b) {
                            acc += x[[0, a as usize, b as usize]];
                            cnt += 1.0;
                        }
                    }
                }
                0.5 * acc / cnt
            });
            inputs.push(x);
            targets.push(t);
        }
        TrainingSet::new(inputs, targets).unwrap()
    }

    fn toy_config(epochs: usize) -> ExperimentConfig {
        ExperimentConfig { iqt_domain: IqtDomain::Spatial, epochs, batch_size: 5, folds: 2, ..ExperimentConfig::default() }
    }

    #[test]
    fn toy_training_halves_loss() {
        let data = toy_set(50, 3);
        let plans = make_folds(&data.ids(), 2, 0).unwrap();
        let opts = TrainOptions { single_thread: true, ..TrainOptions::new(UNetConfig::reduced(IqtDomain::Spatial)) };
        let (_, report) = train_fold(&plans[0], &toy_config(20), &data, &opts).unwrap();
        assert_eq!(report.train_loss.len(), 20);
        let last = *report.train_loss.last().unwrap();
        assert!(last <= 0.5 * report.initial_train_loss, "{report:?}");
        let min = report.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, Some(min));
        assert_eq!(report.val_loss[report.best_epoch.unwrap()], min);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = toy_set(6, 4);
        let plans = make_folds(&data.ids(), 2, 0).unwrap();
        let opts = TrainOptions::new(UNetConfig::reduced(IqtDomain::Spatial));
        let (model, report) = train_fold(&plans[0], &toy_config(0), &data, &opts).unwrap();
        let fresh = UNetModel::<f32>::new(opts.unet, plans[0].derived_seed).unwrap();
        assert_eq!(model.params(), fresh.params());
        assert!(report.train_loss.is_empty() && report.val_loss.is_empty());
        assert_eq!(report.best_epoch, None);
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy_set(10, 5);
        let plans = make_folds(&data.ids(), 2, 9).unwrap();
        let opts = TrainOptions { single_thread: true, ..TrainOptions::new(UNetConfig::reduced(IqtDomain::Spatial)) };
        let (a, ra) = train_fold(&plans[1], &toy_config(2), &data, &opts).unwrap();
        let (b, rb) = train_fold(&plans[1], &toy_config(2), &data, &opts).unwrap();
        assert_eq!(ra.best_val_loss, rb.best_val_loss);
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn non_finite_loss_names_epoch_and_batch() {
        let mut data = toy_set(6, 6);
        data.targets[0][[0, 0, 0]] = f32::NAN;
        let plan = FoldPlan { fold_index: 0, train_slice_ids: vec![1, 0, 2], val_slice_ids: vec![3], derived_seed: 0 };
        let mut cfg = toy_config(1);
        cfg.batch_size = 1;
        let opts = TrainOptions::new(UNetConfig::reduced(IqtDomain::Spatial));
        match train_fold(&plan, &cfg, &data, &opts) {
            Err(Error::NonFiniteLoss { epoch: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ensemble_writes_checkpoints_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_set(9, 7);
        let mut cfg = toy_config(1);
        cfg.folds = 3;
        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::new(UNetConfig::reduced(IqtDomain::Spatial))
        };
        let results = train_ensemble(&cfg, &data, &opts).unwrap();
        assert_eq!(results.len(), 3);
        for (k, (model, _)) in results.iter().enumerate() {
            let (loaded, _) = load_checkpoint(dir.path().join(format!("fold_{k}"))).unwrap();
            assert_eq!(loaded.params(), model.params());
        }
        let kv = KeyValues::load(dir.path().join(RUN_MANIFEST_FILE)).unwrap();
        assert_eq!(kv.get("config_hash"), Some(cfg.hash().as_str()));
        assert_eq!(kv.get("fold_count"), Some("3"));

        cfg.folds = 1;
        assert_eq!(train_ensemble(&cfg, &data, &TrainOptions::new(opts.unet)).unwrap().len(), 1);
    }

    #[test]
    fn config_hash_tracks_every_field() {
        let base = ExperimentConfig::default();
        let mut variants = vec![base.clone()];
        let mut c = base.clone();
        c.sampling_fraction = 0.3;
        variants.push(c);
        let mut c = base.clone();
        c.iqt_domain = IqtDomain::Spatial;
        variants.push(c);
        let mut c = base.clone();
        c.epochs = 149;
        variants.push(c);
        let mut c = base.clone();
        c.seed = 1;
        variants.push(c);
        let mut c = base.clone();
        c.weight_decay = 0.0;
        variants.push(c);
        let hashes: HashSet<String> = variants.iter().map(ExperimentConfig::hash).collect();
        assert_eq!(hashes.len(), variants.len());
        assert_eq!(base.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn network_domain_must_match_config() {
        let data = toy_set(4, 1);
        let cfg = toy_config(0);
        let opts = TrainOptions::new(UNetConfig::reduced(IqtDomain::Kspace));
        assert!(train_ensemble(&cfg, &data, &opts).is_err());
    }
}
