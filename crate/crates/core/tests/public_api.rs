use kiqt_core::degrade::{make_pair, ParamPrior};
use kiqt_core::ensemble::{ensemble_predict, kspace_tensor, ReconInput};
use kiqt_core::kspace::{fft2c, ifft2c, make_mask};
use kiqt_core::model::{load_checkpoint, save_checkpoint, UNetConfig, UNetModel};
use kiqt_core::phantom::brain_phantom;
use kiqt_core::tensorio::{read_slice, write_slice, ExperimentConfig, IqtDomain, KeyValues, MaskPattern, StoredSlice};
use kiqt_core::training::{train_ensemble, TrainOptions, TrainingSet};

fn tiny_set(n: u64) -> (TrainingSet, Vec<kiqt_core::degrade::TrainingPair>) {
    let mask = make_mask(MaskPattern::PseudoRadial, 16, 16, 0.5, 0).unwrap();
    let prior = ParamPrior::in_distribution();
    let pairs: Vec<_> = (0..n).map(|i| make_pair(&brain_phantom(16, 16, i).unwrap(), &prior, &mask, 100 + i).unwrap()).collect();
    let xs = pairs.iter().map(|p| kspace_tensor(&p.input).unwrap()).collect();
    let ys = pairs.iter().map(|p| kspace_tensor(&p.target).unwrap()).collect();
    (TrainingSet::new(xs, ys).unwrap(), pairs)
}

#[test]
fn slices_survive_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let hf = brain_phantom(32, 32, 4).unwrap();
    let k = fft2c(&kiqt_core::tensorio::ComplexSlice::from_magnitude(&hf)).unwrap();
    let path = dir.path().join("k.kiqt");
    write_slice(&StoredSlice::from(k.clone()), &path).unwrap();
    let back = read_slice(&path).unwrap().into_complex().unwrap();
    assert_eq!(back, k);
    let img = ifft2c(&back).unwrap().magnitude();
    let err = img.iter().zip(hf.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn training_is_reproducible_and_checkpoints_reload() {
    let (set, pairs) = tiny_set(9);
    let config = ExperimentConfig { epochs: 2, batch_size: 2, ..ExperimentConfig::default() };
    let unet = UNetConfig::with_widths(IqtDomain::Kspace, [4, 4, 8], 8);
    let dir = tempfile::tempdir().unwrap();
    let options = TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), single_thread: true, ..TrainOptions::new(unet) };
    let first = train_ensemble(&config, &set, &options).unwrap();
    let second = train_ensemble(&config, &set, &TrainOptions { checkpoint_dir: None, ..options.clone() }).unwrap();
    assert_eq!(first.len(), 3);
    for ((m1, r1), (m2, r2)) in first.iter().zip(&second) {
        assert_eq!(r1.train_loss, r2.train_loss);
        assert_eq!(r1.val_loss, r2.val_loss);
        assert_eq!(m1.params(), m2.params());
    }

    let models: Vec<UNetModel<f32>> = (0..3)
        .map(|k| load_checkpoint(dir.path().join(format!("fold_{k}"))).unwrap().0)
        .collect();
    for (loaded, (trained, _)) in models.iter().zip(&first) {
        assert_eq!(loaded.params(), trained.params());
    }
    let result = ensemble_predict(&models, ReconInput::Kspace(&pairs[0].input)).unwrap();
    assert_eq!(result.member_count, 3);
    assert!(result.std_map.iter().all(|&s| s >= 0.0));
    assert!(result.std_map.iter().any(|&s| s > 0.0));
}

#[test]
fn checkpoint_extra_keys_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = UNetModel::<f32>::new(UNetConfig::reduced(IqtDomain::Spatial), 3).unwrap();
    let mut extra = KeyValues::new();
    extra.insert("fold_index", 2);
    save_checkpoint(&model, dir.path(), &extra).unwrap();
    let (back, kv) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(kv.get("fold_index"), Some("2"));
}
