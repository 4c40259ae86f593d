use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use kiqt_core::degrade::{sample_params, simulate_lowfield, ParamPrior};
use kiqt_core::kspace::fft2c;
use kiqt_core::phantom::brain_phantom;
use kiqt_core::tensorio::{ingest_volume, write_slice, ComplexSlice, KeyValues, MagnitudeSlice};
use kiqt_core::training::derive_seed;
use log::info;
use rayon::prelude::*;

use super::{in_pool, SimulateArgs, DEGRADE_STREAM, PHANTOM_STREAM};
use crate::artifacts::{self, sha256_file};
use crate::dataset::{slice_name, DATASET_MANIFEST, HF_K, HF_MAG, LF_K, LF_MAG};

pub fn run(args: &SimulateArgs) -> Result<()> {
    let prior = match &args.prior {
        Some(path) => ParamPrior::from_key_values(&KeyValues::load(path)?)
            .with_context(|| format!("prior {}", path.display()))?,
        None => ParamPrior::for_regime(args.regime),
    };
    let mut manifest = KeyValues::new();
    manifest.insert("kind", "dataset");
    manifest.insert("regime", prior.regime.as_str());
    manifest.insert("seed", args.seed);

    let sources = match args.phantom {
        Some(0) => bail!("--phantom must be positive"),
        Some(n) => {
            manifest.insert("source", "phantom");
            let base = derive_seed(args.seed, PHANTOM_STREAM);
            in_pool(args.single_thread, || {
                (0..n)
                    .into_par_iter()
                    .map(|i| brain_phantom(args.size, args.size, derive_seed(base, i as u64)))
                    .collect::<kiqt_core::Result<Vec<_>>>()
            })??
        }
        None => {
            manifest.insert("source", "volume");
            manifest.insert("slices", format!("{}:{}", args.slices.start, args.slices.end));
            let mut all = Vec::new();
            for (k, path) in args.volume.iter().enumerate() {
                manifest.insert(format!("volume_{k}.path"), path.display());
                manifest.insert(format!("volume_{k}.sha256"), sha256_file(path)?);
                all.extend(ingest_volume(path, args.slices.clone()).with_context(|| format!("volume {}", path.display()))?);
            }
            all
        }
    };
    let (h, w) = sources[0].dim();
    manifest.insert("height", h);
    manifest.insert("width", w);
    manifest.insert("slice_count", sources.len());
    for (k, v) in prior.to_key_values().iter() {
        manifest.insert(format!("prior.{k}"), v);
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let base = derive_seed(args.seed, DEGRADE_STREAM);
    let written = in_pool(args.single_thread, || {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, hf)| write_pair(&args.out.join(slice_name(i)), hf, &prior, derive_seed(base, i as u64)))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut files = Vec::new();
    for (i, (params, paths)) in written.into_iter().enumerate() {
        let v = params.to_vector();
        manifest.insert(
            format!("{}.params", slice_name(i)),
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "),
        );
        files.extend(paths);
    }
    artifacts::record(&mut manifest, &args.out, &files)?;
    manifest.save(args.out.join(DATASET_MANIFEST))?;
    info!("wrote {} {} pairs to {}", sources.len(), prior.regime.as_str(), args.out.display());
    println!("{} slices ({}x{}, regime {}) -> {}", sources.len(), h, w, prior.regime.as_str(), args.out.display());
    Ok(())
}

fn write_pair(
    dir: &std::path::Path,
    hf: &MagnitudeSlice,
    prior: &ParamPrior,
    seed: u64,
) -> Result<(kiqt_core::degrade::TissueParams, Vec<PathBuf>)> {
    let params = sample_params(prior, seed)?;
    let lf = simulate_lowfield(hf, &params, seed)?;
    let hf_k = fft2c(&ComplexSlice::from_magnitude(hf))?;
    let lf_k = fft2c(&ComplexSlice::from_magnitude(&lf))?;
    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [HF_MAG, HF_K, LF_MAG, LF_K].iter().map(|n| dir.join(n)).collect();
    write_slice(&hf.clone().into(), &paths[0])?;
    write_slice(&hf_k.into(), &paths[1])?;
    write_slice(&lf.into(), &paths[2])?;
    write_slice(&lf_k.into(), &paths[3])?;
    Ok((params, paths))
}
