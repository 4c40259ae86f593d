use anyhow::{bail, Result};
use kiqt_core::tensorio::KeyValues;
use kiqt_core::training::RUN_MANIFEST_FILE;

use super::evaluate::EVALUATION_MANIFEST;
use super::VerifyArgs;
use crate::artifacts::{verify, ArtifactProblem};
use crate::dataset::DATASET_MANIFEST;

pub fn run(args: &VerifyArgs) -> Result<()> {
    let mut found = false;
    let mut failures = 0;
    for name in [DATASET_MANIFEST, RUN_MANIFEST_FILE, EVALUATION_MANIFEST] {
        let path = args.dir.join(name);
        if !path.is_file() {
            continue;
        }
        found = true;
        let (checked, problems) = verify(&KeyValues::load(&path)?, &args.dir)?;
        for p in &problems {
            match p {
                ArtifactProblem::Missing(f) => println!("{name}: missing {f}"),
                ArtifactProblem::HashMismatch(f) => println!("{name}: hash mismatch {f}"),
            }
        }
        println!("{name}: {checked} artifacts, {} problems", problems.len());
        failures += problems.len();
    }
    if !found {
        bail!("no manifest in {}", args.dir.display());
    }
    if failures > 0 {
        bail!("{failures} artifacts failed verification");
    }
    Ok(())
}
