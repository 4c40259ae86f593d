use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub subject_ids: Vec<String>,
    pub split: Split,
    pub slices_per_subject: usize,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn slice_count(&self) -> usize {
        self.subject_ids.len() * self.slices_per_subject
    }

    /// `(subject, slice index)` pairs in manifest order.
    pub fn slice_ids(&self) -> impl Iterator<Item = (&str, usize)> {
        self.subject_ids
            .iter()
            .flat_map(move |s| (0..self.slices_per_subject).map(move |i| (s.as_str(), i)))
    }
}

/// Seeded shuffle of the subject list, split into disjoint train and test
/// manifests.
pub fn make_manifest(
    subject_ids: &[String],
    train_count: usize,
    test_count: usize,
    slices_per_subject: usize,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if train_count + test_count > subject_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "need {} subjects, only {} available",
            train_count + test_count,
            subject_ids.len()
        )));
    }
    if slices_per_subject == 0 {
        return Err(Error::InvalidArgument("slices_per_subject must be positive".into()));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != subject_ids.len() {
        return Err(Error::InvalidArgument("subject ids must be unique".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(train_count);
    let make = |subject_ids: Vec<String>, split| DatasetManifest {
        subject_ids,
        split,
        slices_per_subject,
        seed,
    };
    Ok((
        make(ids, Split::Train),
        make(test.into_iter().take(test_count).collect(), Split::Test),
    ))
}
