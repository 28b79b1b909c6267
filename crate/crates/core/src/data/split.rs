use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Deterministic class-stratified split into `(train, test)` indices.
///
/// Each class contributes `round(train_fraction · n_c)` samples to the training
/// part. Both parts come back in ascending index order.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside [0, {classes})")))?
            .push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut stream(&[seed, tag::SPLIT, c as u64]));
        let k = (train_fraction * idx.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has no training samples at fraction {train_fraction}"
            )));
        }
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
