use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Resamples every class to exactly `per_class_target` samples.
///
/// When the target is at least the class size, all originals are kept and
/// the remainder is drawn uniformly with replacement; otherwise a uniform
/// subset without replacement is kept. Output is grouped by class with
/// originals first.
pub fn augment_resample<T: Scalar>(ds: &Dataset<T>, per_class_target: usize, seed: u64) -> Result<Dataset<T>> {
    let groups = ds.indices_by_class();
    if let Some(class) = groups.iter().position(Vec::is_empty) {
        return Err(Error::ClassTooSmall { class, count: 0, needed: 1 });
    }
    let mut samples = Vec::with_capacity(per_class_target * groups.len());
    for (class, members) in groups.iter().enumerate() {
        let mut rng = rng::stream(seed, &[rng::STREAM_AUGMENT, class as u64]);
        let n = members.len();
        if per_class_target >= n {
            samples.extend(members.iter().map(|&i| ds.samples[i].clone()));
            for _ in n..per_class_target {
                samples.push(ds.samples[members[rng.random_range(0..n)]].clone());
            }
        } else {
            let mut keep = index::sample(&mut rng, n, per_class_target).into_vec();
            keep.sort_unstable();
            samples.extend(keep.into_iter().map(|k| ds.samples[members[k]].clone()));
        }
    }
    Ok(Dataset { samples, class_names: ds.class_names.clone() })
}
