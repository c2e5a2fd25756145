//! Key feature retrieval: for each of the heaviest temporal clusters, the
//! buffered frame whose temporal-resolution view lies nearest its centroid.

use crate::error::{Error, Result};
use crate::temporal::squared_distance;

/// One retrieved frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeySelection {
    /// Index of the selecting cluster in the temporal bank.
    pub cluster: usize,
    /// Index into the newest-first buffer.
    pub buffer_index: usize,
    pub distance: f64,
}

/// Indices of the `k` largest weights in descending order. Equal weights
/// keep their bank order, so the lower (older) cluster index wins.
pub fn top_k_by_weight(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Selects up to `n_ret` buffer entries.
///
/// `buffer_keys` are the buffer entries pooled to the centroid grid, newest
/// first. Distance ties resolve to the lower buffer index (the newer
/// frame). Two clusters may select the same frame.
pub fn retrieve_key_features<K, C>(
    buffer_keys: &[K],
    centroids: &[C],
    weights: &[f64],
    n_ret: usize,
) -> Result<Vec<KeySelection>>
where
    K: AsRef<[f64]>,
    C: AsRef<[f64]>,
{
    if buffer_keys.is_empty() {
        return Err(Error::WarmUp("feature buffer is empty"));
    }
    if centroids.is_empty() {
        return Err(Error::WarmUp("temporal bank is empty"));
    }
    if weights.len() != centroids.len() {
        return Err(Error::shape(format!(
            "{} weights for {} centroids",
            weights.len(),
            centroids.len()
        )));
    }
    let len = centroids[0].as_ref().len();
    if buffer_keys.iter().any(|k| k.as_ref().len() != len)
        || centroids.iter().any(|c| c.as_ref().len() != len)
    {
        return Err(Error::shape("buffer keys and centroids differ in length"));
    }

    let selections = top_k_by_weight(weights, n_ret)
        .into_iter()
        .map(|cluster| {
            let centroid = centroids[cluster].as_ref();
            let (buffer_index, distance) = buffer_keys
                .iter()
                .enumerate()
                .map(|(i, key)| (i, squared_distance(key.as_ref(), centroid)))
                .fold((0, f64::INFINITY), |best, cand| {
                    if cand.1 < best.1 {
                        cand
                    } else {
                        best
                    }
                });
            KeySelection {
                cluster,
                buffer_index,
                distance,
            }
        })
        .collect();
    Ok(selections)
}
