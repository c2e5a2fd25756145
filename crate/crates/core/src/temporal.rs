//! Weighted k-means compression of the temporal bank.
//!
//! Every point carries a weight (the number of frames it already stands
//! for). Lloyd iterations assign points to the nearest centroid by squared
//! Euclidean distance over the flattened grid, move each centroid to the
//! weighted mean of its members and stop once an assignment repeats.
//! Point weights are fixed for the duration of a call; the output cluster
//! weight is the sum of member weights, so total weight is conserved.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::KmeansInit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmeansOptions {
    pub max_iters: usize,
    pub init: KmeansInit,
    pub seed: u64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            init: KmeansInit::ClosestPair,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Cluster index of every input point after the last iteration.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted objective after each centroid update.
    pub objective_trace: Vec<f64>,
}

impl ClusterState {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `Σ w_i · ‖x_i − c_{a(i)}‖²`.
pub fn weighted_objective<P: AsRef<[f64]>>(
    points: &[P],
    weights: &[f64],
    centroids: &[Vec<f64>],
    assignments: &[usize],
) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(assignments)
        .map(|((p, w), &a)| w * squared_distance(p.as_ref(), &centroids[a]))
        .sum()
}

pub fn weighted_kmeans<P: AsRef<[f64]>>(
    points: &[P],
    weights: &[f64],
    k: usize,
    options: &KmeansOptions,
) -> Result<ClusterState> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Clustering("no points".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Clustering(format!("k={k} with {n} points")));
    }
    if weights.len() != n {
        return Err(Error::Clustering(format!(
            "{} weights for {n} points",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Clustering(format!("weight {w} is not positive")));
    }
    if options.max_iters == 0 {
        return Err(Error::Clustering("max_iters must be positive".into()));
    }
    let len = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != len) {
        return Err(Error::Clustering("points differ in length".into()));
    }

    let mut centroids = initial_centroids(points, weights, k, options);
    let mut previous: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iters {
        let mut assignments = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        for (p, w) in points.iter().zip(weights) {
            let (j, d) = nearest(p.as_ref(), &centroids);
            assignments.push(j);
            costs.push(w * d);
        }
        repair_empty_clusters(points, weights, &mut assignments, &mut costs, &mut centroids);

        if previous.as_ref() == Some(&assignments) {
            converged = true;
            break;
        }
        centroids = weighted_means(points, weights, &assignments, k, len);
        trace.push(weighted_objective(points, weights, &centroids, &assignments));
        previous = Some(assignments);
        iterations += 1;
    }

    let assignments = previous.expect("at least one iteration runs");
    let mut cluster_weights = vec![0.0; k];
    for (&a, w) in assignments.iter().zip(weights) {
        cluster_weights[a] += w;
    }
    Ok(ClusterState {
        centroids,
        weights: cluster_weights,
        assignments,
        iterations,
        converged,
        objective_trace: trace,
    })
}

fn initial_centroids<P: AsRef<[f64]>>(
    points: &[P],
    weights: &[f64],
    k: usize,
    options: &KmeansOptions,
) -> Vec<Vec<f64>> {
    match options.init {
        KmeansInit::WarmStart => points[..k].iter().map(|p| p.as_ref().to_vec()).collect(),
        KmeansInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            index::sample(&mut rng, points.len(), k)
                .into_iter()
                .map(|i| points[i].as_ref().to_vec())
                .collect()
        }
        KmeansInit::ClosestPair => agglomerate(points, weights, k),
    }
}

/// Greedily merges the pair with the smallest weighted merge cost
/// `w_a·w_b/(w_a+w_b)·‖x_a − x_b‖²` until `k` groups remain. With `k + 1`
/// points this is a single merge of the cheapest pair.
fn agglomerate<P: AsRef<[f64]>>(points: &[P], weights: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut groups: Vec<(Vec<f64>, f64)> = points
        .iter()
        .zip(weights)
        .map(|(p, &w)| (p.as_ref().to_vec(), w))
        .collect();
    while groups.len() > k {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let (wa, wb) = (groups[a].1, groups[b].1);
                let cost = wa * wb / (wa + wb) * squared_distance(&groups[a].0, &groups[b].0);
                if cost < best.2 {
                    best = (a, b, cost);
                }
            }
        }
        let (a, b, _) = best;
        let (cb, wb) = groups.remove(b);
        let (ca, wa) = &mut groups[a];
        let total = *wa + wb;
        for (x, y) in ca.iter_mut().zip(&cb) {
            *x = (*x * *wa + y * wb) / total;
        }
        *wa = total;
    }
    groups.into_iter().map(|(c, _)| c).collect()
}

/// Re-seeds every empty cluster with the point of largest weighted distance
/// to its centroid, taken from a cluster that keeps at least one member.
/// Ties prefer the lighter point, then the later one.
fn repair_empty_clusters<P: AsRef<[f64]>>(
    points: &[P],
    weights: &[f64],
    assignments: &mut [usize],
    costs: &mut [f64],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..points.len() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            pick = match pick {
                None => Some(i),
                Some(p) => {
                    let better = costs[i] > costs[p]
                        || (costs[i] == costs[p]
                            && (weights[i] < weights[p] || (weights[i] == weights[p] && i > p)));
                    Some(if better { i } else { p })
                }
            };
        }
        let i = pick.expect("an empty cluster implies a cluster with two members");
        sizes[assignments[i]] -= 1;
        sizes[empty] = 1;
        assignments[i] = empty;
        costs[i] = 0.0;
        centroids[empty] = points[i].as_ref().to_vec();
    }
}

fn weighted_means<P: AsRef<[f64]>>(
    points: &[P],
    weights: &[f64],
    assignments: &[usize],
    k: usize,
    len: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; len]; k];
    let mut totals = vec![0.0; k];
    for ((p, &w), &a) in points.iter().zip(weights).zip(assignments) {
        totals[a] += w;
        for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += w * x;
        }
    }
    for (sum, total) in sums.iter_mut().zip(&totals) {
        sum.iter_mut().for_each(|s| *s /= total);
    }
    sums
}

/// The temporal bank: at most `capacity` centroids, each a flattened
/// `p_tem × p_tem × dim` grid, with parallel weights.
#[derive(Debug, Clone)]
pub struct TemporalBank {
    centroids: Vec<Vec<f64>>,
    weights: Vec<f64>,
    capacity: usize,
    options: KmeansOptions,
}

impl TemporalBank {
    pub fn new(capacity: usize, options: KmeansOptions) -> Self {
        Self {
            centroids: Vec::with_capacity(capacity + 1),
            weights: Vec::with_capacity(capacity + 1),
            capacity,
            options,
        }
    }

    /// Appends a pooled frame with unit weight and, once the bank exceeds
    /// its capacity, clusters the `capacity + 1` points back down to
    /// `capacity` centroids.
    pub fn update(&mut self, pooled: Vec<f64>) -> Result<Option<ClusterState>> {
        if let Some(first) = self.centroids.first() {
            if first.len() != pooled.len() {
                return Err(Error::shape(format!(
                    "temporal entries hold {} values, got {}",
                    first.len(),
                    pooled.len()
                )));
            }
        }
        self.centroids.push(pooled);
        self.weights.push(1.0);
        if self.centroids.len() <= self.capacity {
            return Ok(None);
        }
        let state = weighted_kmeans(&self.centroids, &self.weights, self.capacity, &self.options)?;
        self.centroids.clone_from(&state.centroids);
        self.weights.clone_from(&state.weights);
        Ok(Some(state))
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}
