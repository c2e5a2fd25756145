mod common;

use common::brute_force_retrieval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_memory::retrieve_key_features;

#[test]
fn twenty_frame_buffer_five_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let keys: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let centroids: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let weights: Vec<f64> = (0..5).map(|_| rng.gen_range(1..10) as f64).collect();
    let got: Vec<(usize, usize)> = retrieve_key_features(&keys, &centroids, &weights, 3)
        .unwrap()
        .iter()
        .map(|s| (s.cluster, s.buffer_index))
        .collect();
    assert_eq!(got, brute_force_retrieval(&keys, &centroids, &weights, 3));
}

#[test]
fn ties_on_quantized_data() {
    // Coarse values make both weight ties and distance ties common.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        let dim = rng.gen_range(1..3);
        let keys: Vec<Vec<f64>> = (0..rng.gen_range(1..10))
            .map(|_| (0..dim).map(|_| rng.gen_range(-1..=1) as f64).collect())
            .collect();
        let m = rng.gen_range(1..6);
        let centroids: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1..=1) as f64 * 0.5).collect())
            .collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(1..3) as f64).collect();
        let n_ret = rng.gen_range(1..=m + 1);
        let got: Vec<(usize, usize)> = retrieve_key_features(&keys, &centroids, &weights, n_ret)
            .unwrap()
            .iter()
            .map(|s| (s.cluster, s.buffer_index))
            .collect();
        assert_eq!(got.len(), n_ret.min(m));
        assert_eq!(got, brute_force_retrieval(&keys, &centroids, &weights, n_ret));
    }
}
