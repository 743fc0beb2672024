//! Normalization invariants on random inputs.

use cmlrain::autodiff::Graph;
use cmlrain::model::layers::{self, AttentionWeights};
use cmlrain::rng::SeedRng;

use super::grad::rand_tensor;

fn assert_rows_sum_to_one(what: &str, data: &[f64], row: usize) {
    for (i, r) in data.chunks(row).enumerate() {
        let s: f64 = r.iter().sum();
        assert!(r.iter().all(|&v| v >= 0.0), "{what} row {i} has a negative weight");
        assert!((s - 1.0).abs() < 1e-12, "{what} row {i} sums to {s}");
    }
}

/// Softmax rows, attention rows and pooling weights sum to 1 and layer-norm
/// rows have zero mean, on `cases` random inputs.
pub fn normalization_invariants(cases: u64) {
    for seed in 0..cases {
        let mut rng = SeedRng::new(seed);
        let scale = 1.0 + 9.0 * rng.uniform();
        let (b, l, d) = (2, 3 + (seed % 5) as usize, 4);
        let x = rand_tensor(&mut rng, &[b, l, d], scale);
        let mut g = Graph::new();
        let xv = g.constant(x);

        let sm = g.softmax(xv, 2).unwrap();
        assert_rows_sum_to_one("softmax", g.value(sm).data(), d);

        let ln = g.layer_norm(xv, 1e-5).unwrap();
        for (i, r) in g.value(ln).data().chunks(d).enumerate() {
            let m = r.iter().sum::<f64>() / d as f64;
            assert!(m.abs() < 1e-10, "layer_norm row {i} mean {m}");
        }

        let mut w = || {
            let t = rand_tensor(&mut rng, &[d, d], 1.0);
            g.constant(t)
        };
        let aw = AttentionWeights { wq: w(), wk: w(), wv: w(), wo: w() };
        let (_, attn) = layers::multi_head_attention(&mut g, xv, &aw, 2).unwrap();
        for a in attn {
            assert_rows_sum_to_one("attention", g.value(a).data(), l);
        }

        let pw = rand_tensor(&mut rng, &[d, 1], scale);
        let pb = rand_tensor(&mut rng, &[1], 1.0);
        let (pw, pb) = (g.constant(pw), g.constant(pb));
        let (_, alpha) = layers::attention_pool(&mut g, xv, pw, pb).unwrap();
        assert_rows_sum_to_one("pooling", g.value(alpha).data(), l);
    }
}

