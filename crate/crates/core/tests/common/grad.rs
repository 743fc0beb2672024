//! Finite-difference suites; each panics on the first failure.

use cmlrain::autodiff::{grad_check, Graph, Tensor, Var};
use cmlrain::model::layers::{self, AttentionWeights, EncoderWeights, RecurrentWeights};
use cmlrain::model::{forward_graph, Cell, ModelKind, ModelParams, ModelSpec};
use cmlrain::rng::SeedRng;
use cmlrain::Result;

const H: f64 = 1e-5;

pub fn rand_tensor(rng: &mut SeedRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(-scale, scale)).collect()).unwrap()
}

/// Weighted sum so every output coordinate carries a distinct upstream gradient.
pub fn project_scalar(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = SeedRng::new(seed);
    let w = rand_tensor(&mut rng, g.shape(y), 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

pub fn check<F>(name: &str, shapes: &[&[usize]], tol: f64, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Copy,
{
    for point in 0..5u64 {
        let mut rng = SeedRng::new(1000 + point);
        let params: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s, 1.0)).collect();
        let report = grad_check(
            |g, v| {
                let y = f(g, v)?;
                project_scalar(g, y, 77)
            },
            &params,
            H,
            tol,
        )
        .unwrap();
        assert!(report.passed, "{name} point {point}: {report:?}");
    }
}

pub fn elementwise_primitives() {
    let tol = 1e-6;
    check("add", &[&[3, 4], &[3, 4]], tol, |g, v| g.add(v[0], v[1]));
    check("sub", &[&[3, 4], &[3, 4]], tol, |g, v| g.sub(v[0], v[1]));
    check("mul", &[&[3, 4], &[3, 4]], tol, |g, v| g.mul(v[0], v[1]));
    check("add_broadcast", &[&[2, 3, 4], &[1, 3, 4]], tol, |g, v| g.add_broadcast(v[0], v[1]));
    check("mul_broadcast", &[&[2, 3, 4], &[4]], tol, |g, v| g.mul_broadcast(v[0], v[1]));
    check("affine", &[&[5]], tol, |g, v| Ok(g.affine(v[0], -1.5, 0.2)));
    check("sigmoid", &[&[6]], tol, |g, v| Ok(g.sigmoid(v[0])));
    check("tanh", &[&[6]], tol, |g, v| Ok(g.tanh(v[0])));
    check("softplus", &[&[6]], tol, |g, v| Ok(g.softplus(v[0])));
    check("exp", &[&[6]], tol, |g, v| Ok(g.exp(v[0])));
    check("relu", &[&[6]], tol, |g, v| Ok(g.relu(v[0])));
    check("transpose", &[&[2, 3, 4]], tol, |g, v| g.transpose(v[0]));
    check("reshape", &[&[2, 6]], tol, |g, v| g.reshape(v[0], &[3, 4]));
    check("slice", &[&[2, 5, 3]], tol, |g, v| g.slice(v[0], 1, 1, 4));
    check("concat", &[&[2, 1, 3], &[2, 2, 3]], tol, |g, v| g.concat(&[v[0], v[1]], 1));
    check("sum", &[&[2, 3, 4]], tol, |g, v| g.sum(v[0], 1));
    check("mean", &[&[2, 3, 4]], tol, |g, v| g.mean(v[0], 2));
    check("mean_all", &[&[2, 3]], tol, |g, v| Ok(g.mean_all(v[0])));
}

pub fn chained_primitives() {
    let tol = 1e-5;
    check("matmul", &[&[2, 3, 4], &[4, 5]], tol, |g, v| g.matmul(v[0], v[1]));
    check("batch_matmul", &[&[2, 3, 4], &[2, 4, 2]], tol, |g, v| g.batch_matmul(v[0], v[1]));
    check("softmax last", &[&[2, 3, 4]], tol, |g, v| g.softmax(v[0], 2));
    check("softmax middle", &[&[2, 3, 4]], tol, |g, v| g.softmax(v[0], 1));
    check("layer_norm", &[&[2, 3, 5]], tol, |g, v| g.layer_norm(v[0], 1e-5));
    check("matmul-softmax-norm chain", &[&[2, 3], &[3, 4]], tol, |g, v| {
        let m = g.matmul(v[0], v[1])?;
        let s = g.softmax(m, 1)?;
        let t = g.tanh(s);
        g.layer_norm(t, 1e-5)
    });
}

pub fn relu_at_sampled_points_away_from_zero() {
    // shift inputs so no coordinate sits within h of the kink
    for point in 0..5u64 {
        let mut rng = SeedRng::new(point);
        let x = Tensor::new(
            vec![8],
            (0..8).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 } + rng.uniform_in(-0.05, 0.05)).collect(),
        )
        .unwrap();
        let r = grad_check(
            |g, v| {
                let y = g.relu(v[0]);
                project_scalar(g, y, 3)
            },
            &[x],
            H,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

pub fn input_projection_and_positional() {
    check("input_project", &[&[2, 4, 3], &[3, 5], &[5]], 1e-6, |g, v| {
        layers::input_project(g, v[0], v[1], v[2])
    });
    check("add_positional", &[&[3, 4, 5], &[1, 4, 5]], 1e-6, |g, v| layers::add_positional(g, v[0], v[1]));
}

pub fn positional_gradient_is_batch_sum_of_upstream() {
    let mut rng = SeedRng::new(9);
    let x = rand_tensor(&mut rng, &[3, 4, 2], 1.0);
    let up = rand_tensor(&mut rng, &[3, 4, 2], 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let p = g.param(Tensor::zeros(&[1, 4, 2]));
    let y = layers::add_positional(&mut g, xv, p).unwrap();
    let w = g.constant(up.clone());
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum_all(prod);
    g.backward(loss).unwrap();
    let grad = g.grad(p);
    for t in 0..4 {
        for d in 0..2 {
            let expected: f64 = (0..3).map(|b| up.at(&[b, t, d])).sum();
            assert!((grad.at(&[0, t, d]) - expected).abs() < 1e-12);
        }
    }
}

pub fn attention_layers() {
    check("multi_head_attention", &[&[2, 4, 6], &[6, 6], &[6, 6], &[6, 6], &[6, 6]], 1e-5, |g, v| {
        let w = AttentionWeights { wq: v[1], wk: v[2], wv: v[3], wo: v[4] };
        Ok(layers::multi_head_attention(g, v[0], &w, 3)?.0)
    });
    check("attention_pool", &[&[2, 5, 4], &[4, 1], &[1]], 1e-5, |g, v| {
        Ok(layers::attention_pool(g, v[0], v[1], v[2])?.0)
    });
}

fn encoder_shapes(d: usize) -> Vec<Vec<usize>> {
    vec![
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d, 4 * d],
        vec![4 * d],
        vec![4 * d, d],
        vec![d],
        vec![d],
        vec![d],
    ]
}

pub fn encoder_layer_gradients() {
    let d = 4;
    let mut shapes: Vec<Vec<usize>> = vec![vec![2, 3, d]];
    shapes.extend(encoder_shapes(d));
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    check("encoder_layer", &refs, 1e-4, |g, v| {
        let w = EncoderWeights {
            attn: AttentionWeights { wq: v[1], wk: v[2], wv: v[3], wo: v[4] },
            ln1: (v[5], v[6]),
            ffn1: (v[7], v[8]),
            ffn2: (v[9], v[10]),
            ln2: (v[11], v[12]),
        };
        let mut rng = SeedRng::new(0);
        layers::encoder_layer(g, v[0], &w, 2, 0.3, false, &mut rng)
    });
}

pub fn bigru_and_rnn_gradients() {
    let (d, h) = (3, 4);
    let gru = [&[2, 4, d][..], &[d, 3 * h], &[h, 3 * h], &[3 * h], &[3 * h]];
    let mut shapes: Vec<&[usize]> = gru.to_vec();
    shapes.extend_from_slice(&gru[1..]);
    check("bigru", &shapes, 1e-4, |g, v| {
        let f = RecurrentWeights { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] };
        let b = RecurrentWeights { w_ih: v[5], w_hh: v[6], b_ih: v[7], b_hh: v[8] };
        Ok(layers::bigru(g, v[0], &f, &b)?.sequence)
    });
    check("tanh rnn", &[&[2, 4, d], &[d, h], &[h, h], &[h], &[h]], 1e-4, |g, v| {
        let w = RecurrentWeights { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] };
        let s = layers::recurrent_direction(g, v[0], &w, Cell::Tanh, false)?;
        layers::stack_steps(g, &s)
    });
}

pub fn full_model_check(kind: ModelKind) {
    let spec = ModelSpec {
        kind,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        gru_hidden: 4,
        gru_layers: 1,
        dropout: 0.3,
        window_len: 30,
        n_features: 3,
    };
    for point in 0..5u64 {
        let mut rng = SeedRng::new(500 + point);
        let mut params = ModelParams::init(&spec, &mut rng).unwrap();
        // move the positional table away from its zero init
        for v in params.get_mut("pos").map(|t| t.data_mut()).into_iter().flatten() {
            *v = rng.uniform_in(-0.5, 0.5);
        }
        let x = rand_tensor(&mut rng, &[2, 30, 3], 1.0);
        let report = grad_check(
            |g, vars| {
                let p = params.rebind(vars);
                let xv = g.constant(x.clone());
                let mut r = SeedRng::new(0);
                let y = forward_graph(g, &spec, &p, xv, false, &mut r)?;
                project_scalar(g, y, 11)
            },
            params.tensors(),
            H,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{kind} point {point}: {report:?}");
    }
}
