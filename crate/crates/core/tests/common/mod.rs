//! Helpers shared by integration test targets.
#![allow(dead_code)]

pub mod ttest_reference;

use massl_core::layers::LayerKind;
use massl_core::losses::{
    attention_recon_loss, dice_loss, joint_loss, plain_recon_loss, split_reconstruction, AttentionMasks,
};
use massl_core::{Graph64, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const INSTANCES: usize = 20;

pub type Build = dyn Fn(&mut Graph64, &[TensorId]) -> TensorId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values with magnitude in `[0.1, 1)` and random sign, kept clear of kinks at 0.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn evaluate(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build) -> f64 {
    let mut g = Graph64::new();
    let ids: Vec<TensorId> = inputs.iter().map(|(s, v)| g.variable(s, v.clone()).unwrap()).collect();
    let loss = build(&mut g, &ids);
    g.item(loss)
}

/// Max normwise relative error `|a - n|_inf / max(|a|_inf, |n|_inf)` between
/// backprop gradients and central differences, over all inputs.
pub fn gradcheck(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build) -> f64 {
    let mut g = Graph64::new();
    let ids: Vec<TensorId> = inputs.iter().map(|(s, v)| g.variable(s, v.clone()).unwrap()).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        let analytic: Vec<f64> = g.grad(id).map_or_else(|| vec![0.0; inputs[k].1.len()], <[f64]>::to_vec);
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[k].1.len() {
            let mut plus = inputs.to_vec();
            plus[k].1[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].1[j] -= FD_STEP;
            numeric.push((evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * FD_STEP));
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic.iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Reduces a tensor to a scalar through fixed random weights, so every output
/// element contributes a distinct upstream gradient.
pub fn project(g: &mut Graph64, out: TensorId, seed: u64) -> TensorId {
    let shape = g.shape(out).to_vec();
    let n = shape.iter().product();
    let w = uniform(&mut rng(seed), n, -1.0, 1.0);
    let w = g.constant(&shape, w).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

pub const ALL_LAYERS: [&str; 8] = [
    "conv2d",
    "instance_norm",
    "leaky_relu",
    "sigmoid",
    "avg_pool2",
    "upsample2",
    "concat_channels",
    "slice_channels",
];

// Every layer kind must have a gradient case.
const _: () = assert!(LayerKind::ALL.len() + 1 == ALL_LAYERS.len());

/// Gradient-check error for one random instance of `layer`.
pub fn layer_case(layer: &str, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=3);
    let (h, w) = (2 * r.random_range(1..=3), 2 * r.random_range(1..=3));
    let x_shape = vec![n, c, h, w];
    let x = uniform(&mut r, n * c * h * w, -1.0, 1.0);
    let ps = seed ^ 0x9e37;
    match layer {
        "conv2d" => {
            let co = r.random_range(1..=3);
            let k = if r.random_bool(0.5) { 3 } else { 1 };
            let wv = uniform(&mut r, co * c * k * k, -1.0, 1.0);
            let bv = uniform(&mut r, co, -0.5, 0.5);
            gradcheck(
                &[(x_shape, x), (vec![co, c, k, k], wv), (vec![co], bv)],
                &move |g, v| {
                    let y = g.conv2d(v[0], v[1], v[2]).unwrap();
                    project(g, y, ps)
                },
            )
        }
        "instance_norm" => {
            let scale = uniform(&mut r, c, 0.5, 1.5);
            let shift = uniform(&mut r, c, -0.5, 0.5);
            gradcheck(&[(x_shape, x), (vec![c], scale), (vec![c], shift)], &move |g, v| {
                let y = g.instance_norm(v[0], v[1], v[2], 1e-5).unwrap();
                project(g, y, ps)
            })
        }
        "leaky_relu" => {
            let x = away_from_zero(&mut r, x.len());
            gradcheck(&[(x_shape, x)], &move |g, v| {
                let y = g.leaky_relu(v[0], 0.01);
                project(g, y, ps)
            })
        }
        "sigmoid" => {
            let x: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
            gradcheck(&[(x_shape, x)], &move |g, v| {
                let y = g.sigmoid(v[0]);
                project(g, y, ps)
            })
        }
        "avg_pool2" => gradcheck(&[(x_shape, x)], &move |g, v| {
            let y = g.avg_pool2(v[0]).unwrap();
            project(g, y, ps)
        }),
        "upsample2" => gradcheck(&[(x_shape, x)], &move |g, v| {
            let y = g.upsample2(v[0]).unwrap();
            project(g, y, ps)
        }),
        "concat_channels" => {
            let c2 = r.random_range(1..=3);
            let b = uniform(&mut r, n * c2 * h * w, -1.0, 1.0);
            gradcheck(&[(x_shape, x), (vec![n, c2, h, w], b)], &move |g, v| {
                let y = g.concat_channels(v[0], v[1]).unwrap();
                project(g, y, ps)
            })
        }
        "slice_channels" => {
            let start = r.random_range(0..c);
            let len = r.random_range(1..=c - start);
            gradcheck(&[(x_shape, x)], &move |g, v| {
                let y = g.slice_channels(v[0], start, len).unwrap();
                project(g, y, ps)
            })
        }
        other => panic!("no gradient case for `{other}`"),
    }
}

pub const ALL_LOSSES: [&str; 4] = ["dice", "attention_recon", "plain_recon", "joint"];

fn binary(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect()
}

/// Gradient-check error for one random instance of `loss`, differentiated
/// with respect to its network-output arguments.
pub fn loss_case(loss: &str, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let (h, w) = (r.random_range(2..=4), r.random_range(2..=4));
    let m = n * h * w;
    let shape = vec![n, 1, h, w];
    let pred = uniform(&mut r, m, 0.05, 0.95);
    let target = binary(&mut r, m);
    let image = uniform(&mut r, m, 0.0, 1.0);
    match loss {
        "dice" => gradcheck(&[(shape.clone(), pred)], &move |g, v| {
            let t = g.constant(&shape, target.clone()).unwrap();
            dice_loss(g, v[0], t).unwrap()
        }),
        "attention_recon" => {
            let recon = uniform(&mut r, 2 * m, 0.05, 0.95);
            gradcheck(&[(vec![n, 2, h, w], recon)], &move |g, v| {
                let x = g.constant(&shape, image.clone()).unwrap();
                let p = g.constant(&shape, pred.clone()).unwrap();
                let masks = AttentionMasks::from_prediction(g, p);
                let (bg, fg) = split_reconstruction(g, v[0]).unwrap();
                attention_recon_loss(g, x, bg, fg, masks).unwrap().0
            })
        }
        "plain_recon" => {
            let recon = uniform(&mut r, m, 0.05, 0.95);
            gradcheck(&[(shape.clone(), recon)], &move |g, v| {
                let x = g.constant(&shape, image.clone()).unwrap();
                plain_recon_loss(g, x, v[0]).unwrap()
            })
        }
        "joint" => {
            let gamma = r.random_range(0.0..=1.0);
            let recon = uniform(&mut r, m, 0.05, 0.95);
            gradcheck(&[(shape.clone(), pred), (shape.clone(), recon)], &move |g, v| {
                let t = g.constant(&shape, target.clone()).unwrap();
                let x = g.constant(&shape, image.clone()).unwrap();
                let l1 = dice_loss(g, v[0], t).unwrap();
                let l2 = plain_recon_loss(g, x, v[1]).unwrap();
                joint_loss(g, l1, l2, gamma).unwrap()
            })
        }
        other => panic!("no gradient case for `{other}`"),
    }
}

/// Independent least-squares oracle: Gaussian elimination with partial
/// pivoting on the augmented (intercept-column) normal equations.
pub fn oracle_r2(x: &[f64], y: &[f64], p: usize) -> f64 {
    let n = y.len();
    let q = p + 1;
    let row = |i: usize| -> Vec<f64> {
        std::iter::once(1.0)
            .chain(x[i * p..(i + 1) * p].iter().copied())
            .collect()
    };
    let mut a = vec![vec![0.0; q + 1]; q];
    for i in 0..n {
        let r = row(i);
        for j in 0..q {
            for k in 0..q {
                a[j][k] += r[j] * r[k];
            }
            a[j][q] += r[j] * y[i];
        }
    }
    for col in 0..q {
        let piv = (col..q)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..q {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=q {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..q).map(|j| a[j][q] / a[j][j]).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..n {
        let pred: f64 = row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
        res += (y[i] - pred).powi(2);
        tot += (y[i] - mean).powi(2);
    }
    1.0 - res / tot
}
