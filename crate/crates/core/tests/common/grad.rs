//! Finite-difference suites over every tape operation and the full
//! encoder + channel-codec composite.

use super::{check_inputs, check_params, random_tensor, weighted_sum};
use semlink::channel::{draw_surrogate, surrogate_channel, surrogate_detect, ChannelConfig, ChannelKind};
use semlink::codec::{CodecConfig, ModelConfig, SemanticModel};
use semlink::mask::{MaskPlan, PatchGrid};
use semlink::numeric::{Graph, RngStream, Tensor, Var};
use semlink::training::{sample_loss, Phase};

fn run(
    trials: u64,
    shapes: impl Fn(&mut RngStream) -> Vec<Vec<usize>>,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = RngStream::new(0xfd, trial);
        let inputs: Vec<Tensor> = shapes(&mut rng)
            .iter()
            .map(|s| random_tensor(&mut rng, s, 1.0))
            .collect();
        assert!(inputs.iter().all(|t| t.len() <= 64));
        worst = worst.max(check_inputs(&inputs, &build));
    }
    worst
}

fn dim(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn pair(r: &mut RngStream) -> Vec<Vec<usize>> {
    let s = vec![dim(r, 1, 4), dim(r, 1, 6)];
    vec![s.clone(), s]
}

fn with_scalar(r: &mut RngStream) -> Vec<Vec<usize>> {
    vec![vec![dim(r, 1, 4), dim(r, 1, 6)], vec![1]]
}

pub fn matmul(trials: u64) -> f64 {
    run(
        trials,
        |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            vec![vec![m, k], vec![k, n]]
        },
        |g, v| {
            let o = g.matmul(v[0], v[1]).unwrap();
            weighted_sum(g, o, 1)
        },
    )
}

pub fn linear(trials: u64) -> f64 {
    run(
        trials,
        |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            vec![vec![m, k], vec![k, n], vec![n]]
        },
        |g, v| {
            let o = g.linear(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(g, o, 2)
        },
    )
}

pub fn add(trials: u64) -> f64 {
    run(trials, pair, |g, v| {
        let o = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, o, 3)
    })
}

pub fn sub(trials: u64) -> f64 {
    run(trials, pair, |g, v| {
        let o = g.sub(v[0], v[1]).unwrap();
        weighted_sum(g, o, 4)
    })
}

pub fn mul(trials: u64) -> f64 {
    run(trials, pair, |g, v| {
        let o = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, o, 5)
    })
}

pub fn mse(trials: u64) -> f64 {
    run(trials, pair, |g, v| g.mse(v[0], v[1]).unwrap())
}

pub fn scale(trials: u64) -> f64 {
    run(trials, pair, |g, v| {
        let o = g.scale(v[0], -1.7);
        weighted_sum(g, o, 6)
    })
}

pub fn mul_scalar(trials: u64) -> f64 {
    run(trials, with_scalar, |g, v| {
        let o = g.mul_scalar(v[0], v[1]).unwrap();
        weighted_sum(g, o, 7)
    })
}

pub fn div_scalar(trials: u64) -> f64 {
    // Keep the divisor away from zero.
    run(trials, with_scalar, |g, v| {
        let sq = g.mul(v[1], v[1]).unwrap();
        let half = g.constant(Tensor::scalar(0.5));
        let s = g.add(sq, half).unwrap();
        let o = g.div_scalar(v[0], s).unwrap();
        weighted_sum(g, o, 8)
    })
}

pub fn layer_norm(trials: u64) -> f64 {
    run(
        trials,
        |r| {
            let d = dim(r, 2, 8);
            vec![vec![dim(r, 1, 4), d], vec![d], vec![d]]
        },
        |g, v| {
            let o = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(g, o, 9)
        },
    )
}

pub fn gelu(trials: u64) -> f64 {
    run(
        trials,
        |r| vec![vec![dim(r, 1, 8), dim(r, 1, 8)]],
        |g, v| {
            let o = g.gelu(v[0]);
            weighted_sum(g, o, 10)
        },
    )
}

pub fn attention(trials: u64) -> f64 {
    run(
        trials,
        |r| {
            let heads = dim(r, 1, 2);
            let d = heads * dim(r, 1, 3);
            let (lq, lk) = (dim(r, 1, 4), dim(r, 1, 4));
            vec![vec![lq, d], vec![lk, d], vec![lk, d]]
        },
        |g, v| {
            let d = g.shape(v[0])[1];
            let heads = if d % 2 == 0 { 2 } else { 1 };
            let o = g.attention(v[0], v[1], v[2], heads).unwrap();
            weighted_sum(g, o, 11)
        },
    )
}

pub fn row_plumbing(trials: u64) -> f64 {
    run(
        trials,
        |r| {
            let c = dim(r, 1, 4);
            vec![vec![4, c], vec![dim(r, 1, 3), c]]
        },
        |g, v| {
            let picked = g.gather_rows(v[0], &[3, 1, 1]).unwrap();
            let spread = g.scatter_rows(picked, &[0, 4, 2], 5).unwrap();
            let cat = g.concat_rows(spread, v[1]).unwrap();
            let n: usize = g.shape(cat).iter().product();
            let flat = g.reshape(cat, &[n]).unwrap();
            weighted_sum(g, flat, 12)
        },
    )
}

pub fn power_scale(trials: u64) -> f64 {
    run(
        trials,
        |r| vec![vec![dim(r, 1, 4), 2 * dim(r, 1, 4)]],
        |g, v| {
            let s = g.power_scale(v[0], 1.3).unwrap();
            let o = g.mul_scalar(v[0], s).unwrap();
            weighted_sum(g, o, 13)
        },
    )
}

pub fn sum_chain(trials: u64) -> f64 {
    run(
        trials,
        |r| vec![vec![dim(r, 1, 8)]],
        |g, v| {
            let a = g.gelu(v[0]);
            let b = g.mul(a, v[0]).unwrap();
            g.sum(b)
        },
    )
}

/// Surrogate fading channel and its scalar equalizer, gradient w.r.t. the
/// transmitted symbols.
pub fn surrogate(trials: u64) -> f64 {
    let cfg = ChannelConfig {
        kind: ChannelKind::Rayleigh,
        ..ChannelConfig::default()
    };
    run(
        trials,
        |r| vec![vec![dim(r, 1, 4), 2 * dim(r, 1, 3)]],
        |g, v| {
            let draw = draw_surrogate(&cfg, 5.0, g.shape(v[0]), &mut RngStream::new(3, 3));
            let y = surrogate_channel(g, v[0], &draw).unwrap();
            let x = surrogate_detect(g, y, &draw);
            weighted_sum(g, x, 14)
        },
    )
}

pub type OpCheck = fn(u64) -> f64;

pub const OPS: &[(&str, OpCheck)] = &[
    ("matmul", matmul),
    ("linear", linear),
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("mse", mse),
    ("scale", scale),
    ("mul_scalar", mul_scalar),
    ("div_scalar", div_scalar),
    ("layer_norm", layer_norm),
    ("gelu", gelu),
    ("attention", attention),
    ("gather/scatter/concat/reshape", row_plumbing),
    ("power_scale", power_scale),
    ("sum", sum_chain),
    ("surrogate channel", surrogate),
];

/// Small model: 3×8×8 scenes with 4-pixel patches, d_s = 16, d_c = 4.
pub fn small_model(seed: u64) -> (SemanticModel, PatchGrid) {
    let grid = PatchGrid::new(3, 8, 8, 4).unwrap();
    let config = ModelConfig {
        codec: CodecConfig {
            d_s: 16,
            enc_layers: 2,
            dec_layers: 1,
            num_heads: 2,
            patch_dim: grid.patch_dim(),
            num_patches: grid.num_patches(),
        },
        d_c: 4,
    };
    (SemanticModel::init(config, seed).unwrap(), grid)
}

/// Worst relative error over all parameters of the whole-network loss
/// (encoder, channel encoder, surrogate channel, channel decoder, decoder),
/// plus per-parameter worst errors.
pub fn composite(seed: u64) -> (f64, Vec<(String, f64)>) {
    let (model, grid) = small_model(seed);
    let mut rng = RngStream::new(seed, 77);
    let patches = random_tensor(&mut rng, &[grid.num_patches(), grid.patch_dim()], 0.5);
    let plan = MaskPlan::from_json(r#"{"p_r":0.3,"keep":[0,2,3],"object":[0]}"#, &grid).unwrap();
    let cfg = ChannelConfig {
        kind: ChannelKind::Rayleigh,
        ..ChannelConfig::default()
    };
    check_params(
        &model.store,
        |_| true,
        6,
        |g| {
            let mut r = RngStream::new(seed, 5);
            sample_loss(g, &model, Phase::Whole, &patches, &plan, 10.0, &cfg, &mut r).unwrap()
        },
    )
}
