//! Encoder/decoder structure: attention equivariance, residual pass-through,
//! zero filling and robustness of an untrained model.

use semlink::codec::{positional_encoding, zero_fill, CodecConfig, ModelConfig, SemanticModel, SemanticTensor};
use semlink::mask::{sample_mask, PatchGrid};
use semlink::numeric::{RngStream, Tensor};
use semlink::scene::Loc;

fn model(seed: u64) -> SemanticModel {
    SemanticModel::init(
        ModelConfig {
            codec: CodecConfig {
                d_s: 16,
                enc_layers: 2,
                dec_layers: 2,
                num_heads: 4,
                patch_dim: 48,
                num_patches: 16,
            },
            d_c: 4,
        },
        seed,
    )
    .unwrap()
}

fn rows(rng: &mut RngStream, n: usize, d: usize) -> Tensor {
    rng.gaussian(n * d, 0.0, 1.0).reshape([n, d]).unwrap()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let data = perm.iter().flat_map(|&p| t.row(p).to_vec()).collect();
    Tensor::new([perm.len(), d], data).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn output_shape_for_several_lengths() {
    let m = model(1);
    let mut rng = RngStream::new(1, 1);
    for l in [1, 6, 16] {
        let idx: Vec<usize> = (0..l).collect();
        let z = m.esc.encode(&m.store, &rows(&mut rng, l, 48), &idx).unwrap();
        assert_eq!(z.values().shape(), &[l, 16]);
    }
}

#[test]
fn permuting_rows_and_indices_permutes_output() {
    let m = model(2);
    let mut rng = RngStream::new(2, 2);
    for _ in 0..20 {
        let l = 2 + rng.below(10);
        let mut idx: Vec<usize> = (0..16).collect();
        rng.shuffle(&mut idx);
        idx.truncate(l);
        let x = rows(&mut rng, l, 48);
        let z = m.esc.encode_rows(&m.store, &x, &idx).unwrap();
        let mut perm: Vec<usize> = (0..l).collect();
        rng.shuffle(&mut perm);
        let idx_p: Vec<usize> = perm.iter().map(|&p| idx[p]).collect();
        let z_p = m.esc.encode_rows(&m.store, &permute_rows(&x, &perm), &idx_p).unwrap();
        assert!(max_abs_diff(&z_p, &permute_rows(&z, &perm)) < 1e-12);
    }
}

#[test]
fn zeroed_blocks_reduce_to_normalized_embedding() {
    let mut m = model(3);
    for b in &m.esc.encoder {
        for id in b.branch_ids() {
            let shape = m.store.get(id).shape().to_vec();
            m.store.set(id, Tensor::zeros(shape));
        }
    }
    let mut rng = RngStream::new(3, 3);
    let idx = [1usize, 4, 9, 15];
    let x = rows(&mut rng, 4, 48);
    let z = m.esc.encode(&m.store, &x, &idx).unwrap();

    let w = m.store.get(m.esc.embed.weight);
    let b = m.store.get(m.esc.embed.bias);
    for (r, &i) in idx.iter().enumerate() {
        let pe = positional_encoding(i, 16);
        let e: Vec<f64> = (0..16)
            .map(|c| (0..48).map(|k| x.row(r)[k] * w.data()[k * 16 + c]).sum::<f64>() + b.data()[c] + pe[c])
            .collect();
        let mean = e.iter().sum::<f64>() / 16.0;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        for (c, ec) in e.iter().enumerate() {
            let want = (ec - mean) / (var + 1e-5).sqrt();
            assert!((z.values().row(r)[c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn same_content_at_different_positions_embeds_differently() {
    let m = model(4);
    let p = rows(&mut RngStream::new(4, 4), 1, 48);
    let two = Tensor::new([2, 48], [p.data(), p.data()].concat()).unwrap();
    let e = m.esc.embed(&m.store, &two, &[2, 7]).unwrap();
    let gap = e
        .row(0)
        .iter()
        .zip(e.row(1))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap > 1e-3);
}

#[test]
fn zero_fill_nonzero_rows_equal_keep_set() {
    let grid = PatchGrid::new(3, 16, 16, 4).unwrap();
    let mut rng = RngStream::new(5, 5);
    let loc = Loc::from_indices(&grid, [0, 1, 4, 5]).unwrap();
    for _ in 0..200 {
        let plan = sample_mask(&grid, &loc, 0.5, &mut rng).unwrap();
        if plan.keep.is_empty() {
            continue;
        }
        let vals = rng
            .gaussian(plan.keep.len() * 8, 1.0, 0.1)
            .reshape([plan.keep.len(), 8])
            .unwrap();
        let full = zero_fill(&SemanticTensor::new(vals, plan.keep.clone(), 16).unwrap()).unwrap();
        let nonzero: Vec<usize> = (0..16).filter(|&i| full.row(i).iter().any(|&v| v != 0.0)).collect();
        assert_eq!(nonzero, plan.keep);
    }
    let all: Vec<usize> = (0..16).collect();
    let vals = rows(&mut rng, 16, 8);
    let full = zero_fill(&SemanticTensor::new(vals.clone(), all, 16).unwrap()).unwrap();
    assert_eq!(full, vals);
}

#[test]
fn untrained_model_stays_finite() {
    let m = model(6);
    let mut rng = RngStream::new(6, 6);
    for t in 0..100 {
        let l = 1 + t % 16;
        let idx: Vec<usize> = (0..l).collect();
        let scale = [1e-3, 1.0, 1e3][t % 3];
        let x = rng.gaussian(l * 48, 0.0, scale).reshape([l, 48]).unwrap();
        let z = m.esc.encode(&m.store, &x, &idx).unwrap();
        let q = m.esc.decode(&m.store, &zero_fill(&z).unwrap()).unwrap();
        assert_eq!(q.shape(), &[16, 48]);
        assert!(q.data().iter().all(|v| v.is_finite()));
    }
}
