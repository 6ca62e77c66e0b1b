//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod grad;
pub mod links;
pub mod oracles;
pub mod sharing;

use semlink::numeric::{Graph, ParamId, ParamStore, RngStream, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;

/// Gradients below this magnitude are compared absolutely: central
/// differences with h = 1e-4 carry ~1e-10 absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(rng: &mut RngStream, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.gaussian(n, 0.0, std).into_data()).unwrap()
}

/// Projects `out` onto fixed random weights so the check covers the whole
/// Jacobian rather than its column sums.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let n: usize = g.shape(out).iter().product();
    let w = RngStream::new(seed, 999).gaussian(n, 0.0, 1.0);
    let w = g.constant(w.reshape(g.shape(out).to_vec()).unwrap());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

/// Max relative error between tape gradients and central finite differences
/// for every element of every input.
pub fn check_inputs(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(|t| t.into_data())
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut dp = t.data().to_vec();
            dp[j] += FD_STEP;
            plus[i] = Tensor::new(t.shape().to_vec(), dp).unwrap();
            let mut dm = t.data().to_vec();
            dm[j] -= FD_STEP;
            minus[i] = Tensor::new(t.shape().to_vec(), dm).unwrap();
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Same check over trainable parameters of a store. `max_per_param` bounds
/// how many elements per tensor are probed (evenly strided).
pub fn check_params(
    store: &ParamStore,
    select: impl Fn(ParamId) -> bool + Copy,
    max_per_param: usize,
    build: impl Fn(&mut Graph) -> Var,
) -> (f64, Vec<(String, f64)>) {
    let mut g = Graph::with_params(store, select);
    let loss = build(&mut g);
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    drop(g);

    let eval = |s: &ParamStore| {
        let mut g = Graph::with_params(s, |_| false);
        let l = build(&mut g);
        g.value(l).data()[0]
    };

    let mut worst: f64 = 0.0;
    let mut per_block = Vec::new();
    for id in store.ids().filter(|&id| select(id)) {
        let t = store.get(id);
        let analytic = grads
            .iter()
            .find(|(gid, _)| *gid == id)
            .map(|(_, g)| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let stride = (t.len() / max_per_param.max(1)).max(1);
        let mut block_worst: f64 = 0.0;
        for j in (0..t.len()).step_by(stride) {
            let mut s = store.clone();
            let mut d = t.data().to_vec();
            d[j] += FD_STEP;
            s.set(id, Tensor::new(t.shape().to_vec(), d.clone()).unwrap());
            let fp = eval(&s);
            d[j] -= 2.0 * FD_STEP;
            s.set(id, Tensor::new(t.shape().to_vec(), d).unwrap());
            let fm = eval(&s);
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            block_worst = block_worst.max(rel_err(analytic[j], numeric));
        }
        worst = worst.max(block_worst);
        per_block.push((store.name(id).to_string(), block_worst));
    }
    (worst, per_block)
}
