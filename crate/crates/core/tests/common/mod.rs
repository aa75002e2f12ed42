//! Finite-difference gradient suite shared by the gradient tests and the
//! acceptance target.

#![allow(dead_code)]

use embsizer::data::{FieldSchema, Sample};
use embsizer::dlrm::{Architecture, ModelConfig};
use embsizer::nn::activation::softmax_rows_backward;
use embsizer::nn::gradcheck::relative_error;
use embsizer::nn::{cross_entropy_with_logits, softmax_rows, Affine, BatchNorm, LayerNorm, Mlp, Module, Parameter};
use embsizer::rng::RngStream;
use embsizer::sampling::SubnetSelection;
use embsizer::search::{compute_penalty, penalty_grad, reinforce_grad, reinforce_loss, PenaltyConfig, PolicyConfig, PolicyNet};
use embsizer::supernet::{CandidateSet, EmbeddingNet, Scheme, Transform};
use embsizer::tensor::Matrix;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const COORDS: usize = 8;
/// Logit magnitude beyond which the clamped loss is (nearly) flat.
const SATURATION: f64 = 15.0;

fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Up to `COORDS` coordinates, preferring ones with a nonzero analytic gradient.
fn pick(g: &Matrix, rng: &mut RngStream) -> Vec<usize> {
    let mut nz: Vec<usize> = (0..g.len()).filter(|&k| g.as_slice()[k] != 0.0).collect();
    rng.shuffle(&mut nz);
    nz.truncate(COORDS - 2);
    for _ in 0..2 {
        nz.push(rng.below(g.len()));
    }
    nz
}

/// Relative error of `analytic` against finite differences of `f`, a function
/// of the offset added to one coordinate. The central difference is tried
/// first; when a ReLU kink lies within `H` of the point, the analytic
/// subgradient must instead match a second-order one-sided derivative (both
/// are O(h²) accurate on smooth stretches).
fn compare(analytic: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (up, down) = (f(H), f(-H));
    let e = relative_error(analytic, (up - down) / (2.0 * H));
    if e < TOL {
        return e;
    }
    let (c, up2, down2) = (f(0.0), f(2.0 * H), f(-2.0 * H));
    let fwd = (-3.0 * c + 4.0 * up - up2) / (2.0 * H);
    let bwd = (3.0 * c - 4.0 * down + down2) / (2.0 * H);
    e.min(relative_error(analytic, fwd)).min(relative_error(analytic, bwd))
}

/// Worst relative error between each parameter's accumulated gradient and
/// central differences of `loss`.
fn param_errors<M>(
    model: &mut M,
    params: fn(&mut M) -> Vec<&mut Parameter>,
    mut loss: impl FnMut(&mut M) -> f64,
    rng: &mut RngStream,
) -> f64 {
    let grads: Vec<Matrix> = params(model).iter().map(|p| p.grad.clone()).collect();
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        for idx in pick(g, rng) {
            let orig = params(model)[k].value.as_slice()[idx];
            let e = compare(g.as_slice()[idx], |off| {
                params(model)[k].value.as_mut_slice()[idx] = orig + off;
                loss(model)
            });
            params(model)[k].value.as_mut_slice()[idx] = orig;
            worst = worst.max(e);
        }
    }
    worst
}

fn zero_all(ps: Vec<&mut Parameter>) {
    for p in ps {
        p.zero_grad();
    }
}

trait Layer: Module {
    fn fwd(&mut self, x: &Matrix) -> Matrix;
    fn bwd(&mut self, dy: &Matrix) -> Matrix;
}

macro_rules! layer {
    ($t:ty) => {
        impl Layer for $t {
            fn fwd(&mut self, x: &Matrix) -> Matrix {
                self.forward_train(x).unwrap()
            }
            fn bwd(&mut self, dy: &Matrix) -> Matrix {
                self.backward(dy).unwrap()
            }
        }
    };
}
layer!(Affine);
layer!(BatchNorm);
layer!(LayerNorm);
layer!(Mlp);
layer!(Transform);

/// Loss `Σ w ⊙ layer(x)`; checks parameter and input gradients, with the
/// analytic gradients multiplied by `distort` (1 for a real check).
fn layer_check_scaled<L: Layer>(mut layer: L, rows: usize, input: usize, rng: &mut RngStream, distort: f64) -> f64 {
    let x = random(rows, input, rng);
    let probe = layer.fwd(&x);
    let w = random(probe.rows(), probe.cols(), rng);
    zero_all(layer.params_mut());
    layer.fwd(&x);
    let mut dx = layer.bwd(&w);
    dx.scale(distort);
    for p in layer.params_mut() {
        p.grad.scale(distort);
    }
    let worst = param_errors(&mut layer, |l| l.params_mut(), |l| dot(&l.fwd(&x), &w), rng);
    let mut xin = x.clone();
    let mut worst_x: f64 = 0.0;
    for idx in pick(&dx, rng) {
        let orig = xin.as_slice()[idx];
        let e = compare(dx.as_slice()[idx], |off| {
            xin.as_mut_slice()[idx] = orig + off;
            dot(&layer.fwd(&xin), &w)
        });
        xin.as_mut_slice()[idx] = orig;
        worst_x = worst_x.max(e);
    }
    worst.max(worst_x)
}

fn layer_check<L: Layer>(layer: L, rows: usize, input: usize, rng: &mut RngStream) -> f64 {
    layer_check_scaled(layer, rows, input, rng, 1.0)
}

/// The error the suite reports for an MLP whose gradients are off by 0.1%.
pub fn distorted_mlp_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let mlp = Mlp::new(6, &[8, 3], &mut rng.fork(1)).unwrap();
    layer_check_scaled(mlp, 8, 6, &mut rng, 1.001)
}

fn net_params(n: &mut EmbeddingNet) -> Vec<&mut Parameter> {
    let mut v: Vec<&mut Parameter> = n.store.tables_mut().map(|t| &mut t.weight).collect();
    v.extend(n.bank.params_mut());
    v.extend(n.main.params_mut());
    v
}

fn schemas() -> Vec<FieldSchema> {
    vec![
        FieldSchema::one_hot("a", 6),
        FieldSchema { name: "tags".into(), cardinality: 5, multi_valued: true },
        FieldSchema::one_hot("c", 4),
    ]
}

fn batch(rng: &mut RngStream) -> Vec<Sample> {
    (0..8)
        .map(|r| Sample {
            fields: vec![
                vec![rng.below(6) as u32],
                (0..1 + rng.below(3)).map(|_| rng.below(5) as u32).collect(),
                vec![rng.below(4) as u32],
            ],
            label: (r % 2) as f64,
            timestamp: None,
        })
        .collect()
}

fn net_check(
    architecture: Architecture,
    scheme: Option<Scheme>,
    sel: SubnetSelection,
    rng: &mut RngStream,
) -> f64 {
    let model = ModelConfig { architecture, hidden: vec![8, 1], unified_dim: 4, ..ModelConfig::default() };
    let c = CandidateSet::new(vec![2, 4]).unwrap();
    let init = RngStream::new(rng.below(1 << 30) as u64);
    let mut net = match scheme {
        Some(s) => EmbeddingNet::supernet(&schemas(), &c, s, &model, &init).unwrap(),
        None => EmbeddingNet::standalone(&schemas(), &c, &sel.candidate, &model, &init).unwrap(),
    };
    // move embeddings off the tiny initialization so that every path carries signal
    for t in net.store.tables_mut() {
        let (r, d) = t.weight.value.shape();
        t.weight.value = random(r, d, rng);
    }
    // the loss is clamped at probabilities 1e-7 and 1 - 1e-7, where it is flat
    // while the logit gradient is not; draw batches away from that region
    let samples = loop {
        let s = batch(rng);
        let refs: Vec<&Sample> = s.iter().collect();
        if net.train_logits(&refs, &sel).unwrap().iter().all(|z| z.abs() < SATURATION) {
            break s;
        }
    };
    let refs: Vec<&Sample> = samples.iter().collect();
    net.zero_grad();
    net.loss_and_grad(&refs, &sel).unwrap();
    param_errors(
        &mut net,
        net_params,
        |n| {
            n.zero_grad();
            n.loss_and_grad(&refs, &sel).unwrap().loss
        },
        rng,
    )
}

fn policy_check(rng: &mut RngStream) -> f64 {
    let sizes = [2, 8, 16, 32, 64];
    let mut pol = PolicyNet::new(4, 5, PolicyConfig::default(), &mut RngStream::new(rng.below(1000) as u64)).unwrap();
    let state: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
    let actions: Vec<Vec<usize>> = (0..2).map(|_| (0..4).map(|_| rng.below(5)).collect()).collect();
    let adv = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
    let pen = PenaltyConfig { lambda_r: 0.01, lambda_c: 0.3 };
    zero_all(pol.params_mut());
    reinforce_grad(&mut pol, &state, &actions, &adv, &sizes, &pen).unwrap();
    param_errors(&mut pol, |p| p.params_mut(), |p| reinforce_loss(p, &state, &actions, &adv, &sizes, &pen).unwrap(), rng)
}

fn softmax_check(rng: &mut RngStream) -> f64 {
    let x = random(4, 5, rng);
    let w = random(4, 5, rng);
    let dx = softmax_rows_backward(&softmax_rows(&x).unwrap(), &w);
    let mut worst: f64 = 0.0;
    let mut xin = x.clone();
    for idx in 0..x.len() {
        let orig = xin.as_slice()[idx];
        xin.as_mut_slice()[idx] = orig + H;
        let up = dot(&softmax_rows(&xin).unwrap(), &w);
        xin.as_mut_slice()[idx] = orig - H;
        let down = dot(&softmax_rows(&xin).unwrap(), &w);
        xin.as_mut_slice()[idx] = orig;
        worst = worst.max(relative_error(dx.as_slice()[idx], (up - down) / (2.0 * H)));
    }
    worst
}

fn cross_entropy_check(rng: &mut RngStream) -> f64 {
    let logits: Vec<f64> = (0..8).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let labels: Vec<f64> = (0..8).map(|r| (r % 2) as f64).collect();
    let (_, g) = cross_entropy_with_logits(&logits, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..logits.len() {
        let mut a = logits.clone();
        let mut b = logits.clone();
        a[k] += H;
        b[k] -= H;
        let fd = (cross_entropy_with_logits(&a, &labels).unwrap().0 - cross_entropy_with_logits(&b, &labels).unwrap().0)
            / (2.0 * H);
        worst = worst.max(relative_error(g[k], fd));
    }
    worst
}

fn penalty_check(rng: &mut RngStream) -> f64 {
    let sizes = [2, 8, 16, 32, 64];
    let p = softmax_rows(&random(3, 5, rng)).unwrap();
    let cfg = PenaltyConfig { lambda_r: 0.01, lambda_c: 0.3 };
    let g = penalty_grad(&p, &sizes, &cfg);
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let mut a = p.clone();
        let mut b = p.clone();
        a.as_mut_slice()[k] += H;
        b.as_mut_slice()[k] -= H;
        let fd = (compute_penalty(&a, &sizes, &cfg).total - compute_penalty(&b, &sizes, &cfg).total) / (2.0 * H);
        worst = worst.max(relative_error(g.as_slice()[k], fd));
    }
    worst
}

/// Worst relative error per component over `trials` randomized draws.
pub fn gradient_suite(seed: u64, trials: usize) -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::new(seed);
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match out.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => out.push((name, e)),
    };
    let mixed = SubnetSelection { candidate: vec![1, 0, 1], included: vec![true, true, false] };
    for _ in 0..trials {
        // two-row batches make every batch-norm column exactly ±1, which is too
        // ill-conditioned for differences at h = 1e-5
        let rows = 4 + rng.below(5);
        let input = 1 + rng.below(16);
        let output = 1 + rng.below(16);
        let r = &mut rng;
        record("affine", layer_check(Affine::new(input, output, &mut r.fork(1)), rows, input, r));
        record("batchnorm", layer_check(BatchNorm::new(input), rows, input, r));
        let mut ln = LayerNorm::new(input.max(2));
        ln.gamma.value = random(1, input.max(2), r);
        record("layernorm", layer_check(ln, rows, input.max(2), r));
        record("mlp", layer_check(Mlp::new(input, &[8, 3], &mut r.fork(2)).unwrap(), rows, input, r));
        record("transform", layer_check(Transform::new(input, 4, 2, &mut r.fork(3)), rows, input, r));
        record("softmax", softmax_check(r));
        record("cross_entropy", cross_entropy_check(r));
        record("penalty", penalty_check(r));
        record("policy", policy_check(r));
        record("deepfm_independent", net_check(Architecture::DeepFM, Some(Scheme::Independent), mixed.clone(), r));
        record("deepfm_shared", net_check(Architecture::DeepFM, Some(Scheme::Shared), mixed.clone(), r));
        record("deepfm_fixed", net_check(Architecture::DeepFM, None, SubnetSelection::all_included(vec![0, 1, 1]), r));
        record("widedeep_independent", net_check(Architecture::WideDeep, Some(Scheme::Independent), mixed.clone(), r));
        record("widedeep_fixed", net_check(Architecture::WideDeep, None, SubnetSelection::all_included(vec![1, 0, 0]), r));
    }
    out
}
