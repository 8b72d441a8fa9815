//! Central finite-difference checks of analytic gradients (64-bit).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssdpose::datagen::{generate_scene, SceneSpec};
use ssdpose::io::ModelConfig;
use ssdpose::net::{LabeledImage, Network, PoseSharing};
use ssdpose::nn::{Tape, Tensor, Var};
use ssdpose::targets::LossConfig;

pub const STEP: f64 = 1e-3;
/// Every early-layer parameter feeds hundreds of ReLUs, so the whole-network
/// check needs a narrower interval than the single-op checks.
pub const COMPOSITE_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const OPS: [&str; 11] = [
    "conv2d",
    "max_pool2",
    "relu",
    "gather",
    "softmax_xent",
    "smooth_l1",
    "add",
    "mul",
    "sum",
    "weighted_sum",
    "conv_relu_xent",
];

#[derive(Debug, Clone)]
pub struct GradReport {
    pub op: String,
    pub cases: usize,
    pub entries_checked: usize,
    pub max_rel_err: f64,
    /// Entries skipped because the step straddles a kink.
    pub skipped_kinks: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.cases >= 100 && self.max_rel_err <= TOLERANCE
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off in
/// near-zero gradients from dominating.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>, gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(gap..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Reduce a tensor to a scalar through a fixed random projection, so every
/// output element contributes with a distinct weight.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = randn(&mut rng, shape);
    let r = tape.constant(r);
    let m = tape.mul(v, r).unwrap();
    tape.sum(m)
}

fn make_case(op: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build) {
    let proj_seed: u64 = rng.gen();
    match op {
        "conv2d" => {
            let c_in = rng.gen_range(1..=3);
            let c_out = rng.gen_range(1..=3);
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            let stride = rng.gen_range(1..=2);
            let padding = if k == 3 { rng.gen_range(0..=1) } else { 0 };
            // Sizes chosen so that (H + 2p - k)/s + 1 is an integer.
            let (oh, ow) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let h = (oh - 1) * stride + k - 2 * padding;
            let w = (ow - 1) * stride + k - 2 * padding;
            let inputs = vec![
                randn(rng, vec![c_in, h, w]),
                randn(rng, vec![c_out, c_in, k, k]),
                randn(rng, vec![c_out]),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], stride, padding).unwrap();
                    project(t, y, proj_seed)
                }),
            )
        }
        "max_pool2" => {
            let c = rng.gen_range(1..=3);
            let h = 2 * rng.gen_range(1..=3);
            let w = 2 * rng.gen_range(1..=3);
            // Distinct values spaced well beyond the step, so no perturbation
            // changes a window's argmax.
            let n = c * h * w;
            let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
            for i in (1..n).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let x = Tensor::new(vec![c, h, w], vals).unwrap();
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.max_pool2(v[0]).unwrap();
                    project(t, y, proj_seed)
                }),
            )
        }
        "relu" => {
            let n = rng.gen_range(1..=20);
            (
                vec![away_from_zero(rng, vec![n], 0.01)],
                Box::new(move |t, v| {
                    let y = t.relu(v[0]);
                    project(t, y, proj_seed)
                }),
            )
        }
        "gather" => {
            let n = rng.gen_range(2..=12);
            let m = rng.gen_range(1..=12);
            let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
            (
                vec![randn(rng, vec![n])],
                Box::new(move |t, v| {
                    let y = t.gather(v[0], idx.clone()).unwrap();
                    project(t, y, proj_seed)
                }),
            )
        }
        "softmax_xent" => {
            let target = rng.gen_range(0..10);
            let x = randn(rng, vec![10]);
            let x = Tensor::new(vec![10], x.data().iter().map(|v| 3.0 * v).collect()).unwrap();
            (
                vec![x],
                Box::new(move |t, v| t.softmax_xent(v[0], target).unwrap()),
            )
        }
        "smooth_l1" => {
            let n = rng.gen_range(1..=8);
            // Differences on both branches, away from the |d| = 1 transition.
            let target = randn(rng, vec![n]);
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let m: f64 = if rng.gen_bool(0.5) {
                        rng.gen_range(0.0..0.95)
                    } else {
                        rng.gen_range(1.05..3.0)
                    };
                    if rng.gen_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            let pred: Vec<f64> = target.data().iter().zip(&d).map(|(t, d)| t + d).collect();
            let pred = Tensor::new(vec![n], pred).unwrap();
            (
                vec![pred],
                Box::new(move |t, v| t.smooth_l1(v[0], &target).unwrap()),
            )
        }
        "add" | "mul" => {
            let n = rng.gen_range(1..=10);
            let is_add = op == "add";
            (
                vec![randn(rng, vec![n]), randn(rng, vec![n])],
                Box::new(move |t, v| {
                    let y = if is_add {
                        t.add(v[0], v[1]).unwrap()
                    } else {
                        t.mul(v[0], v[1]).unwrap()
                    };
                    project(t, y, proj_seed)
                }),
            )
        }
        "sum" => {
            let n = rng.gen_range(1..=10);
            (
                vec![randn(rng, vec![n])],
                Box::new(move |t, v| {
                    // Square first so the gradient depends on the input.
                    let sq = t.mul(v[0], v[0]).unwrap();
                    t.sum(sq)
                }),
            )
        }
        "weighted_sum" => {
            let n = rng.gen_range(1..=6);
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let inputs = (0..n).map(|_| randn(rng, vec![3])).collect();
            (
                inputs,
                Box::new(move |t, v| {
                    let scalars: Vec<Var> = v
                        .iter()
                        .map(|&x| {
                            let sq = t.mul(x, x).unwrap();
                            t.sum(sq)
                        })
                        .collect();
                    t.weighted_sum(scalars, weights.clone()).unwrap()
                }),
            )
        }
        "conv_relu_xent" => {
            let target = rng.gen_range(0..4);
            let inputs = vec![
                randn(rng, vec![2, 4, 4]),
                randn(rng, vec![4, 2, 3, 3]),
                randn(rng, vec![4]),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
                    let y = t.relu(y);
                    let p = t.max_pool2(y).unwrap();
                    // Pool to 4 x 2 x 2, then pick one location's channels.
                    let logits = t.gather(p, vec![0, 4, 8, 12]).unwrap();
                    t.softmax_xent(logits, target).unwrap()
                }),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

fn evaluate(inputs: &[Tensor<f64>], build: &Build) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = build(&mut tape, &vars);
    let value = tape.value(root).item();
    let grads = tape.backward(root).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get_or_zeros(v, x.len()))
        .collect();
    (value, g)
}

fn value_only(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = build(&mut tape, &vars);
    tape.value(root).item()
}

/// Near a kink the one-sided slopes differ and the central difference is
/// meaningless; such entries are skipped (they are rare by construction).
fn kinked(inputs: &[Tensor<f64>], build: &Build, t: usize, i: usize, f0: f64) -> bool {
    let bump = |delta: f64| {
        let mut x = inputs.to_vec();
        x[t].data_mut()[i] += delta;
        value_only(&x, build)
    };
    let right = (bump(STEP) - f0) / STEP;
    let left = (f0 - bump(-STEP)) / STEP;
    let far_right = (bump(2.0 * STEP) - bump(STEP)) / STEP;
    let far_left = (bump(-STEP) - bump(-2.0 * STEP)) / STEP;
    grad_rel_err(right, far_right) > 1e-2 || grad_rel_err(left, far_left) > 1e-2
        || grad_rel_err(left, right) > 1e-2
}

pub fn check_op(op: &str, cases: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        op: op.to_string(),
        cases: 0,
        entries_checked: 0,
        max_rel_err: 0.0,
        skipped_kinks: 0,
    };
    for _ in 0..cases {
        let (inputs, build) = make_case(op, &mut rng);
        let (f0, grads) = evaluate(&inputs, &build);
        assert!(f0.is_finite(), "{op}: non-finite value");
        for (t, x) in inputs.iter().enumerate() {
            let picks = sample(&mut rng, x.len(), x.len().min(8));
            for i in picks {
                let mut plus = inputs.clone();
                plus[t].data_mut()[i] += STEP;
                let mut minus = inputs.clone();
                minus[t].data_mut()[i] -= STEP;
                let numeric = (value_only(&plus, &build) - value_only(&minus, &build)) / (2.0 * STEP);
                let analytic = grads[t][i];
                assert!(analytic.is_finite(), "{op}: non-finite gradient");
                let err = grad_rel_err(analytic, numeric);
                if err > TOLERANCE && kinked(&inputs, &build, t, i, f0) {
                    report.skipped_kinks += 1;
                    continue;
                }
                report.max_rel_err = report.max_rel_err.max(err);
                report.entries_checked += 1;
            }
        }
        report.cases += 1;
    }
    report
}

fn tiny_model(sharing: PoseSharing) -> ModelConfig {
    ModelConfig {
        input_size: 16,
        n_pose_bins: 4,
        pose_sharing: sharing,
        ..ModelConfig::default()
    }
}

/// Gradient of the full joint loss with respect to sampled network
/// parameters. Every background box is selected (a very large negative
/// ratio) so the objective is smooth; the mining selection is otherwise
/// piecewise constant in the parameters.
pub fn check_composite_loss(cases: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        op: "joint_loss".into(),
        cases: 0,
        entries_checked: 0,
        max_rel_err: 0.0,
        skipped_kinks: 0,
    };
    let scene = SceneSpec {
        canvas: 16,
        min_size: 6.0,
        max_size: 10.0,
        seed,
        ..SceneSpec::default()
    };
    let loss_cfg = LossConfig {
        neg_pos_ratio: 1e6,
        ..LossConfig::default()
    };
    let mut net_index = 0u64;
    while report.cases < cases {
        let sharing = if net_index.is_multiple_of(2) {
            PoseSharing::Share
        } else {
            PoseSharing::Separate
        };
        let m = tiny_model(sharing);
        let mut net: Network<f64> =
            Network::build(m.network_spec(), m.head_config(), m.layer_specs(), seed + net_index)
                .unwrap();
        let batch: Vec<LabeledImage> = (0..2)
            .map(|k| {
                let s = generate_scene(&scene, net_index * 2 + k).unwrap();
                LabeledImage {
                    image: s.image,
                    gts: s.objects,
                }
            })
            .collect();
        net_index += 1;
        let (_, grads) = net.loss_and_gradients(&batch, &loss_cfg).unwrap();
        let Some(grads) = grads else { continue };
        let loss_at = |net: &Network<f64>| net.loss_and_gradients(&batch, &loss_cfg).unwrap().0.l_total;

        for _ in 0..10 {
            let p = rng.gen_range(0..net.params().len());
            let i = rng.gen_range(0..net.params()[p].value.len());
            let orig = net.params()[p].value.data()[i];
            let mut at = |delta: f64| {
                net.params_mut()[p].value.data_mut()[i] = orig + delta;
                let v = loss_at(&net);
                net.params_mut()[p].value.data_mut()[i] = orig;
                v
            };
            let h = COMPOSITE_STEP;
            let (f0, up, down) = (at(0.0), at(h), at(-h));
            let mut err = grad_rel_err(grads[p][i], (up - down) / (2.0 * h));
            // A ReLU or pooling switch inside the interval shows up as
            // disagreeing one-sided slopes; retry on a much narrower one.
            if err > TOLERANCE && grad_rel_err((up - f0) / h, (f0 - down) / h) > 1e-2 {
                let h = 1e-7;
                err = grad_rel_err(grads[p][i], (at(h) - at(-h)) / (2.0 * h));
                report.skipped_kinks += 1;
            }
            report.max_rel_err = report.max_rel_err.max(err);
            report.entries_checked += 1;
            report.cases += 1;
        }
    }
    report
}
