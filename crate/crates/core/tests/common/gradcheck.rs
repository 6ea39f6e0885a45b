//! Finite-difference gradient checks (fourth-order central, h = 1e-3).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relight_core::losses::{stage1_terms, FilterBank, FocalParams, KernelKind, Stage1Target, SubbandSpec};
use relight_core::nn::{Stage1Vars, Tape, Tensor, Var};
use relight_core::Result;

const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero by `gap`, with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar `Σ r ⊙ f(inputs)` with fixed random weights `r`.
fn scalar(inputs: &[Tensor], build: &Build, weights: &mut Option<Tensor>, seed: u64) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let r = weights
        .get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            rand_tensor(&mut rng, &shape, -1.0, 1.0)
        })
        .clone();
    let rv = tape.input(r);
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    (value, g)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        diff
    } else {
        diff / na.max(nb)
    }
}

/// Worst relative error over all inputs of one trial.
fn check_once(inputs: Vec<Tensor>, build: &Build, seed: u64) -> f64 {
    let mut weights = None;
    let (_, auto) = scalar(&inputs, build, &mut weights, seed);
    let mut worst: f64 = 0.0;
    for (i, g) in auto.iter().enumerate() {
        let mut fd = vec![0.0; g.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut at = |offset: f64| {
                let mut shifted = inputs.clone();
                shifted[i].data_mut()[j] += offset;
                scalar(&shifted, build, &mut weights, seed).0
            };
            let (f1, fm1) = (at(H), at(-H));
            let (f2, fm2) = (at(2.0 * H), at(-2.0 * H));
            *slot = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * H);
        }
        worst = worst.max(rel_err(g.data(), &fd));
    }
    worst
}

/// Worst relative error of one named check.
pub type Outcome = (String, f64);

fn check(out: &mut Vec<Outcome>, name: &str, trials: u64, gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, build: &Build) {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        worst = worst.max(check_once(gen(&mut rng), build, t));
    }
    out.push((name.to_string(), worst));
}

pub fn conv2d_stride_one_and_two() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (stride, k) in [(1, 3), (2, 3), (1, 1)] {
        check(
            &mut out,
            &format!("conv2d s{stride} k{k}"),
            TRIALS,
            |rng| {
                let h = rng.gen_range(3..7);
                let w = rng.gen_range(3..7);
                vec![
                    rand_tensor(rng, &[2, h, w], -1.0, 1.0),
                    rand_tensor(rng, &[3, 2, k, k], -1.0, 1.0),
                    rand_tensor(rng, &[3], -1.0, 1.0),
                ]
            },
            &move |t, v| t.conv2d(v[0], v[1], v[2], stride),
        );
    }
    out
}

pub fn shape_ops() -> Vec<Outcome> {
    let mut out = Vec::new();
    check(
        &mut out,
        "upsample2x",
        TRIALS,
        |rng| vec![rand_tensor(rng, &[2, 3, 2], -1.0, 1.0)],
        &|t, v| t.upsample2x(v[0]),
    );
    check(
        &mut out,
        "concat",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[2, 3, 3], -1.0, 1.0),
                rand_tensor(rng, &[1, 3, 3], -1.0, 1.0),
            ]
        },
        &|t, v| t.concat(&[v[0], v[1], v[0]]),
    );
    check(
        &mut out,
        "slice_channels",
        TRIALS,
        |rng| vec![rand_tensor(rng, &[4, 2, 3], -1.0, 1.0)],
        &|t, v| t.slice_channels(v[0], 1, 3),
    );
    check(
        &mut out,
        "global_avg_pool",
        TRIALS,
        |rng| vec![rand_tensor(rng, &[3, 4, 2], -1.0, 1.0)],
        &|t, v| t.global_avg_pool(v[0]),
    );
    let mask = Arc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
    check(
        &mut out,
        "mask_mul",
        TRIALS,
        |rng| vec![rand_tensor(rng, &[2, 2, 3], -1.0, 1.0)],
        &move |t, v| t.mask_mul(v[0], mask.clone()),
    );
    out
}

pub fn arithmetic_ops() -> Vec<Outcome> {
    let mut out = Vec::new();
    let two = |rng: &mut ChaCha8Rng| {
        vec![
            rand_tensor(rng, &[2, 3, 3], -1.0, 1.0),
            rand_tensor(rng, &[2, 3, 3], -1.0, 1.0),
        ]
    };
    check(&mut out, "add", TRIALS, two, &|t, v| t.add(v[0], v[1]));
    check(&mut out, "sub", TRIALS, two, &|t, v| t.sub(v[0], v[1]));
    check(&mut out, "mul", TRIALS, two, &|t, v| t.mul(v[0], v[1]));
    check(&mut out, "mul self", TRIALS, two, &|t, v| t.mul(v[0], v[0]));
    check(&mut out, "scale", TRIALS, two, &|t, v| t.scale(v[0], -2.5));
    check(&mut out, "sum", TRIALS, two, &|t, v| t.sum(v[1]));
    out
}

pub fn activations() -> Vec<Outcome> {
    let mut out = Vec::new();
    // kinked activations are probed away from the kink
    let kinked = |rng: &mut ChaCha8Rng| vec![away_from_zero(rng, &[2, 3, 3], 0.01)];
    let smooth = |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[2, 3, 3], -3.0, 3.0)];
    check(&mut out, "leaky_relu", TRIALS, kinked, &|t, v| t.leaky_relu(v[0], 0.2));
    check(&mut out, "relu", TRIALS, kinked, &|t, v| t.relu(v[0]));
    check(&mut out, "sigmoid", TRIALS, smooth, &|t, v| t.sigmoid(v[0]));
    check(&mut out, "tanh", TRIALS, smooth, &|t, v| t.tanh(v[0]));
    out
}

pub fn dense_and_sh_ops() -> Vec<Outcome> {
    let mut out = Vec::new();
    check(
        &mut out,
        "linear",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[5], -1.0, 1.0),
                rand_tensor(rng, &[4, 5], -1.0, 1.0),
                rand_tensor(rng, &[4], -1.0, 1.0),
            ]
        },
        &|t, v| t.linear(v[0], v[1], v[2]),
    );
    check(
        &mut out,
        "sh_dot",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[9, 2, 3], -1.0, 1.0),
                rand_tensor(rng, &[27], -1.0, 1.0),
            ]
        },
        &|t, v| t.sh_dot(v[0], v[1]),
    );
    out
}

fn mask_8x8(rng: &mut ChaCha8Rng) -> Arc<Vec<f64>> {
    let mut m: Vec<f64> = (0..64).map(|_| rng.gen_bool(0.7) as u8 as f64).collect();
    m[0] = 1.0;
    Arc::new(m)
}

pub fn pixel_losses() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut mrng = ChaCha8Rng::seed_from_u64(77);
    let mask = mask_8x8(&mut mrng);
    let m1 = mask.clone();
    check(
        &mut out,
        "mse masked",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[3, 8, 8], 0.0, 1.0),
                rand_tensor(rng, &[3, 8, 8], 0.0, 1.0),
            ]
        },
        &move |t, v| t.mse(v[0], v[1], Some(m1.clone())),
    );
    check(
        &mut out,
        "mse vector",
        TRIALS,
        |rng| vec![rand_tensor(rng, &[27], -1.0, 1.0), rand_tensor(rng, &[27], -1.0, 1.0)],
        &|t, v| t.mse(v[0], v[1], None),
    );
    let m2 = mask.clone();
    check(
        &mut out,
        "l1 masked",
        TRIALS,
        |rng| {
            let a = rand_tensor(rng, &[3, 8, 8], 0.0, 1.0);
            let d = away_from_zero(rng, &[3, 8, 8], 0.01);
            let b = Tensor::new(
                vec![3, 8, 8],
                a.data().iter().zip(d.data()).map(|(x, y)| x + y).collect(),
            )
            .unwrap();
            vec![a, b]
        },
        &move |t, v| t.l1(v[0], v[1], Some(m2.clone())),
    );
    let m3 = mask.clone();
    let target: Arc<Vec<bool>> = Arc::new((0..64).map(|i| i % 3 == 0).collect());
    for fp in [
        FocalParams::default(),
        FocalParams { gamma: 0.0, alpha: 0.5 },
        FocalParams { gamma: 1.5, alpha: 0.7 },
    ] {
        let (m, tg) = (m3.clone(), target.clone());
        check(
            &mut out,
            "focal",
            TRIALS,
            |rng| vec![rand_tensor(rng, &[1, 8, 8], 0.05, 0.95)],
            &move |t, v| t.focal(v[0], tg.clone(), Some(m.clone()), fp),
        );
    }
    out
}

pub fn sf_loss_both_kernels() -> Vec<Outcome> {
    let mut out = Vec::new();
    for kind in [KernelKind::Normalized, KernelKind::Standard] {
        let bank = Arc::new(
            FilterBank::new(&SubbandSpec {
                kind,
                ..SubbandSpec::default()
            })
            .unwrap(),
        );
        check(
            &mut out,
            "sf",
            TRIALS,
            |rng| {
                vec![
                    rand_tensor(rng, &[2, 8, 8], 0.0, 1.0),
                    rand_tensor(rng, &[2, 8, 8], 0.0, 1.0),
                ]
            },
            &move |t, v| t.sf(v[0], v[1], bank.clone()),
        );
    }
    out
}

pub fn stage1_loss_total() -> Vec<Outcome> {
    const S: usize = 5;
    let mut out = Vec::new();
    let bank = Arc::new(FilterBank::new(&SubbandSpec::default()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mask = {
        let mut m: Vec<f64> = (0..S * S).map(|_| rng.gen_bool(0.7) as u8 as f64).collect();
        m[0] = 1.0;
        Arc::new(m)
    };
    let target = Stage1Target {
        albedo: rand_tensor(&mut rng, &[3, S, S], 0.1, 0.9),
        transport: rand_tensor(&mut rng, &[9, S, S], -0.5, 1.0),
        light: rand_tensor(&mut rng, &[27], -0.3, 1.0),
        image: rand_tensor(&mut rng, &[3, S, S], 0.0, 1.0),
        shading: rand_tensor(&mut rng, &[3, S, S], 0.0, 1.0),
        skin: Arc::new((0..S * S).map(|i| i % 4 == 0).collect()),
        mask,
    };
    // positive transport and light keep the shading away from the relu kink
    check(
        &mut out,
        "stage1 loss",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[3, S, S], 0.1, 0.9),
                rand_tensor(rng, &[1, S, S], 0.05, 0.95),
                rand_tensor(rng, &[9, S, S], 0.1, 1.0),
                rand_tensor(rng, &[27], 0.1, 1.0),
            ]
        },
        &move |t, v| {
            let pred = Stage1Vars {
                albedo: v[0],
                skin_logit: v[1],
                skin: v[1],
                transport: v[2],
                light: v[3],
            };
            let terms = stage1_terms(t, &pred, &target, &bank, FocalParams::default())?;
            let mut acc = terms[0].1;
            for (_, x) in &terms[1..] {
                acc = t.add(acc, *x)?;
            }
            Ok(acc)
        },
    );
    out
}

pub fn random_three_layer_net() -> Vec<Outcome> {
    let mut out = Vec::new();
    check(
        &mut out,
        "three-layer net",
        TRIALS,
        |rng| {
            vec![
                rand_tensor(rng, &[2, 8, 8], -1.0, 1.0),
                rand_tensor(rng, &[4, 2, 3, 3], -0.5, 0.5),
                rand_tensor(rng, &[4], -0.5, 0.5),
                rand_tensor(rng, &[3, 4, 3, 3], -0.5, 0.5),
                rand_tensor(rng, &[3], -0.5, 0.5),
                rand_tensor(rng, &[2, 5, 3, 3], -0.5, 0.5),
                rand_tensor(rng, &[2], -0.5, 0.5),
            ]
        },
        &|t, v| {
            let h = t.conv2d(v[0], v[1], v[2], 1)?;
            let h = t.tanh(h)?;
            let h = t.conv2d(h, v[3], v[4], 2)?;
            let h = t.sigmoid(h)?;
            let h = t.upsample2x(h)?;
            let h = t.concat(&[h, v[0]])?;
            t.conv2d(h, v[5], v[6], 1)
        },
    );
    out
}

/// Every check in the suite.
pub fn all() -> Vec<Outcome> {
    [
        conv2d_stride_one_and_two as fn() -> Vec<Outcome>,
        shape_ops,
        arithmetic_ops,
        activations,
        dense_and_sh_ops,
        pixel_losses,
        sf_loss_both_kernels,
        stage1_loss_total,
        random_three_layer_net,
    ]
    .iter()
    .flat_map(|f| f())
    .collect()
}
