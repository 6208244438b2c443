//! Central finite-difference checks of analytic gradients.

use posemae_core::loss::{f_adv, l_edge, l_rec};
use posemae_core::model::{channel_attention, spadain, Model, ModelConfig};
use posemae_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{chain_edges, random_points, rng};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Input {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    /// Whether the check differentiates with respect to this input.
    pub diff: bool,
}

fn input(data: Vec<f64>, shape: &[usize]) -> Input {
    Input { data, shape: shape.to_vec(), diff: true }
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.worst < TOL
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|)`, falling back to the absolute error for vanishing gradients.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(n.iter().copied()));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

type Forward<'a> = &'a dyn Fn(&[Tensor]) -> Tensor;

fn weighted(f: Forward, ts: &[Tensor], w: &Tensor) -> Tensor {
    f(ts).mul(w).expect("weights match the output shape").sum()
}

/// One trial: analytic gradient of `sum(w * f(inputs))` against central differences.
pub fn check_once(inputs: &[Input], f: Forward, rng: &mut ChaCha8Rng) -> f64 {
    let consts: Vec<Tensor> = inputs.iter().map(|i| Tensor::new(i.data.clone(), &i.shape).unwrap()).collect();
    let out_shape = f(&consts).shape().to_vec();
    let n_out: usize = out_shape.iter().product();
    let w = Tensor::new((0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect(), &out_shape).unwrap();

    let vars: Vec<Tensor> = inputs
        .iter()
        .map(|i| {
            if i.diff {
                Tensor::variable(i.data.clone(), &i.shape).unwrap()
            } else {
                Tensor::new(i.data.clone(), &i.shape).unwrap()
            }
        })
        .collect();
    weighted(f, &vars, &w).backward().unwrap();

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (k, inp) in inputs.iter().enumerate() {
        if !inp.diff {
            continue;
        }
        let g = vars[k].grad().unwrap_or_else(|| vec![0.0; inp.data.len()]);
        for j in 0..inp.data.len() {
            let at = |delta: f64| {
                let mut ts = consts.clone();
                let mut d = inp.data.clone();
                d[j] += delta;
                ts[k] = Tensor::new(d, &inp.shape).unwrap();
                weighted(f, &ts, &w).item()
            };
            numeric.push((at(H) - at(-H)) / (2.0 * H));
            analytic.push(g[j]);
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn check_op(
    name: &'static str,
    trials: usize,
    seed: u64,
    gen: &dyn Fn(&mut ChaCha8Rng) -> Vec<Input>,
    f: Forward,
) -> OpReport {
    let mut r = rng(seed);
    let worst = (0..trials).map(|_| check_once(&gen(&mut r), f, &mut r)).fold(0.0, f64::max);
    OpReport { name, trials, worst }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Magnitudes in `[lo, hi)` with random signs, keeping values away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

fn bcn(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(2..=6)]
}

fn numel(s: &[usize]) -> usize {
    s.iter().product()
}

fn rand3(rng: &mut ChaCha8Rng) -> Input {
    let s = bcn(rng);
    input(uniform(rng, numel(&s), -1.0, 1.0), &s)
}

fn pair(rng: &mut ChaCha8Rng) -> Vec<Input> {
    let s = bcn(rng);
    vec![input(uniform(rng, numel(&s), -1.0, 1.0), &s), input(uniform(rng, numel(&s), -1.0, 1.0), &s)]
}

/// Every differentiable tensor operation and composite layer, `trials` random cases each.
pub fn op_suite(trials: usize) -> Vec<OpReport> {
    let mut out = Vec::new();
    let mut seed = 100;
    let mut run = |name: &'static str, gen: &dyn Fn(&mut ChaCha8Rng) -> Vec<Input>, f: Forward| {
        seed += 1;
        out.push(check_op(name, trials, seed, gen, f));
    };

    run(
        "matmul",
        &|r| {
            let (b, p, q, k) =
                (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
            vec![
                input(uniform(r, b * p * q, -1.0, 1.0), &[b, p, q]),
                input(uniform(r, b * q * k, -1.0, 1.0), &[b, q, k]),
            ]
        },
        &|t| t[0].matmul(&t[1]).unwrap(),
    );
    run(
        "pointwise_linear",
        &|r| {
            let (b, cin, cout, n) =
                (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=6));
            vec![
                input(uniform(r, b * cin * n, -1.0, 1.0), &[b, cin, n]),
                input(uniform(r, cout * cin, -1.0, 1.0), &[cout, cin]),
                input(uniform(r, cout, -1.0, 1.0), &[cout]),
            ]
        },
        &|t| t[0].pointwise_linear(&t[1], &t[2]).unwrap(),
    );
    for axis in 0..3 {
        let names = ["softmax(axis 0)", "softmax(axis 1)", "softmax(axis 2)"];
        run(names[axis], &|r| vec![rand3(r)], &move |t| t[0].softmax(axis).unwrap());
    }
    run("instance_norm", &|r| vec![rand3(r)], &|t| t[0].instance_norm(1e-5).unwrap());
    run(
        "relu",
        &|r| {
            let s = bcn(r);
            vec![input(away_from_zero(r, numel(&s), 0.01, 1.0), &s)]
        },
        &|t| t[0].relu(),
    );
    run("tanh", &|r| vec![rand3(r)], &|t| t[0].tanh());
    run("exp", &|r| vec![rand3(r)], &|t| t[0].exp());
    run(
        "sqrt",
        &|r| {
            let s = bcn(r);
            vec![input(uniform(r, numel(&s), 0.2, 2.0), &s)]
        },
        &|t| t[0].sqrt(),
    );
    run(
        "recip",
        &|r| {
            let s = bcn(r);
            vec![input(away_from_zero(r, numel(&s), 0.3, 2.0), &s)]
        },
        &|t| t[0].recip(),
    );
    run("mul_scalar", &|r| vec![rand3(r)], &|t| t[0].mul_scalar(-1.7));
    run("add_scalar", &|r| vec![rand3(r)], &|t| t[0].add_scalar(0.3));
    run("add", &pair, &|t| t[0].add(&t[1]).unwrap());
    run("sub", &pair, &|t| t[0].sub(&t[1]).unwrap());
    run("mul", &pair, &|t| t[0].mul(&t[1]).unwrap());
    run("scale", &|r| vec![rand3(r), input(uniform(r, 1, -2.0, 2.0), &[1])], &|t| t[0].scale(&t[1]).unwrap());
    run("sum", &|r| vec![rand3(r)], &|t| t[0].sum());
    for axis in 0..3 {
        let names = ["sum_axis(0)", "sum_axis(1)", "sum_axis(2)"];
        run(names[axis], &|r| vec![rand3(r)], &move |t| t[0].sum_axis(axis).unwrap());
    }
    run(
        "max_over_axis",
        &|r| {
            // Distinct values at least 0.05 apart, so no perturbation changes the argmax.
            let s = bcn(r);
            let mut v: Vec<f64> = (0..numel(&s)).map(|i| i as f64 * 0.05 - 1.0).collect();
            v.shuffle(r);
            vec![input(v, &s)]
        },
        &|t| t[0].max_over_axis().unwrap(),
    );
    run(
        "tile",
        &|r| {
            let (b, c) = (r.random_range(1..=2), r.random_range(1..=4));
            vec![input(uniform(r, b * c, -1.0, 1.0), &[b, c, 1])]
        },
        &|t| t[0].tile(5).unwrap(),
    );
    run("gather", &|r| vec![rand3(r)], &|t| {
        let n = t[0].shape()[2];
        t[0].gather(&[n - 1, 0, n - 1, n / 2]).unwrap()
    });
    run("transpose", &|r| vec![rand3(r)], &|t| t[0].transpose().unwrap());
    run("reshape", &|r| vec![rand3(r)], &|t| {
        let s = t[0].shape().to_vec();
        t[0].reshape(&[s[0], s[1] * s[2]]).unwrap()
    });
    run(
        "channel_attention",
        &|r| {
            let s = bcn(r);
            let mut v: Vec<Input> = (0..3).map(|_| input(uniform(r, numel(&s), -1.0, 1.0), &s)).collect();
            v.push(input(uniform(r, 1, -2.0, 2.0), &[1]));
            v.push(input(uniform(r, numel(&s), -1.0, 1.0), &s));
            v
        },
        &|t| channel_attention(&t[0], &t[1], &t[2], &t[3], &t[4]).unwrap(),
    );
    run(
        "spadain",
        &|r| {
            let s = bcn(r);
            (0..3).map(|_| input(uniform(r, numel(&s), -1.0, 1.0), &s)).collect()
        },
        &|t| spadain(&t[0], &t[1], &t[2], 1e-5).unwrap(),
    );
    let points = |r: &mut ChaCha8Rng| {
        let n = r.random_range(2..=8);
        (0..2).map(|_| input(uniform(r, 3 * n, -1.0, 1.0), &[1, 3, n])).collect::<Vec<_>>()
    };
    run("l_rec", &points, &|t| l_rec(&t[0], &t[1]).unwrap());
    run(
        "l_edge",
        &|r| {
            let mut v = points(r);
            v[1].diff = false;
            v
        },
        &|t| l_edge(&t[0], &t[1], &chain_edges(t[0].shape()[2])).unwrap(),
    );
    run("f_adv", &|r| points(r), &|t| f_adv(&t[0], &t[1], 1e-8).unwrap());
    out
}

/// Full model at uniform width `width` with `n` pose and identity points. Each trial
/// checks every pose and identity coordinate, 48 random parameter coordinates and
/// one random direction through all parameters.
pub fn model_check(trials: usize, width: usize, n: usize) -> OpReport {
    model_check_with_step(trials, width, n, H)
}

/// [`model_check`] with central differences of step `h`.
pub fn model_check_with_step(trials: usize, width: usize, n: usize, h: f64) -> OpReport {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut model = Model::new(ModelConfig::uniform(width), r.random()).unwrap();
        for i in 0..4 {
            let g = model.decoder_layout(i).gamma;
            model.params_mut().values_mut(g)[0] = r.random_range(-1.0..1.0);
        }
        let pose = random_points(&mut r, n, 0.8);
        let id = random_points(&mut r, n, 0.8);
        let plan = model.plan(&pose, 0.0, false, &mut r).unwrap();
        let w = Tensor::new(uniform(&mut r, 3 * n, -1.0, 1.0), &[1, 3, n]).unwrap();
        let loss = |m: &Model, pose: &Tensor, id: &Tensor| {
            let p = m.bind(false);
            m.forward_planned(&p, pose, id, &plan).unwrap().mul(&w).unwrap().sum().item()
        };

        let p = model.bind(true);
        let (pose_t, id_t) = (Tensor::from_points(&pose, true), Tensor::from_points(&id, true));
        model.forward_planned(&p, &pose_t, &id_t, &plan).unwrap().mul(&w).unwrap().sum().backward().unwrap();
        let (pose_g, id_g) = (pose_t.grad().unwrap(), id_t.grad().unwrap());
        let grads: Vec<Vec<f64>> = p.iter().map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();

        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let pose_c = Tensor::from_points(&pose, false);
        let id_c = Tensor::from_points(&id, false);
        for (which, g) in [(0, &pose_g), (1, &id_g)] {
            let base = if which == 0 { &pose } else { &id };
            for j in 0..3 * n {
                let at = |delta: f64| {
                    let mut pts = base.clone();
                    pts[j % n][j / n] += delta;
                    let t = Tensor::from_points(&pts, false);
                    if which == 0 {
                        loss(&model, &t, &id_c)
                    } else {
                        loss(&model, &pose_c, &t)
                    }
                };
                numeric.push((at(h) - at(-h)) / (2.0 * h));
                analytic.push(g[j]);
            }
        }
        let slots = model.params().len();
        for _ in 0..48 {
            let slot = r.random_range(0..slots);
            let j = r.random_range(0..grads[slot].len());
            let mut at = |delta: f64| {
                model.params_mut().values_mut(slot)[j] += delta;
                let v = loss(&model, &pose_c, &id_c);
                model.params_mut().values_mut(slot)[j] -= delta;
                v
            };
            let (plus, minus) = (at(h), at(-h));
            numeric.push((plus - minus) / (2.0 * h));
            analytic.push(grads[slot][j]);
        }
        let dir: Vec<Vec<f64>> = grads.iter().map(|g| uniform(&mut r, g.len(), -1.0, 1.0)).collect();
        let unit = 1.0 / norm(dir.iter().flatten().copied());
        let shifted = |sign: f64| {
            let mut m = model.clone();
            for (slot, d) in dir.iter().enumerate() {
                for (v, dv) in m.params_mut().values_mut(slot).iter_mut().zip(d) {
                    *v += sign * h * dv * unit;
                }
            }
            loss(&m, &pose_c, &id_c)
        };
        numeric.push((shifted(1.0) - shifted(-1.0)) / (2.0 * h));
        analytic.push(grads.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d * unit).sum());
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    OpReport { name: "full model", trials, worst }
}
