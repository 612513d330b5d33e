//! Central finite-difference checks of every differentiable tape op and of
//! the full networks and objectives, in f64.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::kspace::build_sinc_kernel;
use crate::losses::{self, Ablation, LossConfig, MsSsimConfig, Objective};
use crate::models::{Bound, GNet, ModelConfig, Network, SrNet};
use crate::ops::{gaussian_window, Axis};
use crate::tensor::Tensor;

/// Perturbation used for the central difference.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;
/// Elements probed per input tensor.
const PROBES: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
    pub passed: bool,
}

type Builder = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn scalarize(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// Compares the tape gradient of `sum(r * build(inputs))` (fixed random `r`)
/// with central differences at up to [`PROBES`] elements per input.
pub fn check(name: &str, inputs: &[Tensor<f64>], build: &Builder) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        Tensor::from_fn(tape.value(out).shape(), |_| normal.sample(&mut rng))
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let s = scalarize(&mut tape, out, &weights)?;
        Ok(tape.scalar(s))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let root = scalarize(&mut tape, out, &weights)?;
    let grads = tape.backward(root)?;

    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut probe_inputs = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], x.shape());
        let picks: Vec<usize> = if x.numel() <= PROBES {
            (0..x.numel()).collect()
        } else {
            (0..PROBES).map(|_| rng.random_range(0..x.numel())).collect()
        };
        for i in picks {
            let orig = x.data()[i];
            probe_inputs[k].data_mut()[i] = orig + STEP;
            let up = eval(&probe_inputs)?;
            probe_inputs[k].data_mut()[i] = orig - STEP;
            let down = eval(&probe_inputs)?;
            probe_inputs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            worst = worst.max(err);
            probes += 1;
        }
    }
    Ok(CaseReport {
        name: name.to_string(),
        max_rel_err: worst,
        probes,
        passed: worst <= REL_TOL,
    })
}

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[0.1, 1]` with random signs: no element sits near zero.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Smooth image plus mild noise, in `[0, 1]`.
fn image(shape: &[usize], seed: u64) -> Tensor<f64> {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let noise = rand_tensor(shape, seed, -0.05, 0.05);
    Tensor::from_fn(shape, |i| {
        let (r, c) = ((i / w) % h, i % w);
        let v = 0.5 + 0.3 * (r as f64 * 0.7 + seed as f64).sin() * (c as f64 * 0.4).cos();
        v + noise.data()[i]
    })
}

fn net_config() -> ModelConfig {
    ModelConfig {
        n_feats: 4,
        n_blocks: 1,
        ..ModelConfig::desk()
    }
}

/// Initializes a network and perturbs every parameter so no branch is zero.
fn live<N: Network<f64>>(mut net: N, seed: u64) -> N {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("positive std");
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    net
}

fn loss_config() -> LossConfig {
    LossConfig {
        ms_ssim: MsSsimConfig::with_scales(2, 3).expect("valid scales"),
        sinc_taps: 7,
        ..LossConfig::desk()
    }
}

fn split_bound(vars: &[Var], n: usize) -> (Bound, &[Var]) {
    (
        Bound {
            vars: vars[..n].to_vec(),
        },
        &vars[n..],
    )
}

fn params_of<N: Network<f64>>(net: &N) -> Vec<Tensor<f64>> {
    net.params().into_iter().cloned().collect()
}

type CaseFn = fn() -> Result<CaseReport>;

/// Every shipped case, by name.
pub fn cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("conv2d", || {
            let ins = [
                rand_tensor(&[2, 2, 5, 6], 1, -1.0, 1.0),
                rand_tensor(&[3, 2, 3, 3], 2, -1.0, 1.0),
                rand_tensor(&[3], 3, -1.0, 1.0),
            ];
            check("conv2d", &ins, &|t, v| t.conv2d(v[0], v[1], v[2]))
        }),
        ("conv1d_width", || {
            let ins = [
                rand_tensor(&[1, 2, 5, 7], 4, -1.0, 1.0),
                rand_tensor(&[2, 2, 5], 5, -1.0, 1.0),
                rand_tensor(&[2], 6, -1.0, 1.0),
            ];
            check("conv1d_width", &ins, &|t, v| t.conv1d_axis(v[0], v[1], v[2], Axis::Width))
        }),
        ("conv1d_height", || {
            let ins = [
                rand_tensor(&[1, 2, 7, 5], 7, -1.0, 1.0),
                rand_tensor(&[2, 2, 5], 8, -1.0, 1.0),
                rand_tensor(&[2], 9, -1.0, 1.0),
            ];
            check("conv1d_height", &ins, &|t, v| t.conv1d_axis(v[0], v[1], v[2], Axis::Height))
        }),
        ("leaky_relu", || {
            check("leaky_relu", &[away_from_zero(&[2, 3, 4], 10)], &|t, v| t.leaky_relu(v[0], 0.1))
        }),
        ("add", || {
            let ins = [rand_tensor(&[3, 4], 11, -1.0, 1.0), rand_tensor(&[3, 4], 12, -1.0, 1.0)];
            check("add", &ins, &|t, v| t.add(v[0], v[1]))
        }),
        ("sub", || {
            let ins = [rand_tensor(&[3, 4], 13, -1.0, 1.0), rand_tensor(&[3, 4], 14, -1.0, 1.0)];
            check("sub", &ins, &|t, v| t.sub(v[0], v[1]))
        }),
        ("mul", || {
            let ins = [rand_tensor(&[3, 4], 15, -1.0, 1.0), rand_tensor(&[3, 4], 16, -1.0, 1.0)];
            check("mul", &ins, &|t, v| t.mul(v[0], v[1]))
        }),
        ("div", || {
            let ins = [rand_tensor(&[3, 4], 17, -1.0, 1.0), away_from_zero(&[3, 4], 18)];
            check("div", &ins, &|t, v| t.div(v[0], v[1]))
        }),
        ("scale", || {
            check("scale", &[rand_tensor(&[5], 19, -1.0, 1.0)], &|t, v| Ok(t.scale(v[0], -2.5)))
        }),
        ("add_scalar", || {
            check("add_scalar", &[rand_tensor(&[5], 20, -1.0, 1.0)], &|t, v| {
                Ok(t.add_scalar(v[0], 0.3))
            })
        }),
        ("abs", || check("abs", &[away_from_zero(&[6], 21)], &|t, v| Ok(t.abs(v[0])))),
        ("powf", || {
            check("powf", &[rand_tensor(&[6], 22, 0.2, 2.0)], &|t, v| Ok(t.powf(v[0], 0.3)))
        }),
        ("clamp_min", || {
            check("clamp_min", &[away_from_zero(&[8], 23)], &|t, v| Ok(t.clamp_min(v[0], 0.0)))
        }),
        ("pixel_shuffle", || {
            check("pixel_shuffle", &[rand_tensor(&[2, 4, 3, 3], 24, -1.0, 1.0)], &|t, v| {
                t.pixel_shuffle(v[0], 2)
            })
        }),
        ("pixel_unshuffle", || {
            check("pixel_unshuffle", &[rand_tensor(&[2, 1, 4, 6], 25, -1.0, 1.0)], &|t, v| {
                t.pixel_unshuffle(v[0], 2)
            })
        }),
        ("f_crop", || {
            check("f_crop", &[rand_tensor(&[2, 1, 8, 12], 26, -1.0, 1.0)], &|t, v| {
                t.f_crop(v[0], 2)
            })
        }),
        ("sinc_downsample", || {
            let kernel = Arc::new(build_sinc_kernel(7, 2, None)?);
            check("sinc_downsample", &[rand_tensor(&[2, 1, 8, 10], 27, -1.0, 1.0)], &move |t, v| {
                t.sinc_downsample(v[0], &kernel)
            })
        }),
        ("blur_valid", || {
            let kernel: Arc<[f64]> = gaussian_window(5, 1.5)?.into();
            check("blur_valid", &[rand_tensor(&[1, 2, 9, 8], 28, -1.0, 1.0)], &move |t, v| {
                t.blur_valid(v[0], &kernel)
            })
        }),
        ("avg_pool2", || {
            check("avg_pool2", &[rand_tensor(&[1, 2, 5, 6], 29, -1.0, 1.0)], &|t, v| {
                t.avg_pool2(v[0])
            })
        }),
        ("mean_per_item", || {
            check("mean_per_item", &[rand_tensor(&[3, 2, 2], 30, -1.0, 1.0)], &|t, v| {
                t.mean_per_item(v[0])
            })
        }),
        ("mean", || check("mean", &[rand_tensor(&[4, 3], 31, -1.0, 1.0)], &|t, v| Ok(t.mean(v[0])))),
        ("sum", || check("sum", &[rand_tensor(&[4, 3], 32, -1.0, 1.0)], &|t, v| Ok(t.sum(v[0])))),
        ("concat", || {
            let ins = [rand_tensor(&[2, 3], 33, -1.0, 1.0), rand_tensor(&[1, 3], 34, -1.0, 1.0)];
            check("concat", &ins, &|t, v| t.concat(&[v[0], v[1]]))
        }),
        ("l1", || {
            let x = image(&[2, 1, 8, 8], 35);
            let y = image(&[2, 1, 8, 8], 36);
            check("l1", &[x, y], &|t, v| losses::l1_items(t, v[0], v[1]))
        }),
        ("ms_ssim", || {
            let x = image(&[2, 1, 16, 16], 37);
            let y = image(&[2, 1, 16, 16], 38);
            let cfg = MsSsimConfig::with_scales(3, 3)?;
            check("ms_ssim", &[x, y], &move |t, v| losses::ms_ssim_items(t, v[0], v[1], &cfg))
        }),
        ("l_d", || {
            let x = image(&[2, 1, 12, 12], 39);
            let y = image(&[2, 1, 12, 12], 40);
            let cfg = loss_config();
            check("l_d", &[x, y], &move |t, v| losses::l_d_items(t, v[0], v[1], &cfg))
        }),
        ("srnet", || {
            let net = live(SrNet::new(&net_config(), 41)?, 42);
            let mut ins = params_of(&net);
            let n = ins.len();
            ins.push(image(&[1, 1, 8, 8], 43));
            check("srnet", &ins, &move |t, v| {
                let (b, rest) = split_bound(v, n);
                net.forward(t, &b, rest[0])
            })
        }),
        ("gnet", || {
            let net = live(GNet::new(&net_config(), 44)?, 45);
            let mut ins = params_of(&net);
            let n = ins.len();
            ins.push(image(&[1, 1, 8, 8], 46));
            check("gnet", &ins, &move |t, v| {
                let (b, rest) = split_bound(v, n);
                net.forward(t, &b, rest[0])
            })
        }),
        ("srnet_plain", || {
            let cfg = ModelConfig {
                variant: crate::models::BlockVariant::Plain,
                ..net_config()
            };
            let net = live(SrNet::new(&cfg, 47)?, 48);
            let mut ins = params_of(&net);
            let n = ins.len();
            ins.push(image(&[1, 1, 8, 8], 49));
            check("srnet_plain", &ins, &move |t, v| {
                let (b, rest) = split_bound(v, n);
                net.forward(t, &b, rest[0])
            })
        }),
        ("loss_ss", || {
            let f = live(SrNet::new(&net_config(), 50)?, 51);
            let obj = Objective::new(loss_config())?;
            let batch = image(&[2, 1, 16, 16], 52);
            check("loss_ss", &params_of(&f), &move |t, v| {
                obj.loss_ss(t, &f, &Bound { vars: v.to_vec() }, &batch)
            })
        }),
        ("loss_fid", || {
            let f = live(SrNet::new(&net_config(), 53)?, 54);
            let obj = Objective::new(loss_config())?;
            let batch = image(&[2, 1, 16, 16], 55);
            check("loss_fid", &params_of(&f), &move |t, v| {
                obj.loss_fid(t, &f, &Bound { vars: v.to_vec() }, &batch)
            })
        }),
        ("loss_g", || {
            let g = live(GNet::new(&net_config(), 56)?, 57);
            let obj = Objective::new(loss_config())?;
            let a = image(&[2, 1, 16, 16], 58);
            let b = image(&[1, 1, 32, 32], 59);
            check("loss_g", &params_of(&g), &move |t, v| {
                obj.loss_g(t, &g, &Bound { vars: v.to_vec() }, &[&a, &b])
            })
        }),
        ("loss_sinc", || {
            let f = live(SrNet::new(&net_config(), 60)?, 61);
            let g = live(GNet::new(&net_config(), 62)?, 63);
            let obj = Objective::new(loss_config())?;
            let batch = image(&[2, 1, 16, 16], 64);
            check("loss_sinc", &params_of(&f), &move |t, v| {
                obj.loss_sinc(t, &f, &Bound { vars: v.to_vec() }, &g, &[&batch])
            })
        }),
        ("loss_total", || {
            let f = live(SrNet::new(&net_config(), 65)?, 66);
            let g = live(GNet::new(&net_config(), 67)?, 68);
            let obj = Objective::new(loss_config())?;
            let batch = image(&[2, 1, 16, 16], 69);
            check("loss_total", &params_of(&f), &move |t, v| {
                let b = Bound { vars: v.to_vec() };
                Ok(obj.loss_total(t, &f, &b, Some(&g), &batch, Ablation::default())?.total)
            })
        }),
    ]
}

/// Runs all cases whose name contains `filter` (all when `None`).
pub fn run(filter: Option<&str>) -> Result<Vec<CaseReport>> {
    cases()
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(_, case)| case())
        .collect()
}
