//! Acceptance criteria, one printed `criterion N: PASS|FAIL` line each.
//!
//! Criteria 5 to 7 train every method for 2,000 steps on three seeds. That
//! takes several CPU-hours on one core, so those run only with
//! `cargo test --release --test acceptance -- --ignored`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use usrgr::data::{
    decode_raster, encode_raster, gen_phantom, generate_dataset, load_split, DatasetSpec,
    PhantomSpec,
};
use usrgr::gradcheck;
use usrgr::kspace::{build_sinc_kernel, f_crop, f_crop_adjoint, sinc_downsample};
use usrgr::losses::{ms_ssim_value, LossConfig, MsSsimConfig, Objective};
use usrgr::metrics::{psnr, ssim, SsimConfig};
use usrgr::models::{Checkpoint, ModelConfig};
use usrgr::train::{pretrain_g, run_method, train_usrgr, EvalReport, Method, StepRecord, TrainConfig};
use usrgr::{GNet, Network, SrNet, Tape, Tensor};

fn report(n: u32, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict}  {detail}");
}

fn within(elapsed: Duration, secs: f64) -> bool {
    elapsed.as_secs_f64() < secs
}

fn uniform(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[h, w], |_| rng.random::<f64>())
}

#[test]
fn criterion_1_gibbs_overshoot() {
    let t0 = Instant::now();
    let n = 64;
    let step = Tensor::<f64>::from_fn(&[n, n], |i| if i % n >= n / 2 { 1.0 } else { 0.0 });
    let low = f_crop(&step, 2).unwrap();

    // band-limited reconstruction of the cropped spectrum on an 8x finer
    // grid; the adjoint of the mean-preserving crop has gain 1 / up^2
    let up = 8;
    let dense = f_crop_adjoint(&low, up).unwrap().map(|v| v * (up * up) as f64);
    let m = (n / 2) * up;
    let row: Vec<f64> = dense.data()[..m].to_vec();

    // truncated Fourier series of the 64-sample step, |k| < 16
    let x: Vec<f64> = step.data()[..n].to_vec();
    let coef = |k: i64| -> (f64, f64) {
        x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
            let a = -2.0 * PI * k as f64 * t as f64 / n as f64;
            (re + v * a.cos(), im + v * a.sin())
        })
    };
    let coefs: Vec<(i64, (f64, f64))> = (-15..=15).map(|k| (k, coef(k))).collect();
    let series = |pos: f64| -> f64 {
        coefs
            .iter()
            .map(|&(k, (re, im))| {
                let a = 2.0 * PI * k as f64 * pos / n as f64;
                re * a.cos() - im * a.sin()
            })
            .sum::<f64>()
            / n as f64
    };
    let oracle: Vec<f64> = (0..m).map(|j| series(j as f64 * n as f64 / m as f64)).collect();
    let max_dev = row
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let overshoot = row.iter().cloned().fold(f64::MIN, f64::max) - 1.0;
    let oracle_overshoot = oracle.iter().cloned().fold(f64::MIN, f64::max) - 1.0;
    let elapsed = t0.elapsed();
    let passed = (overshoot - 0.09).abs() <= 0.015 && max_dev <= 1e-9 && within(elapsed, 1.0);
    report(
        1,
        passed,
        &format!(
            "overshoot {:.2}% (oracle {:.2}%, target 9 +- 1.5%), max |crop - series| {max_dev:.1e}, {:.3}s",
            100.0 * overshoot,
            100.0 * oracle_overshoot,
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_2_sinc_matches_f_crop() {
    let t0 = Instant::now();
    let full = build_sinc_kernel(33, 2, Some(32)).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = uniform(32, 32, seed);
        let d = sinc_downsample(&x, &full).unwrap().max_abs_diff(&f_crop(&x, 2).unwrap()).unwrap();
        worst = worst.max(d);
    }

    // truncated period-matched kernels on 64x64 images, where 63 taps fit
    let images: Vec<Tensor<f64>> = (0..20).map(|s| uniform(64, 64, 100 + s)).collect();
    let residuals: Vec<f64> = [7, 15, 31, 63]
        .iter()
        .map(|&taps| {
            let k = build_sinc_kernel(taps, 2, Some(64)).unwrap();
            images
                .iter()
                .map(|x| sinc_downsample(x, &k).unwrap().max_abs_diff(&f_crop(x, 2).unwrap()).unwrap())
                .fold(0.0, f64::max)
        })
        .collect();
    let decreasing = residuals.windows(2).all(|w| w[1] < w[0]);
    let elapsed = t0.elapsed();
    let passed = worst <= 1e-4 && decreasing && within(elapsed, 10.0);
    report(
        2,
        passed,
        &format!(
            "full-period max diff {worst:.1e} (<= 1e-4), residual over taps 7/15/31/63: {}, {:.2}s",
            residuals.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" > "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_3_gradient_suite() {
    let t0 = Instant::now();
    let reports = gradcheck::run(None).unwrap();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let elapsed = t0.elapsed();
    let passed = failed.is_empty() && within(elapsed, 120.0);
    report(
        3,
        passed,
        &format!(
            "{} cases, worst rel err {worst:.1e} (<= 1e-4), failed {failed:?}, {:.1}s",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_4_hinge_floor() {
    let t0 = Instant::now();
    let cfg = LossConfig::desk();
    let obj = Objective::new(cfg.clone()).unwrap();
    let model = ModelConfig { n_feats: 4, n_blocks: 1, ..ModelConfig::desk() };
    let f = SrNet::<f64>::new(&model, 3).unwrap();
    let batch = Tensor::stack(&[
        gen_phantom::<f64>(&PhantomSpec::random(32, 32, 1)).unwrap().reshape(&[1, 32, 32]).unwrap(),
        gen_phantom::<f64>(&PhantomSpec::random(32, 32, 2)).unwrap().reshape(&[1, 32, 32]).unwrap(),
    ])
    .unwrap();

    // target equal to d_sinc(f(I)) drives the inner distance to zero
    let target = sinc_downsample(&f.infer(&batch).unwrap(), &obj.kernel).unwrap();
    let mut tape = Tape::new();
    let fb = f.bind(&mut tape, true);
    let input = tape.constant(batch.clone());
    let hr = f.forward(&mut tape, &fb, input).unwrap();
    let items = obj.sinc_hinge_items(&mut tape, hr, target.clone()).unwrap();
    let loss = tape.mean(items);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss).unwrap();
    let all_zero = fb
        .vars
        .iter()
        .all(|&v| grads.get(v).is_none_or(|g| g.data().iter().all(|&x| x == 0.0)));

    // sanity: away from the floor the term is larger and has a gradient
    let shifted = target.map(|v| v + 0.05);
    let mut tape = Tape::new();
    let fb = f.bind(&mut tape, true);
    let input = tape.constant(batch);
    let hr = f.forward(&mut tape, &fb, input).unwrap();
    let items = obj.sinc_hinge_items(&mut tape, hr, shifted).unwrap();
    let above = tape.mean(items);
    let above = tape.scalar(above);
    let elapsed = t0.elapsed();

    let passed = value == cfg.hinge_floor && all_zero && above > cfg.hinge_floor && within(elapsed, 1.0);
    report(
        4,
        passed,
        &format!(
            "loss {value:e} == floor {:e}, gradient exactly zero: {all_zero}, off-floor loss {above:.4}, {:.3}s",
            cfg.hinge_floor,
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

const HEAVY: &str = "literal 2,000-step desk schedule over 3 seeds needs several CPU-hours; \
                     run `cargo test --release --test acceptance -- --ignored`";

#[test]
fn criteria_5_to_7_need_the_ignored_run() {
    for n in 5..=7 {
        println!("criterion {n}: NOT RUN  {HEAVY}");
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn psnr_of(r: &EvalReport) -> f64 {
    r.psnr.expect("synthetic mode").mean
}

fn fidelity_of(r: &EvalReport) -> f64 {
    r.fidelity_psnr.expect("synthetic mode").mean
}

#[test]
#[ignore = "several CPU-hours"]
fn criteria_5_to_7_desk_training() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &DatasetSpec::default()).unwrap();
    let train: Vec<Tensor<f32>> = load_split(dir.path(), "train").unwrap().load_images().unwrap();
    let test_m = load_split(dir.path(), "test").unwrap();
    let test: Vec<(String, Tensor<f32>)> = test_m
        .entries
        .iter()
        .map(|e| e.id.clone())
        .zip(test_m.load_images().unwrap())
        .collect();

    let methods = [
        Method::Bicubic,
        Method::Usrgr,
        Method::NoFid,
        Method::NoSinc,
        Method::Plain,
        Method::DegSr,
    ];
    let mut results: Vec<Vec<EvalReport>> = vec![Vec::new(); methods.len()];
    for seed in 0..3 {
        let base = TrainConfig { seed, ..TrainConfig::desk() };
        let mut pretrained = Vec::new();
        for (i, &m) in methods.iter().enumerate() {
            let r = run_method(m, &train, &test, &base, &mut pretrained).unwrap();
            println!("seed {seed} {:<14} psnr {:.3} fidelity {:.3}", m.label(), psnr_of(&r), fidelity_of(&r));
            results[i].push(r);
        }
    }
    let per_seed = |i: usize, get: fn(&EvalReport) -> f64| -> Vec<f64> { results[i].iter().map(get).collect() };
    let diff = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x - y).collect() };
    let minutes = t0.elapsed().as_secs_f64() / 60.0;

    let gain = median(diff(per_seed(1, psnr_of), per_seed(0, psnr_of)));
    let c5 = gain >= 0.5;
    report(5, c5, &format!("median uSRGR - bicubic PSNR {gain:+.3} dB (>= 0.5), {minutes:.0} min total"));

    let fid_gain = median(diff(per_seed(1, fidelity_of), per_seed(2, fidelity_of)));
    let c6 = fid_gain >= 1.0;
    report(6, c6, &format!("median fidelity PSNR gain over no-fid {fid_gain:+.3} dB (>= 1)"));

    let full = median(per_seed(1, psnr_of));
    let mut c7 = true;
    let mut parts = Vec::new();
    for (i, &m) in methods.iter().enumerate().skip(2) {
        let other = median(per_seed(i, psnr_of));
        let tol = if m == Method::Plain { 0.1 } else { 0.0 };
        c7 &= full + tol >= other;
        parts.push(format!("{} {other:.3}", m.label()));
    }
    report(7, c7, &format!("uSRGR {full:.3} vs {}", parts.join(", ")));
    assert!(c5 && c6 && c7);
}

fn tiny_config(seed: u64) -> TrainConfig {
    let mut loss = LossConfig::desk();
    loss.ms_ssim = MsSsimConfig::with_scales(2, 7).unwrap();
    TrainConfig {
        seed,
        steps: 4,
        batch: 2,
        patch: 32,
        g_pretrain_steps: 3,
        loss,
        model: ModelConfig { n_feats: 4, n_blocks: 1, ..ModelConfig::desk() },
        ..TrainConfig::desk()
    }
}

fn tiny_run(images: &[Tensor<f64>], seed: u64) -> (Vec<u8>, Vec<u8>, Vec<StepRecord>) {
    let cfg = tiny_config(seed);
    let mut g = GNet::<f64>::new(&cfg.model, 11).unwrap();
    pretrain_g(images, &mut g, &cfg, &mut |_| {}).unwrap();
    let mut f = SrNet::<f64>::new(&cfg.model, 10).unwrap();
    let mut log = Vec::new();
    train_usrgr(images, &mut f, Some(&mut g), &cfg, &mut |r, _, _| {
        log.push(r.clone());
        Ok(())
    })
    .unwrap();
    (f.to_bytes(), g.to_bytes(), log)
}

#[test]
fn criterion_8_determinism_and_formats() {
    let images: Vec<Tensor<f64>> = (0..4)
        .map(|s| gen_phantom(&PhantomSpec::random(64, 64, s)).unwrap())
        .collect();

    let img = &images[0];
    let raster64 = decode_raster::<f64>(&encode_raster(img)).unwrap() == *img;
    let img32: Tensor<f32> = img.cast();
    let raster32 = decode_raster::<f32>(&encode_raster(&img32)).unwrap() == img32;

    let f = SrNet::<f64>::new(&ModelConfig::desk(), 5).unwrap();
    let ckpt = SrNet::<f64>::from_bytes(&f.to_bytes()).unwrap() == f;
    let f32net = SrNet::<f32>::new(&ModelConfig::desk(), 5).unwrap();
    let ckpt32 = SrNet::<f32>::from_bytes(&f32net.to_bytes()).unwrap() == f32net;

    let (fa, ga, log) = tiny_run(&images, 7);
    let (fb, gb, _) = tiny_run(&images, 7);
    let identical = fa == fb && ga == gb;

    let cfg = tiny_config(7).loss;
    let worst = log
        .iter()
        .map(|r| {
            let sum = r.l_ss + cfg.beta * r.l_f.unwrap() + cfg.gamma * r.l_sinc.unwrap();
            (sum - r.total).abs()
        })
        .fold(0.0, f64::max);
    let rows_round_trip = log
        .iter()
        .all(|r| StepRecord::parse_tsv_row(&r.tsv_row()).unwrap() == *r);

    let passed = raster64 && raster32 && ckpt && ckpt32 && identical && worst <= 1e-6 && rows_round_trip;
    report(
        8,
        passed,
        &format!(
            "raster f64/f32 {raster64}/{raster32}, checkpoint f64/f32 {ckpt}/{ckpt32}, \
             repeated f64 run identical {identical}, loss decomposition error {worst:.1e} over {} steps",
            log.len()
        ),
    );
    assert!(passed);
}

/// `(height, width, psnr, ssim)` from scikit-image 0.25 (`tests/oracles/metrics_oracle.py`).
const METRIC_ORACLE: [(usize, usize, f64, f64); 5] = [
    (32, 32, 30.969616, 0.931280),
    (48, 40, 24.947671, 0.857013),
    (64, 64, 21.425888, 0.785214),
    (40, 56, 18.926261, 0.704798),
    (36, 36, 16.989825, 0.668695),
];

fn oracle_pair(k: usize, h: usize, w: usize) -> (Tensor<f64>, Tensor<f64>) {
    let kf = k as f64;
    let at = |idx: usize| ((idx / w) as f64, (idx % w) as f64);
    let reference = Tensor::from_fn(&[h, w], |idx| {
        let (i, j) = at(idx);
        let disk = (i - h as f64 / 2.0).powi(2) + (j - w as f64 / 2.0).powi(2) < (h as f64 / 4.0).powi(2);
        0.5 + 0.35 * (0.21 * (kf + 1.0) * i).sin() * (0.17 * j + kf).cos() + if disk { 0.1 } else { 0.0 }
    });
    let pred = Tensor::from_fn(&[h, w], |idx| {
        let (i, j) = at(idx);
        reference.data()[idx] + 0.04 * (kf + 1.0) * (1.3 * i + 2.1 * j + 0.7 * kf).sin()
    });
    (reference, pred)
}

#[test]
fn criterion_9_metric_sanity() {
    let x = gen_phantom::<f64>(&PhantomSpec::random(64, 64, 3)).unwrap();
    let p20 = psnr(&x.map(|v| v + 0.1), &x).unwrap();
    let ms1 = ms_ssim_value(&x, &x, &MsSsimConfig::with_scales(3, 7).unwrap()).unwrap();

    let cfg = SsimConfig::default();
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for (k, &(h, w, want_p, want_s)) in METRIC_ORACLE.iter().enumerate() {
        let (reference, pred) = oracle_pair(k, h, w);
        dp = dp.max((psnr(&pred, &reference).unwrap() - want_p).abs());
        ds = ds.max((ssim(&pred, &reference, &cfg).unwrap() - want_s).abs());
    }
    let passed = (p20 - 20.0).abs() <= 1e-9 && ms1 == 1.0 && dp <= 0.01 && ds <= 0.001;
    report(
        9,
        passed,
        &format!(
            "PSNR(x, x+0.1) = {p20:.12} dB, MS-SSIM(x, x) = {ms1}, oracle max diff {dp:.1e} dB / {ds:.1e} SSIM"
        ),
    );
    assert!(passed);
}
