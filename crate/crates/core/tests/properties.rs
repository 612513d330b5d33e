//! Property tests for operator, loss and data invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use usrgr::data::{decode_raster, denormalize, encode_raster, gen_phantom, normalize, PhantomSpec};
use usrgr::kspace::{build_sinc_kernel, f_crop, f_crop_adjoint, sinc_downsample};
use usrgr::losses::{l_d_value, ms_ssim_value, LossConfig, MsSsimConfig, Objective};
use usrgr::ops::{conv1d_axis, conv2d, pixel_shuffle, pixel_unshuffle, Axis};
use usrgr::{Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unit(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

fn lin(a: f64, x: &Tensor<f64>, b: f64, y: &Tensor<f64>) -> Tensor<f64> {
    x.zip_map(y, |p, q| a * p + b * q).unwrap()
}

fn rel_err(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let scale = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    x.max_abs_diff(y).unwrap() / scale
}

fn phantom_batch(n: usize, size: usize, seed: u64) -> Tensor<f64> {
    let items: Vec<Tensor<f64>> = (0..n)
        .map(|i| {
            gen_phantom::<f64>(&PhantomSpec::random(size, size, seed + i as u64))
                .unwrap()
                .reshape(&[1, size, size])
                .unwrap()
        })
        .collect();
    Tensor::stack(&items).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn convolutions_are_affine_in_x(
        seed in any::<u64>(),
        c_in in 1usize..4,
        c_out in 1usize..4,
        h in 3usize..10,
        w in 3usize..10,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let x1 = random(&[2, c_in, h, w], seed);
        let x2 = random(&[2, c_in, h, w], seed ^ 1);
        let bias = random(&[c_out], seed ^ 2);
        let zero = Tensor::zeros(&[c_out]);
        let k2 = random(&[c_out, c_in, 3, 3], seed ^ 3);
        let k1 = random(&[c_out, c_in, 5], seed ^ 4);

        let lhs = conv2d(&lin(a, &x1, b, &x2), &k2, &zero).unwrap();
        let rhs = lin(a, &conv2d(&x1, &k2, &zero).unwrap(), b, &conv2d(&x2, &k2, &zero).unwrap());
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-6);

        // bias enters once
        let with_bias = conv2d(&x1, &k2, &bias).unwrap();
        let shifted = conv2d(&x1, &k2, &zero).unwrap();
        let (_, _, oh, ow) = with_bias.dims4().unwrap();
        for (i, (p, q)) in with_bias.data().iter().zip(shifted.data()).enumerate() {
            let c = (i / (oh * ow)) % c_out;
            prop_assert!((p - q - bias.data()[c]).abs() <= 1e-12);
        }

        for axis in [Axis::Width, Axis::Height] {
            let lhs = conv1d_axis(&lin(a, &x1, b, &x2), &k1, &zero, axis).unwrap();
            let rhs = lin(
                a,
                &conv1d_axis(&x1, &k1, &zero, axis).unwrap(),
                b,
                &conv1d_axis(&x2, &k1, &zero, axis).unwrap(),
            );
            prop_assert!(rel_err(&lhs, &rhs) <= 1e-6);
        }
    }

    #[test]
    fn pixel_shuffle_is_a_permutation(seed in any::<u64>(), c in 1usize..3, h in 1usize..6, w in 1usize..6) {
        let x = random(&[2, 4 * c, h, w], seed);
        let y = pixel_shuffle(&x, 2).unwrap();
        prop_assert_eq!(y.shape(), &[2, c, 2 * h, 2 * w][..]);
        let mut a = x.data().to_vec();
        let mut b = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn backward_twice_gives_identical_gradients(seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.param(random(&[1, 2, 6, 6], seed));
        let w = tape.param(random(&[3, 2, 3, 3], seed ^ 7));
        let b = tape.param(random(&[3], seed ^ 8));
        let y = tape.conv2d(x, w, b).unwrap();
        let y = tape.leaky_relu(y, 0.2).unwrap();
        let y = tape.mul(y, y).unwrap();
        let loss = tape.mean(y);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        for v in [x, w, b] {
            prop_assert_eq!(g1.get(v), g2.get(v));
        }
    }

    #[test]
    fn f_crop_is_linear_with_matching_adjoint(
        seed in any::<u64>(),
        h in 1usize..6,
        w in 1usize..6,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let (h, w) = (8 * h, 8 * w);
        let x = random(&[h, w], seed);
        let y = random(&[h, w], seed ^ 1);
        let lhs = f_crop(&lin(a, &x, b, &y), 2).unwrap();
        let rhs = lin(a, &f_crop(&x, 2).unwrap(), b, &f_crop(&y, 2).unwrap());
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-6);

        let small = random(&[h / 2, w / 2], seed ^ 2);
        let l = f_crop(&x, 2).unwrap().dot(&small).unwrap();
        let r = x.dot(&f_crop_adjoint(&small, 2).unwrap()).unwrap();
        prop_assert!((l - r).abs() <= 1e-5 * l.abs().max(r.abs()).max(1.0));

        let twice = f_crop(&f_crop(&x, 2).unwrap(), 2).unwrap();
        prop_assert!(twice.max_abs_diff(&f_crop(&x, 4).unwrap()).unwrap() <= 1e-5);
    }

    #[test]
    fn sinc_residual_never_grows_with_taps(seed in any::<u64>()) {
        let x = unit(&[64, 64], seed);
        let exact = f_crop(&x, 2).unwrap();
        let mut last = f64::INFINITY;
        for taps in [7, 15, 31, 63] {
            let k = build_sinc_kernel(taps, 2, Some(64)).unwrap();
            let r = sinc_downsample(&x, &k).unwrap().max_abs_diff(&exact).unwrap();
            prop_assert!(r <= last, "taps {taps}: {r} > {last}");
            last = r;
        }
    }

    #[test]
    fn losses_are_finite_and_nonnegative(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let cfg = LossConfig {
            alpha,
            ms_ssim: MsSsimConfig::with_scales(2, 7).unwrap(),
            ..LossConfig::desk()
        };
        let x = unit(&[2, 1, 16, 16], seed);
        let y = unit(&[2, 1, 16, 16], seed ^ 5);
        let d = l_d_value(&x, &y, &cfg).unwrap();
        prop_assert!(d.is_finite() && d >= 0.0);
        prop_assert_eq!(l_d_value(&x, &x, &cfg).unwrap(), 0.0);
        if alpha < 1.0 {
            prop_assert!(d > 0.0);
        }

        let obj = Objective::new(cfg.clone()).unwrap();
        let mut tape = Tape::new();
        let hr = tape.constant(unit(&[2, 1, 32, 32], seed ^ 6));
        let items = obj.sinc_hinge_items(&mut tape, hr, y.clone()).unwrap();
        prop_assert!(tape.value(items).data().iter().all(|&v| v.is_finite() && v >= cfg.hinge_floor));
    }

    #[test]
    fn ms_ssim_tolerates_small_offsets(seed in any::<u64>(), c in -0.02f64..0.02) {
        let cfg = MsSsimConfig::with_scales(3, 7).unwrap();
        let x = phantom_batch(2, 32, seed % 1000);
        let shifted = x.map(|v| v + c);
        prop_assert!(ms_ssim_value(&x, &shifted, &cfg).unwrap() >= 0.99);
    }

    #[test]
    fn phantoms_regenerate_and_have_edges(seed in any::<u64>(), size in 4usize..17) {
        let size = 4 * size;
        let spec = PhantomSpec::random(size, size, seed);
        let a: Tensor<f64> = gen_phantom(&spec).unwrap();
        let b: Tensor<f64> = gen_phantom(&PhantomSpec::random(size, size, seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data().iter().all(|&v| v >= 0.0));

        let mut jump = 0.0f64;
        for i in 0..size {
            for j in 0..size {
                let v = a.get(&[i, j]);
                if j + 1 < size {
                    jump = jump.max((v - a.get(&[i, j + 1])).abs());
                }
                if i + 1 < size {
                    jump = jump.max((v - a.get(&[i + 1, j])).abs());
                }
            }
        }
        prop_assert!(jump >= 0.2, "largest step {jump}");
    }

    #[test]
    fn normalize_and_rasters_round_trip(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, scale in 0.01f64..100.0) {
        let x = unit(&[h, w], seed).map(|v| v * scale);
        let (n, stat) = normalize(&x);
        prop_assert!(n.max_value() <= 1.0);
        let back = denormalize(&n, stat);
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-7 * scale.max(1.0));

        prop_assert_eq!(decode_raster::<f64>(&encode_raster(&x)).unwrap(), x.clone());
        let x32: Tensor<f32> = x.cast();
        prop_assert_eq!(decode_raster::<f32>(&encode_raster(&x32)).unwrap(), x32);
    }
}
