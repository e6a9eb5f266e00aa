use adat_core::features::{conv2d_relu, extract_features, maxpool2x2, FeatureExtractor, FeatureLayout, FILTERS};
use adat_core::params::ParamStore;
use adat_core::{grad_check, Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> adat_core::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

#[test]
fn zero_frame_gives_zero_maps() {
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::zeros(&[2, 7, 9]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = g.constant(rand_tensor(&mut rng, &[FILTERS, 2, 3, 3], -1.0, 1.0));
    let b = g.constant(Tensor::zeros(&[FILTERS]));
    let y = conv2d_relu(&mut g, f, k, b).unwrap();
    assert_eq!(g.shape(y), [FILTERS, 5, 7]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn ramp_with_mean_kernel_gives_window_means() {
    let ramp: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::new(vec![1, 4, 4], ramp.clone()).unwrap());
    let k = g.constant(Tensor::full(&[FILTERS, 1, 3, 3], 1.0 / 9.0));
    let b = g.constant(Tensor::zeros(&[FILTERS]));
    let y = conv2d_relu(&mut g, f, k, b).unwrap();
    assert_eq!(g.shape(y), [FILTERS, 2, 2]);
    for c in 0..FILTERS {
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for di in 0..3 {
                    for dj in 0..3 {
                        s += ramp[(i + di) * 4 + j + dj];
                    }
                }
                let got = g.value(y).at(&[c, i, j]);
                assert!((got - s / 9.0).abs() < 1e-12, "{got} vs {}", s / 9.0);
            }
        }
    }
}

#[test]
fn channel_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::zeros(&[3, 5, 5]));
    let k = g.constant(Tensor::zeros(&[FILTERS, 1, 3, 3]));
    let b = g.constant(Tensor::zeros(&[FILTERS]));
    assert!(conv2d_relu(&mut g, f, k, b).is_err());
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = maxpool2x2(&mut g, x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let c = g.constant(Tensor::full(&[3, 6, 4], 0.7));
    let y = maxpool2x2(&mut g, c).unwrap();
    assert_eq!(g.shape(y), [3, 3, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.7));

    let big = g.constant(Tensor::zeros(&[1, 52, 65]));
    let y = maxpool2x2(&mut g, big).unwrap();
    assert_eq!(g.shape(y), [1, 26, 32]);

    let thin = g.constant(Tensor::zeros(&[1, 1, 4]));
    assert!(maxpool2x2(&mut g, thin).is_err());
}

#[test]
fn extract_features_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let fx = FeatureExtractor::new(&mut store, &mut rng, (3, 52, 65)).unwrap();
    assert_eq!(fx.layout, FeatureLayout { channels_out: 16, h_pooled: 25, w_pooled: 31 });

    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let frames = g.constant(rand_tensor(&mut rng, &[10, 3, 52, 65], 0.0, 1.0));
    let fm = fx.forward(&mut g, &p, frames).unwrap();
    assert_eq!(g.shape(fm.x_e), [10, fm.layout.dim()]);
    assert_eq!(fm.layout.dim(), 12400);

    let one = g.constant(rand_tensor(&mut rng, &[1, 3, 52, 65], 0.0, 1.0));
    let fm = fx.forward(&mut g, &p, one).unwrap();
    assert_eq!(g.shape(fm.x_e), [1, 12400]);

    let empty = g.constant(Tensor::zeros(&[0, 3, 52, 65]));
    assert!(fx.forward(&mut g, &p, empty).is_err());
}

#[test]
fn identical_frames_give_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = rand_tensor(&mut rng, &[1, 8, 8], 0.0, 1.0);
    let mut data = frame.data().to_vec();
    data.extend_from_slice(frame.data());
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![2, 1, 8, 8], data).unwrap());
    let k = g.constant(rand_tensor(&mut rng, &[FILTERS, 1, 3, 3], -1.0, 1.0));
    let b = g.constant(rand_tensor(&mut rng, &[FILTERS], -0.1, 0.1));
    let fm = extract_features(&mut g, x, k, b).unwrap();
    let v = g.value(fm.x_e);
    assert_eq!(v.row(0), v.row(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutation_equivariant_and_non_negative(m in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = rand_tensor(&mut rng, &[m, 1, 7, 6], 0.0, 1.0);
        let kernels = rand_tensor(&mut rng, &[FILTERS, 1, 3, 3], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, &[FILTERS], -0.5, 0.5);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let per = 7 * 6;
        let mut permuted = Vec::with_capacity(m * per);
        for &src in &perm {
            permuted.extend_from_slice(&frames.data()[src * per..(src + 1) * per]);
        }

        let mut g = Graph::<f64>::new();
        let (k, b) = (g.constant(kernels), g.constant(bias));
        let x = g.constant(frames);
        let xp = g.constant(Tensor::new(vec![m, 1, 7, 6], permuted).unwrap());
        let a = extract_features(&mut g, x, k, b).unwrap();
        let ap = extract_features(&mut g, xp, k, b).unwrap();
        let (va, vp) = (g.value(a.x_e), g.value(ap.x_e));
        prop_assert!(va.data().iter().all(|&v| v >= 0.0));
        for (i, &src) in perm.iter().enumerate() {
            prop_assert_eq!(vp.row(i), va.row(src));
        }
    }
}

#[test]
fn pipeline_gradient_matches_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 1, 6, 6], 0.0, 1.0),
            rand_tensor(&mut rng, &[FILTERS, 1, 3, 3], -1.0, 1.0),
            rand_tensor(&mut rng, &[FILTERS], -0.3, 0.3),
        ];
        let report = grad_check(
            |g, v| {
                let fm = extract_features(g, v[0], v[1], v[2])?;
                weighted_sum(g, fm.x_e, seed)
            },
            &inputs,
            1e-4,
        );
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}
