use std::collections::BTreeMap;

use fairlatent::classifier::correlation_reg;
use fairlatent::data::{load_csv, split, split_sizes, synthesize, ColumnRole, SplitSpec, SynthConfig};
use fairlatent::estimator::{
    kl_to_standard_normal, ElboNoise, EstimatorBatch, EstimatorConfig, EstimatorModel, GaussianPosterior,
};
use fairlatent::metrics::{delta_dp, delta_eo, estimation_auc, gmm_fit};
use fairlatent::mine::{mi_estimate, MineConfig, MineDiscriminator};
use fairlatent::optim::{AdamConfig, AdamState};
use fairlatent::tape::Tape;
use fairlatent::{rng, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

fn analytic_kl(mean: &[f64], log_var: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(5, 4)) {
        let mut tape = Tape::new();
        let v = tape.constant(x.scale(20.0));
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..out.rows() {
            prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_open_unit_interval(x in matrix(3, 3)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.sigmoid(v).unwrap();
        prop_assert!(tape.value(s).data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(p in matrix(3, 2), steps in 1usize..5) {
        let mut param = p.clone();
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        for _ in 0..steps {
            adam.step(&mut [&mut param], &[Tensor::zeros(3, 2)]).unwrap();
        }
        prop_assert_eq!(param, p);
    }

    #[test]
    fn kl_non_negative_and_zero_only_at_prior(
        mean in prop::collection::vec(-3.0f64..3.0, 4),
        log_var in prop::collection::vec(-4.0f64..4.0, 4),
    ) {
        let post = GaussianPosterior::new(
            Tensor::from_vec(1, 4, mean.clone()).unwrap(),
            Tensor::from_vec(1, 4, log_var.clone()).unwrap(),
        ).unwrap();
        let kl = kl_to_standard_normal(&post)[0];
        prop_assert!(kl >= 0.0);
        let at_prior = mean.iter().chain(&log_var).all(|v| *v == 0.0);
        prop_assert_eq!(kl == 0.0, at_prior);
    }

    #[test]
    fn a_encoder_ignores_irrelevant_features(shift in matrix(4, 3), seed in 0u64..50) {
        let cfg = EstimatorConfig { d_a: 2, d_z: 2, hidden: 4, ..EstimatorConfig::default() };
        let model = EstimatorModel::init(cfg, 3, 2, 2, &mut rng::seeded(seed)).unwrap();
        let mut r = rng::seeded(seed + 1);
        let xz = Tensor::randn(4, 3, &mut r);
        let xr = Tensor::randn(4, 2, &mut r);
        let y = [0, 1, 1, 0];
        let base = EstimatorBatch::new(xz.clone(), xr.clone(), &y, 2).unwrap();
        let moved = EstimatorBatch::new(xz.add(&shift).unwrap(), xr, &y, 2).unwrap();
        let (a0, _) = model.encode(&base).unwrap();
        let (a1, _) = model.encode(&moved).unwrap();
        prop_assert_eq!(a0, a1);
    }

    #[test]
    fn l_reg_non_negative_and_centering_invariant(
        yp in matrix(6, 2),
        a in matrix(6, 3),
        offset in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let probs = yp.softmax_rows();
        let base = correlation_reg(&probs, &a).unwrap();
        prop_assert!(base >= 0.0);
        let mut shifted = a.clone();
        for r in 0..6 {
            for (c, o) in offset.iter().enumerate() {
                shifted.set(r, c, a.get(r, c) + o);
            }
        }
        let moved = correlation_reg(&probs, &shifted).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn delta_metrics_ignore_which_group_is_protected(
        rows in prop::collection::vec((0.0f64..1.0, 0u8..2, 0usize..2), 8..40),
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let s: Vec<u8> = rows.iter().map(|r| r.1).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let flipped: Vec<u8> = s.iter().map(|v| 1 - v).collect();
        prop_assume!(s.contains(&0) && s.contains(&1));
        prop_assert_eq!(delta_dp(&scores, &s).unwrap(), delta_dp(&scores, &flipped).unwrap());
        if let (Ok(a), Ok(b)) = (delta_eo(&scores, &s, &y), delta_eo(&scores, &flipped, &y)) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn estimation_auc_in_upper_half(x in matrix(30, 2), seed in 0u64..20) {
        let s: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        if let Ok(auc) = estimation_auc(&x, &s, seed) {
            prop_assert!((0.5..=1.0).contains(&auc));
        }
    }

    #[test]
    fn split_sizes_are_exhaustive(n in 4usize..5000, t in 1u32..8, v in 1u32..8, e in 1u32..8) {
        let total = f64::from(t + v + e);
        let spec = SplitSpec {
            train: f64::from(t) / total,
            validation: f64::from(v) / total,
            test: f64::from(e) / total,
            seed: 0,
        };
        if spec.validate().is_ok() {
            let sizes = split_sizes(n, &spec).unwrap();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn marginal_batch_is_a_permutation_of_z(n in 2usize..64, seed in 0u64..1000) {
        let perm = rng::permutation(n, &mut rng::seeded(seed));
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn tape_is_deterministic() {
    let cfg = EstimatorConfig {
        d_a: 2,
        d_z: 2,
        hidden: 4,
        ..EstimatorConfig::default()
    };
    let run = || {
        let model = EstimatorModel::init(cfg.clone(), 3, 2, 2, &mut rng::seeded(3)).unwrap();
        let mut r = rng::seeded(4);
        let batch = EstimatorBatch::new(Tensor::randn(6, 3, &mut r), Tensor::randn(6, 2, &mut r), &[0, 1, 0, 1, 1, 0], 2)
            .unwrap();
        let noise = ElboNoise::sample(6, 2, 2, &mut r);
        let (loss, _, grads) = model.elbo_loss_and_grads(&batch, &noise).unwrap();
        let bits: Vec<u64> = grads.iter().flat_map(|g| g.data().iter().map(|v| v.to_bits())).collect();
        (loss.to_bits(), bits)
    };
    assert_eq!(run(), run());
}

#[test]
fn kl_matches_closed_form_on_random_posteriors() {
    let mut r = rng::seeded(11);
    for _ in 0..1000 {
        let mean = Tensor::randn(1, 3, &mut r).scale(2.0);
        let log_var = Tensor::uniform(1, 3, 5.0, &mut r);
        let oracle = analytic_kl(mean.data(), log_var.data());
        let kl = kl_to_standard_normal(&GaussianPosterior::new(mean, log_var).unwrap())[0];
        assert!((kl - oracle).abs() <= 1e-12 * oracle.max(1.0), "{kl} vs {oracle}");
    }
}

#[test]
fn kl_matches_monte_carlo() {
    // E_q[log q(x) - log p(x)] from 1e5 draws of q; posteriors chosen so
    // that 1% is at least four standard errors of the estimate
    let cases = [
        (vec![3.0, -2.0], vec![0.5, -0.5]),
        (vec![-2.5, 1.0], vec![0.0, 1.0]),
        (vec![4.0, 0.0], vec![0.0, 0.0]),
    ];
    let mut r = rng::seeded(12);
    for (mean, log_var) in cases {
        let post = GaussianPosterior::new(
            Tensor::from_vec(1, 2, mean.clone()).unwrap(),
            Tensor::from_vec(1, 2, log_var.clone()).unwrap(),
        )
        .unwrap();
        let kl = kl_to_standard_normal(&post)[0];
        let n = 100_000;
        let eps = Tensor::randn(n, 2, &mut r);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..2 {
                let sd = (0.5 * log_var[j]).exp();
                let x = mean[j] + sd * eps.get(i, j);
                let log_q = -0.5 * eps.get(i, j).powi(2) - 0.5 * log_var[j];
                let log_p = -0.5 * x * x;
                acc += log_q - log_p;
            }
        }
        let mc = acc / n as f64;
        assert!((mc - kl).abs() / kl < 0.01, "mc {mc} vs closed form {kl}");
    }
}

#[test]
fn synthesize_is_deterministic() {
    let cfg = SynthConfig {
        n: 500,
        ..SynthConfig::default()
    };
    let a = synthesize(&cfg).unwrap();
    let b = synthesize(&cfg).unwrap();
    assert_eq!(a.xz(), b.xz());
    assert_eq!(a.xr(), b.xr());
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.sensitive(), b.sensitive());
}

#[test]
fn csv_round_trip_preserves_values() {
    let data = synthesize(&SynthConfig {
        n: 300,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.csv");
    data.write_csv(&path).unwrap();

    let mut roles: BTreeMap<String, ColumnRole> = BTreeMap::new();
    for c in data.xz_columns() {
        roles.insert(c.name.clone(), "irrelevant:numeric".parse().unwrap());
    }
    for c in data.xr_columns() {
        roles.insert(c.name.clone(), "relevant:numeric".parse().unwrap());
    }
    roles.insert("y".into(), "label".parse().unwrap());
    roles.insert("s".into(), "sensitive".parse().unwrap());
    let back = load_csv(&path, &roles).unwrap();
    let (xz, xr) = back.unscaled();
    let close = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() <= 1e-9);
    assert!(close(&xz, data.xz()));
    assert!(close(&xr, data.xr()));
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.sensitive(), data.sensitive());

    // and through a split: standardized parts unscale to the originals
    let (train, _, _) = split(&back, &SplitSpec::default()).unwrap();
    let (uz, _) = train.unscaled();
    let original: Vec<f64> = uz.data().to_vec();
    let mut found = 0;
    for row in 0..uz.rows() {
        let target = &original[row * uz.cols()..(row + 1) * uz.cols()];
        if (0..data.len()).any(|i| data.xz().row(i).iter().zip(target).all(|(a, b)| (a - b).abs() <= 1e-9)) {
            found += 1;
        }
    }
    assert_eq!(found, uz.rows());
}

#[test]
fn gmm_is_deterministic_and_floored() {
    let mut r = rng::seeded(13);
    let x = Tensor::randn(200, 2, &mut r);
    let a = gmm_fit(&x, 2, 9).unwrap();
    let b = gmm_fit(&x, 2, 9).unwrap();
    assert_eq!(a, b);
    let mut dup = Tensor::zeros(40, 1);
    for i in 20..40 {
        dup.set(i, 0, 1.0);
    }
    let m = gmm_fit(&dup, 2, 0).unwrap();
    assert!(m.variances.iter().flatten().all(|&v| v >= 1e-6));
}

#[test]
fn mi_trajectory_is_deterministic() {
    let run = || {
        let mut r = rng::seeded(14);
        let a = Tensor::randn(256, 1, &mut r);
        let z = a.add(&Tensor::randn(256, 1, &mut r)).unwrap();
        let mut disc = MineDiscriminator::new(1, 1, MineConfig::default()).unwrap();
        let trace = fairlatent::mine::train_discriminator(&mut disc, &a, &z, 20, 64).unwrap();
        (trace, mi_estimate(&disc, &a, &z, 1).unwrap())
    };
    assert_eq!(run(), run());
}
