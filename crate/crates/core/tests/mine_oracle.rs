//! The trained critic against the closed-form MI of a bivariate Gaussian.

use fairlatent::mine::{mi_estimate, train_discriminator, MineConfig, MineDiscriminator};
use fairlatent::{rng, Tensor};

/// `n` draws of (x, ρx + sqrt(1-ρ²)e).
fn correlated(n: usize, rho: f64, seed: u64) -> (Tensor, Tensor) {
    let mut r = rng::seeded(seed);
    let x = Tensor::randn(n, 1, &mut r);
    let e = Tensor::randn(n, 1, &mut r);
    let y = x
        .data()
        .iter()
        .zip(e.data())
        .map(|(x, e)| rho * x + (1.0 - rho * rho).sqrt() * e)
        .collect();
    (x, Tensor::from_vec(n, 1, y).unwrap())
}

fn trained_estimate(rho: f64, n: usize, seed: u64) -> f64 {
    let (a, z) = correlated(n, rho, seed);
    let mut disc = MineDiscriminator::new(1, 1, MineConfig { seed, ..MineConfig::default() }).unwrap();
    train_discriminator(&mut disc, &a, &z, 2000, 256).unwrap();
    mi_estimate(&disc, &a, &z, seed + 100).unwrap()
}

#[test]
fn correlated_gaussian_mi() {
    let rho: f64 = 0.8;
    let exact = -0.5 * (1.0 - rho * rho).ln();
    let est = trained_estimate(rho, 20_000, 0);
    assert!((est - exact).abs() <= 0.15, "estimate {est} vs {exact}");
}

#[test]
fn independent_pair_has_no_mi() {
    let est = trained_estimate(0.0, 10_000, 1);
    assert!(est.abs() <= 0.05, "estimate {est}");
}
