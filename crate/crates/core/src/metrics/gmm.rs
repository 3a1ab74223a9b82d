use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const GMM_TOL: f64 = 1e-6;
pub const GMM_MAX_ITER: usize = 200;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood before each M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let mut lp = self.weights[c].ln();
            for ((&xi, &m), &v) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                lp -= 0.5 * (LN_2PI + v.ln() + (xi - m) * (xi - m) / v);
            }
            *slot = lp;
        }
    }

    /// Writes normalized posteriors into `out`, returns the row's log-likelihood.
    fn posterior_row(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.log_joint(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = out.iter().map(|lp| (lp - max).exp()).sum();
        let lse = max + total.ln();
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
        }
        lse
    }

    /// `n x k` posterior component probabilities.
    pub fn responsibilities(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim() {
            return Err(Error::dim("gmm responsibilities", x.shape(), (x.rows(), self.dim())));
        }
        let mut resp = Tensor::zeros(x.rows(), self.k());
        for i in 0..x.rows() {
            self.posterior_row(x.row(i), resp.row_mut(i));
        }
        Ok(resp)
    }

    pub fn mean_log_likelihood(&self, x: &Tensor) -> Result<f64> {
        if x.cols() != self.dim() {
            return Err(Error::dim("gmm log-likelihood", x.shape(), (x.rows(), self.dim())));
        }
        let mut buf = vec![0.0; self.k()];
        let total: f64 = (0..x.rows()).map(|i| self.posterior_row(x.row(i), &mut buf)).sum();
        Ok(total / x.rows() as f64)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(x: &Tensor, k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centers = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = n - 1;
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
        }
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

const LLOYD_ITERS: usize = 100;

/// Hard assignments after Lloyd iterations from the given centers.
fn lloyd(x: &Tensor, mut centers: Vec<Vec<f64>>) -> Vec<usize> {
    let (n, d) = x.shape();
    let nearest = |row: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        for (c, center) in centers.iter().enumerate().skip(1) {
            if sq_dist(row, center) < sq_dist(row, &centers[best]) {
                best = c;
            }
        }
        best
    };
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centers)).collect();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                *center = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Weights, means and floored variances of a hard partition. Empty clusters
/// fall back to the global statistics.
fn init_from_partition(x: &Tensor, labels: &[usize], k: usize) -> GmmModel {
    let (n, d) = x.shape();
    let stats = |rows: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let m = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / m).collect();
        let var: Vec<f64> = (0..d)
            .map(|j| {
                let v = rows.iter().map(|&i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / m;
                v.max(VARIANCE_FLOOR)
            })
            .collect();
        (mean, var)
    };
    let all: Vec<usize> = (0..n).collect();
    let global = stats(&all);
    let mut model = GmmModel {
        weights: Vec::with_capacity(k),
        means: Vec::with_capacity(k),
        variances: Vec::with_capacity(k),
        log_likelihood_trace: Vec::new(),
        converged: false,
    };
    for c in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let (mean, var) = if rows.is_empty() { global.clone() } else { stats(&rows) };
        model.weights.push(rows.len().max(1) as f64);
        model.means.push(mean);
        model.variances.push(var);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    model
}

/// EM for a diagonal-covariance mixture, started from a k-means partition
/// (k-means++ seeding, then Lloyd iterations). Stops when the mean
/// log-likelihood improves by less than [`GMM_TOL`] or after
/// [`GMM_MAX_ITER`] iterations.
pub fn gmm_fit(x: &Tensor, k: usize, seed: u64) -> Result<GmmModel> {
    let (n, d) = x.shape();
    if k == 0 || d == 0 {
        return Err(Error::Fit(format!("need k >= 1 and at least one column, got k={k}, d={d}")));
    }
    if n < k {
        return Err(Error::Fit(format!("{n} rows cannot support {k} components")));
    }
    if !x.is_finite() {
        return Err(Error::Fit("input contains non-finite values".into()));
    }
    if (1..n).all(|i| x.row(i) == x.row(0)) {
        return Err(Error::Fit("degenerate data: all rows identical".into()));
    }

    let mut r = rng::seeded(seed);
    let centers = kmeans_pp(x, k, &mut r);
    let mut model = init_from_partition(x, &lloyd(x, centers), k);
    let mut resp = Tensor::zeros(n, k);
    for _ in 0..GMM_MAX_ITER {
        // E-step
        let mut ll = 0.0;
        for i in 0..n {
            ll += model.posterior_row(x.row(i), resp.row_mut(i));
        }
        ll /= n as f64;
        if !ll.is_finite() {
            return Err(Error::Fit("log-likelihood became non-finite".into()));
        }
        if let Some(&prev) = model.log_likelihood_trace.last() {
            if ll - prev < GMM_TOL {
                model.log_likelihood_trace.push(ll);
                model.converged = true;
                break;
            }
        }
        model.log_likelihood_trace.push(ll);

        // M-step
        let nk = resp.col_sums();
        for c in 0..k {
            let mass = nk.get(0, c);
            if mass < 1e-12 {
                // an empty component keeps its parameters with negligible weight
                model.weights[c] = 1e-12;
                continue;
            }
            model.weights[c] = mass / n as f64;
            let mut mean = vec![0.0; d];
            for i in 0..n {
                let w = resp.get(i, c);
                for (m, &xi) in mean.iter_mut().zip(x.row(i)) {
                    *m += w * xi;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut var = vec![0.0; d];
            for i in 0..n {
                let w = resp.get(i, c);
                for ((v, &xi), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                    *v += w * (xi - m) * (xi - m);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / mass).max(VARIANCE_FLOOR));
            model.means[c] = mean;
            model.variances[c] = var;
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(model)
}
