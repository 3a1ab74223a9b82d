use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.5,
            validation: 0.25,
            test: 0.25,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ratios = [self.train, self.validation, self.test];
        if ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
        }
        Ok(())
    }
}

/// Part sizes by largest-remainder rounding; ties in the fractional part go
/// to the earlier part.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<[usize; 3]> {
    spec.validate()?;
    let quotas = [spec.train, spec.validation, spec.test].map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!(
            "split of {n} rows with {:?} leaves an empty part",
            [spec.train, spec.validation, spec.test]
        )));
    }
    Ok(sizes)
}

/// Seeded shuffle into train/validation/test, then standardization fitted on
/// train and applied to all three.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    if data.len() < 4 {
        return Err(Error::Config(format!("need at least 4 rows to split, got {}", data.len())));
    }
    let [n_train, n_val, _] = split_sizes(data.len(), spec)?;
    let mut r = rng::seeded(spec.seed);
    let perm = rng::permutation(data.len(), &mut r);
    let train = data.subset(&perm[..n_train])?;
    let val = data.subset(&perm[n_train..n_train + n_val])?;
    let test = data.subset(&perm[n_train + n_val..])?;

    let raw_train = {
        let (xz, xr) = train.unscaled();
        Dataset::new(
            xz,
            strip(train.xz_columns()),
            xr,
            strip(train.xr_columns()),
            train.targets(),
        )?
    };
    let (zs, rs) = raw_train.column_stats();
    Ok((
        train.standardized_with(&zs, &rs)?,
        val.standardized_with(&zs, &rs)?,
        test.standardized_with(&zs, &rs)?,
    ))
}

fn strip(cols: &[super::FeatureColumn]) -> Vec<super::FeatureColumn> {
    cols.iter()
        .map(|c| super::FeatureColumn {
            scaling: None,
            ..c.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureColumn, Targets};
    use crate::tensor::Tensor;

    fn numbered(n: usize) -> Dataset {
        let xz = Tensor::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let xr = Tensor::from_vec(n, 1, (0..n).map(|i| (i * 7 % 5) as f64).collect()).unwrap();
        Dataset::new(
            xz,
            vec![FeatureColumn::raw("id", "id")],
            xr,
            vec![FeatureColumn::raw("r", "r")],
            Targets {
                y: (0..n).map(|i| i % 2).collect(),
                classes: 2,
                label_name: "y".into(),
                class_names: vec!["0".into(), "1".into()],
                s: None,
                sensitive_name: None,
                sensitive_levels: vec![],
            },
        )
        .unwrap()
    }

    /// Independent largest-remainder oracle with exact rational arithmetic
    /// (ratios given as quarters).
    fn oracle(n: usize, quarters: [usize; 3]) -> [usize; 3] {
        let num = quarters.map(|q| q * n);
        let mut sizes = num.map(|x| x / 4);
        let rem = num.map(|x| x % 4);
        let mut left = n - sizes.iter().sum::<usize>();
        for target in (1..4).rev() {
            for i in 0..3 {
                if left > 0 && rem[i] == target {
                    sizes[i] += 1;
                    left -= 1;
                }
            }
        }
        sizes
    }

    #[test]
    fn sizes_match_oracle() {
        let spec = SplitSpec::default();
        assert_eq!(split_sizes(8, &spec).unwrap(), [4, 2, 2]);
        for n in [4, 5, 6, 7, 9, 10, 11, 101, 45_211, 45_222] {
            assert_eq!(split_sizes(n, &spec).unwrap(), oracle(n, [2, 1, 1]), "n={n}");
        }
        assert_eq!(split_sizes(45_211, &spec).unwrap(), [22_605, 11_303, 11_303]);
    }

    #[test]
    fn degenerate_ratios_rejected() {
        let spec = SplitSpec {
            train: 0.9,
            validation: 0.05,
            test: 0.05,
            seed: 0,
        };
        assert!(split_sizes(4, &spec).is_err());
        let bad = SplitSpec {
            train: 0.5,
            validation: 0.5,
            test: 0.5,
            seed: 0,
        };
        assert!(bad.validate().is_err());
        assert!(split(&numbered(3), &SplitSpec::default()).is_err());
    }

    #[test]
    fn partition_is_disjoint_exhaustive_and_deterministic() {
        let d = numbered(37);
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let (a, b, c) = split(&d, &spec).unwrap();
        let ids = |p: &Dataset| -> Vec<i64> {
            let (xz, _) = p.unscaled();
            xz.data().iter().map(|v| v.round() as i64).collect()
        };
        let mut all: Vec<i64> = [ids(&a), ids(&b), ids(&c)].concat();
        all.sort();
        assert_eq!(all, (0..37).collect::<Vec<_>>());

        let (a2, b2, c2) = split(&d, &spec).unwrap();
        assert_eq!((a, b, c), (a2, b2, c2));
    }

    #[test]
    fn standardization_comes_from_train() {
        let (train, val, _) = split(&numbered(40), &SplitSpec::default()).unwrap();
        let col = train.xz().col_values(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(train.xz_columns()[0].scaling, val.xz_columns()[0].scaling);
    }
}
