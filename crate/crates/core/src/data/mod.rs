//! Tabular datasets with column roles.
//!
//! A [`Dataset`] keeps irrelevant features `xz`, relevant features `xr`, the
//! integer label and, for evaluation only, the binary sensitive attribute.
//! Trainers never see a `Dataset`; they take a [`TrainView`], which has no
//! sensitive column at all.

mod csv_io;
mod split;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use csv_io::{load_csv, ColumnKind, ColumnRole, Role, RoleConfig};
pub use split::{split, split_sizes, SplitSpec};
pub use synth::{synthesize, synthesize_with_truth, Mixing, SynthConfig, SyntheticData};

/// `(mean, std)` per column.
pub type ColumnStats = Vec<(f64, f64)>;

/// One encoded feature column. `source` is the raw column it came from, so a
/// one-hot group shares a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub source: String,
    /// `(mean, std)` that was subtracted/divided, if standardized.
    pub scaling: Option<(f64, f64)>,
}

impl FeatureColumn {
    pub fn raw(name: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            scaling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xz: Tensor,
    xr: Tensor,
    y: Vec<usize>,
    s: Option<Vec<u8>>,
    classes: usize,
    xz_columns: Vec<FeatureColumn>,
    xr_columns: Vec<FeatureColumn>,
    label_name: String,
    class_names: Vec<String>,
    sensitive_name: Option<String>,
    sensitive_levels: Vec<String>,
}

/// Label and sensitive-attribute metadata used when assembling a dataset.
#[derive(Debug, Clone)]
pub struct Targets {
    pub y: Vec<usize>,
    pub classes: usize,
    pub label_name: String,
    pub class_names: Vec<String>,
    pub s: Option<Vec<u8>>,
    pub sensitive_name: Option<String>,
    pub sensitive_levels: Vec<String>,
}

impl Dataset {
    pub fn new(
        xz: Tensor,
        xz_columns: Vec<FeatureColumn>,
        xr: Tensor,
        xr_columns: Vec<FeatureColumn>,
        targets: Targets,
    ) -> Result<Self> {
        let n = targets.y.len();
        if xz.rows() != n || xr.rows() != n {
            return Err(Error::dim("dataset rows", xz.shape(), xr.shape()));
        }
        if xz.cols() == 0 || xr.cols() == 0 {
            return Err(Error::Config(
                "a dataset needs at least one irrelevant and one relevant feature".into(),
            ));
        }
        if xz.cols() != xz_columns.len() || xr.cols() != xr_columns.len() {
            return Err(Error::Contract("column metadata does not match feature widths".into()));
        }
        if targets.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", targets.classes)));
        }
        if let Some(&bad) = targets.y.iter().find(|&&y| y >= targets.classes) {
            return Err(Error::Contract(format!(
                "label {bad} outside [0, {})",
                targets.classes
            )));
        }
        if let Some(s) = &targets.s {
            if s.len() != n {
                return Err(Error::dim("sensitive column", (s.len(), 1), (n, 1)));
            }
            if s.iter().any(|&v| v > 1) {
                return Err(Error::Config("sensitive attribute must be binary".into()));
            }
        }
        Ok(Self {
            xz,
            xr,
            y: targets.y,
            s: targets.s,
            classes: targets.classes,
            xz_columns,
            xr_columns,
            label_name: targets.label_name,
            class_names: targets.class_names,
            sensitive_name: targets.sensitive_name,
            sensitive_levels: targets.sensitive_levels,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn xz(&self) -> &Tensor {
        &self.xz
    }

    pub fn xr(&self) -> &Tensor {
        &self.xr
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn xz_columns(&self) -> &[FeatureColumn] {
        &self.xz_columns
    }

    pub fn xr_columns(&self) -> &[FeatureColumn] {
        &self.xr_columns
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn sensitive_name(&self) -> Option<&str> {
        self.sensitive_name.as_deref()
    }

    /// Ground-truth sensitive attribute. Evaluation only.
    pub fn sensitive(&self) -> Option<&[u8]> {
        self.s.as_deref()
    }

    /// The label-and-features view handed to trainers.
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            xz: &self.xz,
            xr: &self.xr,
            y: &self.y,
            classes: self.classes,
            xz_columns: &self.xz_columns,
            xr_columns: &self.xr_columns,
            sensitive_name: self.sensitive_name.as_deref(),
        }
    }

    /// Distinct feature sources, irrelevant first, in column order.
    pub fn feature_sources(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.xz_columns
            .iter()
            .chain(&self.xr_columns)
            .filter(|c| seen.insert(c.source.clone()))
            .map(|c| c.source.clone())
            .collect()
    }

    pub fn relevant_sources(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.xr_columns
            .iter()
            .filter(|c| seen.insert(c.source.clone()))
            .map(|c| c.source.clone())
            .collect()
    }

    pub fn irrelevant_sources(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.xz_columns
            .iter()
            .filter(|c| seen.insert(c.source.clone()))
            .map(|c| c.source.clone())
            .collect()
    }

    /// Re-partitions feature columns so that exactly the given sources are
    /// relevant. Column order within each side follows the original
    /// `xz ⊕ xr` order.
    pub fn with_relevant_sources(&self, relevant: &[String]) -> Result<Self> {
        let wanted: BTreeSet<&str> = relevant.iter().map(String::as_str).collect();
        let known: BTreeSet<String> = self.feature_sources().into_iter().collect();
        for r in &wanted {
            if !known.contains(*r) {
                return Err(Error::Config(format!("unknown feature source '{r}'")));
            }
        }
        let all = Tensor::concat_cols(&[&self.xz, &self.xr])?;
        let columns: Vec<&FeatureColumn> = self.xz_columns.iter().chain(&self.xr_columns).collect();
        let (mut zi, mut ri) = (Vec::new(), Vec::new());
        for (i, c) in columns.iter().enumerate() {
            if wanted.contains(c.source.as_str()) {
                ri.push(i);
            } else {
                zi.push(i);
            }
        }
        let pick = |idx: &[usize]| -> (Tensor, Vec<FeatureColumn>) {
            let mut t = Tensor::zeros(all.rows(), idx.len());
            for r in 0..all.rows() {
                for (k, &c) in idx.iter().enumerate() {
                    t.set(r, k, all.get(r, c));
                }
            }
            (t, idx.iter().map(|&c| columns[c].clone()).collect())
        };
        let (xz, xz_columns) = pick(&zi);
        let (xr, xr_columns) = pick(&ri);
        Dataset::new(xz, xz_columns, xr, xr_columns, self.targets())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let targets = Targets {
            y: indices.iter().map(|&i| self.y[i]).collect(),
            s: self.s.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
            ..self.targets()
        };
        Dataset::new(
            self.xz.select_rows(indices)?,
            self.xz_columns.clone(),
            self.xr.select_rows(indices)?,
            self.xr_columns.clone(),
            targets,
        )
    }

    /// Per-column mean and population std over this dataset's rows. A
    /// zero-variance column gets std 1.
    pub fn column_stats(&self) -> (ColumnStats, ColumnStats) {
        (stats(&self.xz), stats(&self.xr))
    }

    /// Undoes any previous scaling and applies the given per-column
    /// `(mean, std)` pairs.
    pub fn standardized_with(&self, z_stats: &[(f64, f64)], r_stats: &[(f64, f64)]) -> Result<Self> {
        let (xz, xz_columns) = rescale(&self.xz, &self.xz_columns, z_stats)?;
        let (xr, xr_columns) = rescale(&self.xr, &self.xr_columns, r_stats)?;
        Dataset::new(xz, xz_columns, xr, xr_columns, self.targets())
    }

    /// Features in original units.
    pub fn unscaled(&self) -> (Tensor, Tensor) {
        (unscale(&self.xz, &self.xz_columns), unscale(&self.xr, &self.xr_columns))
    }

    fn targets(&self) -> Targets {
        Targets {
            y: self.y.clone(),
            classes: self.classes,
            label_name: self.label_name.clone(),
            class_names: self.class_names.clone(),
            s: self.s.clone(),
            sensitive_name: self.sensitive_name.clone(),
            sensitive_levels: self.sensitive_levels.clone(),
        }
    }

    /// Writes encoded feature columns in original units, then the label and
    /// sensitive attribute by level name.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self
            .xz_columns
            .iter()
            .chain(&self.xr_columns)
            .map(|c| c.name.as_str())
            .collect();
        header.push(&self.label_name);
        if let Some(s) = &self.sensitive_name {
            header.push(s);
        }
        w.write_record(&header)?;
        let (xz, xr) = self.unscaled();
        for i in 0..self.len() {
            let mut rec: Vec<String> = xz.row(i).iter().chain(xr.row(i)).map(|v| format!("{v:?}")).collect();
            rec.push(self.class_names[self.y[i]].clone());
            if let Some(s) = &self.s {
                rec.push(self.sensitive_levels[s[i] as usize].clone());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Stable content hash of features and labels (FNV-1a over the raw bits),
    /// used to tag reports.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for v in self.xz.data().iter().chain(self.xr.data()) {
            eat(&v.to_bits().to_le_bytes());
        }
        for &y in &self.y {
            eat(&(y as u64).to_le_bytes());
        }
        h
    }
}

fn stats(t: &Tensor) -> Vec<(f64, f64)> {
    let n = t.rows() as f64;
    (0..t.cols())
        .map(|c| {
            let col = t.col_values(c);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

fn unscale(t: &Tensor, cols: &[FeatureColumn]) -> Tensor {
    let mut out = t.clone();
    for (c, col) in cols.iter().enumerate() {
        if let Some((m, s)) = col.scaling {
            for r in 0..out.rows() {
                out.set(r, c, t.get(r, c) * s + m);
            }
        }
    }
    out
}

fn rescale(t: &Tensor, cols: &[FeatureColumn], stats: &[(f64, f64)]) -> Result<(Tensor, Vec<FeatureColumn>)> {
    if stats.len() != cols.len() {
        return Err(Error::dim("standardize", t.shape(), (1, stats.len())));
    }
    let raw = unscale(t, cols);
    let mut out = raw.clone();
    let mut new_cols = cols.to_vec();
    for (c, &(m, s)) in stats.iter().enumerate() {
        for r in 0..out.rows() {
            out.set(r, c, (raw.get(r, c) - m) / s);
        }
        new_cols[c].scaling = Some((m, s));
    }
    Ok((out, new_cols))
}

/// What a trainer is allowed to see: features and labels, never the
/// sensitive attribute.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub xz: &'a Tensor,
    pub xr: &'a Tensor,
    pub y: &'a [usize],
    pub classes: usize,
    xz_columns: &'a [FeatureColumn],
    xr_columns: &'a [FeatureColumn],
    sensitive_name: Option<&'a str>,
}

impl<'a> TrainView<'a> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Panics if any feature column was derived from the sensitive column.
    pub fn assert_no_sensitive(&self) {
        if let Some(s) = self.sensitive_name {
            let leaked = self
                .xz_columns
                .iter()
                .chain(self.xr_columns)
                .any(|c| c.source == s);
            assert!(!leaked, "sensitive column '{s}' reached a training feature");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> Dataset {
        let xz = Tensor::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap();
        let xr = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        Dataset::new(
            xz,
            vec![FeatureColumn::raw("f1", "f1")],
            xr,
            vec![FeatureColumn::raw("c=a", "c"), FeatureColumn::raw("c=b", "c")],
            Targets {
                y: vec![0, 1, 0, 1],
                classes: 2,
                label_name: "y".into(),
                class_names: vec!["0".into(), "1".into()],
                s: Some(vec![0, 0, 1, 1]),
                sensitive_name: Some("s".into()),
                sensitive_levels: vec!["f".into(), "m".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn regroup_moves_whole_sources() {
        let d = toy();
        let moved = d.with_relevant_sources(&["f1".to_string()]).unwrap();
        assert_eq!(moved.xr().cols(), 1);
        assert_eq!(moved.xz().cols(), 2);
        assert_eq!(moved.relevant_sources(), vec!["f1".to_string()]);
        assert!(d.with_relevant_sources(&["nope".to_string()]).is_err());
    }

    #[test]
    fn standardize_then_unscale_round_trips() {
        let d = toy();
        let (zs, rs) = d.column_stats();
        let st = d.standardized_with(&zs, &rs).unwrap();
        let col = st.xz().col_values(0);
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
        let (xz, xr) = st.unscaled();
        for (a, b) in xz.data().iter().zip(d.xz().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in xr.data().iter().zip(d.xr().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_view_has_no_sensitive_feature() {
        toy().train_view().assert_no_sensitive();
    }

    #[test]
    #[should_panic(expected = "sensitive column")]
    fn leaked_sensitive_feature_trips_assertion() {
        let d = toy();
        let mut cols = d.xz_columns.clone();
        cols[0].source = "s".into();
        let leaked = Dataset {
            xz_columns: cols,
            ..d
        };
        leaked.train_view().assert_no_sensitive();
    }

    #[test]
    fn invalid_labels_rejected() {
        let d = toy();
        let mut t = d.targets();
        t.y[0] = 5;
        assert!(Dataset::new(d.xz.clone(), d.xz_columns.clone(), d.xr.clone(), d.xr_columns.clone(), t).is_err());
    }
}
