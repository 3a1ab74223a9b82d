use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureColumn, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Irrelevant,
    Relevant,
    Label,
    Sensitive,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// A role plus an optional forced kind, written as `"relevant"` or
/// `"relevant:categorical"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ColumnRole {
    pub role: Role,
    pub kind: Option<ColumnKind>,
}

impl From<Role> for ColumnRole {
    fn from(role: Role) -> Self {
        Self { role, kind: None }
    }
}

impl FromStr for ColumnRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (role, kind) = match s.split_once(':') {
            Some((r, k)) => (r, Some(k)),
            None => (s, None),
        };
        let role = match role.trim() {
            "irrelevant" => Role::Irrelevant,
            "relevant" => Role::Relevant,
            "label" => Role::Label,
            "sensitive" => Role::Sensitive,
            "ignore" => Role::Ignore,
            other => return Err(Error::Config(format!("unknown column role '{other}'"))),
        };
        let kind = match kind.map(str::trim) {
            None => None,
            Some("numeric") => Some(ColumnKind::Numeric),
            Some("categorical") => Some(ColumnKind::Categorical),
            Some(other) => return Err(Error::Config(format!("unknown column kind '{other}'"))),
        };
        Ok(Self { role, kind })
    }
}

impl TryFrom<String> for ColumnRole {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            Role::Irrelevant => "irrelevant",
            Role::Relevant => "relevant",
            Role::Label => "label",
            Role::Sensitive => "sensitive",
            Role::Ignore => "ignore",
        };
        match self.kind {
            None => f.write_str(role),
            Some(ColumnKind::Numeric) => write!(f, "{role}:numeric"),
            Some(ColumnKind::Categorical) => write!(f, "{role}:categorical"),
        }
    }
}

impl From<ColumnRole> for String {
    fn from(r: ColumnRole) -> String {
        r.to_string()
    }
}

pub type RoleConfig = BTreeMap<String, ColumnRole>;

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Sorted distinct levels: numerically when every level parses, else
/// lexicographically.
fn levels(values: &[&str]) -> Vec<String> {
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    let mut out: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    if out.iter().all(|v| v.parse::<f64>().is_ok()) {
        out.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    out
}

/// Loads a headered CSV. Rows with an empty or `?` cell in any used column
/// are dropped. Numeric feature columns are kept as is; categorical ones are
/// one-hot encoded with levels in sorted order. No standardization happens
/// here: [`super::split`] fits it on the training part.
pub fn load_csv(path: impl AsRef<Path>, roles: &RoleConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    for name in roles.keys() {
        if !header.contains(name) {
            return Err(Error::Config(format!("role config names unknown column '{name}'")));
        }
    }
    let mut col_roles = Vec::with_capacity(header.len());
    for name in &header {
        match roles.get(name) {
            Some(r) => col_roles.push(*r),
            None => return Err(Error::Config(format!("column '{name}' has no role"))),
        }
    }
    let label_cols: Vec<usize> = (0..header.len()).filter(|&i| col_roles[i].role == Role::Label).collect();
    if label_cols.len() != 1 {
        return Err(Error::Config(format!(
            "exactly one label column required, found {}",
            label_cols.len()
        )));
    }
    let sens_cols: Vec<usize> = (0..header.len()).filter(|&i| col_roles[i].role == Role::Sensitive).collect();
    if sens_cols.len() > 1 {
        return Err(Error::Config("at most one sensitive column is supported".into()));
    }
    let used: Vec<usize> = (0..header.len()).filter(|&i| col_roles[i].role != Role::Ignore).collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: line + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if used.iter().any(|&i| is_missing(&rec[i])) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Config(format!("no complete rows in {}", path.display())));
    }

    let mut z_cols: Vec<Vec<f64>> = Vec::new();
    let mut z_meta = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut r_meta = Vec::new();

    for (c, name) in header.iter().enumerate() {
        let role = col_roles[c];
        let (cols, meta) = match role.role {
            Role::Irrelevant => (&mut z_cols, &mut z_meta),
            Role::Relevant => (&mut r_cols, &mut r_meta),
            _ => continue,
        };
        let cells: Vec<&str> = rows.iter().map(|r| r[c].as_str()).collect();
        let kind = match role.kind {
            Some(k) => k,
            None if cells.iter().all(|v| v.parse::<f64>().is_ok()) => ColumnKind::Numeric,
            None => ColumnKind::Categorical,
        };
        match kind {
            ColumnKind::Numeric => {
                let mut col = Vec::with_capacity(n);
                for (row, cell) in cells.iter().enumerate() {
                    let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                        row: row + 1,
                        column: name.clone(),
                        message: format!("cannot parse '{cell}' as a number"),
                    })?;
                    col.push(v);
                }
                cols.push(col);
                meta.push(FeatureColumn::raw(name.clone(), name.clone()));
            }
            ColumnKind::Categorical => {
                for level in levels(&cells) {
                    cols.push(cells.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect());
                    meta.push(FeatureColumn::raw(format!("{name}={level}"), name.clone()));
                }
            }
        }
    }

    let label_idx = label_cols[0];
    let label_cells: Vec<&str> = rows.iter().map(|r| r[label_idx].as_str()).collect();
    let class_names = levels(&label_cells);
    if class_names.len() < 2 {
        return Err(Error::Config(format!(
            "label column '{}' has fewer than 2 classes",
            header[label_idx]
        )));
    }
    let y: Vec<usize> = label_cells
        .iter()
        .map(|v| class_names.iter().position(|c| c == v).unwrap())
        .collect();

    let (s, sensitive_name, sensitive_levels) = match sens_cols.first() {
        Some(&si) => {
            let cells: Vec<&str> = rows.iter().map(|r| r[si].as_str()).collect();
            let lv = levels(&cells);
            if lv.len() != 2 {
                return Err(Error::Config(format!(
                    "sensitive column '{}' must be binary, found {} levels",
                    header[si],
                    lv.len()
                )));
            }
            let s = cells.iter().map(|v| if *v == lv[0] { 0 } else { 1 }).collect();
            (Some(s), Some(header[si].clone()), lv)
        }
        None => (None, None, Vec::new()),
    };

    let to_tensor = |cols: &[Vec<f64>]| {
        let mut t = Tensor::zeros(n, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                t.set(r, c, v);
            }
        }
        t
    };
    Dataset::new(
        to_tensor(&z_cols),
        z_meta,
        to_tensor(&r_cols),
        r_meta,
        Targets {
            y,
            classes: class_names.len(),
            label_name: header[label_idx].clone(),
            class_names,
            s,
            sensitive_name,
            sensitive_levels,
        },
    )
}
