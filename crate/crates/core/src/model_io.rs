//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "FLATMODL"
//! version    u32
//! kind       u32      1 estimator, 2 classifier, 3 critic
//! meta_len   u64
//! metadata   meta_len bytes of UTF-8 JSON
//! count      u32
//! count times: rows u64, cols u64, rows*cols f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{FairClassifier, RelevantTransform, TransformKind};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorModel};
use crate::nn::{Mlp, MlpParams, MlpSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FLATMODL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Estimator,
    Classifier,
    Critic,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            Self::Estimator => 1,
            Self::Classifier => 2,
            Self::Critic => 3,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Self::Estimator),
            2 => Ok(Self::Classifier),
            3 => Ok(Self::Critic),
            other => Err(Error::Format(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub metadata: Value,
    pub tensors: Vec<Tensor>,
}

pub fn encode(file: &ModelFile) -> Vec<u8> {
    let meta = serde_json::to_vec(&file.metadata).expect("json value serializes");
    let mut out = Vec::with_capacity(32 + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&file.kind.code().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(file.tensors.len() as u32).to_le_bytes());
    for t in &file.tensors {
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let kind = ModelKind::from_code(r.u32("kind")?)?;
    let meta_len = r.len("metadata length")?;
    let metadata: Value = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::Format(format!("metadata is not JSON: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let rows = r.len("tensor rows")?;
        let cols = r.len("tensor cols")?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {i} shape overflows")))?;
        let data: Vec<f64> = r
            .take(n, "tensor values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelFile {
        kind,
        metadata,
        tensors,
    })
}

pub fn write_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(file)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Format(format!("metadata is missing '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("metadata '{key}': {e}")))
}

fn expect_kind(file: &ModelFile, kind: ModelKind) -> Result<()> {
    if file.kind != kind {
        return Err(Error::Format(format!("expected a {kind:?} model, found {:?}", file.kind)));
    }
    Ok(())
}

/// Rebuilds MLPs from a flat tensor list, consuming `w, b` pairs per layer.
fn take_mlps(specs: Vec<MlpSpec>, tensors: Vec<Tensor>) -> Result<Vec<Mlp>> {
    let needed: usize = specs.iter().map(|s| 2 * s.layers()).sum();
    if needed != tensors.len() {
        return Err(Error::Format(format!(
            "metadata implies {needed} tensors, file has {}",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    specs
        .into_iter()
        .map(|spec| {
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for _ in 0..spec.layers() {
                weights.push(it.next().expect("counted"));
                biases.push(it.next().expect("counted"));
            }
            Mlp::from_params(spec, MlpParams { weights, biases })
        })
        .collect()
}

impl EstimatorModel {
    pub fn to_model_file(&self, run: Value) -> ModelFile {
        let specs: Vec<&MlpSpec> = [
            &self.encoder_a,
            &self.encoder_z,
            &self.decoder_xr,
            &self.decoder_xz,
            &self.decoder_y,
        ]
        .iter()
        .map(|m| &m.spec)
        .collect();
        ModelFile {
            kind: ModelKind::Estimator,
            metadata: serde_json::json!({
                "config": self.config,
                "data_dims": self.data_dims,
                "specs": specs,
                "run": run,
            }),
            tensors: self.tensors().into_iter().cloned().collect(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        expect_kind(&file, ModelKind::Estimator)?;
        let config: EstimatorConfig = meta_field(&file.metadata, "config")?;
        let data_dims: (usize, usize, usize) = meta_field(&file.metadata, "data_dims")?;
        let specs: Vec<MlpSpec> = meta_field(&file.metadata, "specs")?;
        if specs.len() != 5 {
            return Err(Error::Format(format!("estimator needs 5 networks, got {}", specs.len())));
        }
        let mut nets = take_mlps(specs, file.tensors)?.into_iter();
        let mut next = || nets.next().expect("five networks");
        Ok(Self {
            encoder_a: next(),
            encoder_z: next(),
            decoder_xr: next(),
            decoder_xz: next(),
            decoder_y: next(),
            config,
            data_dims,
        })
    }
}

impl FairClassifier {
    pub fn to_model_file(&self, run: Value) -> ModelFile {
        let f_spec = match &self.f {
            RelevantTransform::Mlp(m) => Some(&m.spec),
            _ => None,
        };
        ModelFile {
            kind: ModelKind::Classifier,
            metadata: serde_json::json!({
                "lambda": self.lambda,
                "g": self.g.spec,
                "transform": self.f.kind(),
                "f": f_spec,
                "run": run,
            }),
            tensors: self.tensors().into_iter().cloned().collect(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        expect_kind(&file, ModelKind::Classifier)?;
        let lambda: f64 = meta_field(&file.metadata, "lambda")?;
        let g_spec: MlpSpec = meta_field(&file.metadata, "g")?;
        let kind: TransformKind = meta_field(&file.metadata, "transform")?;
        let f_spec: Option<MlpSpec> = meta_field(&file.metadata, "f")?;
        let mut specs = vec![g_spec];
        match (kind, f_spec) {
            (TransformKind::Mlp, Some(s)) => specs.push(s),
            (TransformKind::Mlp, None) => return Err(Error::Format("mlp transform without a spec".into())),
            _ => {}
        }
        let mut nets = take_mlps(specs, file.tensors)?.into_iter();
        let g = nets.next().expect("g present");
        let f = match kind {
            TransformKind::Identity => RelevantTransform::Identity,
            TransformKind::Drop => RelevantTransform::Drop,
            TransformKind::Mlp => RelevantTransform::Mlp(nets.next().expect("f present")),
        };
        Ok(Self { g, f, lambda })
    }
}
