//! JSON model and posterior-sample files (schema `sstqr-model/1`).
//!
//! Floats are written in shortest round-trip form, so loading restores
//! every spacing bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sstqr_core::basis::BasisSpec;
use sstqr_core::{CoefficientField, Curve, McmcConfig, PosteriorSamples, QuantileModel, TransformSpec, UnitScale};

use crate::error::{AppError, Result};

pub const SCHEMA: &str = "sstqr-model/1";

#[derive(Serialize, Deserialize)]
struct BasisDoc {
    degree: usize,
    intervals: usize,
}

#[derive(Serialize, Deserialize)]
struct ScaleDoc {
    min: f64,
    max: f64,
}

#[derive(Serialize, Deserialize)]
struct TransformDoc {
    coords: Vec<ScaleDoc>,
    time: ScaleDoc,
    value: ScaleDoc,
}

#[derive(Serialize, Deserialize)]
struct FieldDoc {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    dim: usize,
    time_basis: BasisDoc,
    space_basis: BasisDoc,
    transforms: TransformDoc,
    field: FieldDoc,
}

#[derive(Serialize, Deserialize)]
struct McmcDoc {
    iterations: usize,
    burn_in: usize,
    thin: usize,
    r: f64,
    seed: u64,
    floor: f64,
    random_scan: bool,
}

#[derive(Serialize, Deserialize)]
struct SamplesDoc {
    config: McmcDoc,
    acceptance_rates: Vec<f64>,
    loglik_trace: Vec<f64>,
    draws: Vec<FieldDoc>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    kind: String,
    model: ModelDoc,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    samples: Option<SamplesDoc>,
}

#[derive(Deserialize)]
struct Probe {
    schema: Option<String>,
}

/// Anything a model file can hold. For samples, `shell` carries the bases,
/// transforms and the starting field.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Model(QuantileModel),
    Samples {
        shell: QuantileModel,
        samples: PosteriorSamples,
    },
}

impl Artifact {
    pub fn model(&self) -> &QuantileModel {
        match self {
            Artifact::Model(m) => m,
            Artifact::Samples { shell, .. } => shell,
        }
    }
}

fn scale_doc(s: &UnitScale) -> ScaleDoc {
    ScaleDoc { min: s.min, max: s.max }
}

fn field_doc(f: &CoefficientField) -> FieldDoc {
    FieldDoc {
        first: f.spacings(Curve::First).to_vec(),
        second: f.spacings(Curve::Second).to_vec(),
    }
}

fn model_doc(m: &QuantileModel) -> ModelDoc {
    let t = m.transforms();
    ModelDoc {
        dim: m.dim(),
        time_basis: BasisDoc {
            degree: m.time_basis().degree(),
            intervals: m.time_basis().intervals(),
        },
        space_basis: BasisDoc {
            degree: m.space_basis().degree(),
            intervals: m.space_basis().intervals(),
        },
        transforms: TransformDoc {
            coords: t.coords.iter().map(scale_doc).collect(),
            time: scale_doc(&t.time),
            value: scale_doc(&t.value),
        },
        field: field_doc(m.coeffs()),
    }
}

fn integrity(e: impl std::fmt::Display) -> AppError {
    AppError::Integrity(e.to_string())
}

fn field_from(doc: FieldDoc, dim: usize, side: usize, block_len: usize) -> Result<CoefficientField> {
    let blocks = side.pow(dim as u32);
    let split = |v: Vec<f64>| -> Result<Vec<Vec<f64>>> {
        if block_len == 0 || v.len() != blocks * block_len {
            return Err(AppError::Integrity(format!(
                "expected {} spacings per curve, found {}",
                blocks * block_len,
                v.len()
            )));
        }
        Ok(v.chunks(block_len).map(<[f64]>::to_vec).collect())
    };
    let (a, b) = (split(doc.first)?, split(doc.second)?);
    CoefficientField::from_blocks(dim, side, &a, &b).map_err(integrity)
}

fn scale_from(d: &ScaleDoc) -> Result<UnitScale> {
    UnitScale::new(d.min, d.max).map_err(integrity)
}

fn model_from(doc: ModelDoc) -> Result<QuantileModel> {
    let tb = BasisSpec::new(doc.time_basis.degree, doc.time_basis.intervals).map_err(integrity)?;
    let sb = BasisSpec::new(doc.space_basis.degree, doc.space_basis.intervals).map_err(integrity)?;
    let transforms = TransformSpec {
        coords: doc.transforms.coords.iter().map(scale_from).collect::<Result<_>>()?,
        time: scale_from(&doc.transforms.time)?,
        value: scale_from(&doc.transforms.value)?,
    };
    let field = field_from(doc.field, doc.dim, sb.len(), tb.len().saturating_sub(1))?;
    QuantileModel::new(tb, sb, field, transforms).map_err(integrity)
}

/// Serialises a fitted model (pretty-printed).
pub fn model_to_string(m: &QuantileModel) -> String {
    let doc = Document {
        schema: SCHEMA.into(),
        kind: "model".into(),
        model: model_doc(m),
        samples: None,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model documents always serialise");
    s.push('\n');
    s
}

/// Serialises posterior draws with their configuration (compact).
pub fn samples_to_string(shell: &QuantileModel, samples: &PosteriorSamples) -> String {
    let c = &samples.config;
    let doc = Document {
        schema: SCHEMA.into(),
        kind: "samples".into(),
        model: model_doc(shell),
        samples: Some(SamplesDoc {
            config: McmcDoc {
                iterations: c.iterations,
                burn_in: c.burn_in,
                thin: c.thin,
                r: c.r,
                seed: c.seed,
                floor: c.floor,
                random_scan: c.random_scan,
            },
            acceptance_rates: samples.acceptance_rates.clone(),
            loglik_trace: samples.loglik_trace.clone(),
            draws: samples.draws.iter().map(field_doc).collect(),
        }),
    };
    let mut s = serde_json::to_string(&doc).expect("sample documents always serialise");
    s.push('\n');
    s
}

pub fn artifact_to_string(a: &Artifact) -> String {
    match a {
        Artifact::Model(m) => model_to_string(m),
        Artifact::Samples { shell, samples } => samples_to_string(shell, samples),
    }
}

/// Parses a model or samples document.
pub fn artifact_from_str(text: &str) -> Result<Artifact> {
    let probe: Probe = serde_json::from_str(text).map_err(|e| AppError::Integrity(format!("malformed model file: {e}")))?;
    match probe.schema.as_deref() {
        Some(SCHEMA) => {}
        Some(other) => {
            return Err(AppError::Incompatible(format!(
                "schema `{other}` is not supported (expected `{SCHEMA}`)"
            )))
        }
        None => return Err(AppError::Integrity("missing schema tag".into())),
    }
    let doc: Document = serde_json::from_str(text).map_err(|e| AppError::Integrity(format!("malformed model file: {e}")))?;
    let dim = doc.model.dim;
    let model = model_from(doc.model)?;
    match (doc.kind.as_str(), doc.samples) {
        ("model", None) => Ok(Artifact::Model(model)),
        ("samples", Some(s)) => {
            let c = s.config;
            let config = McmcConfig {
                iterations: c.iterations,
                burn_in: c.burn_in,
                thin: c.thin,
                r: c.r,
                seed: c.seed,
                floor: c.floor,
                random_scan: c.random_scan,
            };
            config.validate().map_err(integrity)?;
            let side = model.coeffs().side();
            let k = model.coeffs().block_len();
            let draws = s
                .draws
                .into_iter()
                .map(|d| field_from(d, dim, side, k))
                .collect::<Result<Vec<_>>>()?;
            if draws.is_empty() {
                return Err(AppError::Integrity("samples file holds no draws".into()));
            }
            if s.acceptance_rates.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(AppError::Integrity("acceptance rate outside [0, 1]".into()));
            }
            Ok(Artifact::Samples {
                shell: model,
                samples: PosteriorSamples {
                    draws,
                    loglik_trace: s.loglik_trace,
                    config,
                    acceptance_rates: s.acceptance_rates,
                },
            })
        }
        (kind, _) => Err(AppError::Integrity(format!("unexpected document kind `{kind}`"))),
    }
}

pub fn save(path: &Path, a: &Artifact) -> Result<()> {
    std::fs::write(path, artifact_to_string(a)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<Artifact> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    artifact_from_str(&text)
}
