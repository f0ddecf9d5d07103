use serde::{Deserialize, Serialize};

use super::dsl::{CompiledExpr, DslError, FeatureEnv};
use crate::graphstate::{feature_schema, FeatureSchema, RAW_FEATURES};

pub const MAX_SPEC_FEATURES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Stub,
    Live,
    Identity,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("spec has {0} features; 1 to {MAX_SPEC_FEATURES} required")]
    FeatureCount(usize),
    #[error("feature {index}: {source}")]
    Feature { index: usize, source: DslError },
    #[error("intrinsic: {0}")]
    Intrinsic(DslError),
    #[error("no JSON object in response")]
    NoDocument,
    #[error("malformed spec document: {0}")]
    Malformed(String),
}

/// State-vector expressions plus an intrinsic-reward expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSpec {
    pub version: u32,
    pub features: Vec<String>,
    pub intrinsic: String,
    #[serde(default)]
    pub provenance: Provenance,
}

/// A spec whose expressions are parsed and type-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledSpec {
    pub version: u32,
    pub provenance: Provenance,
    pub features: Vec<CompiledExpr>,
    pub intrinsic: CompiledExpr,
}

impl CompiledSpec {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Feature values with non-finite results replaced by 0, and how many
    /// were replaced.
    pub fn evaluate(&self, env: &dyn FeatureEnv) -> Result<(Vec<f64>, usize), DslError> {
        let mut nonfinite = 0;
        let mut out = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let v = f.eval(env)?;
            if v.is_finite() {
                out.push(v);
            } else {
                nonfinite += 1;
                out.push(0.0);
            }
        }
        Ok((out, nonfinite))
    }
}

impl RepresentationSpec {
    /// The raw features unchanged, no intrinsic reward.
    pub fn identity() -> Self {
        Self {
            version: 0,
            features: RAW_FEATURES.iter().map(|s| s.to_string()).collect(),
            intrinsic: "0".into(),
            provenance: Provenance::Identity,
        }
    }

    pub fn compile_with(&self, schema: &FeatureSchema) -> Result<CompiledSpec, SpecError> {
        let n = self.features.len();
        if n == 0 || n > MAX_SPEC_FEATURES {
            return Err(SpecError::FeatureCount(n));
        }
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(index, src)| CompiledExpr::compile(src, schema).map_err(|source| SpecError::Feature { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        let intrinsic = CompiledExpr::compile(&self.intrinsic, schema).map_err(SpecError::Intrinsic)?;
        Ok(CompiledSpec { version: self.version, provenance: self.provenance, features, intrinsic })
    }

    pub fn compile(&self) -> Result<CompiledSpec, SpecError> {
        self.compile_with(&feature_schema())
    }

    pub fn compiled(&self) -> Result<Vec<CompiledExpr>, SpecError> {
        Ok(self.compile()?.features)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        self.compile().map(|_| ())
    }

    /// Extracts the first balanced JSON object from free text (code fences
    /// and prose around it are ignored) and validates it.
    pub fn parse_response(text: &str, provenance: Provenance) -> Result<Self, SpecError> {
        let doc = first_json_object(text).ok_or(SpecError::NoDocument)?;
        let mut spec: RepresentationSpec =
            serde_json::from_str(doc).map_err(|e| SpecError::Malformed(e.to_string()))?;
        spec.provenance = provenance;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = text.find('{')?;
    loop {
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[start..=i];
                        if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = start + 1 + text[start + 1..].find('{')?;
    }
}

/// Initial stub spec: raw features plus bandwidth and queue summaries of the
/// neighborhood.
pub fn stub_initial_spec() -> RepresentationSpec {
    let mut features: Vec<String> = RAW_FEATURES.iter().map(|s| s.to_string()).collect();
    features.extend(
        [
            "mean(neighbor_bandwidth)",
            "max(neighbor_bandwidth)",
            "min(neighbor_bandwidth)",
            "mean(neighbor_queue)",
            "max(neighbor_queue)",
            "max(neighbor_bandwidth * (1 - neighbor_queue))",
            "bandwidth_mean * (1 - queue_occupancy)",
        ]
        .map(String::from),
    );
    RepresentationSpec {
        version: 1,
        features,
        intrinsic: "0.5 * (throughput_local - drops_local) - 0.25 * queue_occupancy".into(),
        provenance: Provenance::Stub,
    }
}

/// Refined stub spec returned after feedback: adds latency-aware and
/// spare-capacity terms.
pub fn stub_refined_spec() -> RepresentationSpec {
    let mut spec = stub_initial_spec();
    spec.version = 2;
    spec.features.extend(
        [
            "mean(neighbor_latency)",
            "min(neighbor_latency)",
            "max(neighbor_bandwidth) - max(neighbor_queue)",
            "mean(max(neighbor_bandwidth - neighbor_queue, 0))",
            "hosted_services * (1 - queue_occupancy)",
        ]
        .map(String::from),
    );
    spec.intrinsic =
        "0.5 * (throughput_local - drops_local) - 0.25 * max(queue_occupancy, mean(neighbor_queue))".into();
    spec
}
