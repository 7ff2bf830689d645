//! Versioned model files.
//!
//! Layout (UTF-8):
//!
//! ```text
//! ltrkit-model 1
//! kind=<model kind>
//! schema=<16 hex digits>
//! config=<single-line JSON of the training configuration>
//! payload-bytes=<N>
//!
//! <N bytes of JSON payload>
//! ```
//!
//! The schema hash is FNV-1a (64 bit) over `v1`, the raw input columns and
//! the feature columns, every name followed by a NUL byte and the two lists
//! separated by an extra NUL. Loading recomputes it from the payload, so a
//! file written by another format version or edited by hand is rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ltrkit_core::ensemble::{GbmStacker, ListwiseEnsemble};
use ltrkit_core::features::{FeatureMatrix, FittedPipeline};
use ltrkit_core::metrics::ScoreList;
use ltrkit_core::model::{FittedModel, ModelConfig};
use ltrkit_core::schema::Dataset;
use ltrkit_core::tree::BoostParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MAGIC: &str = "ltrkit-model";
pub const VERSION: u32 = 1;

pub fn schema_hash<'a>(inputs: impl IntoIterator<Item = &'a str>, features: impl IntoIterator<Item = &'a str>) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(format!("v{VERSION}\0").as_bytes());
    for name in inputs {
        feed(name.as_bytes());
        feed(b"\0");
    }
    feed(b"\0");
    for name in features {
        feed(name.as_bytes());
        feed(b"\0");
    }
    format!("{h:016x}")
}

/// A single model with the pipeline that feeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    /// Raw CSV columns the pipeline was fitted on.
    pub input_columns: Vec<String>,
    pub pipeline: FittedPipeline,
    pub config: ModelConfig,
    pub model: FittedModel,
    /// Queries the model saw during fitting.
    pub train_queries: BTreeSet<u64>,
}

impl ModelBundle {
    pub fn schema_hash(&self) -> String {
        schema_hash(self.input_columns.iter().map(String::as_str), self.pipeline.columns().iter().map(String::as_str))
    }

    pub fn features(&self, ds: &Dataset) -> Result<FeatureMatrix> {
        check_columns(&self.input_columns, ds, &self.schema_hash(), self.pipeline.columns())?;
        Ok(self.pipeline.apply(ds)?)
    }

    pub fn predict(&self, ds: &Dataset) -> Result<ScoreList> {
        Ok(self.model.predict(&self.features(ds)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Combiner {
    Gbm { stacker: GbmStacker, extras: Option<FittedPipeline> },
    Listwise(ListwiseEnsemble),
}

/// Base models plus a second-stage model over their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackBundle {
    pub bases: Vec<(String, ModelBundle)>,
    pub combiner: Combiner,
    pub params: BoostParams,
    pub stack_queries: BTreeSet<u64>,
}

impl StackBundle {
    pub fn input_columns(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.bases.iter().flat_map(|(_, b)| &b.input_columns).collect();
        set.into_iter().cloned().collect()
    }

    fn feature_names(&self) -> Vec<String> {
        match &self.combiner {
            Combiner::Gbm { stacker, .. } => stacker.inputs.iter().chain(&stacker.extras).cloned().collect(),
            Combiner::Listwise(l) => l.inputs.clone(),
        }
    }

    pub fn schema_hash(&self) -> String {
        let inputs = self.input_columns();
        let features = self.feature_names();
        schema_hash(inputs.iter().map(String::as_str), features.iter().map(String::as_str))
    }

    pub fn base_scores(&self, ds: &Dataset) -> Result<Vec<(String, ScoreList)>> {
        check_columns(&self.input_columns(), ds, &self.schema_hash(), &self.feature_names())?;
        self.bases.iter().map(|(name, b)| Ok((name.clone(), b.predict(ds)?))).collect()
    }

    pub fn predict(&self, ds: &Dataset) -> Result<ScoreList> {
        let scores = self.base_scores(ds)?;
        let keys = ltrkit_core::features::dataset_keys(ds);
        Ok(match &self.combiner {
            Combiner::Gbm { stacker, extras } => {
                let m = extras.as_ref().map(|p| p.apply(ds)).transpose()?;
                stacker.predict(&scores, m.as_ref(), &keys)?
            }
            Combiner::Listwise(l) => l.predict(&scores, &keys)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Artifact {
    Model(ModelBundle),
    Stack(StackBundle),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Model(b) => b.config.kind(),
            Artifact::Stack(s) => match s.combiner {
                Combiner::Gbm { .. } => "gbm_stack",
                Combiner::Listwise(_) => "listwise",
            },
        }
    }

    pub fn schema_hash(&self) -> String {
        match self {
            Artifact::Model(b) => b.schema_hash(),
            Artifact::Stack(s) => s.schema_hash(),
        }
    }

    pub fn predict(&self, ds: &Dataset) -> Result<ScoreList> {
        match self {
            Artifact::Model(b) => b.predict(ds),
            Artifact::Stack(s) => s.predict(ds),
        }
    }

    /// Every query any stage of this artifact was fitted on.
    pub fn fitted_queries(&self) -> BTreeSet<u64> {
        match self {
            Artifact::Model(b) => b.train_queries.clone(),
            Artifact::Stack(s) => {
                let mut all = s.stack_queries.clone();
                for (_, b) in &s.bases {
                    all.extend(&b.train_queries);
                }
                all
            }
        }
    }

    fn config_json(&self) -> Result<String> {
        Ok(match self {
            Artifact::Model(b) => serde_json::to_string(&b.config)?,
            Artifact::Stack(s) => serde_json::to_string(&s.params)?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_vec(self)?;
        let mut out = format!(
            "{MAGIC} {VERSION}\nkind={}\nschema={}\nconfig={}\npayload-bytes={}\n\n",
            self.kind(),
            self.schema_hash(),
            self.config_json()?,
            payload.len()
        )
        .into_bytes();
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Artifact> {
        let split = bytes.windows(2).position(|w| w == b"\n\n").context("model file has no header terminator")?;
        let header = std::str::from_utf8(&bytes[..split]).context("model header is not UTF-8")?;
        let payload = &bytes[split + 2..];
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let version = first.strip_prefix(MAGIC).map(str::trim).context("not an ltrkit model file")?;
        if version != VERSION.to_string() {
            return Err(CliError::Schema {
                expected: format!("version {VERSION}"),
                found: format!("version {version}"),
                detail: String::new(),
            }
            .into());
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().with_context(|| format!("model header lacks `{key}`"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(String::from)
                .with_context(|| format!("model header: expected `{key}=`, got `{line}`"))
        };
        let kind = field("kind")?;
        let stored_hash = field("schema")?;
        let _config = field("config")?;
        let n: usize = field("payload-bytes")?.parse().context("bad payload-bytes")?;
        if n != payload.len() {
            anyhow::bail!("model payload is {} bytes, header says {n}", payload.len());
        }
        let artifact: Artifact = serde_json::from_slice(payload).context("decoding model payload")?;
        if artifact.kind() != kind {
            anyhow::bail!("model header kind `{kind}` does not match payload `{}`", artifact.kind());
        }
        let actual = artifact.schema_hash();
        if actual != stored_hash {
            return Err(CliError::Schema { expected: stored_hash, found: actual, detail: " (payload)".into() }.into());
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Artifact> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Artifact::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

/// Fails with a schema error when `ds` lacks a column the model was fitted on.
fn check_columns(required: &[String], ds: &Dataset, model_hash: &str, features: &[String]) -> Result<()> {
    let present: Vec<&str> = ds.schema().columns().map(|c| c.name()).collect();
    let missing: Vec<&str> = required.iter().map(String::as_str).filter(|c| !present.contains(c)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let found = schema_hash(present.iter().copied(), features.iter().map(String::as_str));
    Err(CliError::Schema {
        expected: model_hash.to_string(),
        found,
        detail: format!(" (data lacks {})", missing.join(", ")),
    }
    .into())
}
