//! Architecture selection and the on-disk model container.
//!
//! [`Tagger`] erases the difference between the uncoupled multi-head model
//! and the coupled factorial family behind one train/predict surface, so the
//! trainer and the command-line tools handle every variant uniformly.
//! [`SavedModel`] bundles a tagger with its schema, variant tag, and config
//! snapshot into a versioned single-file container.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MultiTaskSentence;
use crate::factorial::{BpConfig, CouplingVariant, FactorialModel};
use crate::features::{FeatureConfig, Featurizer};
use crate::math::FlatParams;
use crate::multihead::{ModelError, MultiHeadModel};
use crate::tagset::{LabelId, MultiTaskSchema};

pub const MODEL_MAGIC: &str = "MTCRF";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("failed to access model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse model file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path} is not a model file: magic {found:?}, expected {MODEL_MAGIC:?}")]
    BadMagic { path: String, found: String },
    #[error("model file {path} has format version {found}; this build reads {MODEL_VERSION}")]
    BadVersion { path: String, found: u32 },
}

#[derive(Debug, Error)]
#[error("unknown variant {0:?}: expected one of st, mh, fac, wfac, cfac")]
pub struct UnknownVariant(pub String);

/// The five architectures of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One independent model per task.
    St,
    /// Shared features, independent heads, no couplings.
    Mh,
    /// Pairwise couplings added as-is.
    Fac,
    /// Couplings scaled by the other task's emission score.
    Wfac,
    /// Weighted couplings restricted to earlier tasks, decoded in one pass.
    Cfac,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::St,
        Variant::Mh,
        Variant::Fac,
        Variant::Wfac,
        Variant::Cfac,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::St => "st",
            Variant::Mh => "mh",
            Variant::Fac => "fac",
            Variant::Wfac => "wfac",
            Variant::Cfac => "cfac",
        }
    }

    /// The coupling structure this variant trains with, if any.
    pub fn coupling(self) -> Option<CouplingVariant> {
        match self {
            Variant::St | Variant::Mh => None,
            Variant::Fac => Some(CouplingVariant::Plain),
            Variant::Wfac => Some(CouplingVariant::Weighted),
            Variant::Cfac => Some(CouplingVariant::Cascaded),
        }
    }

    /// True for the baseline that trains one model per task.
    pub fn is_single_task(self) -> bool {
        self == Variant::St
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

/// A trainable, decodable model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Tagger {
    MultiHead(MultiHeadModel),
    Factorial(FactorialModel),
}

impl Tagger {
    /// Builds a fresh model: seeded random featurizer, zero heads and
    /// couplings. `ks` lists the tagset size per task.
    pub fn build(
        variant: Variant,
        feature: &FeatureConfig,
        vocabulary: impl IntoIterator<Item = String>,
        ks: &[usize],
        bp: BpConfig,
    ) -> Tagger {
        let featurizer = Featurizer::new(feature.clone(), vocabulary);
        match variant.coupling() {
            None => Tagger::MultiHead(MultiHeadModel::new(featurizer, ks)),
            Some(cv) => Tagger::Factorial(FactorialModel::new(featurizer, ks, cv, bp)),
        }
    }

    /// [`Tagger::build`] with the vocabulary collected from training tokens
    /// and tagset sizes taken from the schema.
    pub fn from_corpus(
        variant: Variant,
        feature: &FeatureConfig,
        schema: &MultiTaskSchema,
        train: &[MultiTaskSentence],
        bp: BpConfig,
    ) -> Tagger {
        let vocabulary = train.iter().flat_map(|s| s.tokens.iter().cloned());
        let ks: Vec<usize> = schema.tasks.iter().map(|t| t.size()).collect();
        Tagger::build(variant, feature, vocabulary, &ks, bp)
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            Tagger::MultiHead(m) => m.num_tasks(),
            Tagger::Factorial(m) => m.num_tasks(),
        }
    }

    pub fn loss(&self, sentence: &MultiTaskSentence) -> Result<f64, ModelError> {
        match self {
            Tagger::MultiHead(m) => m.loss(sentence),
            Tagger::Factorial(m) => m.loss(sentence),
        }
    }

    /// Loss plus the gradient already flattened into optimizer order.
    pub fn loss_and_grad_flat(
        &self,
        sentence: &MultiTaskSentence,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        match self {
            Tagger::MultiHead(m) => {
                let (loss, grads) = m.loss_and_grad(sentence)?;
                Ok((loss, grads.to_flat()))
            }
            Tagger::Factorial(m) => {
                let (loss, grads) = m.loss_and_grad(sentence)?;
                Ok((loss, grads.to_flat()))
            }
        }
    }

    /// Decodes one sentence, one label sequence per task.
    pub fn predict(&self, tokens: &[String]) -> Vec<Vec<LabelId>> {
        match self {
            Tagger::MultiHead(m) => m.predict(tokens),
            Tagger::Factorial(m) => m.predict(tokens),
        }
    }
}

impl FlatParams for Tagger {
    fn to_flat(&self) -> Vec<f64> {
        match self {
            Tagger::MultiHead(m) => m.to_flat(),
            Tagger::Factorial(m) => m.to_flat(),
        }
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        match self {
            Tagger::MultiHead(m) => m.assign_flat(flat),
            Tagger::Factorial(m) => m.assign_flat(flat),
        }
    }
}

/// Everything needed to decode new text: the model, the schema its label ids
/// refer to, the variant it was trained as, and a free-form snapshot of the
/// configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema: MultiTaskSchema,
    pub variant: Variant,
    pub tagger: Tagger,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Container {
    magic: String,
    version: u32,
    model: SavedModel,
}

/// Writes the versioned single-file container.
pub fn save_model(model: &SavedModel, path: &Path) -> Result<(), ModelIoError> {
    let container = Container {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&container).expect("model serializes");
    std::fs::write(path, text).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a container written by [`save_model`], checking magic and version
/// before touching the payload.
pub fn load_model(path: &Path) -> Result<SavedModel, ModelIoError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: display.clone(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelIoError::Parse {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let magic = value.get("magic").and_then(|m| m.as_str()).unwrap_or("");
    if magic != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic {
            path: display,
            found: magic.to_string(),
        });
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_VERSION {
        return Err(ModelIoError::BadVersion {
            path: display,
            found: version,
        });
    }
    let container: Container =
        serde_json::from_value(value).map_err(|e| ModelIoError::Parse {
            path: display,
            message: e.to_string(),
        })?;
    Ok(container.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagset::{Scheme, TaskSchema};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> MultiTaskSchema {
        let a = TaskSchema::build("mwe", ["O", "B-X", "I-X"].map(str::to_string), Scheme::Bio)
            .unwrap();
        let b = TaskSchema::build("sup", ["O", "B-Y", "I-Y"].map(str::to_string), Scheme::Bio)
            .unwrap();
        MultiTaskSchema::new(vec![a, b]).unwrap()
    }

    fn feature() -> FeatureConfig {
        FeatureConfig {
            embedding_dim: 3,
            char_ngram_orders: vec![2],
            hash_buckets: 13,
            window: 1,
            hidden_dim: 4,
            num_layers: 1,
            seed: 5,
        }
    }

    fn sentence() -> MultiTaskSentence {
        MultiTaskSentence {
            tokens: ["the", "red", "cat"].map(str::to_string).to_vec(),
            gold: vec![vec![0, 1, 2], vec![1, 0, 0]],
        }
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
            assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
        }
        assert!("xyz".parse::<Variant>().is_err());
        assert_eq!(Variant::Fac.coupling(), Some(CouplingVariant::Plain));
        assert_eq!(Variant::Wfac.coupling(), Some(CouplingVariant::Weighted));
        assert_eq!(Variant::Cfac.coupling(), Some(CouplingVariant::Cascaded));
        assert_eq!(Variant::Mh.coupling(), None);
        assert!(Variant::St.is_single_task());
        assert!(!Variant::Wfac.is_single_task());
    }

    #[test]
    fn build_selects_the_family() {
        let schema = schema();
        let sent = [sentence()];
        for v in [Variant::St, Variant::Mh] {
            let t = Tagger::from_corpus(v, &feature(), &schema, &sent, BpConfig::default());
            assert!(matches!(t, Tagger::MultiHead(_)));
            assert_eq!(t.num_tasks(), 2);
        }
        for v in [Variant::Fac, Variant::Wfac, Variant::Cfac] {
            let t = Tagger::from_corpus(v, &feature(), &schema, &sent, BpConfig::default());
            match &t {
                Tagger::Factorial(m) => assert_eq!(Some(m.variant), v.coupling()),
                _ => panic!("expected a factorial model"),
            }
        }
    }

    #[test]
    fn wrapper_delegates_to_the_inner_model() {
        let schema = schema();
        let sent = sentence();
        let sents = [sent.clone()];
        let mut tagger =
            Tagger::from_corpus(Variant::Wfac, &feature(), &schema, &sents, BpConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flat: Vec<f64> = tagger
            .to_flat()
            .iter()
            .map(|_| rng.gen_range(-0.3..0.3))
            .collect();
        tagger.assign_flat(&flat);
        let inner = match &tagger {
            Tagger::Factorial(m) => m.clone(),
            _ => unreachable!(),
        };
        let (loss, grads) = inner.loss_and_grad(&sent).unwrap();
        let (wrap_loss, wrap_grads) = tagger.loss_and_grad_flat(&sent).unwrap();
        assert_eq!(loss, wrap_loss);
        assert_eq!(grads.to_flat(), wrap_grads);
        assert_eq!(tagger.loss(&sent).unwrap(), inner.loss(&sent).unwrap());
        assert_eq!(tagger.predict(&sent.tokens), inner.predict(&sent.tokens));
    }

    #[test]
    fn container_round_trips() {
        let schema = schema();
        let sents = [sentence()];
        let mut tagger =
            Tagger::from_corpus(Variant::Fac, &feature(), &schema, &sents, BpConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat: Vec<f64> = tagger
            .to_flat()
            .iter()
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        tagger.assign_flat(&flat);
        let saved = SavedModel {
            schema,
            variant: Variant::Fac,
            tagger,
            config: serde_json::json!({"learning_rate": 1e-3}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&saved, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, saved);
        let tokens = sentence().tokens;
        assert_eq!(loaded.tagger.predict(&tokens), saved.tagger.predict(&tokens));
    }

    #[test]
    fn load_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");

        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::Io { .. })
        ));

        std::fs::write(&path, "not json at all").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::Parse { .. })
        ));

        std::fs::write(&path, r#"{"magic":"OTHER","version":1}"#).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::BadMagic { .. })
        ));

        std::fs::write(&path, r#"{"magic":"MTCRF","version":99}"#).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::BadVersion { .. })
        ));

        std::fs::write(&path, r#"{"magic":"MTCRF","version":1,"model":{}}"#).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::Parse { .. })
        ));
    }
}
