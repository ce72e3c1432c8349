//! Model outputs for an image: the three base embeddings and per-level cell
//! probabilities.
//!
//! [`FixtureProvider`] serves frozen outputs keyed by the image's content hash
//! and synthesizes deterministic ones for unknown images.
//! [`ExternalInferenceProvider`] asks an HTTP inference service.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use base64::Engine as _;
use geowine_core::store::load_file;
use geowine_core::{
    combine, content_hash, CellProbabilities, EmbeddingKind, EmbeddingVector, PartitioningHierarchy,
    ProbabilitySets, SceneLabel,
};
use geowine_core::embedding::BASE_DIM;
use geowine_kg::{HttpRequest, Transport};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ProviderMode;
use crate::error::{ErrorKind, ServiceError, Stage};

/// Geolocation, place and object embeddings of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbeddings {
    pub geolocation: EmbeddingVector,
    pub place: EmbeddingVector,
    pub object: EmbeddingVector,
}

impl BaseEmbeddings {
    pub fn new(
        geolocation: EmbeddingVector,
        place: EmbeddingVector,
        object: EmbeddingVector,
    ) -> Result<Self, ServiceError> {
        // combine() checks kinds and lengths.
        combine(&geolocation, &place, &object)
            .map_err(|e| ServiceError::new(ErrorKind::Provider, Stage::Provider, e.to_string()))?;
        Ok(Self {
            geolocation,
            place,
            object,
        })
    }

    pub fn base(&self, kind: EmbeddingKind) -> Option<&EmbeddingVector> {
        match kind {
            EmbeddingKind::Geolocation => Some(&self.geolocation),
            EmbeddingKind::Place => Some(&self.place),
            EmbeddingKind::Object => Some(&self.object),
            EmbeddingKind::Combined => None,
        }
    }

    pub fn combined(&self) -> EmbeddingVector {
        combine(&self.geolocation, &self.place, &self.object).expect("checked on construction")
    }

    /// All four kinds in [`EmbeddingKind::ALL`] order.
    pub fn all(&self) -> [EmbeddingVector; 4] {
        [
            self.geolocation.clone(),
            self.place.clone(),
            self.object.clone(),
            self.combined(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub embeddings: BaseEmbeddings,
    pub probabilities: ProbabilitySets,
    pub scene: Option<SceneLabel>,
    /// True when the provider had no stored output and made one up.
    pub synthesized: bool,
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    /// Embeddings and cell probabilities for `image`. Deterministic in the
    /// image bytes.
    async fn infer(&self, image: &[u8]) -> Result<ModelOutput, ServiceError>;

    async fn embed(&self, image: &[u8]) -> Result<BaseEmbeddings, ServiceError> {
        Ok(self.infer(image).await?.embeddings)
    }
}

/// A reproducible pseudo-embedding for an image hash, entries in `[-1, 1)`.
pub fn synthesize_embedding(image_hash: &str, kind: EmbeddingKind, base_dim: usize) -> EmbeddingVector {
    let seed_text = format!("{image_hash}:{}", kind.name());
    let seed_hex = content_hash(seed_text.as_bytes()).expect("seed text is non-empty");
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).expect("hex digest");
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let values = (0..base_dim)
        .map(|_| ((rng.next_u32() >> 8) as f32 / 16_777_216.0) * 2.0 - 1.0)
        .collect();
    EmbeddingVector::with_base_dim(kind, values, base_dim).expect("length matches")
}

pub fn synthesize_base(image_hash: &str, base_dim: usize) -> BaseEmbeddings {
    BaseEmbeddings {
        geolocation: synthesize_embedding(image_hash, EmbeddingKind::Geolocation, base_dim),
        place: synthesize_embedding(image_hash, EmbeddingKind::Place, base_dim),
        object: synthesize_embedding(image_hash, EmbeddingKind::Object, base_dim),
    }
}

fn uniform(hierarchy_levels: &[usize]) -> Vec<CellProbabilities> {
    hierarchy_levels
        .iter()
        .enumerate()
        .map(|(l, &n)| CellProbabilities::new(l, vec![1.0 / n as f64; n]).expect("uniform sums to 1"))
        .collect()
}

/// Per-level probabilities as they appear in fixture and inference JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbabilitiesJson {
    pub default: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_scene: BTreeMap<SceneLabel, Vec<Vec<f64>>>,
}

impl ProbabilitiesJson {
    pub fn to_sets(&self, level_sizes: &[usize]) -> Result<ProbabilitySets, String> {
        let levels = |set: &[Vec<f64>]| -> Result<Vec<CellProbabilities>, String> {
            if set.len() != level_sizes.len() {
                return Err(format!(
                    "{} probability levels for a {}-level partitioning",
                    set.len(),
                    level_sizes.len()
                ));
            }
            set.iter()
                .zip(level_sizes)
                .enumerate()
                .map(|(l, (v, &n))| {
                    if v.len() != n {
                        return Err(format!("level {l} has {} probabilities for {n} cells", v.len()));
                    }
                    CellProbabilities::new(l, v.clone()).map_err(|e| e.to_string())
                })
                .collect()
        };
        let mut by_scene = BTreeMap::new();
        for (scene, set) in &self.by_scene {
            by_scene.insert(*scene, levels(set)?);
        }
        Ok(ProbabilitySets {
            default: levels(&self.default)?,
            by_scene,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixtureEntry {
    /// Human-readable note; not used for lookup.
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub scene: Option<SceneLabel>,
    #[serde(default)]
    pub probabilities: Option<ProbabilitiesJson>,
}

/// `index.json` of a fixture provider directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureIndex {
    #[serde(default = "default_base_dim")]
    pub base_dim: usize,
    /// Keyed by the image's SHA-256 hex digest.
    pub images: BTreeMap<String, FixtureEntry>,
}

fn default_base_dim() -> usize {
    BASE_DIM
}

pub const FIXTURE_INDEX_FILE: &str = "index.json";
pub const FIXTURE_EMBEDDINGS_FILE: &str = "embeddings.bin";

struct StoredOutput {
    embeddings: Option<BaseEmbeddings>,
    probabilities: Option<ProbabilitySets>,
    scene: Option<SceneLabel>,
}

pub struct FixtureProvider {
    base_dim: usize,
    level_sizes: Vec<usize>,
    outputs: HashMap<String, StoredOutput>,
}

impl FixtureProvider {
    /// Loads `index.json` and (if present) `embeddings.bin` from `dir`.
    /// Embedding records are keyed by image hash.
    pub fn load(dir: impl AsRef<Path>, hierarchy: &PartitioningHierarchy) -> Result<Self, ServiceError> {
        let dir = dir.as_ref();
        let err = |m: String| ServiceError::config(format!("fixture provider {}: {m}", dir.display()));
        let index_path = dir.join(FIXTURE_INDEX_FILE);
        let text = std::fs::read_to_string(&index_path).map_err(|e| err(format!("{FIXTURE_INDEX_FILE}: {e}")))?;
        let index: FixtureIndex =
            serde_json::from_str(&text).map_err(|e| err(format!("{FIXTURE_INDEX_FILE}: {e}")))?;

        let mut vectors: HashMap<String, [Option<EmbeddingVector>; 3]> = HashMap::new();
        let emb_path = dir.join(FIXTURE_EMBEDDINGS_FILE);
        if emb_path.exists() {
            for (id, v) in load_file(&emb_path).map_err(|e| err(e.to_string()))? {
                let slot = EmbeddingKind::BASE
                    .iter()
                    .position(|k| *k == v.kind())
                    .ok_or_else(|| err(format!("{id}: stored {} vector", v.kind())))?;
                if v.len() != index.base_dim {
                    return Err(err(format!("{id}: {} values, expected {}", v.len(), index.base_dim)));
                }
                vectors.entry(id).or_default()[slot] = Some(v);
            }
        }
        Self::from_parts(index, vectors, hierarchy).map_err(err)
    }

    fn from_parts(
        index: FixtureIndex,
        mut vectors: HashMap<String, [Option<EmbeddingVector>; 3]>,
        hierarchy: &PartitioningHierarchy,
    ) -> Result<Self, String> {
        let level_sizes: Vec<usize> = (0..hierarchy.num_levels()).map(|l| hierarchy.level_len(l)).collect();
        let mut outputs = HashMap::new();
        for (hash, entry) in index.images {
            let probabilities = entry
                .probabilities
                .as_ref()
                .map(|p| p.to_sets(&level_sizes))
                .transpose()
                .map_err(|e| format!("{hash}: {e}"))?;
            let embeddings = match vectors.remove(&hash) {
                Some([Some(g), Some(p), Some(o)]) => {
                    Some(BaseEmbeddings::new(g, p, o).map_err(|e| format!("{hash}: {}", e.message))?)
                }
                Some(_) => return Err(format!("{hash}: incomplete embedding set")),
                None => None,
            };
            outputs.insert(
                hash,
                StoredOutput {
                    embeddings,
                    probabilities,
                    scene: entry.scene,
                },
            );
        }
        // Vectors for images without index entries (e.g. candidate images).
        for (hash, parts) in vectors {
            let [Some(g), Some(p), Some(o)] = parts else {
                return Err(format!("{hash}: incomplete embedding set"));
            };
            let embeddings = BaseEmbeddings::new(g, p, o).map_err(|e| format!("{hash}: {}", e.message))?;
            outputs.insert(
                hash,
                StoredOutput {
                    embeddings: Some(embeddings),
                    probabilities: None,
                    scene: None,
                },
            );
        }
        Ok(Self {
            base_dim: index.base_dim,
            level_sizes,
            outputs,
        })
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output_for_hash(&self, hash: &str) -> ModelOutput {
        let stored = self.outputs.get(hash);
        let embeddings = stored.and_then(|s| s.embeddings.clone());
        let probabilities = stored.and_then(|s| s.probabilities.clone());
        let synthesized = embeddings.is_none() || probabilities.is_none();
        ModelOutput {
            embeddings: embeddings.unwrap_or_else(|| synthesize_base(hash, self.base_dim)),
            probabilities: probabilities.unwrap_or_else(|| ProbabilitySets::single(uniform(&self.level_sizes))),
            scene: stored.and_then(|s| s.scene),
            synthesized,
        }
    }
}

#[async_trait]
impl EmbeddingProvider for FixtureProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Fixture
    }

    async fn infer(&self, image: &[u8]) -> Result<ModelOutput, ServiceError> {
        let hash = content_hash(image).map_err(|e| ServiceError::validation(Stage::Provider, e.to_string()))?;
        Ok(self.output_for_hash(&hash))
    }
}

#[derive(Debug, Serialize)]
struct InferenceRequest<'a> {
    image_base64: &'a str,
}

/// Wire format of the external inference service's answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub geolocation: Vec<f32>,
    pub place: Vec<f32>,
    pub object: Vec<f32>,
    pub probabilities: ProbabilitiesJson,
    #[serde(default)]
    pub scene: Option<SceneLabel>,
}

/// POSTs `{"image_base64": ...}` to an inference endpoint that answers with
/// an [`InferenceResponse`].
pub struct ExternalInferenceProvider {
    transport: Arc<dyn Transport>,
    url: String,
    base_dim: usize,
    level_sizes: Vec<usize>,
}

impl ExternalInferenceProvider {
    pub fn new(transport: Arc<dyn Transport>, url: impl Into<String>, hierarchy: &PartitioningHierarchy) -> Self {
        Self::with_base_dim(transport, url, hierarchy, BASE_DIM)
    }

    pub fn with_base_dim(
        transport: Arc<dyn Transport>,
        url: impl Into<String>,
        hierarchy: &PartitioningHierarchy,
        base_dim: usize,
    ) -> Self {
        Self {
            transport,
            url: url.into(),
            base_dim,
            level_sizes: (0..hierarchy.num_levels()).map(|l| hierarchy.level_len(l)).collect(),
        }
    }

    pub fn request(&self, image: &[u8]) -> HttpRequest {
        let b64 = base64::engine::general_purpose::STANDARD.encode(image);
        let body = serde_json::to_vec(&InferenceRequest { image_base64: &b64 }).expect("request serializes");
        HttpRequest::post_json(&self.url, body)
    }
}

#[async_trait]
impl EmbeddingProvider for ExternalInferenceProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::ExternalInference
    }

    async fn infer(&self, image: &[u8]) -> Result<ModelOutput, ServiceError> {
        if image.is_empty() {
            return Err(ServiceError::validation(Stage::Provider, "empty image"));
        }
        let fail = |m: String| ServiceError::new(ErrorKind::Provider, Stage::Provider, m);
        let resp = self
            .transport
            .execute(&self.request(image))
            .await
            .map_err(|e| fail(format!("inference request failed: {e}")))?;
        let parsed: InferenceResponse =
            serde_json::from_slice(&resp.body).map_err(|e| fail(format!("inference response: {e}")))?;
        let vec = |kind, values| {
            EmbeddingVector::with_base_dim(kind, values, self.base_dim).map_err(|e| fail(e.to_string()))
        };
        let embeddings = BaseEmbeddings::new(
            vec(EmbeddingKind::Geolocation, parsed.geolocation)?,
            vec(EmbeddingKind::Place, parsed.place)?,
            vec(EmbeddingKind::Object, parsed.object)?,
        )?;
        let probabilities = parsed.probabilities.to_sets(&self.level_sizes).map_err(fail)?;
        Ok(ModelOutput {
            embeddings,
            probabilities,
            scene: parsed.scene,
            synthesized: false,
        })
    }
}
