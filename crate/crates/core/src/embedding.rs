//! Typed image embeddings and cosine-similarity ranking.
//!
//! Three base representations (geolocation, place, object) are 2048-dim each;
//! the combined representation is their 6144-dim concatenation in that order.
//! Values are stored as `f32`; dot products accumulate in `f64`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Dimension of each base embedding.
pub const BASE_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Geolocation,
    Place,
    Object,
    Combined,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 4] = [
        EmbeddingKind::Geolocation,
        EmbeddingKind::Place,
        EmbeddingKind::Object,
        EmbeddingKind::Combined,
    ];

    /// The kinds a provider emits directly, in concatenation order.
    pub const BASE: [EmbeddingKind; 3] = [
        EmbeddingKind::Geolocation,
        EmbeddingKind::Place,
        EmbeddingKind::Object,
    ];

    pub fn dimension(self) -> usize {
        self.dimension_for(BASE_DIM)
    }

    /// Dimension of this kind when base embeddings have `base_dim` entries.
    pub fn dimension_for(self, base_dim: usize) -> usize {
        match self {
            EmbeddingKind::Combined => 3 * base_dim,
            _ => base_dim,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            EmbeddingKind::Geolocation => 0,
            EmbeddingKind::Place => 1,
            EmbeddingKind::Object => 2,
            EmbeddingKind::Combined => 3,
        }
    }

    pub fn from_u8(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Geolocation => "geolocation",
            EmbeddingKind::Place => "place",
            EmbeddingKind::Object => "object",
            EmbeddingKind::Combined => "combined",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "geolocation" | "0" => Ok(Self::Geolocation),
            "place" | "1" => Ok(Self::Place),
            "object" | "2" => Ok(Self::Object),
            "combined" | "3" => Ok(Self::Combined),
            other => Err(GeoError::Type(format!("unknown embedding kind `{other}`"))),
        }
    }
}

/// A dense, finite embedding of a known kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    kind: EmbeddingKind,
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Vector with the standard dimension for `kind`.
    pub fn new(kind: EmbeddingKind, values: Vec<f32>) -> Result<Self> {
        Self::with_base_dim(kind, values, BASE_DIM)
    }

    /// Vector for a non-standard base dimension (miniature test spaces).
    pub fn with_base_dim(kind: EmbeddingKind, values: Vec<f32>, base_dim: usize) -> Result<Self> {
        let expected = kind.dimension_for(base_dim);
        if values.len() != expected {
            return Err(GeoError::Type(format!(
                "{kind} embedding needs {expected} values, got {}",
                values.len()
            )));
        }
        Self::unchecked_len(kind, values)
    }

    /// Vector of any non-zero length; only finiteness is checked.
    pub(crate) fn unchecked_len(kind: EmbeddingKind, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(GeoError::Type("empty embedding".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeoError::validation(format!(
                "{kind} embedding has a non-finite value at index {i}"
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// The three base parts of a combined vector.
    pub fn parts(&self) -> Option<[&[f32]; 3]> {
        if self.kind != EmbeddingKind::Combined || !self.values.len().is_multiple_of(3) {
            return None;
        }
        let n = self.values.len() / 3;
        Some([
            &self.values[..n],
            &self.values[n..2 * n],
            &self.values[2 * n..],
        ])
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine of the angle between two embeddings of the same kind and length.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.kind != b.kind {
        return Err(GeoError::Type(format!(
            "cannot compare {} with {} embeddings",
            a.kind, b.kind
        )));
    }
    if a.len() != b.len() {
        return Err(GeoError::Type(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(GeoError::Degenerate(format!("zero-norm {} embedding", a.kind)));
    }
    Ok((dot(&a.values, &b.values) / (na * nb)).clamp(-1.0, 1.0))
}

/// Concatenates geolocation, place and object embeddings (in that order).
pub fn combine(
    geo: &EmbeddingVector,
    place: &EmbeddingVector,
    object: &EmbeddingVector,
) -> Result<EmbeddingVector> {
    for (v, want) in [geo, place, object].into_iter().zip(EmbeddingKind::BASE) {
        if v.kind != want {
            return Err(GeoError::Type(format!(
                "expected a {want} embedding, got {}",
                v.kind
            )));
        }
    }
    if geo.len() != place.len() || geo.len() != object.len() {
        return Err(GeoError::Type(format!(
            "base embeddings differ in length: {}/{}/{}",
            geo.len(),
            place.len(),
            object.len()
        )));
    }
    let mut values = Vec::with_capacity(3 * geo.len());
    values.extend_from_slice(&geo.values);
    values.extend_from_slice(&place.values);
    values.extend_from_slice(&object.values);
    Ok(EmbeddingVector {
        kind: EmbeddingKind::Combined,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    pub entity_id: String,
    pub score: f64,
    pub kind: EmbeddingKind,
}

/// A ranking candidate; `vector` is `None` when no embedding could be obtained.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub entity_id: &'a str,
    pub vector: Option<&'a EmbeddingVector>,
}

impl<'a> Candidate<'a> {
    pub fn new(entity_id: &'a str, vector: Option<&'a EmbeddingVector>) -> Self {
        Self { entity_id, vector }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    MissingVector,
    ZeroNorm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub entity_id: String,
    pub reason: ExclusionReason,
}

/// Ranked candidates plus the ones that could not be scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking {
    pub ranked: Vec<SimilarityResult>,
    pub excluded: Vec<Exclusion>,
}

/// Ranks candidates by cosine similarity to `query`, best first.
///
/// Ties are broken by ascending entity id. Candidates without a vector or with
/// a zero vector are reported in [`Ranking::excluded`].
pub fn rank_candidates<'a>(
    query: &EmbeddingVector,
    candidates: impl IntoIterator<Item = Candidate<'a>>,
    kind: EmbeddingKind,
) -> Result<Ranking> {
    if query.kind != kind {
        return Err(GeoError::Type(format!(
            "query is a {} embedding, ranking by {kind}",
            query.kind
        )));
    }
    let qnorm = query.norm();
    if qnorm == 0.0 {
        return Err(GeoError::Degenerate("zero-norm query embedding".into()));
    }

    let mut out = Ranking::default();
    for cand in candidates {
        let Some(v) = cand.vector else {
            out.excluded.push(Exclusion {
                entity_id: cand.entity_id.to_string(),
                reason: ExclusionReason::MissingVector,
            });
            continue;
        };
        if v.kind != kind || v.len() != query.len() {
            return Err(GeoError::Type(format!(
                "candidate {} has a {}-dim {} embedding, expected {}-dim {kind}",
                cand.entity_id,
                v.len(),
                v.kind,
                query.len()
            )));
        }
        let vnorm = v.norm();
        if vnorm == 0.0 {
            out.excluded.push(Exclusion {
                entity_id: cand.entity_id.to_string(),
                reason: ExclusionReason::ZeroNorm,
            });
            continue;
        }
        let score = (dot(&query.values, &v.values) / (qnorm * vnorm)).clamp(-1.0, 1.0);
        out.ranked.push(SimilarityResult {
            entity_id: cand.entity_id.to_string(),
            score,
            kind,
        });
    }
    out.ranked.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.entity_id.cmp(&b.entity_id),
        o => o,
    });
    out.excluded.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    Ok(out)
}
