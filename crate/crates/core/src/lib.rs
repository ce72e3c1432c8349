//! Core building blocks for geolocation-based image retrieval.
//!
//! - [`geo`]: validated coordinates and great-circle distance.
//! - [`partition`] / [`decode`]: multi-level geocell partitionings and decoding of
//!   per-level cell probabilities into a predicted coordinate.
//! - [`embedding`]: typed image embeddings, cosine ranking and content hashing.
//! - [`store`]: embedding file formats and the embedding cache.
//! - [`registry`]: the entity type groups used to filter geospatial retrieval.
//! - [`eval`]: top-k accuracy protocol (distance filter, dedup, report).

pub mod decode;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geo;
pub mod hash;
pub mod partition;
pub mod registry;
pub mod store;

pub use decode::{
    decode_with_scene, flat_decode, hierarchical_decode, CellProbabilities, Decoded, ProbabilitySets, SceneLabel,
};
pub use embedding::{
    combine, cosine_similarity, rank_candidates, Candidate, EmbeddingKind, EmbeddingVector,
    Exclusion, ExclusionReason, Ranking, SimilarityResult,
};
pub use error::{GeoError, Result};
pub use geo::{great_circle_distance, GeoCoordinate, EARTH_MEAN_RADIUS_KM};
pub use hash::content_hash;
pub use partition::{GeoCell, PartitioningHierarchy};
pub use registry::{default_type_registry, EntityTypeGroup, Qid, TypeRegistry};
pub use store::EmbeddingCache;
