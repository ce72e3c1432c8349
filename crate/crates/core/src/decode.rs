//! Decoding per-level cell probabilities into a predicted coordinate.
//!
//! The score of a finest-level cell is the product of the probabilities that
//! each level assigns to the cell's ancestor at that level (the cell itself at
//! the finest level). The predicted coordinate is the centroid of the
//! best-scoring cell; ties go to the lexicographically smallest cell id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geo::GeoCoordinate;
use crate::partition::PartitioningHierarchy;

/// Largest deviation of a probability vector's sum from 1 that is silently
/// renormalized.
pub const SUM_TOLERANCE: f64 = 1e-3;

/// Class posterior over the cells of one partitioning level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellProbabilities {
    level: usize,
    values: Vec<f64>,
}

impl CellProbabilities {
    /// Validates a probability vector and renormalizes it.
    ///
    /// The sum must be within [`SUM_TOLERANCE`] of 1.
    pub fn new(level: usize, values: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&values)?;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(GeoError::validation(format!(
                "level {level} probabilities sum to {sum}, expected 1 ± {SUM_TOLERANCE}"
            )));
        }
        Ok(Self::normalized(level, values, sum))
    }

    /// Accepts arbitrary non-negative class weights with a positive sum
    /// (e.g. unnormalized scores) and normalizes them.
    pub fn from_weights(level: usize, values: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&values)?;
        if sum <= 0.0 {
            return Err(GeoError::validation(format!(
                "level {level} weights sum to zero"
            )));
        }
        Ok(Self::normalized(level, values, sum))
    }

    fn normalized(level: usize, mut values: Vec<f64>, sum: f64) -> Self {
        if sum != 1.0 {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Self { level, values }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn checked_sum(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(GeoError::shape("empty probability vector"));
    }
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(GeoError::validation(format!(
                "probability {v} at index {i} is negative or not finite"
            )));
        }
        sum += v;
    }
    Ok(sum)
}

/// Scene category of a photo, used to pick a scene-specific probability set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneLabel {
    Indoor,
    Natural,
    Urban,
}

impl std::str::FromStr for SceneLabel {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "indoor" => Ok(Self::Indoor),
            "natural" => Ok(Self::Natural),
            "urban" => Ok(Self::Urban),
            other => Err(GeoError::validation(format!("unknown scene label `{other}`"))),
        }
    }
}

/// Per-level probabilities: a default set plus optional scene-specific sets.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ProbabilitySets {
    pub default: Vec<CellProbabilities>,
    pub by_scene: BTreeMap<SceneLabel, Vec<CellProbabilities>>,
}

impl ProbabilitySets {
    pub fn single(default: Vec<CellProbabilities>) -> Self {
        Self {
            default,
            by_scene: BTreeMap::new(),
        }
    }

    /// The set matching `scene`, or the default set.
    pub fn select(&self, scene: Option<SceneLabel>) -> &[CellProbabilities] {
        scene
            .and_then(|s| self.by_scene.get(&s))
            .unwrap_or(&self.default)
    }
}

/// Outcome of decoding: the winning cell, its centroid and its score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    pub cell_id: String,
    pub level: usize,
    pub coordinate: GeoCoordinate,
    pub score: f64,
}

/// Product-of-ancestors decoding over every level of `hierarchy`.
pub fn hierarchical_decode(
    hierarchy: &PartitioningHierarchy,
    probs: &[CellProbabilities],
) -> Result<Decoded> {
    if probs.len() != hierarchy.num_levels() {
        return Err(GeoError::shape(format!(
            "{} probability vectors for {} levels",
            probs.len(),
            hierarchy.num_levels()
        )));
    }
    for (level, p) in probs.iter().enumerate() {
        check_level(hierarchy, level, p)?;
    }

    let mut scores = probs[0].values.clone();
    for (level, p) in probs.iter().enumerate().skip(1) {
        scores = p
            .values
            .iter()
            .enumerate()
            .map(|(pos, v)| scores[hierarchy.parent_position(level, pos)] * v)
            .collect();
    }
    Ok(pick(hierarchy, hierarchy.finest_level(), &scores))
}

/// Decodes with the probability set matching `scene` (default set when absent).
pub fn decode_with_scene(
    hierarchy: &PartitioningHierarchy,
    sets: &ProbabilitySets,
    scene: Option<SceneLabel>,
) -> Result<Decoded> {
    hierarchical_decode(hierarchy, sets.select(scene))
}

/// Plain argmax over a single level.
pub fn flat_decode(
    hierarchy: &PartitioningHierarchy,
    level: usize,
    probs: &CellProbabilities,
) -> Result<Decoded> {
    if level >= hierarchy.num_levels() {
        return Err(GeoError::shape(format!(
            "level {level} does not exist ({} levels)",
            hierarchy.num_levels()
        )));
    }
    check_level(hierarchy, level, probs)?;
    Ok(pick(hierarchy, level, &probs.values))
}

fn check_level(hierarchy: &PartitioningHierarchy, level: usize, p: &CellProbabilities) -> Result<()> {
    if p.level != level {
        return Err(GeoError::shape(format!(
            "probabilities for level {} supplied at position {level}",
            p.level
        )));
    }
    if p.len() != hierarchy.level_len(level) {
        return Err(GeoError::shape(format!(
            "level {level} has {} cells but {} probabilities",
            hierarchy.level_len(level),
            p.len()
        )));
    }
    Ok(())
}

fn pick(hierarchy: &PartitioningHierarchy, level: usize, scores: &[f64]) -> Decoded {
    let cells = hierarchy.cells(level);
    let mut best = 0;
    for pos in 1..scores.len() {
        let (s, b) = (scores[pos], scores[best]);
        if s > b || (s == b && cells[pos].id < cells[best].id) {
            best = pos;
        }
    }
    let cell = &cells[best];
    Decoded {
        cell_id: cell.id.clone(),
        level,
        coordinate: cell.centroid,
        score: scores[best].clamp(0.0, 1.0),
    }
}
