//! Top-k entity-label accuracy.
//!
//! Queries whose predicted coordinate is farther than a threshold from the
//! ground truth are dropped, then queries whose image is byte-identical to a
//! retrieved candidate image are dropped, and the remaining queries are scored
//! by whether the ground-truth entity appears among the first `k` ranked
//! entities.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geo::{great_circle_distance, GeoCoordinate};
use crate::hash::content_hash;
use crate::registry::{abbreviation, Qid, TypeRegistry};

/// City-level distance threshold in kilometres.
pub const CITY_LEVEL_KM: f64 = 25.0;

/// The k values every report contains.
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub image_ref: String,
    pub ground_truth: GeoCoordinate,
    pub qid: Qid,
    pub group: String,
}

/// Splits samples into those within `threshold_km` of their prediction and
/// the rest. `predictions` is aligned with `samples`.
pub fn filter_by_gcd<'a>(
    samples: &'a [EvalSample],
    predictions: &[Option<GeoCoordinate>],
    threshold_km: f64,
) -> Result<(Vec<&'a EvalSample>, Vec<&'a EvalSample>)> {
    if threshold_km.is_nan() || threshold_km < 0.0 {
        return Err(GeoError::validation(format!(
            "threshold {threshold_km} km must be non-negative"
        )));
    }
    if predictions.len() != samples.len() {
        return Err(GeoError::validation(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (sample, pred) in samples.iter().zip(predictions) {
        let pred = pred.as_ref().ok_or_else(|| {
            GeoError::validation(format!("sample {} has no prediction", sample.id))
        })?;
        if great_circle_distance(pred, &sample.ground_truth) <= threshold_km {
            kept.push(sample);
        } else {
            discarded.push(sample);
        }
    }
    Ok((kept, discarded))
}

/// Content hashes for one query image and the images of its retrieved
/// candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleImages {
    /// `Err` carries a diagnostic when the query image could not be read.
    pub query_hash: std::result::Result<String, String>,
    pub candidate_hashes: Vec<String>,
}

impl SampleImages {
    pub fn from_bytes(
        query: std::result::Result<&[u8], String>,
        candidates: &[impl AsRef<[u8]>],
    ) -> Self {
        let query_hash = query.and_then(|b| content_hash(b).map_err(|e| e.to_string()));
        let candidate_hashes = candidates
            .iter()
            .filter_map(|c| content_hash(c.as_ref()).ok())
            .collect();
        Self {
            query_hash,
            candidate_hashes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupOutcome<'a> {
    pub kept: Vec<&'a EvalSample>,
    pub duplicates: Vec<&'a EvalSample>,
    pub unreadable: Vec<(&'a EvalSample, String)>,
}

/// Drops samples whose query image equals one of their candidates' images.
pub fn dedup_exact_images<'a>(
    samples: &[&'a EvalSample],
    images: &[SampleImages],
) -> Result<DedupOutcome<'a>> {
    if samples.len() != images.len() {
        return Err(GeoError::validation(format!(
            "{} image sets for {} samples",
            images.len(),
            samples.len()
        )));
    }
    let mut out = DedupOutcome::default();
    for (&sample, imgs) in samples.iter().zip(images) {
        match &imgs.query_hash {
            Err(diag) => out.unreadable.push((sample, diag.clone())),
            Ok(h) if imgs.candidate_hashes.iter().any(|c| c == h) => out.duplicates.push(sample),
            Ok(_) => out.kept.push(sample),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub hits: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub group: String,
    pub abbreviation: String,
    pub instances: usize,
    pub topk: Vec<TopK>,
}

impl GroupScores {
    fn empty(group: &str, abbrev: String, ks: &[usize]) -> Self {
        Self {
            group: group.to_string(),
            abbreviation: abbrev,
            instances: 0,
            topk: ks
                .iter()
                .map(|&k| TopK {
                    k,
                    hits: 0,
                    accuracy: 0.0,
                })
                .collect(),
        }
    }

    fn finish(&mut self) {
        for t in &mut self.topk {
            t.accuracy = if self.instances == 0 {
                0.0
            } else {
                t.hits as f64 / self.instances as f64
            };
        }
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|t| t.k == k).map(|t| t.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub per_group: Vec<GroupScores>,
    pub overall: GroupScores,
    pub filtered_out_gcd: usize,
    pub filtered_out_dup: usize,
    pub skipped_unreadable: usize,
}

/// Normalizes a k set: always contains 1, 5 and 10; sorted; no zeros.
pub fn k_set(extra: &[usize]) -> Result<Vec<usize>> {
    if extra.contains(&0) {
        return Err(GeoError::validation("k must be at least 1"));
    }
    let set: BTreeSet<usize> = DEFAULT_KS.iter().chain(extra).copied().collect();
    Ok(set.into_iter().collect())
}

/// Scores each sample against its ranked entity list.
///
/// `ranked[i]` is the ranking for `samples[i]`. A ground truth missing from the
/// ranking is a miss at every k.
pub fn compute_topk(
    samples: &[&EvalSample],
    ranked: &[Vec<Qid>],
    ks: &[usize],
    registry: &TypeRegistry,
) -> Result<EvalReport> {
    if samples.len() != ranked.len() {
        return Err(GeoError::validation(format!(
            "{} rankings for {} samples",
            ranked.len(),
            samples.len()
        )));
    }
    let ks = k_set(ks)?;
    let mut groups: Vec<GroupScores> = registry
        .groups()
        .iter()
        .map(|g| GroupScores::empty(&g.name, g.abbreviation(), &ks))
        .collect();
    let mut overall = GroupScores::empty("overall", "overall".into(), &ks);

    for (sample, ranking) in samples.iter().zip(ranked) {
        let gi = registry.position(&sample.group).ok_or_else(|| {
            GeoError::validation(format!(
                "sample {} has unknown group `{}`",
                sample.id, sample.group
            ))
        })?;
        let rank = ranking.iter().position(|q| q == &sample.qid);
        for scores in [&mut groups[gi], &mut overall] {
            scores.instances += 1;
            for t in &mut scores.topk {
                if rank.is_some_and(|r| r < t.k) {
                    t.hits += 1;
                }
            }
        }
    }
    groups.iter_mut().for_each(GroupScores::finish);
    overall.finish();

    let report = EvalReport {
        ks,
        per_group: groups,
        overall,
        filtered_out_gcd: 0,
        filtered_out_dup: 0,
        skipped_unreadable: 0,
    };
    report.check()?;
    Ok(report)
}

impl EvalReport {
    /// Checks accuracy bounds, monotonicity in k and count consistency.
    pub fn check(&self) -> Result<()> {
        for g in self.per_group.iter().chain(std::iter::once(&self.overall)) {
            let mut prev = 0.0;
            for t in &g.topk {
                if !(0.0..=1.0).contains(&t.accuracy) {
                    return Err(GeoError::validation(format!(
                        "{} top-{} accuracy {} outside [0, 1]",
                        g.group, t.k, t.accuracy
                    )));
                }
                if t.accuracy < prev {
                    return Err(GeoError::validation(format!(
                        "{} top-{} accuracy decreases",
                        g.group, t.k
                    )));
                }
                prev = t.accuracy;
            }
        }
        let total: usize = self.per_group.iter().map(|g| g.instances).sum();
        if total != self.overall.instances {
            return Err(GeoError::validation(format!(
                "group instances sum to {total}, overall reports {}",
                self.overall.instances
            )));
        }
        Ok(())
    }

    pub fn group(&self, name: &str) -> Option<&GroupScores> {
        self.per_group.iter().find(|g| g.group == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Text table with one column per group plus `overall` and rows
    /// `Top k` (descending k) and `# instances`.
    pub fn render_table(&self) -> String {
        let cols: Vec<&GroupScores> = self
            .per_group
            .iter()
            .chain(std::iter::once(&self.overall))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "in [%]");
        for g in &cols {
            let _ = write!(out, " {:>7}", g.abbreviation);
        }
        out.push('\n');
        for &k in self.ks.iter().rev() {
            let _ = write!(out, "{:<12}", format!("Top {k}"));
            for g in &cols {
                let cell = match (g.instances, g.accuracy(k)) {
                    (0, _) | (_, None) => "-".to_string(),
                    (_, Some(a)) => format!("{:.0}", a * 100.0),
                };
                let _ = write!(out, " {cell:>7}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "# instances");
        for g in &cols {
            let _ = write!(out, " {:>7}", g.instances);
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "filtered out: {} by distance, {} duplicate images, {} unreadable",
            self.filtered_out_gcd, self.filtered_out_dup, self.skipped_unreadable
        );
        out
    }
}

/// Column header row of [`EvalReport::render_table`] for a registry.
pub fn table_columns(registry: &TypeRegistry) -> Vec<String> {
    registry
        .groups()
        .iter()
        .map(|g| abbreviation(&g.name))
        .chain(std::iter::once("overall".to_string()))
        .collect()
}

/// Sample ids that appear more than once.
pub fn duplicate_sample_ids(samples: &[EvalSample]) -> Vec<&str> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .filter(|s| !seen.insert(s.id.as_str()))
        .map(|s| s.id.as_str())
        .collect()
}
