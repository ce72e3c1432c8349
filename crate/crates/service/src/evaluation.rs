//! Batch evaluation over a sample manifest.
//!
//! Each sample is predicted, dropped if the prediction is farther than the
//! threshold from its ground truth, answered with a ranked entity list around
//! the prediction, dropped if its image equals a retrieved candidate image,
//! and finally scored by the rank of its ground-truth entity.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use geowine_core::eval::{
    compute_topk, dedup_exact_images, duplicate_sample_ids, filter_by_gcd, EvalReport, EvalSample,
    SampleImages, CITY_LEVEL_KM,
};
use geowine_core::{great_circle_distance, EmbeddingKind, GeoCoordinate, Qid};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{ServiceError, Stage};
use crate::pipeline::{rank_all, Diagnostics, Services};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub manifest: PathBuf,
    pub radius_km: f64,
    pub threshold_km: f64,
    /// Extra k values on top of 1, 5 and 10.
    pub extra_ks: Vec<usize>,
    pub kind: EmbeddingKind,
}

impl EvalConfig {
    pub fn new(manifest: impl Into<PathBuf>, radius_km: f64) -> Self {
        Self {
            manifest: manifest.into(),
            radius_km,
            threshold_km: CITY_LEVEL_KM,
            extra_ks: Vec::new(),
            kind: EmbeddingKind::Geolocation,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    image_ref: String,
    lat: f64,
    lng: f64,
    qid: String,
    group: String,
}

/// Reads a `image_ref,lat,lng,qid,group` CSV. Sample ids are the image refs.
pub fn load_manifest(path: &Path) -> Result<Vec<EvalSample>, ServiceError> {
    let invalid = |m: String| ServiceError::validation(Stage::Eval, format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(e.to_string()))?;
    let mut samples = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| invalid(format!("line {line}: {e}")))?;
        let ground_truth =
            GeoCoordinate::new(row.lat, row.lng).map_err(|e| invalid(format!("line {line}: {e}")))?;
        let qid = Qid::new(row.qid).map_err(|e| invalid(format!("line {line}: {e}")))?;
        samples.push(EvalSample {
            id: row.image_ref.clone(),
            image_ref: row.image_ref,
            ground_truth,
            qid,
            group: row.group,
        });
    }
    if samples.is_empty() {
        return Err(invalid("manifest lists no samples".into()));
    }
    let dups = duplicate_sample_ids(&samples);
    if !dups.is_empty() {
        return Err(invalid(format!("duplicate image refs: {}", dups.join(", "))));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Scored,
    FilteredGcd,
    Duplicate,
    Unreadable,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub qid: Qid,
    pub group: String,
    pub status: SampleStatus,
    pub predicted: Option<GeoCoordinate>,
    pub predicted_cell: Option<String>,
    pub gcd_km: Option<f64>,
    /// 1-based rank of the ground truth, if it was ranked.
    pub rank: Option<usize>,
    pub entities: usize,
    pub top: Vec<Qid>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub audit: Vec<AuditRecord>,
}

impl EvalRun {
    pub fn audit_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.audit {
            out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `<out>` (JSON report), `<out>` with extension `txt` (table) and
    /// `<out>` with extension `audit.jsonl`.
    pub fn write(&self, out: &Path) -> Result<[PathBuf; 3], ServiceError> {
        let io = |p: &Path, e: std::io::Error| ServiceError::internal(Stage::Eval, format!("{}: {e}", p.display()));
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        let table = out.with_extension("txt");
        let audit = out.with_extension("audit.jsonl");
        std::fs::write(out, self.report.to_json()).map_err(|e| io(out, e))?;
        std::fs::write(&table, self.report.render_table()).map_err(|e| io(&table, e))?;
        let mut f = std::fs::File::create(&audit).map_err(|e| io(&audit, e))?;
        f.write_all(self.audit_jsonl().as_bytes()).map_err(|e| io(&audit, e))?;
        Ok([out.to_path_buf(), table, audit])
    }
}

pub async fn run_eval(services: &Services, cfg: &EvalConfig) -> Result<EvalRun, ServiceError> {
    geowine_kg::wikidata::validate_radius(cfg.radius_km).map_err(|e| ServiceError::from_kg(Stage::Eval, e))?;
    let mut samples = load_manifest(&cfg.manifest)?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    for s in &samples {
        if services.registry.group(&s.group).is_none() {
            return Err(ServiceError::validation(
                Stage::Eval,
                format!("sample {} has unknown group `{}`", s.id, s.group),
            ));
        }
    }
    let base = cfg.manifest.parent().unwrap_or(Path::new("."));

    let mut audit: Vec<AuditRecord> = samples
        .iter()
        .map(|s| AuditRecord {
            id: s.id.clone(),
            qid: s.qid.clone(),
            group: s.group.clone(),
            status: SampleStatus::Scored,
            predicted: None,
            predicted_cell: None,
            gcd_km: None,
            rank: None,
            entities: 0,
            top: Vec::new(),
            note: None,
        })
        .collect();
    let index_of = |id: &str| samples.iter().position(|s| s.id == id).expect("known sample");

    // Predict.
    let mut readable: Vec<EvalSample> = Vec::new();
    let mut images: Vec<Vec<u8>> = Vec::new();
    let mut predictions = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let path = base.join(&s.image_ref);
        let bytes = match std::fs::read(&path) {
            Ok(b) if !b.is_empty() => b,
            Ok(_) => {
                audit[i].status = SampleStatus::Unreadable;
                audit[i].note = Some(format!("{}: empty file", path.display()));
                continue;
            }
            Err(e) => {
                audit[i].status = SampleStatus::Unreadable;
                audit[i].note = Some(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let p = services
            .predict(&bytes)
            .await
            .map_err(|e| ServiceError { message: format!("sample {}: {}", s.id, e.message), ..e })?;
        audit[i].predicted = Some(p.decoded.coordinate);
        audit[i].predicted_cell = Some(p.decoded.cell_id.clone());
        audit[i].gcd_km = Some(great_circle_distance(&p.decoded.coordinate, &s.ground_truth));
        readable.push(s.clone());
        images.push(bytes);
        predictions.push(p);
    }
    let skipped_unreadable = samples.len() - readable.len();

    // Distance filter.
    let coords: Vec<Option<GeoCoordinate>> = predictions.iter().map(|p| Some(p.decoded.coordinate)).collect();
    let (kept, discarded) = filter_by_gcd(&readable, &coords, cfg.threshold_km)
        .map_err(|e| ServiceError::from_geo(Stage::Eval, e))?;
    for s in &discarded {
        audit[index_of(&s.id)].status = SampleStatus::FilteredGcd;
    }

    // Retrieve and rank around each kept prediction, restricted to the
    // sample's own group.
    let mut ranked: Vec<Vec<Qid>> = Vec::with_capacity(kept.len());
    let mut sample_images: Vec<SampleImages> = Vec::with_capacity(kept.len());
    for s in &kept {
        let ri = readable.iter().position(|r| r.id == s.id).expect("kept sample is readable");
        let p = &predictions[ri];
        let groups = services.resolve_groups(std::slice::from_ref(&s.group))?;
        let mut diag = Diagnostics::default();
        let gathered = services
            .gather(p.decoded.coordinate, cfg.radius_km, &groups, true, &mut diag)
            .await
            .map_err(|e| ServiceError { message: format!("sample {}: {}", s.id, e.message), ..e })?;
        let (rankings, _) = rank_all(&p.output.embeddings, &gathered)?;
        let list: Vec<Qid> = rankings.get(cfg.kind).iter().map(|r| r.entity_id.clone()).collect();
        let a = &mut audit[index_of(&s.id)];
        a.entities = gathered.entities.len();
        a.rank = list.iter().position(|q| q == &s.qid).map(|r| r + 1);
        a.top = list.iter().take(10).cloned().collect();
        ranked.push(list);
        sample_images.push(SampleImages {
            query_hash: geowine_core::content_hash(&images[ri]).map_err(|e| e.to_string()),
            candidate_hashes: gathered.candidates.iter().filter_map(|c| c.image_hash.clone()).collect(),
        });
    }

    // Exact-duplicate filter.
    let dedup = dedup_exact_images(&kept, &sample_images).map_err(|e| ServiceError::from_geo(Stage::Eval, e))?;
    for s in &dedup.duplicates {
        audit[index_of(&s.id)].status = SampleStatus::Duplicate;
    }
    for (s, note) in &dedup.unreadable {
        let a = &mut audit[index_of(&s.id)];
        a.status = SampleStatus::Unreadable;
        a.note = Some(note.clone());
    }
    let scored_rankings: Vec<Vec<Qid>> = dedup
        .kept
        .iter()
        .map(|s| {
            let ki = kept.iter().position(|k| k.id == s.id).expect("deduped sample was kept");
            ranked[ki].clone()
        })
        .collect();

    let mut report = compute_topk(&dedup.kept, &scored_rankings, &cfg.extra_ks, &services.registry)
        .map_err(|e| ServiceError::from_geo(Stage::Eval, e))?;
    report.filtered_out_gcd = discarded.len();
    report.filtered_out_dup = dedup.duplicates.len();
    report.skipped_unreadable = skipped_unreadable + dedup.unreadable.len();
    report.check().map_err(|e| ServiceError::internal(Stage::Eval, e.to_string()))?;
    info!(
        scored = report.overall.instances,
        filtered_gcd = report.filtered_out_gcd,
        duplicates = report.filtered_out_dup,
        "evaluation finished"
    );
    Ok(EvalRun { report, audit })
}
