//! Pre-selected query images with known ground truth.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use geowine_core::GeoCoordinate;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub id: String,
    pub label: String,
    /// Image path relative to the manifest.
    pub image: PathBuf,
    pub ground_truth: GeoCoordinate,
    pub radius_km: f64,
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    presets: Vec<PresetSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub spec: PresetSpec,
    pub image_bytes: Vec<u8>,
    pub content_type: &'static str,
}

/// What `GET /api/presets` lists for each preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub id: String,
    pub label: String,
    pub thumbnail_url: String,
    pub ground_truth: GeoCoordinate,
    pub radius_km: f64,
    pub groups: Vec<String>,
}

pub fn content_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PresetStore {
    presets: Vec<Preset>,
}

impl PresetStore {
    /// Reads the manifest and every referenced image. Ids must be unique.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let err = |m: String| ServiceError::config(format!("presets {}: {m}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = HashSet::new();
        let mut presets = Vec::with_capacity(manifest.presets.len());
        for spec in manifest.presets {
            if !seen.insert(spec.id.clone()) {
                return Err(err(format!("duplicate preset id `{}`", spec.id)));
            }
            let image_path = base.join(&spec.image);
            let image_bytes = std::fs::read(&image_path)
                .map_err(|e| err(format!("{}: {e}", image_path.display())))?;
            if image_bytes.is_empty() {
                return Err(err(format!("{}: empty image", image_path.display())));
            }
            presets.push(Preset {
                content_type: content_type_for(&spec.image),
                spec,
                image_bytes,
            });
        }
        Ok(Self { presets })
    }

    pub fn get(&self, id: &str) -> Option<&Preset> {
        self.presets.iter().find(|p| p.spec.id == id)
    }

    pub fn len(&self) -> usize {
        self.presets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.presets.is_empty()
    }

    pub fn summaries(&self) -> Vec<PresetSummary> {
        self.presets
            .iter()
            .map(|p| PresetSummary {
                id: p.spec.id.clone(),
                label: p.spec.label.clone(),
                thumbnail_url: format!("/api/presets/{}/image", p.spec.id),
                ground_truth: p.spec.ground_truth,
                radius_km: p.spec.radius_km,
                groups: p.spec.groups.clone(),
            })
            .collect()
    }
}
