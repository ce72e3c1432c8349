//! Radius-bounded entity retrieval from the Wikidata query service and media
//! resolution through the entity-data API.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use geowine_core::registry::EntityTypeGroup;
use geowine_core::{GeoCoordinate, Qid};
use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::debug;

use crate::error::{KgError, Result};
use crate::sparql::{self, Row};
use crate::transport::{HttpRequest, Transport};

pub const WIKIDATA_SPARQL_URL: &str = "https://query.wikidata.org/sparql";
pub const WIKIDATA_ENTITY_DATA_URL: &str = "https://www.wikidata.org/wiki/Special:EntityData/";

/// Largest accepted search radius in kilometres.
pub const MAX_RADIUS_KM: f64 = 500.0;
/// Tolerance on top of the radius for locally recomputed distances.
pub const RADIUS_SLACK_KM: f64 = 0.5;
pub const RESULT_LIMIT: usize = 500;

const COMMONS_FILE_PATH: &str = "http://commons.wikimedia.org/wiki/Special:FilePath/";

// Characters escaped in Commons file names (spaces become `%20`).
const FILE_NAME: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'<')
    .add(b'>')
    .add(b'?')
    .add(b'`')
    .add(b'{')
    .add(b'}');

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub qid: Qid,
    pub label: String,
    pub coordinate: GeoCoordinate,
    pub group: String,
    pub image_url: Option<String>,
    pub wikipedia_url: Option<String>,
    pub description: Option<String>,
    pub distance_km: f64,
}

/// A rendered geospatial query together with the inputs it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoQuery {
    pub center: GeoCoordinate,
    pub radius_km: f64,
    pub groups: Vec<EntityTypeGroup>,
    pub text: String,
}

/// Renders the SPARQL query for entities of `groups` within `radius_km` of
/// `center`. Pure: identical inputs give byte-identical text.
pub fn build_geospatial_query(
    center: GeoCoordinate,
    radius_km: f64,
    groups: &[&EntityTypeGroup],
) -> Result<GeoQuery> {
    validate_radius(radius_km)?;
    if groups.is_empty() {
        return Err(KgError::Validation("select at least one entity type group".into()));
    }
    let mut types: Vec<&str> = Vec::new();
    for g in groups {
        for m in &g.members {
            if !types.contains(&m.qid.as_str()) {
                types.push(m.qid.as_str());
            }
        }
    }
    let values = types
        .iter()
        .map(|q| format!("wd:{q}"))
        .collect::<Vec<_>>()
        .join(" ");

    let mut text = String::new();
    let _ = writeln!(
        text,
        "SELECT ?item ?itemLabel ?itemDescription ?type ?location ?image ?article WHERE {{"
    );
    let _ = writeln!(text, "  SERVICE wikibase:around {{");
    let _ = writeln!(text, "    ?item wdt:P625 ?location .");
    let _ = writeln!(
        text,
        "    bd:serviceParam wikibase:center \"Point({} {})\"^^geo:wktLiteral .",
        center.lng(),
        center.lat()
    );
    let _ = writeln!(text, "    bd:serviceParam wikibase:radius \"{radius_km}\" .");
    let _ = writeln!(text, "    bd:serviceParam wikibase:distance ?distance .");
    let _ = writeln!(text, "  }}");
    let _ = writeln!(text, "  VALUES ?type {{ {values} }}");
    let _ = writeln!(text, "  ?item wdt:P31 ?type .");
    let _ = writeln!(text, "  OPTIONAL {{ ?item wdt:P18 ?image . }}");
    let _ = writeln!(text, "  OPTIONAL {{");
    let _ = writeln!(text, "    ?article schema:about ?item ;");
    let _ = writeln!(text, "             schema:isPartOf <https://en.wikipedia.org/> .");
    let _ = writeln!(text, "  }}");
    let _ = writeln!(
        text,
        "  SERVICE wikibase:label {{ bd:serviceParam wikibase:language \"en\" . }}"
    );
    let _ = writeln!(text, "}}");
    let _ = writeln!(text, "ORDER BY ASC(?distance)");
    let _ = writeln!(text, "LIMIT {RESULT_LIMIT}");

    Ok(GeoQuery {
        center,
        radius_km,
        groups: groups.iter().map(|g| (*g).clone()).collect(),
        text,
    })
}

pub fn validate_radius(radius_km: f64) -> Result<()> {
    if radius_km.is_finite() && radius_km > 0.0 && radius_km <= MAX_RADIUS_KM {
        Ok(())
    } else {
        Err(KgError::Validation(format!(
            "radius {radius_km} km outside (0, {MAX_RADIUS_KM}]"
        )))
    }
}

/// Counters describing rows that did not become entities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    pub rows: usize,
    pub skipped_missing_coordinates: usize,
    pub skipped_invalid: usize,
    pub out_of_radius: usize,
    pub duplicates_collapsed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityQueryResult {
    pub entities: Vec<Entity>,
    pub diagnostics: QueryDiagnostics,
}

/// Parses `Point(lng lat)` WKT literals.
pub fn parse_wkt_point(wkt: &str) -> Option<GeoCoordinate> {
    let inner = wkt.trim().strip_prefix("Point(")?.strip_suffix(')')?;
    let mut parts = inner.split_whitespace();
    let lng: f64 = parts.next()?.parse().ok()?;
    let lat: f64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    GeoCoordinate::new(lat, lng).ok()
}

/// Turns SPARQL rows into validated, de-duplicated entities sorted by
/// distance (then Q-id).
pub fn parse_entity_rows(query: &GeoQuery, rows: &[Row]) -> EntityQueryResult {
    let mut diag = QueryDiagnostics {
        rows: rows.len(),
        ..Default::default()
    };
    let mut by_qid: HashMap<Qid, Entity> = HashMap::new();
    let mut order: Vec<Qid> = Vec::new();

    for row in rows {
        let Some(location) = sparql::value(row, "location") else {
            diag.skipped_missing_coordinates += 1;
            continue;
        };
        let Some(coordinate) = parse_wkt_point(location) else {
            diag.skipped_missing_coordinates += 1;
            continue;
        };
        let qid = sparql::value(row, "item").and_then(|u| Qid::from_uri(u).ok());
        let group = sparql::value(row, "type")
            .and_then(|u| Qid::from_uri(u).ok())
            .and_then(|t| query.groups.iter().find(|g| g.contains(&t)));
        let (Some(qid), Some(group)) = (qid, group) else {
            diag.skipped_invalid += 1;
            continue;
        };
        let distance_km = query.center.distance_km(&coordinate);
        if distance_km > query.radius_km + RADIUS_SLACK_KM {
            diag.out_of_radius += 1;
            continue;
        }
        let label = sparql::value(row, "itemLabel")
            .filter(|l| !l.is_empty())
            .unwrap_or(qid.as_str())
            .to_string();
        let entity = Entity {
            qid: qid.clone(),
            label,
            coordinate,
            group: group.name.clone(),
            image_url: sparql::value(row, "image").map(str::to_string),
            wikipedia_url: sparql::value(row, "article").map(str::to_string),
            description: sparql::value(row, "itemDescription").map(str::to_string),
            distance_km,
        };
        match by_qid.get_mut(&qid) {
            None => {
                order.push(qid.clone());
                by_qid.insert(qid, entity);
            }
            Some(kept) => {
                diag.duplicates_collapsed += 1;
                let mut merged = if entity.distance_km < kept.distance_km {
                    entity
                } else {
                    let mut k = kept.clone();
                    k.image_url = k.image_url.or(entity.image_url);
                    k.wikipedia_url = k.wikipedia_url.or(entity.wikipedia_url);
                    k.description = k.description.or(entity.description);
                    k
                };
                merged.image_url = merged.image_url.or_else(|| kept.image_url.clone());
                merged.wikipedia_url = merged.wikipedia_url.or_else(|| kept.wikipedia_url.clone());
                merged.description = merged.description.or_else(|| kept.description.clone());
                *kept = merged;
            }
        }
    }

    let mut entities: Vec<Entity> = order
        .into_iter()
        .filter_map(|q| by_qid.remove(&q))
        .collect();
    entities.sort_by(|a, b| {
        a.distance_km
            .total_cmp(&b.distance_km)
            .then_with(|| a.qid.cmp(&b.qid))
    });
    EntityQueryResult {
        entities,
        diagnostics: diag,
    }
}

/// Image and article links of one entity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Media {
    pub image_url: Option<String>,
    pub wikipedia_url: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityInfo {
    pub label: Option<String>,
    pub media: Media,
}

pub fn commons_file_url(file_name: &str) -> String {
    let name = file_name.trim().replace(' ', "_");
    format!("{COMMONS_FILE_PATH}{}", utf8_percent_encode(&name, FILE_NAME))
}

/// Extracts label, first image and Wikipedia link from an entity-data body.
pub fn parse_entity_data(qid: &Qid, body: &[u8]) -> Result<EntityInfo> {
    let doc: Value =
        serde_json::from_slice(body).map_err(|e| KgError::Parse(format!("entity data: {e}")))?;
    let entities = doc
        .get("entities")
        .and_then(Value::as_object)
        .ok_or_else(|| KgError::Parse("entity data without `entities`".into()))?;
    // Redirected items are keyed by their target id.
    let entity = entities
        .get(qid.as_str())
        .or_else(|| entities.values().next())
        .ok_or_else(|| KgError::Parse(format!("entity data lacks {qid}")))?;

    let label = entity
        .pointer("/labels/en/value")
        .and_then(Value::as_str)
        .map(str::to_string);

    let image_url = entity
        .pointer("/claims/P18")
        .and_then(Value::as_array)
        .and_then(|claims| {
            claims.iter().find_map(|c| {
                c.pointer("/mainsnak/datavalue/value")
                    .and_then(Value::as_str)
            })
        })
        .map(commons_file_url);

    let wikipedia_url = entity.get("sitelinks").and_then(Value::as_object).and_then(|links| {
        let site_url = |site: &Value| -> Option<String> {
            if let Some(u) = site.get("url").and_then(Value::as_str) {
                return Some(u.to_string());
            }
            let wiki = site.get("site")?.as_str()?.strip_suffix("wiki")?;
            let title = site.get("title")?.as_str()?.replace(' ', "_");
            Some(format!(
                "https://{}.wikipedia.org/wiki/{}",
                wiki.replace('_', "-"),
                utf8_percent_encode(&title, FILE_NAME)
            ))
        };
        if let Some(en) = links.get("enwiki") {
            return site_url(en);
        }
        // Any other Wikipedia edition, smallest site key first.
        let mut keys: Vec<&String> = links
            .keys()
            .filter(|k| {
                k.ends_with("wiki") && !matches!(k.as_str(), "commonswiki" | "specieswiki" | "metawiki")
            })
            .collect();
        keys.sort();
        keys.into_iter().find_map(|k| site_url(&links[k]))
    });

    Ok(EntityInfo {
        label,
        media: Media {
            image_url,
            wikipedia_url,
        },
    })
}

/// Shareable Wikidata client. Entity-data lookups are cached per Q-id.
pub struct WikidataClient {
    transport: Arc<dyn Transport>,
    sparql_url: String,
    entity_data_url: String,
    info_cache: RwLock<HashMap<Qid, EntityInfo>>,
    /// Labels seen in query results; kept apart so they never mask entity data.
    labels: RwLock<HashMap<Qid, String>>,
}

impl WikidataClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self::with_endpoints(transport, WIKIDATA_SPARQL_URL, WIKIDATA_ENTITY_DATA_URL)
    }

    pub fn with_endpoints(
        transport: Arc<dyn Transport>,
        sparql_url: impl Into<String>,
        entity_data_url: impl Into<String>,
    ) -> Self {
        Self {
            transport,
            sparql_url: sparql_url.into(),
            entity_data_url: entity_data_url.into(),
            info_cache: RwLock::new(HashMap::new()),
            labels: RwLock::new(HashMap::new()),
        }
    }

    pub fn sparql_url(&self) -> &str {
        &self.sparql_url
    }

    pub fn entity_data_url(&self) -> &str {
        &self.entity_data_url
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    /// The request [`execute_entity_query`](Self::execute_entity_query) sends.
    pub fn entity_query_request(&self, query: &GeoQuery) -> Result<HttpRequest> {
        sparql::query_request(&self.sparql_url, &query.text)
    }

    pub async fn execute_entity_query(&self, query: &GeoQuery) -> Result<EntityQueryResult> {
        let results = sparql::select(self.transport.as_ref(), &self.sparql_url, &query.text).await?;
        let out = parse_entity_rows(query, &results.results.bindings);
        debug!(entities = out.entities.len(), diagnostics = ?out.diagnostics, "entity query");
        Ok(out)
    }

    pub fn entity_data_request(&self, qid: &Qid) -> HttpRequest {
        HttpRequest::get(format!("{}{}.json", self.entity_data_url, qid)).header("accept", "application/json")
    }

    /// Label and media links for `qid`, served from cache after the first call.
    pub async fn entity_info(&self, qid: &Qid) -> Result<EntityInfo> {
        if let Some(hit) = self.info_cache.read().expect("info cache poisoned").get(qid) {
            return Ok(hit.clone());
        }
        let resp = self.transport.execute(&self.entity_data_request(qid)).await?;
        let info = parse_entity_data(qid, &resp.body)?;
        self.info_cache
            .write()
            .expect("info cache poisoned")
            .insert(qid.clone(), info.clone());
        Ok(info)
    }

    pub async fn resolve_media(&self, qid: &Qid) -> Result<Media> {
        Ok(self.entity_info(qid).await?.media)
    }

    /// Remembers a label learned elsewhere (e.g. from an entity query).
    pub fn remember_label(&self, qid: &Qid, label: &str) {
        self.labels
            .write()
            .expect("label cache poisoned")
            .insert(qid.clone(), label.to_string());
    }

    /// Label from fetched entity data, else one remembered from a query.
    pub fn cached_label(&self, qid: &Qid) -> Option<String> {
        let from_info = self
            .info_cache
            .read()
            .expect("info cache poisoned")
            .get(qid)
            .and_then(|i| i.label.clone());
        from_info.or_else(|| self.labels.read().expect("label cache poisoned").get(qid).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use geowine_core::default_type_registry;

    fn paris() -> GeoCoordinate {
        GeoCoordinate::new(48.853, 2.349).unwrap()
    }

    #[test]
    fn radius_bounds() {
        let reg = default_type_registry().unwrap();
        let g = reg.resolve(&["Tower"]).unwrap();
        for bad in [0.0, -1.0, 500.1, f64::NAN] {
            assert!(build_geospatial_query(paris(), bad, &g).is_err(), "{bad}");
        }
        assert!(build_geospatial_query(paris(), 500.0, &g).is_ok());
        assert!(build_geospatial_query(paris(), 1.0, &[]).is_err());
    }

    #[test]
    fn wkt_points() {
        let p = parse_wkt_point("Point(2.3498 48.853)").unwrap();
        assert_eq!((p.lat(), p.lng()), (48.853, 2.3498));
        assert!(parse_wkt_point("Point(2.3)").is_none());
        assert!(parse_wkt_point("POLYGON((1 2))").is_none());
        assert!(parse_wkt_point("Point(0 95)").is_none());
    }

    #[test]
    fn commons_urls() {
        assert_eq!(
            commons_file_url("Notre Dame de Paris.jpg"),
            "http://commons.wikimedia.org/wiki/Special:FilePath/Notre_Dame_de_Paris.jpg"
        );
        assert_eq!(
            commons_file_url("Café?.png"),
            "http://commons.wikimedia.org/wiki/Special:FilePath/Caf%C3%A9%3F.png"
        );
    }

    #[test]
    fn entity_data_fallback_sitelink() {
        let qid = Qid::new("Q5").unwrap();
        let body = br#"{"entities":{"Q5":{"labels":{},"claims":{},
            "sitelinks":{"frwiki":{"site":"frwiki","title":"Tour Exemple"},
                         "commonswiki":{"site":"commonswiki","title":"Category:X"},
                         "dewiki":{"site":"dewiki","title":"Turm","url":"https://de.wikipedia.org/wiki/Turm"}}}}}"#;
        let info = parse_entity_data(&qid, body).unwrap();
        assert_eq!(info.label, None);
        assert_eq!(info.media.image_url, None);
        assert_eq!(info.media.wikipedia_url.as_deref(), Some("https://de.wikipedia.org/wiki/Turm"));
        assert!(parse_entity_data(&qid, b"{}").is_err());
    }
}
