//! The retrieval pipeline: predict → decode → entity query → media → candidate
//! embeddings → per-kind ranking.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use futures::future::join_all;
use geowine_core::store::CacheStats;
use geowine_core::{
    content_hash, decode_with_scene, default_type_registry, great_circle_distance, rank_candidates,
    Candidate, Decoded, EmbeddingCache, EmbeddingKind, EmbeddingVector, EntityTypeGroup,
    ExclusionReason, GeoCoordinate, PartitioningHierarchy, Qid, SceneLabel, TypeRegistry,
};
use geowine_kg::wikidata::{EntityInfo, QueryDiagnostics};
use geowine_kg::{
    build_geospatial_query, build_transport, Entity, EventClient, EventRecord, HttpRequest, KgError,
    NetworkMode, NewsArticle, NewsClient, RecordedStore, RecordedTransport, Transport,
    WikidataClient,
};
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::config::{Config, ProviderMode};
use crate::error::{ErrorEnvelope, ErrorKind, ServiceError, Stage};
use crate::presets::PresetStore;
use crate::provider::{BaseEmbeddings, EmbeddingProvider, ExternalInferenceProvider, FixtureProvider, ModelOutput};

/// Largest accepted query image.
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Upload(Vec<u8>),
    Preset(String),
}

/// A retrieval request as received; preset defaults fill in a missing radius
/// or group list.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRequest {
    pub image: ImageSource,
    pub radius_km: Option<f64>,
    pub groups: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntity {
    pub entity_id: Qid,
    pub label: String,
    pub score: f64,
}

/// One ranked list per embedding kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rankings {
    pub geolocation: Vec<RankedEntity>,
    pub place: Vec<RankedEntity>,
    pub object: Vec<RankedEntity>,
    pub combined: Vec<RankedEntity>,
}

impl Rankings {
    pub fn get(&self, kind: EmbeddingKind) -> &[RankedEntity] {
        match kind {
            EmbeddingKind::Geolocation => &self.geolocation,
            EmbeddingKind::Place => &self.place,
            EmbeddingKind::Object => &self.object,
            EmbeddingKind::Combined => &self.combined,
        }
    }

    fn get_mut(&mut self, kind: EmbeddingKind) -> &mut Vec<RankedEntity> {
        match kind {
            EmbeddingKind::Geolocation => &mut self.geolocation,
            EmbeddingKind::Place => &mut self.place,
            EmbeddingKind::Object => &mut self.object,
            EmbeddingKind::Combined => &mut self.combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnrankedReason {
    MissingImage,
    BeyondCandidateCap,
    ImageUnavailable,
    EmbeddingFailed,
    ZeroNorm,
}

/// An entity left out of the ranked lists of `kinds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unranked {
    pub qid: Qid,
    pub reason: UnrankedReason,
    pub kinds: Vec<EmbeddingKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub provider: String,
    pub synthesized_query: bool,
    pub rows: usize,
    pub skipped_missing_coordinates: usize,
    pub skipped_invalid: usize,
    pub out_of_radius: usize,
    pub duplicates_collapsed: usize,
    pub candidates_embedded: usize,
    pub media_failures: usize,
    /// Requests the offline store had no recording for.
    pub offline_misses: usize,
    pub offline: bool,
}

impl Diagnostics {
    fn absorb(&mut self, q: &QueryDiagnostics) {
        self.rows += q.rows;
        self.skipped_missing_coordinates += q.skipped_missing_coordinates;
        self.skipped_invalid += q.skipped_invalid;
        self.out_of_radius += q.out_of_radius;
        self.duplicates_collapsed += q.duplicates_collapsed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResponse {
    pub preset: Option<String>,
    pub predicted: GeoCoordinate,
    pub predicted_cell: String,
    pub decode_score: f64,
    pub scene: Option<SceneLabel>,
    pub ground_truth: Option<GeoCoordinate>,
    pub gcd_error_km: Option<f64>,
    pub radius_km: f64,
    pub groups: Vec<String>,
    pub entities: Vec<Entity>,
    pub rankings: Rankings,
    pub unranked: Vec<Unranked>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityContext {
    pub qid: Qid,
    pub label: Option<String>,
    pub news: Vec<NewsArticle>,
    pub news_error: Option<ErrorEnvelope>,
    pub events: Vec<EventRecord>,
    pub events_error: Option<ErrorEnvelope>,
    pub offline: bool,
    /// Set when news is served from recordings because no API key is set.
    pub news_offline_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointFlags {
    pub wikidata_sparql: bool,
    pub wikidata_entity_data: bool,
    pub news: bool,
    pub events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub provider: &'static str,
    pub network_mode: NetworkMode,
    pub registry_version: String,
    pub registry_groups: usize,
    pub partitioning_levels: usize,
    pub presets: usize,
    pub endpoints: EndpointFlags,
    pub news_offline_fallback: bool,
    pub embedding_cache: CacheStats,
}

/// Prediction for one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub output: ModelOutput,
    pub decoded: Decoded,
}

/// Embedding outcome for one retrieved entity.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateState {
    pub qid: Qid,
    pub vectors: Result<[EmbeddingVector; 4], UnrankedReason>,
    /// Content hash of the downloaded image, when it was downloaded.
    pub image_hash: Option<String>,
}

/// Entities around a point plus their candidate embeddings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gathered {
    pub entities: Vec<Entity>,
    pub candidates: Vec<CandidateState>,
}

/// Long-lived service state shared by all requests.
pub struct Services {
    pub config: Config,
    pub registry: TypeRegistry,
    pub hierarchy: Arc<PartitioningHierarchy>,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub transport: Arc<dyn Transport>,
    pub wikidata: WikidataClient,
    pub news: NewsClient,
    pub news_offline_fallback: bool,
    pub events: EventClient,
    pub cache: EmbeddingCache,
    pub presets: PresetStore,
    image_hashes: RwLock<HashMap<Qid, String>>,
}

impl Services {
    /// Builds everything the configuration names. Fails on unreadable or
    /// invalid fixtures, never at request time.
    pub fn from_config(config: Config) -> Result<Self, ServiceError> {
        config.validate()?;
        let startup = |e: String| ServiceError::config(e);
        let registry = match &config.registry {
            Some(p) => TypeRegistry::load(p).map_err(|e| startup(format!("registry {}: {e}", p.display())))?,
            None => default_type_registry().map_err(|e| startup(e.to_string()))?,
        };
        let hierarchy = PartitioningHierarchy::load(&config.partitioning)
            .map_err(|e| startup(format!("partitioning {}: {e}", config.partitioning.display())))?;
        let transport = build_transport(config.network_mode, &config.recorded_dir, config.live_settings())
            .map_err(|e| startup(e.to_string()))?;
        let provider: Arc<dyn EmbeddingProvider> = match config.provider {
            ProviderMode::Fixture => Arc::new(FixtureProvider::load(&config.fixture_dir, &hierarchy)?),
            ProviderMode::ExternalInference => Arc::new(ExternalInferenceProvider::new(
                transport.clone(),
                config.inference_url.clone().expect("validated"),
                &hierarchy,
            )),
        };
        let cache = match &config.embedding_cache {
            Some(p) => EmbeddingCache::open(p).map_err(|e| startup(format!("embedding cache: {e}")))?,
            None => EmbeddingCache::in_memory(),
        };
        let presets = PresetStore::load(&config.presets)?;
        Self::assemble(config, registry, hierarchy, provider, transport, cache, presets)
    }

    /// Wires pre-built parts together (tests swap in stub transports here).
    pub fn assemble(
        config: Config,
        registry: TypeRegistry,
        hierarchy: PartitioningHierarchy,
        provider: Arc<dyn EmbeddingProvider>,
        transport: Arc<dyn Transport>,
        cache: EmbeddingCache,
        presets: PresetStore,
    ) -> Result<Self, ServiceError> {
        let wikidata = WikidataClient::with_endpoints(
            transport.clone(),
            &config.wikidata_sparql_url,
            &config.wikidata_entity_data_url,
        );
        let (news, news_offline_fallback) =
            match NewsClient::new(transport.clone(), &config.news_url, config.news_api_key.clone()) {
                Ok(c) => (c, false),
                Err(KgError::Config(msg)) => {
                    warn!("{msg}; news is served from recordings only");
                    let offline: Arc<dyn Transport> =
                        Arc::new(RecordedTransport::new(RecordedStore::new(&config.recorded_dir)));
                    let c = NewsClient::new(offline, &config.news_url, None)
                        .map_err(|e| ServiceError::config(e.to_string()))?;
                    (c, true)
                }
                Err(e) => return Err(ServiceError::config(e.to_string())),
            };
        let events = EventClient::new(transport.clone(), &config.oekg_url);
        info!(
            provider = provider.mode().name(),
            network = ?config.network_mode,
            registry = registry.version(),
            "services ready"
        );
        Ok(Self {
            config,
            registry,
            hierarchy: Arc::new(hierarchy),
            provider,
            transport,
            wikidata,
            news,
            news_offline_fallback,
            events,
            cache,
            presets,
            image_hashes: RwLock::new(HashMap::new()),
        })
    }

    pub fn offline(&self) -> bool {
        self.transport.is_offline()
    }

    pub fn resolve_groups(&self, names: &[String]) -> Result<Vec<EntityTypeGroup>, ServiceError> {
        self.registry
            .resolve(names)
            .map(|gs| gs.into_iter().cloned().collect())
            .map_err(|e| ServiceError::validation(Stage::Request, e.to_string()))
    }

    pub async fn predict(&self, image: &[u8]) -> Result<Prediction, ServiceError> {
        let output = self.provider.infer(image).await?;
        let decoded = decode_with_scene(&self.hierarchy, &output.probabilities, output.scene)
            .map_err(|e| ServiceError::from_geo(Stage::Decode, e))?;
        Ok(Prediction { output, decoded })
    }

    /// Queries entities around `center`, fills in missing media and embeds the
    /// nearest `candidate_cap` entities that have images.
    pub async fn gather(
        &self,
        center: GeoCoordinate,
        radius_km: f64,
        groups: &[EntityTypeGroup],
        need_hashes: bool,
        diag: &mut Diagnostics,
    ) -> Result<Gathered, ServiceError> {
        let group_refs: Vec<&EntityTypeGroup> = groups.iter().collect();
        let query = build_geospatial_query(center, radius_km, &group_refs)
            .map_err(|e| ServiceError::from_kg(Stage::Request, e))?;
        let result = match self.wikidata.execute_entity_query(&query).await {
            Ok(r) => r,
            Err(e) if e.is_not_recorded() => {
                debug!("entity query not recorded");
                diag.offline_misses += 1;
                return Ok(Gathered::default());
            }
            Err(e) => return Err(ServiceError::from_kg(Stage::EntityQuery, e)),
        };
        diag.absorb(&result.diagnostics);
        let mut entities = result.entities;

        for e in &entities {
            self.wikidata.remember_label(&e.qid, &e.label);
        }

        let lookups = entities
            .iter()
            .map(|e| async move {
                if e.image_url.is_some() && e.wikipedia_url.is_some() {
                    return None;
                }
                Some(self.wikidata.entity_info(&e.qid).await)
            })
            .collect::<Vec<_>>();
        let looked_up_all = join_all(lookups).await;
        for (e, looked_up) in entities.iter_mut().zip(looked_up_all) {
            match looked_up {
                None => {}
                Some(Ok(EntityInfo { media, .. })) => {
                    e.image_url = e.image_url.take().or(media.image_url);
                    e.wikipedia_url = e.wikipedia_url.take().or(media.wikipedia_url);
                }
                Some(Err(err)) if err.is_not_recorded() => diag.offline_misses += 1,
                Some(Err(err)) => {
                    warn!(qid = %e.qid, "media lookup failed: {err}");
                    diag.media_failures += 1;
                }
            }
        }

        let cap = self.config.candidate_cap;
        let jobs = entities
            .iter()
            .enumerate()
            .map(|(i, e)| self.candidate(e, i < cap, need_hashes))
            .collect::<Vec<_>>();
        let mut candidates = Vec::with_capacity(entities.len());
        for (state, miss) in join_all(jobs).await {
            if miss {
                diag.offline_misses += 1;
            }
            if state.vectors.is_ok() {
                diag.candidates_embedded += 1;
            }
            candidates.push(state);
        }
        Ok(Gathered {
            entities,
            candidates,
        })
    }

    /// Embedding vectors for one entity, cache first. The flag reports an
    /// offline miss while downloading the image.
    async fn candidate(&self, e: &Entity, within_cap: bool, need_hash: bool) -> (CandidateState, bool) {
        let state = |vectors, image_hash| CandidateState {
            qid: e.qid.clone(),
            vectors,
            image_hash,
        };
        if !within_cap {
            return (state(Err(UnrankedReason::BeyondCandidateCap), None), false);
        }
        let Some(url) = e.image_url.as_deref() else {
            return (state(Err(UnrankedReason::MissingImage), None), false);
        };
        let known_hash = self.image_hashes.read().expect("hash map poisoned").get(&e.qid).cloned();
        if !need_hash || known_hash.is_some() {
            if let Some(vectors) = self.cached(&e.qid) {
                return (state(Ok(vectors), known_hash), false);
            }
        }
        let bytes = match self.transport.execute(&HttpRequest::get(url)).await {
            Ok(resp) if !resp.body.is_empty() => resp.body,
            Ok(_) => return (state(Err(UnrankedReason::ImageUnavailable), None), false),
            Err(err) => {
                debug!(qid = %e.qid, "image download failed: {err}");
                let miss = err.is_not_recorded();
                return (state(Err(UnrankedReason::ImageUnavailable), None), miss);
            }
        };
        let hash = content_hash(&bytes).expect("non-empty body");
        self.image_hashes
            .write()
            .expect("hash map poisoned")
            .insert(e.qid.clone(), hash.clone());
        match self.provider.embed(&bytes).await {
            Ok(base) => {
                for v in [&base.geolocation, &base.place, &base.object] {
                    if let Err(err) = self.cache.put(e.qid.as_str(), v.clone()) {
                        warn!(qid = %e.qid, "embedding cache write failed: {err}");
                    }
                }
                (state(Ok(base.all()), Some(hash)), false)
            }
            Err(err) => {
                warn!(qid = %e.qid, "candidate embedding failed: {err}");
                (state(Err(UnrankedReason::EmbeddingFailed), Some(hash)), false)
            }
        }
    }

    fn cached(&self, qid: &Qid) -> Option<[EmbeddingVector; 4]> {
        let g = self.cache.get(qid.as_str(), EmbeddingKind::Geolocation)?;
        let p = self.cache.get(qid.as_str(), EmbeddingKind::Place)?;
        let o = self.cache.get(qid.as_str(), EmbeddingKind::Object)?;
        BaseEmbeddings::new(g, p, o).ok().map(|b| b.all())
    }

    pub async fn retrieve(&self, req: RetrievalRequest) -> Result<RetrievalResponse, ServiceError> {
        let (image, preset) = match req.image {
            ImageSource::Upload(bytes) => (bytes, None),
            ImageSource::Preset(id) => {
                let p = self.presets.get(&id).ok_or_else(|| {
                    ServiceError::new(ErrorKind::NotFound, Stage::Request, format!("unknown preset `{id}`"))
                })?;
                (p.image_bytes.clone(), Some(p))
            }
        };
        if image.is_empty() {
            return Err(ServiceError::validation(Stage::Request, "image is empty"));
        }
        if image.len() > MAX_IMAGE_BYTES {
            return Err(ServiceError::validation(
                Stage::Request,
                format!("image is {} bytes; the limit is {MAX_IMAGE_BYTES}", image.len()),
            ));
        }
        let radius_km = req
            .radius_km
            .or(preset.map(|p| p.spec.radius_km))
            .ok_or_else(|| ServiceError::validation(Stage::Request, "radius_km is required"))?;
        geowine_kg::wikidata::validate_radius(radius_km)
            .map_err(|e| ServiceError::from_kg(Stage::Request, e))?;
        let group_names = req
            .groups
            .or_else(|| preset.map(|p| p.spec.groups.clone()))
            .ok_or_else(|| ServiceError::validation(Stage::Request, "groups are required"))?;
        let groups = self.resolve_groups(&group_names)?;

        let prediction = self.predict(&image).await?;
        let predicted = prediction.decoded.coordinate;
        let mut diag = Diagnostics {
            provider: self.provider.mode().name().to_string(),
            synthesized_query: prediction.output.synthesized,
            offline: self.offline(),
            ..Default::default()
        };
        let gathered = self.gather(predicted, radius_km, &groups, false, &mut diag).await?;
        let (rankings, unranked) = rank_all(&prediction.output.embeddings, &gathered)?;

        let ground_truth = preset.map(|p| p.spec.ground_truth);
        Ok(RetrievalResponse {
            preset: preset.map(|p| p.spec.id.clone()),
            predicted,
            predicted_cell: prediction.decoded.cell_id,
            decode_score: prediction.decoded.score,
            scene: prediction.output.scene,
            gcd_error_km: ground_truth.map(|gt| great_circle_distance(&predicted, &gt)),
            ground_truth,
            radius_km,
            groups: groups.into_iter().map(|g| g.name).collect(),
            entities: gathered.entities,
            rankings,
            unranked,
            diagnostics: diag,
        })
    }

    /// News and events for one entity. Either half may fail independently.
    pub async fn entity_context(&self, qid: &str) -> Result<EntityContext, ServiceError> {
        let qid = Qid::new(qid).map_err(|e| ServiceError::validation(Stage::Request, e.to_string()))?;
        let label_lookup = async {
            match self.wikidata.cached_label(&qid) {
                Some(l) => Ok(Some(l)),
                None => match self.wikidata.entity_info(&qid).await {
                    Ok(info) => Ok(info.label),
                    Err(e) if e.is_not_recorded() => Ok(None),
                    Err(e) => Err(ServiceError::from_kg(Stage::News, e)),
                },
            }
        };
        let news = async {
            let label = label_lookup.await?;
            match label {
                Some(l) => match self.news.fetch_news(&l, self.config.news_limit).await {
                    Ok(a) => Ok((Some(l), a)),
                    Err(e) if e.is_not_recorded() => Ok((Some(l), Vec::new())),
                    Err(e) => Err(ServiceError::from_kg(Stage::News, e)),
                },
                None => Ok((None, Vec::new())),
            }
        };
        let events = async {
            match self.events.fetch_events(qid.as_str()).await {
                Ok(ev) => Ok(ev),
                Err(e) if e.is_not_recorded() => Ok(Vec::new()),
                Err(e) => Err(ServiceError::from_kg(Stage::Events, e)),
            }
        };
        let (news, events) = tokio::join!(news, events);
        let (label, news, news_error) = match news {
            Ok((label, a)) => (label, a, None),
            Err(e) => (self.wikidata.cached_label(&qid), Vec::new(), Some(e.envelope())),
        };
        let (events, events_error) = match events {
            Ok(ev) => (ev, None),
            Err(e) => (Vec::new(), Some(e.envelope())),
        };
        Ok(EntityContext {
            qid,
            label,
            news,
            news_error,
            events,
            events_error,
            offline: self.offline(),
            news_offline_fallback: self.news_offline_fallback,
        })
    }

    pub async fn health(&self) -> Health {
        let t = &self.transport;
        let (sparql, entity, news, events) = tokio::join!(
            t.probe(&self.config.wikidata_sparql_url),
            t.probe(&self.config.wikidata_entity_data_url),
            t.probe(&self.config.news_url),
            t.probe(&self.config.oekg_url),
        );
        Health {
            status: "ok",
            provider: self.provider.mode().name(),
            network_mode: self.config.network_mode,
            registry_version: self.registry.version().to_string(),
            registry_groups: self.registry.len(),
            partitioning_levels: self.hierarchy.num_levels(),
            presets: self.presets.len(),
            endpoints: EndpointFlags {
                wikidata_sparql: sparql,
                wikidata_entity_data: entity,
                news: news && !self.news_offline_fallback,
                events,
            },
            news_offline_fallback: self.news_offline_fallback,
            embedding_cache: self.cache.stats(),
        }
    }
}

/// Ranks the embedded candidates against the query in all four kinds.
pub fn rank_all(
    query: &BaseEmbeddings,
    gathered: &Gathered,
) -> Result<(Rankings, Vec<Unranked>), ServiceError> {
    let labels: HashMap<&Qid, &str> = gathered
        .entities
        .iter()
        .map(|e| (&e.qid, e.label.as_str()))
        .collect();
    let query_vectors = query.all();
    let mut rankings = Rankings::default();
    let mut unranked: Vec<Unranked> = Vec::new();

    for c in &gathered.candidates {
        if let Err(reason) = c.vectors {
            unranked.push(Unranked {
                qid: c.qid.clone(),
                reason,
                kinds: EmbeddingKind::ALL.to_vec(),
            });
        }
    }

    for (ki, kind) in EmbeddingKind::ALL.into_iter().enumerate() {
        let candidates = gathered
            .candidates
            .iter()
            .filter_map(|c| c.vectors.as_ref().ok().map(|v| Candidate::new(c.qid.as_str(), Some(&v[ki]))));
        let ranking = rank_candidates(&query_vectors[ki], candidates, kind)
            .map_err(|e| ServiceError::from_geo(Stage::Ranking, e))?;
        let out = rankings.get_mut(kind);
        for r in ranking.ranked {
            let qid = Qid::new(r.entity_id).expect("candidate ids are qids");
            let label = labels.get(&qid).copied().unwrap_or_default().to_string();
            out.push(RankedEntity {
                entity_id: qid,
                label,
                score: r.score,
            });
        }
        for ex in ranking.excluded {
            debug_assert_eq!(ex.reason, ExclusionReason::ZeroNorm);
            let qid = Qid::new(ex.entity_id).expect("candidate ids are qids");
            match unranked
                .iter_mut()
                .find(|u| u.qid == qid && u.reason == UnrankedReason::ZeroNorm)
            {
                Some(u) => u.kinds.push(kind),
                None => unranked.push(Unranked {
                    qid,
                    reason: UnrankedReason::ZeroNorm,
                    kinds: vec![kind],
                }),
            }
        }
    }
    // Entity order (nearest first).
    let order: HashMap<&Qid, usize> = gathered
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (&e.qid, i))
        .collect();
    unranked.sort_by_key(|u| order.get(&u.qid).copied().unwrap_or(usize::MAX));
    Ok((rankings, unranked))
}
