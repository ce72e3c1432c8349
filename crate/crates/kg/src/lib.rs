//! Knowledge-graph and news clients: nearby entities from Wikidata, news from
//! EventRegistry and events from the Open Event Knowledge Graph, all behind a
//! swappable [`Transport`] that can replay recorded responses.

pub mod error;
pub mod events;
pub mod news;
pub mod sparql;
pub mod transport;
pub mod wikidata;

pub use error::{KgError, Result};
pub use events::{build_event_query, EventClient, EventRecord, OEKG_SPARQL_URL};
pub use news::{NewsArticle, NewsClient, DEFAULT_NEWS_LIMIT, EVENT_REGISTRY_ARTICLES_URL, MAX_NEWS_LIMIT};
pub use transport::{
    build_transport, HttpRequest, HttpResponse, LiveSettings, LiveTransport, Method, NetworkMode,
    RecordedStore, RecordedTransport, RecordingTransport, Transport, TransportError,
};
pub use wikidata::{
    build_geospatial_query, Entity, EntityQueryResult, GeoQuery, Media, QueryDiagnostics,
    WikidataClient, MAX_RADIUS_KM,
};
