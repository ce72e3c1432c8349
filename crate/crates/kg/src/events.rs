//! Events related to an entity, from the Open Event Knowledge Graph.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::NaiveDate;
use geowine_core::Qid;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::Result;
use crate::sparql::{self, Row};
use crate::transport::{HttpRequest, Transport};

pub const OEKG_SPARQL_URL: &str = "http://oekg.l3s.uni-hannover.de/sparql";
pub const EVENT_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_uri: String,
    pub label: String,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    pub description: Option<String>,
    pub related_qid: Qid,
}

/// Events linked to the entity by any predicate, in either direction, or
/// through a reified relation.
pub fn build_event_query(qid: &Qid) -> String {
    format!(
        r#"PREFIX owl: <http://www.w3.org/2002/07/owl#>
PREFIX rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
PREFIX sem: <http://semanticweb.cs.vu.nl/2009/11/sem/>
PREFIX dcterms: <http://purl.org/dc/terms/>
SELECT DISTINCT ?event ?label ?start ?end ?description WHERE {{
  ?entity owl:sameAs <http://www.wikidata.org/entity/{qid}> .
  {{ ?event ?p ?entity . }}
  UNION
  {{ ?entity ?p ?event . }}
  UNION
  {{ ?relation rdf:subject ?event ; rdf:object ?entity . }}
  UNION
  {{ ?relation rdf:subject ?entity ; rdf:object ?event . }}
  ?event rdf:type sem:Event .
  OPTIONAL {{ ?event rdfs:label ?label . FILTER(LANGMATCHES(LANG(?label), "en")) }}
  OPTIONAL {{ ?event sem:hasBeginTimeStamp ?start . }}
  OPTIONAL {{ ?event sem:hasEndTimeStamp ?end . }}
  OPTIONAL {{ ?event dcterms:description ?description . FILTER(LANGMATCHES(LANG(?description), "en")) }}
}}
LIMIT {EVENT_LIMIT}
"#
    )
}

/// Reads the calendar date out of `xsd:date` / `xsd:dateTime` lexical forms.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let date = match s.find('T') {
        Some(i) => &s[..i],
        None => s,
    };
    NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()
}

/// Builds event records from result rows: one record per event URI, records
/// with an end before their start dropped, newest start first and undated last.
pub fn parse_event_rows(qid: &Qid, rows: &[Row]) -> Vec<EventRecord> {
    let mut by_uri: HashMap<String, EventRecord> = HashMap::new();
    for row in rows {
        let Some(uri) = sparql::value(row, "event").filter(|u| !u.is_empty()) else {
            continue;
        };
        let text = |var: &str| {
            sparql::value(row, var)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let label = text("label");
        let start = sparql::value(row, "start").and_then(parse_date);
        let end = sparql::value(row, "end").and_then(parse_date);
        let description = text("description");
        let rec = by_uri.entry(uri.to_string()).or_insert_with(|| EventRecord {
            event_uri: uri.to_string(),
            label: String::new(),
            start_date: None,
            end_date: None,
            description: None,
            related_qid: qid.clone(),
        });
        if rec.label.is_empty() {
            rec.label = label.unwrap_or_default();
        }
        rec.start_date = rec.start_date.or(start);
        rec.end_date = rec.end_date.or(end);
        rec.description = rec.description.take().or(description);
    }

    let mut out: Vec<EventRecord> = by_uri
        .into_values()
        .filter(|r| match (r.start_date, r.end_date) {
            (Some(s), Some(e)) if e < s => {
                debug!(event = %r.event_uri, "dropping event that ends before it starts");
                false
            }
            _ => true,
        })
        .map(|mut r| {
            if r.label.is_empty() {
                r.label = r.event_uri.rsplit('/').next().unwrap_or(&r.event_uri).to_string();
            }
            r
        })
        .collect();
    out.sort_by(|a, b| match (a.start_date, b.start_date) {
        (Some(x), Some(y)) => y.cmp(&x).then_with(|| a.event_uri.cmp(&b.event_uri)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.event_uri.cmp(&b.event_uri),
    });
    out
}

pub struct EventClient {
    transport: Arc<dyn Transport>,
    endpoint: String,
}

impl EventClient {
    pub fn new(transport: Arc<dyn Transport>, endpoint: impl Into<String>) -> Self {
        Self {
            transport,
            endpoint: endpoint.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request(&self, qid: &str) -> Result<HttpRequest> {
        let qid = Qid::new(qid)?;
        sparql::query_request(&self.endpoint, &build_event_query(&qid))
    }

    /// Validates `qid` before touching the network.
    pub async fn fetch_events(&self, qid: &str) -> Result<Vec<EventRecord>> {
        let qid = Qid::new(qid)?;
        let results =
            sparql::select(self.transport.as_ref(), &self.endpoint, &build_event_query(&qid)).await?;
        Ok(parse_event_rows(&qid, &results.results.bindings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::Term;

    fn term(v: &str) -> Term {
        Term {
            kind: "literal".into(),
            value: v.into(),
            lang: None,
            datatype: None,
        }
    }

    fn row(pairs: &[(&str, &str)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), term(v))).collect()
    }

    #[test]
    fn dates() {
        assert_eq!(parse_date("2019-04-15T00:00:00Z"), NaiveDate::from_ymd_opt(2019, 4, 15));
        assert_eq!(parse_date("1163-01-01"), NaiveDate::from_ymd_opt(1163, 1, 1));
        assert_eq!(parse_date("sometime"), None);
    }

    #[test]
    fn order_dedupe_and_drop() {
        let q = Qid::new("Q2981").unwrap();
        let rows = vec![
            row(&[("event", "e:undated"), ("label", "U")]),
            row(&[("event", "e:a"), ("label", "A"), ("start", "2019-04-15")]),
            row(&[("event", "e:a"), ("description", "fire")]),
            row(&[("event", "e:b"), ("start", "1944-08-26")]),
            row(&[("event", "e:bad"), ("start", "2000-01-02"), ("end", "2000-01-01")]),
        ];
        let got = parse_event_rows(&q, &rows);
        let uris: Vec<_> = got.iter().map(|e| e.event_uri.as_str()).collect();
        assert_eq!(uris, ["e:a", "e:b", "e:undated"]);
        assert_eq!(got[0].description.as_deref(), Some("fire"));
        assert_eq!(got[1].label, "e:b");
        assert!(got.iter().all(|e| e.related_qid == q));
    }
}
