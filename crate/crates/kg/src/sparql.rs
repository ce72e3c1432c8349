//! SPARQL 1.1 JSON results format and a minimal GET client.

use std::collections::HashMap;

use serde::Deserialize;

use crate::error::{KgError, Result};
use crate::transport::{HttpRequest, Transport};

#[derive(Debug, Clone, Deserialize)]
pub struct SparqlResults {
    #[serde(default)]
    pub head: Head,
    pub results: Bindings,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Head {
    #[serde(default)]
    pub vars: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Bindings {
    pub bindings: Vec<HashMap<String, Term>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Term {
    #[serde(rename = "type")]
    pub kind: String,
    pub value: String,
    #[serde(rename = "xml:lang")]
    pub lang: Option<String>,
    pub datatype: Option<String>,
}

pub type Row = HashMap<String, Term>;

/// The value of `var` in `row`, if bound.
pub fn value<'a>(row: &'a Row, var: &str) -> Option<&'a str> {
    row.get(var).map(|t| t.value.as_str())
}

pub fn parse_results(body: &[u8]) -> Result<SparqlResults> {
    serde_json::from_slice(body).map_err(|e| KgError::Parse(format!("sparql results: {e}")))
}

/// GET request for `query` against `endpoint`, asking for JSON results.
pub fn query_request(endpoint: &str, query: &str) -> Result<HttpRequest> {
    let mut url = url::Url::parse(endpoint)
        .map_err(|e| KgError::Config(format!("bad sparql endpoint `{endpoint}`: {e}")))?;
    url.query_pairs_mut()
        .append_pair("query", query)
        .append_pair("format", "json");
    Ok(HttpRequest::get(url.to_string()).header("accept", "application/sparql-results+json"))
}

pub async fn select(transport: &dyn Transport, endpoint: &str, query: &str) -> Result<SparqlResults> {
    let req = query_request(endpoint, query)?;
    let resp = transport.execute(&req).await?;
    parse_results(&resp.body)
}
