//! News articles from the EventRegistry article search API.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use crate::error::{KgError, Result};
use crate::transport::{HttpRequest, Transport};

pub const EVENT_REGISTRY_ARTICLES_URL: &str = "https://eventregistry.org/api/v1/article/getArticles";
pub const DEFAULT_NEWS_LIMIT: usize = 10;
pub const MAX_NEWS_LIMIT: usize = 50;
pub const SNIPPET_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub title: String,
    pub url: String,
    pub source: String,
    pub published: NaiveDate,
    pub language: String,
    pub snippet: Option<String>,
    pub image_url: Option<String>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ArticleSearch<'a> {
    action: &'static str,
    keyword: &'a str,
    keyword_search_mode: &'static str,
    articles_page: u32,
    articles_count: usize,
    articles_sort_by: &'static str,
    articles_sort_by_asc: bool,
    result_type: &'static str,
    data_type: [&'static str; 1],
}

/// Maps EventRegistry's ISO 639-2 codes to short tags; unknown codes pass
/// through unchanged.
pub fn language_tag(code: &str) -> String {
    let tag = match code {
        "eng" => "en",
        "deu" | "ger" => "de",
        "fra" | "fre" => "fr",
        "spa" => "es",
        "ita" => "it",
        "por" => "pt",
        "nld" | "dut" => "nl",
        "rus" => "ru",
        "zho" | "chi" => "zh",
        "jpn" => "ja",
        "ara" => "ar",
        "pol" => "pl",
        "tur" => "tr",
        "swe" => "sv",
        "slv" => "sl",
        "hrv" => "hr",
        "srp" => "sr",
        "ces" | "cze" => "cs",
        "kor" => "ko",
        "ell" | "gre" => "el",
        other => other,
    };
    tag.to_string()
}

fn check_request(label: &str, limit: usize) -> Result<&str> {
    let label = label.trim();
    if label.is_empty() {
        return Err(KgError::Validation("news keyword must be non-empty".into()));
    }
    if limit == 0 || limit > MAX_NEWS_LIMIT {
        return Err(KgError::Validation(format!(
            "news limit {limit} outside 1..={MAX_NEWS_LIMIT}"
        )));
    }
    Ok(label)
}

fn truncate_chars(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// Parses an article search response. Malformed articles (bad URL, missing
/// date) are dropped; the rest are ordered newest first.
pub fn parse_articles(body: &[u8], limit: usize) -> Result<Vec<NewsArticle>> {
    let doc: Value =
        serde_json::from_slice(body).map_err(|e| KgError::Parse(format!("news response: {e}")))?;
    if let Some(err) = doc.get("error").and_then(Value::as_str) {
        return Err(KgError::Parse(format!("news service error: {err}")));
    }
    let results = match doc.pointer("/articles/results") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(KgError::Parse("`articles.results` is not a list".into())),
        None => &[],
    };

    let text = |v: &Value, key: &str| -> Option<String> {
        v.get(key)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };

    let mut out: Vec<(Option<String>, NewsArticle)> = Vec::new();
    for a in results {
        let Some(url) = text(a, "url").filter(|u| Url::parse(u).is_ok()) else {
            continue;
        };
        let Some(published) = text(a, "date")
            .and_then(|d| NaiveDate::parse_from_str(&d, "%Y-%m-%d").ok())
        else {
            continue;
        };
        let source = a
            .pointer("/source/title")
            .and_then(Value::as_str)
            .or_else(|| a.pointer("/source/uri").and_then(Value::as_str))
            .unwrap_or_default()
            .to_string();
        let article = NewsArticle {
            title: text(a, "title").unwrap_or_default(),
            url,
            source,
            published,
            language: text(a, "lang").map(|l| language_tag(&l)).unwrap_or_else(|| "und".into()),
            snippet: text(a, "body").map(|b| truncate_chars(&b, SNIPPET_CHARS)),
            image_url: text(a, "image").filter(|u| Url::parse(u).is_ok()),
        };
        out.push((text(a, "dateTime"), article));
    }
    // Newest first: date, then time of day when present, then URL for stability.
    out.sort_by(|(ta, a), (tb, b)| {
        b.published
            .cmp(&a.published)
            .then_with(|| tb.cmp(ta))
            .then_with(|| a.url.cmp(&b.url))
    });
    out.truncate(limit);
    Ok(out.into_iter().map(|(_, a)| a).collect())
}

pub struct NewsClient {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key: Option<String>,
}

impl NewsClient {
    /// Fails when the transport can reach the network but no API key is set.
    pub fn new(
        transport: Arc<dyn Transport>,
        endpoint: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self> {
        let api_key = api_key.filter(|k| !k.trim().is_empty());
        if api_key.is_none() && !transport.is_offline() {
            return Err(KgError::Config("news API key is not configured".into()));
        }
        Ok(Self {
            transport,
            endpoint: endpoint.into(),
            api_key,
        })
    }

    pub fn request(&self, label: &str, limit: usize) -> Result<HttpRequest> {
        let keyword = check_request(label, limit)?;
        let body = ArticleSearch {
            action: "getArticles",
            keyword,
            keyword_search_mode: "exact",
            articles_page: 1,
            articles_count: limit,
            articles_sort_by: "date",
            articles_sort_by_asc: false,
            result_type: "articles",
            data_type: ["news"],
        };
        let body = serde_json::to_vec(&body).expect("search body serializes");
        let mut req = HttpRequest::post_json(&self.endpoint, body);
        if let Some(key) = &self.api_key {
            req = req.secret("apiKey", key);
        }
        Ok(req)
    }

    pub async fn fetch_news(&self, label: &str, limit: usize) -> Result<Vec<NewsArticle>> {
        let req = self.request(label, limit)?;
        let resp = self.transport.execute(&req).await?;
        parse_articles(&resp.body, limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_and_labels() {
        assert!(check_request("Notre-Dame de Paris", 0).is_err());
        assert!(check_request("Notre-Dame de Paris", 51).is_err());
        assert!(check_request("  ", 5).is_err());
        assert_eq!(check_request(" Louvre ", 50).unwrap(), "Louvre");
    }

    #[test]
    fn parse_orders_and_truncates() {
        let long = "x".repeat(400);
        let body = serde_json::json!({"articles": {"results": [
            {"title": "old", "url": "https://a.example/1", "date": "2021-01-02", "lang": "eng",
             "source": {"title": "A"}, "body": long},
            {"title": "new", "url": "https://a.example/2", "date": "2021-03-01", "lang": "fra",
             "source": {"uri": "b.example"}},
            {"title": "no url", "url": "not a url", "date": "2021-03-01"},
            {"title": "no date", "url": "https://a.example/3"}
        ]}});
        let got = parse_articles(body.to_string().as_bytes(), 10).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].title, "new");
        assert_eq!(got[0].language, "fr");
        assert_eq!(got[0].source, "b.example");
        assert_eq!(got[1].snippet.as_ref().unwrap().chars().count(), SNIPPET_CHARS);
        assert_eq!(parse_articles(body.to_string().as_bytes(), 1).unwrap().len(), 1);
        assert!(parse_articles(b"{}", 3).unwrap().is_empty());
        assert!(parse_articles(br#"{"error":"bad key"}"#, 3).is_err());
    }
}
