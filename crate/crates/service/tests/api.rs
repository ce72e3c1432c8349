mod common;

use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{demo_config, demo_services, fixtures, get, post_json, send};
use geowine_service::{api, Services};
use serde_json::{json, Value};

const PRESETS: [&str; 5] = ["notre-dame", "thames-bridge", "kyoto-temple", "sydney-harbour", "outback"];
const KINDS: [&str; 4] = ["geolocation", "place", "object", "combined"];

async fn retrieve(services: &std::sync::Arc<Services>, body: Value) -> (StatusCode, Value) {
    let (s, b) = post_json(services, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn ids(list: &Value) -> Vec<String> {
    list.as_array()
        .unwrap()
        .iter()
        .map(|r| r["entity_id"].as_str().unwrap().to_string())
        .collect()
}

/// Every returned entity is either ranked or listed as unranked, per kind.
fn assert_partition(resp: &Value) {
    let entities: BTreeSet<String> = resp["entities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["qid"].as_str().unwrap().to_string())
        .collect();
    for kind in KINDS {
        let ranked: Vec<String> = ids(&resp["rankings"][kind]);
        let unranked: Vec<String> = resp["unranked"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|u| u["kinds"].as_array().unwrap().iter().any(|k| k == kind))
            .map(|u| u["qid"].as_str().unwrap().to_string())
            .collect();
        let r: BTreeSet<_> = ranked.iter().cloned().collect();
        let u: BTreeSet<_> = unranked.iter().cloned().collect();
        assert_eq!(r.len(), ranked.len(), "{kind}: duplicate ranked ids");
        assert!(r.is_disjoint(&u), "{kind}: ranked and unranked overlap");
        assert_eq!(&r | &u, entities, "{kind}: ranked plus unranked must cover the entities");
        let scores: Vec<f64> = resp["rankings"][kind]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x["score"].as_f64().unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{kind}: scores not descending");
    }
}

#[tokio::test]
async fn notre_dame_preset_ranks_the_cathedral_first() {
    let s = demo_services();
    let (status, r) = retrieve(&s, json!({"preset": "notre-dame"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["rankings"]["geolocation"][0]["entity_id"], "Q2981");
    assert_eq!(r["rankings"]["combined"][0]["entity_id"], "Q2981");
    // The urban scene set wins over the default set, which would pick Lyon.
    assert_eq!(r["scene"], "urban");
    assert_eq!(r["predicted_cell"], "FR-paris");

    // Both points sit on the same parallel, 0.0008 degrees of longitude apart.
    let lat = 48.853f64.to_radians();
    let expected = 6371.0088 * lat.cos() * 0.0008f64.to_radians();
    let gcd = r["gcd_error_km"].as_f64().unwrap();
    assert!((gcd - expected).abs() < 1e-6, "{gcd} vs {expected}");
    assert!(gcd <= 25.0);

    let d = &r["diagnostics"];
    assert_eq!(d["rows"], 9);
    assert_eq!(d["skipped_missing_coordinates"], 1);
    assert_eq!(d["out_of_radius"], 1);
    assert_eq!(d["duplicates_collapsed"], 1);
    assert_eq!(d["offline"], true);
    assert_eq!(d["synthesized_query"], false);

    let entities = r["entities"].as_array().unwrap();
    assert_eq!(entities.len(), 6);
    let distances: Vec<f64> = entities.iter().map(|e| e["distance_km"].as_f64().unwrap()).collect();
    assert!(distances.windows(2).all(|w| w[0] <= w[1]));
    assert!(distances.iter().all(|&d| d <= 1.0));

    // Media gaps are filled from entity data, including a non-English article.
    let church = entities.iter().find(|e| e["qid"] == "Q9000102").unwrap();
    assert!(church["wikipedia_url"].as_str().unwrap().starts_with("https://fr.wikipedia.org/"));

    let reasons: Vec<(String, String)> = r["unranked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|u| (u["qid"].as_str().unwrap().into(), u["reason"].as_str().unwrap().into()))
        .collect();
    assert!(reasons.contains(&("Q9000104".into(), "missing_image".into())));
    assert!(reasons.contains(&("Q9000103".into(), "image_unavailable".into())));
    assert_partition(&r);
}

#[tokio::test]
async fn every_preset_partitions_entities_per_kind() {
    let s = demo_services();
    for p in PRESETS {
        let (status, r) = retrieve(&s, json!({"preset": p})).await;
        assert_eq!(status, StatusCode::OK, "{p}");
        assert_eq!(r["preset"], p);
        assert_partition(&r);
    }
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let s = demo_services();
    let (_, first) = post_json(&s, json!({"preset": "notre-dame"})).await;
    let (_, second) = post_json(&s, json!({"preset": "notre-dame"})).await;
    assert_eq!(first, second, "warm cache changed the body");
    let fresh = demo_services();
    let (_, third) = post_json(&fresh, json!({"preset": "notre-dame"})).await;
    assert_eq!(first, third, "fresh services changed the body");
}

#[tokio::test]
async fn zero_place_vector_is_unranked_for_place_only() {
    let s = demo_services();
    let (_, r) = retrieve(&s, json!({"preset": "sydney-harbour"})).await;
    let u = r["unranked"].as_array().unwrap();
    assert_eq!(u.len(), 1);
    assert_eq!(u[0], json!({"qid": "Q9000404", "reason": "zero_norm", "kinds": ["place"]}));
    assert!(ids(&r["rankings"]["geolocation"]).contains(&"Q9000404".to_string()));
    assert!(!ids(&r["rankings"]["place"]).contains(&"Q9000404".to_string()));
}

#[tokio::test]
async fn empty_query_result_is_not_an_error() {
    let s = demo_services();
    let (status, r) = retrieve(&s, json!({"preset": "outback"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["entities"], json!([]));
    for kind in KINDS {
        assert_eq!(r["rankings"][kind], json!([]));
    }
    assert_eq!(r["diagnostics"]["offline_misses"], 0);
}

#[tokio::test]
async fn invalid_requests_are_rejected_with_an_envelope() {
    let s = demo_services();
    let cases = [
        (json!({"preset": "notre-dame", "radius_km": -1.0}), 400, "invalid_request"),
        (json!({"preset": "notre-dame", "radius_km": 0.0}), 400, "invalid_request"),
        (json!({"preset": "notre-dame", "radius_km": 500.5}), 400, "invalid_request"),
        (json!({"preset": "notre-dame", "groups": ["Volcano"]}), 400, "invalid_request"),
        (json!({"preset": "no-such-preset"}), 404, "not_found"),
        (json!({}), 400, "invalid_request"),
        (json!({"preset": "outback", "image_base64": "aGk="}), 400, "invalid_request"),
        (json!({"image_base64": "not base64!"}), 400, "invalid_request"),
        (json!({"image_base64": ""}), 400, "invalid_request"),
        (json!({"preset": "outback", "colour": "red"}), 400, "invalid_request"),
    ];
    for (body, status, code) in cases {
        let (s_, r) = retrieve(&s, body.clone()).await;
        assert_eq!(s_.as_u16(), status, "{body}");
        assert_eq!(r["code"], code, "{body}");
        assert!(r["message"].as_str().is_some_and(|m| !m.is_empty()));
        assert!(r["stage"].is_string());
    }

    let req = Request::post("/api/retrieve")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (status, _) = send(api::router(s.clone()), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let req = Request::post("/api/retrieve")
        .header("content-type", "text/plain")
        .body(Body::from("hello"))
        .unwrap();
    let (status, _) = send(api::router(s.clone()), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, r) = get(&s, "/api/nowhere").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(r["code"], "not_found");
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    use base64::Engine as _;
    let s = demo_services();
    let big = vec![b'x'; 10 * 1024 * 1024 + 1];
    let b64 = base64::engine::general_purpose::STANDARD.encode(&big);
    let (status, r) = retrieve(&s, json!({"image_base64": b64, "radius_km": 1.0, "groups": ["Tower"]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(r["code"], "invalid_request");
}

fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Request<Body> {
    let boundary = "geowine-test-boundary";
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: image/svg+xml\r\n\r\n")
                    .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post("/api/retrieve")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

#[tokio::test]
async fn multipart_upload_matches_the_preset() {
    let s = demo_services();
    let image = std::fs::read(fixtures().join("demo/presets/thames-bridge.svg")).unwrap();
    let req = multipart(&[
        ("image", Some("bridge.svg"), &image),
        ("radius_km", None, b"5"),
        ("groups", None, b"Bridge"),
        ("groups", None, b"Tower"),
    ]);
    let (status, body) = send(api::router(s.clone()), req).await;
    assert_eq!(status, StatusCode::OK);
    let upload: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(upload["preset"], Value::Null);
    assert_eq!(upload["ground_truth"], Value::Null);
    assert_eq!(upload["gcd_error_km"], Value::Null);

    let (_, preset) = retrieve(&s, json!({"preset": "thames-bridge"})).await;
    assert_eq!(upload["rankings"], preset["rankings"]);
    assert_eq!(upload["entities"], preset["entities"]);

    // Comma-separated groups in one field behave the same.
    let req = multipart(&[
        ("image", Some("bridge.svg"), &image),
        ("radius_km", None, b"5"),
        ("groups", None, b"Bridge, Tower"),
    ]);
    let (_, body2) = send(api::router(s.clone()), req).await;
    assert_eq!(body, body2);

    let req = multipart(&[("image", Some("bridge.svg"), &image), ("radius_km", None, b"five")]);
    let (status, _) = send(api::router(s.clone()), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn data_url_upload_is_accepted() {
    use base64::Engine as _;
    let s = demo_services();
    let image = std::fs::read(fixtures().join("demo/presets/kyoto-temple.svg")).unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(&image);
    let (status, r) = retrieve(
        &s,
        json!({"image_base64": format!("data:image/svg+xml;base64,{b64}"), "radius_km": 2.0,
               "groups": ["Religious Building"]}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["predicted_cell"], "JP-kyoto");
    assert_eq!(r["rankings"]["geolocation"][0]["entity_id"], "Q9000301");
}

#[tokio::test]
async fn unknown_upload_gets_a_synthesized_query() {
    use base64::Engine as _;
    let s = demo_services();
    let b64 = base64::engine::general_purpose::STANDARD.encode(b"an image the provider has never seen");
    let (status, r) = retrieve(&s, json!({"image_base64": b64, "radius_km": 1.0, "groups": ["Waterfall"]})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["diagnostics"]["synthesized_query"], true);
    // Uniform probabilities tie everywhere; the smallest ids win at each level.
    assert_eq!(r["predicted_cell"], "AU-sydney");
    // No waterfall query is recorded there.
    assert_eq!(r["diagnostics"]["offline_misses"], 1);
    assert_eq!(r["entities"], json!([]));
}

#[tokio::test]
async fn candidate_cap_limits_embedding() {
    let mut cfg = demo_config();
    cfg.candidate_cap = 2;
    let s = std::sync::Arc::new(Services::from_config(cfg).unwrap());
    let (status, r) = retrieve(&s, json!({"preset": "notre-dame"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["diagnostics"]["candidates_embedded"], 2);
    assert_eq!(ids(&r["rankings"]["geolocation"]), ["Q2981", "Q9000107"]);
    let capped = r["unranked"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|u| u["reason"] == "beyond_candidate_cap")
        .count();
    assert_eq!(capped, 4);
    assert_partition(&r);
}

#[tokio::test]
async fn entity_context_reports_partial_failures() {
    let s = demo_services();

    let (status, c) = get(&s, "/api/entity/Q2981/context").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["label"], "Notre-Dame de Paris");
    let news = c["news"].as_array().unwrap();
    assert_eq!(news.len(), 3);
    assert!(news.iter().all(|a| a["title"].as_str().unwrap().contains("Notre-Dame de Paris")));
    let dates: Vec<&str> = news.iter().map(|a| a["published"].as_str().unwrap()).collect();
    assert_eq!(dates, ["2024-12-08", "2023-12-16", "2023-09-14"]);
    assert_eq!(news[1]["language"], "fr");
    let events = c["events"].as_array().unwrap();
    let starts: Vec<&str> = events.iter().map(|e| e["start_date"].as_str().unwrap()).collect();
    assert_eq!(starts, ["2024-12-07", "2019-04-15", "1804-12-02"]);
    // Two rows for the same event are merged.
    assert_eq!(events[0]["description"], "Ceremony marking the end of the restoration.");
    assert_eq!(c["news_error"], Value::Null);
    assert_eq!(c["events_error"], Value::Null);

    let (status, c) = get(&s, "/api/entity/Q9000101/context").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["news"], json!([]));
    assert_eq!(c["news_error"]["code"], "upstream_unavailable");
    assert_eq!(c["news_error"]["stage"], "news");
    assert_eq!(c["events"].as_array().unwrap().len(), 1);
    assert_eq!(c["events_error"], Value::Null);

    let (status, c) = get(&s, "/api/entity/Q9000102/context").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["news"], json!([]));
    assert_eq!(c["events"], json!([]));
    assert_eq!(c["offline"], true);
    assert_eq!(c["label"], "Example Church of the Isle");

    let (status, c) = get(&s, "/api/entity/notaqid/context").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(c["code"], "invalid_request");
}

#[tokio::test]
async fn presets_are_listed_with_thumbnails() {
    let s = demo_services();
    let (status, v) = get(&s, "/api/presets").await;
    assert_eq!(status, StatusCode::OK);
    let list = v["presets"].as_array().unwrap();
    let listed: BTreeSet<&str> = list.iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(listed, PRESETS.into_iter().collect());
    for p in list {
        let url = p["thumbnail_url"].as_str().unwrap();
        assert_eq!(url, format!("/api/presets/{}/image", p["id"].as_str().unwrap()));
        let resp = tower::ServiceExt::oneshot(
            api::router(s.clone()),
            Request::get(url).body(Body::empty()).unwrap(),
        )
        .await
        .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "image/svg+xml");
        assert!(p["radius_km"].as_f64().unwrap() > 0.0);
        assert!(!p["groups"].as_array().unwrap().is_empty());
    }
    let (status, _) = get(&s, "/api/presets/nope/image").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn health_reports_offline_state() {
    let s = demo_services();
    let (status, h) = get(&s, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h["status"], "ok");
    assert_eq!(h["network_mode"], "offline");
    assert_eq!(h["provider"], "fixture");
    assert_eq!(h["presets"], 5);
    assert_eq!(h["registry_groups"], 12);
    assert_eq!(h["partitioning_levels"], 2);
    assert_eq!(h["news_offline_fallback"], false);
    for e in ["wikidata_sparql", "wikidata_entity_data", "news", "events"] {
        assert_eq!(h["endpoints"][e], false, "{e}");
    }
}
