#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use geowine_service::{api, Config, Services};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn demo_config() -> Config {
    Config::from_file(fixtures().join("demo/geowine.toml")).unwrap()
}

pub fn demo_services() -> Arc<Services> {
    Arc::new(Services::from_config(demo_config()).unwrap())
}

pub async fn send(app: axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

pub async fn get(services: &Arc<Services>, uri: &str) -> (StatusCode, serde_json::Value) {
    let (s, b) = send(api::router(services.clone()), Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

pub async fn post_json(services: &Arc<Services>, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/api/retrieve")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&body).unwrap()))
        .unwrap();
    send(api::router(services.clone()), req).await
}
