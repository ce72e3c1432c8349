//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `cargo test -p geowine-service --test acceptance`

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use geowine_core::eval::{compute_topk, filter_by_gcd, EvalReport, EvalSample};
use geowine_core::{
    cosine_similarity, default_type_registry, flat_decode, great_circle_distance, hierarchical_decode,
    rank_candidates, Candidate, CellProbabilities, EmbeddingKind, EmbeddingVector, GeoCell, GeoCoordinate,
    PartitioningHierarchy, Qid,
};
use geowine_kg::build_geospatial_query;
use geowine_service::evaluation::{run_eval, EvalConfig};
use geowine_service::{api, Config, Services};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const R_KM: f64 = 6371.0088;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn coord(lat: f64, lng: f64) -> GeoCoordinate {
    GeoCoordinate::new(lat, lng).unwrap()
}

fn random_coord(rng: &mut ChaCha8Rng) -> GeoCoordinate {
    coord(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0))
}

/// Spherical law of cosines, a formula independent of the haversine form.
fn law_of_cosines_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    R_KM * c.clamp(-1.0, 1.0).acos()
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    if t < limit {
        Ok(())
    } else {
        Err(format!("took {t:?}, limit {limit:?}"))
    }
}

fn gcd_suite() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let (a, b, c) = (random_coord(&mut rng), random_coord(&mut rng), random_coord(&mut rng));
        let ab = great_circle_distance(&a, &b);
        if ab.to_bits() != great_circle_distance(&b, &a).to_bits() {
            return Err(format!("triple {i}: asymmetric"));
        }
        if great_circle_distance(&a, &a) != 0.0 {
            return Err(format!("triple {i}: d(a,a) != 0"));
        }
        let (bc, ac) = (great_circle_distance(&b, &c), great_circle_distance(&a, &c));
        if ac > ab + bc + 1e-9 {
            return Err(format!("triple {i}: triangle inequality violated by {}", ac - ab - bc));
        }
    }
    let paris = (48.8566, 2.3522);
    let london = (51.5074, -0.1278);
    let oracle = law_of_cosines_km(paris, london);
    let got = great_circle_distance(&coord(paris.0, paris.1), &coord(london.0, london.1));
    if (got - oracle).abs() > 0.5 || (got - 343.6).abs() > 0.5 {
        return Err(format!("Paris-London {got} km, oracle {oracle} km"));
    }
    let anti = great_circle_distance(&coord(0.0, 0.0), &coord(0.0, 180.0));
    let expected = std::f64::consts::PI * R_KM;
    if ((anti - expected) / expected).abs() > 1e-6 {
        return Err(format!("antipodal {anti} km, expected {expected} km"));
    }
    within(start, Duration::from_secs(5))
}

fn random_hierarchy(rng: &mut ChaCha8Rng) -> PartitioningHierarchy {
    let depth = rng.random_range(1..=4usize);
    let mut budget = 200usize;
    let mut levels: Vec<Vec<GeoCell>> = Vec::new();
    for level in 0..depth {
        let max_here = (budget - (depth - level - 1)).min(80);
        let n = rng.random_range(1..=max_here);
        budget -= n;
        let cells = (0..n)
            .map(|i| GeoCell {
                id: format!("L{level}-{:03}", (i * 53 + 7) % 211),
                level,
                parent_id: (level > 0).then(|| {
                    let above = &levels[level - 1];
                    above[rng.random_range(0..above.len())].id.clone()
                }),
                centroid: random_coord(rng),
            })
            .collect();
        levels.push(cells);
    }
    PartitioningHierarchy::from_levels(levels).unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, h: &PartitioningHierarchy) -> Vec<Vec<f64>> {
    (0..h.num_levels())
        .map(|l| (0..h.level_len(l)).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}

fn probs(weights: &[Vec<f64>]) -> Vec<CellProbabilities> {
    weights
        .iter()
        .enumerate()
        .map(|(l, w)| CellProbabilities::from_weights(l, w.clone()).unwrap())
        .collect()
}

/// Scores every finest cell by walking its parent chain by id.
fn brute_force_scores(h: &PartitioningHierarchy, p: &[CellProbabilities]) -> HashMap<String, f64> {
    let mut value: HashMap<&str, f64> = HashMap::new();
    let mut parent: HashMap<&str, Option<&str>> = HashMap::new();
    for l in 0..h.num_levels() {
        for (c, v) in h.cells(l).iter().zip(p[l].values()) {
            value.insert(&c.id, *v);
            parent.insert(&c.id, c.parent_id.as_deref());
        }
    }
    h.cells(h.num_levels() - 1)
        .iter()
        .map(|c| {
            let mut score = 1.0;
            let mut id = Some(c.id.as_str());
            while let Some(cur) = id {
                score *= value[cur];
                id = parent[cur];
            }
            (c.id.clone(), score)
        })
        .collect()
}

/// The decoded cell must carry the best score; a different id is allowed
/// only on a floating-point near-tie.
fn check_argmax(scores: &HashMap<String, f64>, got: &str) -> Result<(), String> {
    let (best_id, best) = scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .unwrap();
    if got == best_id {
        return Ok(());
    }
    let s = scores[got];
    if (s - best).abs() <= 1e-12 * best.max(f64::MIN_POSITIVE) {
        Ok(())
    } else {
        Err(format!("decoded {got} ({s}), oracle {best_id} ({best})"))
    }
}

fn decode_suite() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..500 {
        let h = random_hierarchy(&mut rng);
        let total: usize = (0..h.num_levels()).map(|l| h.level_len(l)).sum();
        if h.num_levels() > 4 || total > 200 {
            return Err(format!("hierarchy {i} out of bounds"));
        }
        let weights = random_weights(&mut rng, &h);
        let p = probs(&weights);
        let got = hierarchical_decode(&h, &p).map_err(|e| e.to_string())?;
        let scores = brute_force_scores(&h, &p);
        check_argmax(&scores, &got.cell_id).map_err(|e| format!("hierarchy {i}: {e}"))?;

        // Uniform coarse levels leave only the finest level to decide.
        let finest = h.num_levels() - 1;
        let mut uniform = weights.clone();
        for w in uniform.iter_mut().take(finest) {
            w.iter_mut().for_each(|x| *x = 1.0);
        }
        let up = probs(&uniform);
        let hier = hierarchical_decode(&h, &up).map_err(|e| e.to_string())?;
        let flat = flat_decode(&h, finest, &up[finest]).map_err(|e| e.to_string())?;
        let flat_scores: HashMap<String, f64> = h.cells(finest).iter().map(|c| c.id.clone()).zip(up[finest].values().iter().copied()).collect();
        check_argmax(&flat_scores, &hier.cell_id).map_err(|e| format!("hierarchy {i} uniform: {e}"))?;
        check_argmax(&flat_scores, &flat.cell_id).map_err(|e| format!("hierarchy {i} flat: {e}"))?;

        // Positive rescaling of any level keeps the argmax.
        let scaled: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| {
                let c = rng.random_range(0.01..100.0);
                w.iter().map(|x| x * c).collect()
            })
            .collect();
        let s = hierarchical_decode(&h, &probs(&scaled)).map_err(|e| e.to_string())?;
        check_argmax(&scores, &s.cell_id).map_err(|e| format!("hierarchy {i} rescaled: {e}"))?;
    }
    within(start, Duration::from_secs(10))
}

fn vector(values: Vec<f32>) -> EmbeddingVector {
    let n = values.len();
    EmbeddingVector::with_base_dim(EmbeddingKind::Geolocation, values, n).unwrap()
}

fn cosine_oracle(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn ranking_suite() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 32;
    for set in 0..1000 {
        let rand_vec = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
        let query = rand_vec(&mut rng);
        let n = rng.random_range(0..40usize);
        let mut cands: Vec<(String, Vec<f32>)> = (0..n)
            .map(|j| (format!("Q{}", rng.random_range(1..1_000_000u32) * 100 + j as u32), rand_vec(&mut rng)))
            .collect();
        // Exact duplicates force ties.
        if n >= 2 {
            let dup = cands[0].1.clone();
            cands.push((format!("Q{}", set + 7), dup));
        }
        let vecs: Vec<EmbeddingVector> = cands.iter().map(|(_, v)| vector(v.clone())).collect();
        let q = vector(query.clone());
        let run = |q: &EmbeddingVector| {
            rank_candidates(
                q,
                cands.iter().zip(&vecs).map(|((id, _), v)| Candidate::new(id, Some(v))),
                EmbeddingKind::Geolocation,
            )
            .map_err(|e| e.to_string())
        };
        let ranking = run(&q)?;
        if ranking != run(&q)? {
            return Err(format!("set {set}: ranking not deterministic"));
        }

        // Brute force: score with the oracle, sort by score then id.
        let mut oracle: Vec<(f64, &str)> = cands.iter().map(|(id, v)| (cosine_oracle(&query, v), id.as_str())).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let got: Vec<&str> = ranking.ranked.iter().map(|r| r.entity_id.as_str()).collect();
        if got.len() != oracle.len() {
            return Err(format!("set {set}: {} ranked of {}", got.len(), oracle.len()));
        }
        let oracle_score: HashMap<&str, f64> = oracle.iter().map(|(s, id)| (*id, *s)).collect();
        for (r, (os, oid)) in ranking.ranked.iter().zip(&oracle) {
            if (r.score - oracle_score[r.entity_id.as_str()]).abs() > 1e-9 {
                return Err(format!("set {set}: score of {} differs from oracle", r.entity_id));
            }
            // Order may differ from the oracle only between near-equal scores.
            if r.entity_id != *oid && (r.score - os).abs() > 1e-12 {
                return Err(format!("set {set}: order differs at {} vs {oid}", r.entity_id));
            }
        }
        for w in ranking.ranked.windows(2) {
            if w[0].score == w[1].score && w[0].entity_id > w[1].entity_id {
                return Err(format!("set {set}: tie not broken by ascending id"));
            }
        }

        if let Some((_, c)) = cands.first() {
            let cv = vector(c.clone());
            let ab = cosine_similarity(&q, &cv).map_err(|e| e.to_string())?;
            let ba = cosine_similarity(&cv, &q).map_err(|e| e.to_string())?;
            if ab != ba {
                return Err(format!("set {set}: cosine not symmetric"));
            }
            let s = rng.random_range(0.01f32..100.0);
            let scaled = vector(query.iter().map(|x| x * s).collect());
            let sc = cosine_similarity(&scaled, &cv).map_err(|e| e.to_string())?;
            if (sc - ab).abs() > 1e-6 {
                return Err(format!("set {set}: scaling by {s} moved cosine by {}", sc - ab));
            }
        }
    }
    within(start, Duration::from_secs(10))
}

fn sparql_goldens() -> Result<(), String> {
    let registry = default_type_registry().map_err(|e| e.to_string())?;
    let dir = fixtures().join("golden/sparql");
    let mut checked = 0;
    for name in ["notre_dame", "westminster", "midtown", "sydney", "kyoto"] {
        let args = std::fs::read_to_string(dir.join(format!("{name}.args"))).map_err(|e| format!("{name}: {e}"))?;
        let golden = std::fs::read_to_string(dir.join(format!("{name}.rq"))).map_err(|e| format!("{name}: {e}"))?;
        let f: Vec<&str> = args.trim_end().split('\t').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{name}: {e}"));
        let center = coord(num(f[0])?, num(f[1])?);
        let names: Vec<&str> = f[3].split(',').collect();
        let groups = registry.resolve(&names).map_err(|e| format!("{name}: {e}"))?;
        let query = build_geospatial_query(center, num(f[2])?, &groups).map_err(|e| format!("{name}: {e}"))?;
        if query.text != golden {
            return Err(format!("{name}: query differs from the golden file"));
        }
        checked += 1;
    }
    if checked == 5 {
        Ok(())
    } else {
        Err(format!("{checked} goldens checked"))
    }
}

fn check_monotone(report: &EvalReport, what: &str) -> Result<(), String> {
    report.check().map_err(|e| format!("{what}: {e}"))?;
    for g in report.per_group.iter().chain(std::iter::once(&report.overall)) {
        let acc: Vec<f64> = g.topk.iter().map(|t| t.accuracy).collect();
        if acc.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("{what}: {} accuracies not monotone: {acc:?}", g.group));
        }
    }
    Ok(())
}

fn eval_suite() -> Result<(), String> {
    let registry = default_type_registry().map_err(|e| e.to_string())?;
    let groups: Vec<String> = registry.groups().iter().map(|g| g.name.clone()).collect();
    // 10 at rank 1, 5 spread over ranks 2..=5, 5 never retrieved.
    let samples: Vec<EvalSample> = (0..20)
        .map(|i| EvalSample {
            id: format!("s{i:02}"),
            image_ref: format!("s{i:02}.jpg"),
            ground_truth: coord(0.0, 0.0),
            qid: Qid::new(format!("Q{}", 100 + i)).unwrap(),
            group: groups[i % groups.len()].clone(),
        })
        .collect();
    let rankings: Vec<Vec<Qid>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut list: Vec<Qid> = (0..12).map(|j| Qid::new(format!("Q{}", 9000 + j)).unwrap()).collect();
            match i {
                0..=9 => list.insert(0, s.qid.clone()),
                10..=14 => list.insert((i - 10) % 4 + 1, s.qid.clone()),
                _ => {}
            }
            list
        })
        .collect();
    let refs: Vec<&EvalSample> = samples.iter().collect();
    let report = compute_topk(&refs, &rankings, &[], &registry).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = report.overall.topk.iter().map(|t| t.accuracy).collect();
    if acc != [0.5, 0.75, 0.75] {
        return Err(format!("top-1/5/10 = {acc:?}, expected [0.5, 0.75, 0.75]"));
    }
    check_monotone(&report, "20-sample report")?;

    // Boundary samples on either side of the 25 km threshold, placed along a
    // meridian where the arc length is R times the latitude difference.
    let deg = |km: f64| (km / R_KM).to_degrees();
    let boundary: Vec<EvalSample> = [("near", 24.0), ("far", 26.0)]
        .iter()
        .map(|(id, _)| EvalSample {
            id: id.to_string(),
            image_ref: format!("{id}.jpg"),
            ground_truth: coord(10.0, 20.0),
            qid: Qid::new("Q1").unwrap(),
            group: groups[0].clone(),
        })
        .collect();
    let preds = vec![Some(coord(10.0 + deg(24.0), 20.0)), Some(coord(10.0 - deg(26.0), 20.0))];
    for (p, km) in preds.iter().zip([24.0, 26.0]) {
        let d = great_circle_distance(p.as_ref().unwrap(), &coord(10.0, 20.0));
        if (d - km).abs() > 1e-6 {
            return Err(format!("boundary sample at {d} km, built for {km} km"));
        }
    }
    let (kept, discarded) = filter_by_gcd(&boundary, &preds, 25.0).map_err(|e| e.to_string())?;
    let ids = |v: &[&EvalSample]| v.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    if ids(&kept) != ["near"] || ids(&discarded) != ["far"] {
        return Err(format!("kept {:?}, discarded {:?}", ids(&kept), ids(&discarded)));
    }

    // The fixture evaluation must be monotone too.
    let rt = runtime();
    let services = demo_services()?;
    let run = rt
        .block_on(run_eval(&services, &EvalConfig::new(fixtures().join("eval/manifest.csv"), 1.0)))
        .map_err(|e| e.to_string())?;
    check_monotone(&run.report, "fixture report")
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn demo_services() -> Result<Arc<Services>, String> {
    let cfg = Config::from_file(fixtures().join("demo/geowine.toml")).map_err(|e| e.to_string())?;
    Services::from_config(cfg).map(Arc::new).map_err(|e| e.to_string())
}

async fn retrieve_body(services: Arc<Services>) -> Result<Vec<u8>, String> {
    let req = Request::post("/api/retrieve")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"preset":"notre-dame"}"#))
        .unwrap();
    let resp = api::router(services).oneshot(req).await.map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("HTTP {}", resp.status()));
    }
    Ok(resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes().to_vec())
}

fn end_to_end() -> Result<(), String> {
    let rt = runtime();
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let services = demo_services()?;
        bodies.push(rt.block_on(retrieve_body(services.clone()))?);
        bodies.push(rt.block_on(retrieve_body(services))?);
    }
    if bodies.windows(2).any(|w| w[0] != w[1]) {
        return Err("response bodies differ between runs".into());
    }
    let v: serde_json::Value = serde_json::from_slice(&bodies[0]).map_err(|e| e.to_string())?;
    let p = (v["predicted"]["lat"].as_f64().unwrap_or(f64::NAN), v["predicted"]["lng"].as_f64().unwrap_or(f64::NAN));
    let gt = (v["ground_truth"]["lat"].as_f64().unwrap_or(f64::NAN), v["ground_truth"]["lng"].as_f64().unwrap_or(f64::NAN));
    let err = law_of_cosines_km(p, gt);
    if err.is_nan() || err > 25.0 {
        return Err(format!("prediction {err} km from ground truth"));
    }
    let top = &v["rankings"]["geolocation"][0];
    if top["label"] != "Notre-Dame de Paris" || top["entity_id"] != "Q2981" {
        return Err(format!("top-1 geolocation entity is {top}"));
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Result<(), String>); 6] = [
        ("gcd metric suite", gcd_suite),
        ("hierarchical decode equals brute force", decode_suite),
        ("ranking suite", ranking_suite),
        ("query builder goldens", sparql_goldens),
        ("eval harness verification", eval_suite),
        ("end-to-end determinism and Notre-Dame preset", end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({:.2?})", start.elapsed()),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
