mod common;

use common::{demo_services, fixtures};
use geowine_core::eval::EvalReport;
use geowine_service::evaluation::{run_eval, EvalConfig, SampleStatus};

#[tokio::test]
async fn eval_matches_the_golden_report() {
    let s = demo_services();
    let cfg = EvalConfig::new(fixtures().join("eval/manifest.csv"), 1.0);
    let run = run_eval(&s, &cfg).await.unwrap();

    let golden = std::fs::read_to_string(fixtures().join("eval/golden_report.json")).unwrap();
    assert_eq!(run.report.to_json(), golden);
    let table = std::fs::read_to_string(fixtures().join("eval/golden_report.txt")).unwrap();
    assert_eq!(run.report.render_table(), table);

    // Counted by hand from the manifest: 12 samples, 2 too far, 1 duplicate.
    let r = &run.report;
    assert_eq!(r.overall.instances, 9);
    assert_eq!(r.filtered_out_gcd, 2);
    assert_eq!(r.filtered_out_dup, 1);
    assert_eq!(r.skipped_unreadable, 0);
    let hits: Vec<usize> = r.overall.topk.iter().map(|t| t.hits).collect();
    assert_eq!(hits, [4, 6, 7]);

    let status = |id: &str| run.audit.iter().find(|a| a.id.contains(id)).unwrap();
    assert_eq!(status("e05").rank, Some(3));
    assert_eq!(status("e08").rank, Some(11));
    assert_eq!(status("e09").rank, None);
    assert_eq!(status("e10").status, SampleStatus::FilteredGcd);
    assert_eq!(status("e11").status, SampleStatus::FilteredGcd);
    assert_eq!(status("e12").status, SampleStatus::Duplicate);
    assert!(status("e10").gcd_km.unwrap() > 25.0);
    assert!(status("e01").gcd_km.unwrap() <= 25.0);
    assert_eq!(run.audit_jsonl().lines().count(), 12);
}

#[tokio::test]
async fn eval_is_deterministic_and_writes_three_files() {
    let s = demo_services();
    let cfg = EvalConfig::new(fixtures().join("eval/manifest.csv"), 1.0);
    let a = run_eval(&s, &cfg).await.unwrap();
    let b = run_eval(&demo_services(), &cfg).await.unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/report.json");
    let paths = a.write(&out).unwrap();
    for p in &paths {
        assert!(p.exists(), "{}", p.display());
    }
    let parsed: EvalReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed, a.report);
}

#[tokio::test]
async fn extra_k_values_extend_the_report() {
    let s = demo_services();
    let mut cfg = EvalConfig::new(fixtures().join("eval/manifest.csv"), 1.0);
    cfg.extra_ks = vec![3, 20];
    let run = run_eval(&s, &cfg).await.unwrap();
    let ks: Vec<usize> = run.report.overall.topk.iter().map(|t| t.k).collect();
    assert_eq!(ks, [1, 3, 5, 10, 20]);
    let hits: Vec<usize> = run.report.overall.topk.iter().map(|t| t.hits).collect();
    // Ranks 1,1,1,1,3,5,7,11 and one miss.
    assert_eq!(hits, [4, 5, 6, 7, 8]);
}

#[tokio::test]
async fn all_filtered_manifest_gives_an_empty_report() {
    let s = demo_services();
    let cfg = EvalConfig::new(fixtures().join("eval/all_filtered.csv"), 1.0);
    let run = run_eval(&s, &cfg).await.unwrap();
    assert_eq!(run.report.overall.instances, 0);
    assert_eq!(run.report.filtered_out_gcd, 2);
    assert!(run.report.overall.topk.iter().all(|t| t.hits == 0 && t.accuracy == 0.0));
    assert!(run.report.render_table().contains("overall"));
}

#[tokio::test]
async fn bad_manifests_are_rejected() {
    let s = demo_services();
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("empty.csv", "image_ref,lat,lng,qid,group\n"),
        ("dup.csv", "a.svg,1,2,Q1,Tower\na.svg,1,2,Q2,Tower\n"),
        ("group.csv", "a.svg,1,2,Q1,Volcano\n"),
        ("lat.csv", "a.svg,91,2,Q1,Tower\n"),
        ("qid.csv", "a.svg,1,2,X1,Tower\n"),
    ];
    for (name, body) in cases {
        let path = dir.path().join(name);
        let text = if body.starts_with("image_ref") { body.to_string() } else { format!("image_ref,lat,lng,qid,group\n{body}") };
        std::fs::write(&path, text).unwrap();
        let err = run_eval(&s, &EvalConfig::new(&path, 1.0)).await.unwrap_err();
        assert_eq!(err.code(), "invalid_request", "{name}: {err}");
    }
    let err = run_eval(&s, &EvalConfig::new(dir.path().join("missing.csv"), 1.0)).await.unwrap_err();
    assert_eq!(err.code(), "invalid_request");
    let err = run_eval(&s, &EvalConfig::new(fixtures().join("eval/manifest.csv"), 0.0)).await.unwrap_err();
    assert_eq!(err.code(), "invalid_request");
}

#[tokio::test]
async fn unreadable_images_are_counted_not_fatal() {
    let s = demo_services();
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("eval/images/e01.svg"), dir.path().join("e01.svg")).unwrap();
    std::fs::write(dir.path().join("empty.svg"), b"").unwrap();
    let manifest = dir.path().join("m.csv");
    let truth = std::fs::read_to_string(fixtures().join("eval/manifest.csv")).unwrap();
    let e01 = truth.lines().find(|l| l.contains("e01")).unwrap().replacen("images/", "", 1);
    std::fs::write(
        &manifest,
        format!("image_ref,lat,lng,qid,group\n{e01}\nempty.svg,1,2,Q1,Tower\ngone.svg,1,2,Q2,Tower\n"),
    )
    .unwrap();
    let run = run_eval(&s, &EvalConfig::new(&manifest, 1.0)).await.unwrap();
    assert_eq!(run.report.skipped_unreadable, 2);
    assert_eq!(run.report.overall.instances, 1);
    assert_eq!(run.report.overall.topk[0].hits, 1);
}
