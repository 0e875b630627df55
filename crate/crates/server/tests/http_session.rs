use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vlaj_core::synth::{generate_synthetic, Profile};
use vlaj_core::trace::{RunTrace, Task};
use vlaj_server::{router, LabelService};

fn study() -> Vec<RunTrace> {
    let mut traces = Vec::new();
    for task in Task::ALL {
        for seed in 0..5 {
            traces.push(generate_synthetic(Profile::Smooth, task, seed));
        }
        traces.push(generate_synthetic(Profile::Failing, task, 99));
    }
    traces
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn label_body(run: &str, who: &str, label: &str, session: &str) -> Value {
    json!({ "run_id": run, "annotator_id": who, "label": label, "session_id": session })
}

/// Label plan for annotator `a`: 10 high, 6 medium, 4 low.
fn planned(i: usize) -> &'static str {
    match i {
        0..=9 => "high",
        10..=15 => "medium",
        _ => "low",
    }
}

#[tokio::test]
async fn scripted_session_two_annotators_one_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let svc = LabelService::open(&study(), &log, None, 160).unwrap();
    let app = router(Arc::new(svc));

    let mut runs = Vec::new();
    for who in ["alice", "bob"] {
        let (status, next) = call_json(&app, "GET", &format!("/runs/next?annotator={who}&session=day1"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(next["batch_limit"], 160);
        let batch: Vec<String> = next["runs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["run_id"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(batch.len(), 20, "failing runs must not be offered");
        let mut sorted = batch.clone();
        sorted.sort();
        assert_eq!(batch, sorted);
        runs = batch;

        for (i, run) in runs.iter().enumerate() {
            let (status, view) = call_json(&app, "GET", &format!("/runs/{run}"), None).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(view["tcp_path"].as_array().unwrap().len(), view["steps"].as_u64().unwrap() as usize);
            assert!(view.get("success").is_none());

            // One planted disagreement: bob grades the first high run as medium.
            let label = if who == "bob" && i == 0 { "medium" } else { planned(i) };
            let (status, ack) = call_json(&app, "POST", "/labels", Some(label_body(run, who, label, "day1"))).await;
            assert_eq!(status, StatusCode::OK, "{ack}");
            assert_eq!(ack["session_count"], i + 1);
        }
        let (_, next) = call_json(&app, "GET", &format!("/runs/next?annotator={who}&session=day2"), None).await;
        assert!(next["runs"].as_array().unwrap().is_empty());
    }

    // Confusion: HH 9, HM 1, MM 6, LL 4 → (20·19 − 148) / (400 − 148).
    let (status, agreement) = call_json(&app, "GET", "/agreement?a=alice&b=bob", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(agreement["n_items"], 20);
    assert_eq!(agreement["kappa"].as_f64().unwrap(), 232.0 / 252.0);
    assert_eq!(agreement["observed_agreement"].as_f64().unwrap(), 0.95);
    let disagreements = agreement["disagreements"].as_array().unwrap();
    assert_eq!(disagreements.len(), 1);
    assert_eq!(disagreements[0]["run_id"], runs[0].as_str());

    let (status, blocked) = call_json(&app, "GET", "/export", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(blocked["unresolved"], json!([runs[0]]));
    let (status, partial) = call_json(&app, "GET", "/export?partial=true", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(partial["labels_csv"].as_str().unwrap().lines().count(), 41);

    let (status, _) = call_json(&app, "POST", "/labels", Some(label_body(&runs[0], "carol", "high", "tiebreak"))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, csv) = call(&app, "GET", "/export?format=csv&file=resolved", None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.contains(&format!("{},high,resolver,carol", runs[0])), "{csv}");
    assert!(csv.contains(&format!("{},low,agreement,", runs[19])), "{csv}");
}

#[tokio::test]
async fn reject_paths() {
    let dir = tempfile::tempdir().unwrap();
    let svc = LabelService::open(&study(), dir.path().join("labels.jsonl"), None, 160).unwrap();
    let app = router(Arc::new(svc));
    let failing = "put_on-failing-00099";
    let smooth = "put_on-smooth-00000";

    let (status, body) = call_json(&app, "POST", "/labels", Some(label_body(failing, "a", "high", "s"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("did not succeed"));

    let (status, _) = call_json(&app, "POST", "/labels", Some(label_body("ghost", "a", "high", "s"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call_json(&app, "POST", "/labels", Some(label_body(smooth, "a", "superb", "s"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call_json(&app, "POST", "/labels", Some(json!({ "run_id": smooth }))).await;
    assert!(status.is_client_error());

    let (status, _) = call_json(&app, "GET", "/runs/ghost", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/agreement?a=x&b=y", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call_json(&app, "GET", "/media/..%2Fsecret.mp4", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/export?format=xml", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn session_cap_and_limit() {
    let dir = tempfile::tempdir().unwrap();
    let svc = LabelService::open(&study(), dir.path().join("labels.jsonl"), None, 3).unwrap();
    let app = router(Arc::new(svc));
    let (_, next) = call_json(&app, "GET", "/runs/next?annotator=a&session=s", None).await;
    let batch = next["runs"].as_array().unwrap().clone();
    assert_eq!(batch.len(), 3);
    for r in &batch {
        let run = r["run_id"].as_str().unwrap();
        call_json(&app, "POST", "/labels", Some(label_body(run, "a", "low", "s"))).await;
    }
    let (_, next) = call_json(&app, "GET", "/runs/next?annotator=a&session=s", None).await;
    assert!(next["runs"].as_array().unwrap().is_empty(), "session is full");
    assert_eq!(next["session_count"], 3);
    let (_, next) = call_json(&app, "GET", "/runs/next?annotator=a&session=s2&limit=5", None).await;
    assert_eq!(next["runs"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn restart_recovers_labels_and_media() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let media = dir.path().join("media");
    std::fs::create_dir(&media).unwrap();
    let traces = study();
    let with_video = traces[0].run_id().to_string();
    std::fs::write(media.join(format!("{with_video}.mp4")), b"fake-mp4").unwrap();

    let first_export = {
        let app = router(Arc::new(LabelService::open(&traces, &log, Some(media.clone()), 160).unwrap()));
        for (i, t) in traces.iter().filter(|t| t.run_id().contains("smooth")).take(5).enumerate() {
            let (status, _) =
                call_json(&app, "POST", "/labels", Some(label_body(t.run_id(), "a", planned(i * 4), "s"))).await;
            assert_eq!(status, StatusCode::OK);
        }
        call_json(&app, "GET", "/export", None).await.1
    };

    let app = router(Arc::new(LabelService::open(&traces, &log, Some(media), 160).unwrap()));
    let (_, export) = call_json(&app, "GET", "/export", None).await;
    assert_eq!(export, first_export);
    assert_eq!(export["labels_csv"].as_str().unwrap().lines().count(), 6);

    let (_, view) = call_json(&app, "GET", &format!("/runs/{with_video}"), None).await;
    let url = view["video_url"].as_str().unwrap().to_string();
    let (status, bytes) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"fake-mp4");
}
