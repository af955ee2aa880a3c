mod common;

use axum::http::StatusCode;
use common::{call, call_raw, new_project, run_pipeline};
use serde_json::{json, Value};

#[tokio::test]
async fn creating_a_project_starts_at_goal_defined() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let (status, body) = call(
        &store,
        "POST",
        "/projects",
        Some(json!({"goal": "raise research output"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["stage"], "GoalDefined");
    let id = body["id"].as_str().unwrap();
    let (status, listed) = call(&store, "GET", "/projects", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(listed.as_array().unwrap().len(), 1);
    let (status, shown) = call(&store, "GET", &format!("/projects/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(shown["national_goal"], "raise research output");
}

#[tokio::test]
async fn out_of_scale_rating_is_a_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let id = common::delphi_open(&store);
    let (status, body) = call(
        &store,
        "POST",
        &format!("/projects/{id}/delphi/rounds/2/responses"),
        Some(json!({"panelist_id": "a", "ratings": {"S1": 10, "S2": 5, "S3": 5}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "RatingOutOfScale");
}

#[tokio::test]
async fn advancing_with_wrong_evidence_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let id = new_project(&store).await;
    let (status, body) = call(
        &store,
        "POST",
        &format!("/projects/{id}/advance"),
        Some(json!({"evidence": {"kind": "sdm_model"}})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WrongEvidence");
    let (_, shown) = call(&store, "GET", &format!("/projects/{id}"), None).await;
    assert_eq!(shown["stage"], "GoalDefined");
}

#[tokio::test]
async fn unknown_route_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let (status, body) = call(&store, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NotFound");
}

#[tokio::test]
async fn csv_bodies_are_accepted_for_responses() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let id = common::delphi_open(&store);
    let csv = "panelist_id,statement_id,rating\na,S1,9\na,S2,7\na,S3,3\nb,S1,8\nb,S2,7\nb,S3,2\n";
    let (status, body) = call_raw(
        &store,
        "POST",
        &format!("/projects/{id}/delphi/rounds/2/responses"),
        "text/csv",
        csv.as_bytes().to_vec(),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let acks: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(acks.as_array().unwrap().len(), 2);
    let (status, summary) = call(&store, "GET", &format!("/projects/{id}/delphi/rounds/2/summary"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["respondent_count"], 2);
}

#[tokio::test]
async fn full_pipeline_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let id = run_pipeline(&store).await;
    let p = |rest: &str| format!("/projects/{id}{rest}");

    let (status, run) = call(
        &store,
        "POST",
        &p("/sdm/simulate"),
        Some(json!({"horizon": 10, "dt": 0.25})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{run}");
    assert_eq!(run["trajectory"]["time"].as_array().unwrap().len(), 41);
    let run_id = run["id"].as_str().unwrap();
    let (status, csv) = call_raw(
        &store,
        "GET",
        &p(&format!("/sdm/trajectories/{run_id}?format=csv")),
        "",
        Vec::new(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 42);
    assert!(csv.starts_with("time"));
    let (status, again) = call(&store, "GET", &p(&format!("/sdm/trajectories/{run_id}")), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, run);

    let (status, body) = call(
        &store,
        "POST",
        &p("/advance"),
        Some(json!({"evidence": {"kind": "sdm_model"}})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "OutOfOrder");
    let (_, shown) = call(&store, "GET", &p(""), None).await;
    assert_eq!(shown["audit"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn eval_computes_expressions() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::store(dir.path());
    let expr = json!({"expression": {"add": [{"name": "x"}, {"const": 2}]}, "env": {"x": 3}});
    let (status, body) = call(&store, "POST", "/sdm/eval", Some(expr)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["value"], 5.0);
}
