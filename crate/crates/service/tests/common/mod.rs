#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use esi_core::ahp::PairwiseMatrix;
use esi_core::delphi::{Opinion, Response};
use esi_core::pipeline::Settings;
use esi_core::scorecard::{CausalLink, Polarity, Requirement};
use esi_core::sdm::{Constant, Expression as E, Flow, SdmModel, Stock};
use esi_core::{ErrorCode, Store};
use esi_service::{router, status_for, ApiError};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const SHORT_LEASE: Duration = Duration::from_millis(50);

pub fn store(dir: &Path) -> Store {
    Store::new(dir).with_lease_timeout(SHORT_LEASE)
}

/// Sends one request through the router without a network socket.
pub async fn call_raw(
    store: &Store,
    method: &str,
    uri: &str,
    content_type: &str,
    body: Vec<u8>,
) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", content_type)
        .body(Body::from(body))
        .unwrap();
    let response = router(store.clone()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call(store: &Store, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let bytes = body.map(|b| b.to_string().into_bytes()).unwrap_or_default();
    let (status, out) = call_raw(store, method, uri, "application/json", bytes).await;
    let value = if out.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&out).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&out).into()))
    };
    (status, value)
}

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliOutput {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    pub fn error(&self) -> ApiError {
        serde_json::from_str(self.stderr.trim())
            .unwrap_or_else(|e| panic!("stderr is not an error ({e}): {}", self.stderr))
    }
}

/// Runs the `esi` binary against `data_dir`.
pub fn esi(data_dir: &Path, args: &[&str]) -> CliOutput {
    let out = Command::new(env!("CARGO_BIN_EXE_esi"))
        .arg("--data-dir")
        .arg(data_dir)
        .args(args)
        .env_remove("ESI_DATA_DIR")
        .env("ESI_LEASE_TIMEOUT_MS", SHORT_LEASE.as_millis().to_string())
        .output()
        .unwrap();
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

pub fn response(who: &str, round: u32, ratings: &[i64]) -> Response {
    Response {
        panelist_id: who.into(),
        round_index: round,
        ratings: ratings
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("S{}", i + 1), *r))
            .collect(),
        rank_order: None,
    }
}

// Project states used as starting points.

pub fn fresh(s: &Store) -> String {
    s.create(None).unwrap().id
}

pub fn delphi_open(s: &Store) -> String {
    let id = fresh(s);
    s.update(&id, |p| {
        let opinions = [
            Opinion::new("more venture funding", "Finance"),
            Opinion::new("shared lab facilities", "Infrastructure"),
            Opinion::new("training for researchers", "Skills"),
        ];
        p.open_delphi_round(Some(&opinions), &BTreeMap::new())?;
        p.open_delphi_round(None, &BTreeMap::new())
    })
    .unwrap();
    id
}

pub fn delphi_with_token(s: &Store) -> String {
    let id = delphi_open(s);
    s.update(&id, |p| p.issue_token()).unwrap();
    id
}

pub fn delphi_disagreeing(s: &Store) -> String {
    let id = delphi_open(s);
    s.update(&id, |p| {
        p.submit_response(2, response("a", 2, &[1, 9, 5]))?;
        p.submit_response(2, response("b", 2, &[9, 1, 5]))?;
        p.submit_response(2, response("c", 2, &[5, 5, 1]))
    })
    .unwrap();
    id
}

pub fn with_requirements(s: &Store) -> String {
    let id = fresh(s);
    s.update(&id, |p| {
        p.set_requirements(vec![
            Requirement {
                label: "Finance".into(),
                required: 80.0,
            },
            Requirement {
                label: "Skills".into(),
                required: 60.0,
            },
            Requirement {
                label: "Infrastructure".into(),
                required: 40.0,
            },
        ])
    })
    .unwrap();
    id
}

pub fn ahp_initialized(s: &Store) -> String {
    let id = with_requirements(s);
    s.update(&id, |p| {
        p.init_ahp(vec!["grants".into(), "tax credit".into(), "incubator".into()])
    })
    .unwrap();
    id
}

pub fn ahp_one_iteration(s: &Store) -> String {
    let id = ahp_initialized(s);
    s.update(&id, |p| {
        p.set_settings(Settings {
            eigen_max_iter: 1,
            ..Settings::default()
        })
    })
    .unwrap();
    id
}

pub fn ahp_inconsistent(s: &Store) -> String {
    let id = ahp_initialized(s);
    s.update(&id, |p| {
        let labels = p.hierarchy()?.node("goal")?.compares;
        let m = PairwiseMatrix::from_upper(labels, &[9.0, 1.0 / 9.0, 9.0])?;
        p.set_ahp_matrix("goal", m)
    })
    .unwrap();
    id
}

pub fn seeded(s: &Store) -> String {
    let id = fresh(s);
    s.update(&id, |p| p.seed_scorecard().map(|_| ())).unwrap();
    id
}

pub fn linked(s: &Store) -> String {
    let id = seeded(s);
    s.update(&id, |p| {
        p.add_link(CausalLink::new("A1", "G1", Polarity::Positive, 0.5, 0.0))
    })
    .unwrap();
    id
}

pub fn broken_scorecard(s: &Store) -> String {
    let id = seeded(s);
    s.update(&id, |p| {
        let mut card = p.scorecard()?.clone();
        card.links
            .push(CausalLink::new("A1", "Z9", Polarity::Positive, 0.5, 0.0));
        p.set_scorecard(card).map(|_| ())
    })
    .unwrap();
    id
}

pub fn compiled(s: &Store) -> String {
    let id = seeded(s);
    s.update(&id, |p| p.compile_model(None).map(|_| ())).unwrap();
    id
}

pub fn dividing_model(s: &Store) -> String {
    let id = fresh(s);
    let model = SdmModel {
        stocks: vec![Stock {
            name: "x".into(),
            initial: 1.0,
        }],
        flows: vec![Flow {
            name: "inflow".into(),
            stock: "x".into(),
            sign: Polarity::Positive,
            rate: E::div(E::c(1.0), E::name("k")),
        }],
        constants: vec![Constant {
            name: "k".into(),
            value: 0.0,
        }],
        ..SdmModel::default()
    };
    s.update(&id, |p| p.set_model(model)).unwrap();
    id
}

pub fn corrupt(s: &Store) -> String {
    let id = fresh(s);
    let path = s.project_path(&id).unwrap();
    let mut value: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    value["schema_version"] = json!(2);
    std::fs::write(&path, value.to_string()).unwrap();
    id
}

/// Conditions outside the project file that a case needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Env {
    Normal,
    /// The data directory path names a regular file.
    DataDirIsFile,
    /// Another writer holds the project's lease for the whole call.
    LeaseHeld,
}

pub struct ApiCall {
    pub method: &'static str,
    pub path: String,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

fn api(method: &'static str, path: String, body: Value) -> ApiCall {
    ApiCall {
        method,
        path,
        content_type: "application/json",
        body: if body.is_null() {
            Vec::new()
        } else {
            body.to_string().into_bytes()
        },
    }
}

fn api_text(method: &'static str, path: String, content_type: &'static str, body: &str) -> ApiCall {
    ApiCall {
        method,
        path,
        content_type,
        body: body.as_bytes().to_vec(),
    }
}

/// One error code, the state that provokes it, and how to provoke it over HTTP and from the CLI.
pub struct Case {
    pub code: ErrorCode,
    pub env: Env,
    pub setup: fn(&Store) -> String,
    pub api: fn(&str) -> ApiCall,
    /// Gets the project id and a scratch directory for input files.
    pub cli: fn(&str, &Path) -> Vec<String>,
}

fn args(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn ones(n: usize) -> Value {
    json!(vec![vec![1.0; n]; n])
}

pub fn cases() -> Vec<Case> {
    use ErrorCode::*;
    vec![
        Case {
            code: NotSquare,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"matrix": [[1, 2, 3], [0.5, 1, 1]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "m.json", r#"{"matrix": [[1, 2, 3], [0.5, 1, 1]]}"#);
                args(&["ahp", "edit", id, "goal", "--file", &f])
            },
        },
        Case {
            code: Singular,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/dematel"),
                    json!({"factors": ["a", "b"], "matrix": [[0, 4], [4, 0]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "d.csv", ",a,b\na,0,4\nb,4,0\n");
                args(&["dematel", "run", id, &f])
            },
        },
        Case {
            code: NoConvergence,
            env: Env::Normal,
            setup: ahp_one_iteration,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"upper": [3, 5, 3]}),
                )
            },
            cli: |id, _| args(&["ahp", "edit", id, "goal", "--upper", "3,5,3"]),
        },
        Case {
            code: NonPositiveEntry,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"matrix": [[1, 0, 1], [1, 1, 1], [1, 1, 1]]}),
                )
            },
            cli: |id, _| args(&["ahp", "edit", id, "goal", "--upper", "0,1,1"]),
        },
        Case {
            code: DimensionMismatch,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"upper": [3, 5]}),
                )
            },
            cli: |id, _| args(&["ahp", "edit", id, "goal", "--upper", "3,5"]),
        },
        Case {
            code: DuplicateLabel,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/requirements"),
                    json!([{"label": "x", "required": 10}, {"label": "x", "required": 20}]),
                )
            },
            cli: |id, d| {
                let f = write_file(
                    d,
                    "r.json",
                    r#"[{"label": "x", "required": 10}, {"label": "x", "required": 20}]"#,
                );
                args(&["scorecard", "requirements", id, &f])
            },
        },
        Case {
            code: MalformedInput,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api_text(
                    "POST",
                    format!("/projects/{id}/advance"),
                    "application/json",
                    "{not json",
                )
            },
            cli: |id, d| {
                let f = write_file(d, "s.json", "{not json");
                args(&["project", "settings", id, &f])
            },
        },
        Case {
            code: EmptyOpinionSet,
            env: Env::Normal,
            setup: fresh,
            api: |id| api("POST", format!("/projects/{id}/delphi/rounds"), json!({"opinions": []})),
            cli: |id, d| {
                let f = write_file(d, "o.json", "[]");
                args(&["delphi", "open", id, "--opinions", &f])
            },
        },
        Case {
            code: UnassignedOpinion,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds"),
                    json!({"opinions": [{"text": "x"}]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "o.json", r#"[{"text": "x"}]"#);
                args(&["delphi", "open", id, "--opinions", &f])
            },
        },
        Case {
            code: RoundClosed,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/1/responses"),
                    json!({"panelist_id": "a", "ratings": {"S1": 5, "S2": 5, "S3": 5}}),
                )
            },
            cli: |id, _| {
                args(&[
                    "delphi",
                    "respond",
                    id,
                    "1",
                    "--panelist",
                    "a",
                    "--rating",
                    "S1=5",
                    "--rating",
                    "S2=5",
                    "--rating",
                    "S3=5",
                ])
            },
        },
        Case {
            code: UnknownStatement,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/2/responses"),
                    json!({"panelist_id": "a", "ratings": {"S9": 5}}),
                )
            },
            cli: |id, _| args(&["delphi", "respond", id, "2", "--panelist", "a", "--rating", "S9=5"]),
        },
        Case {
            code: RatingOutOfScale,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/2/responses"),
                    json!({"panelist_id": "a", "ratings": {"S1": 10, "S2": 5, "S3": 5}}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "r.csv", "panelist_id,statement_id,rating\na,S1,10\na,S2,5\na,S3,5\n");
                args(&["delphi", "import-csv", id, "2", &f])
            },
        },
        Case {
            code: IncompleteResponse,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/2/responses"),
                    json!({"panelist_id": "a", "ratings": {"S1": 5}}),
                )
            },
            cli: |id, _| args(&["delphi", "respond", id, "2", "--panelist", "a", "--rating", "S1=5"]),
        },
        Case {
            code: InvalidRankOrder,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/2/responses"),
                    json!({"panelist_id": "a", "ratings": {"S1": 5, "S2": 5, "S3": 5}, "rank_order": ["S1", "S1", "S2"]}),
                )
            },
            cli: |id, _| {
                args(&[
                    "delphi",
                    "respond",
                    id,
                    "2",
                    "--panelist",
                    "a",
                    "--rating",
                    "S1=5",
                    "--rating",
                    "S2=5",
                    "--rating",
                    "S3=5",
                    "--rank",
                    "S1,S1,S2",
                ])
            },
        },
        Case {
            code: UnknownPanelist,
            env: Env::Normal,
            setup: delphi_with_token,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/delphi/rounds/2/responses"),
                    json!({"panelist_id": "stranger", "ratings": {"S1": 5, "S2": 5, "S3": 5}}),
                )
            },
            cli: |id, _| {
                args(&[
                    "delphi",
                    "respond",
                    id,
                    "2",
                    "--panelist",
                    "stranger",
                    "--rating",
                    "S1=5",
                    "--rating",
                    "S2=5",
                    "--rating",
                    "S3=5",
                ])
            },
        },
        Case {
            code: NoResponses,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| api("GET", format!("/projects/{id}/delphi/rounds/2/summary"), Value::Null),
            cli: |id, _| args(&["delphi", "summarize", id, "2"]),
        },
        Case {
            code: AllZeroMatrix,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/dematel"),
                    json!({"factors": ["a", "b"], "matrix": [[0, 0], [0, 0]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "d.csv", ",a,b\na,0,0\nb,0,0\n");
                args(&["dematel", "run", id, &f])
            },
        },
        Case {
            code: DivergentSeries,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/dematel"),
                    json!({"factors": ["a", "b"], "matrix": [[0, 3], [3, 0]], "scale": 2}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "d.csv", ",a,b\na,0,3\nb,3,0\n");
                args(&["dematel", "run", id, &f, "--scale", "2"])
            },
        },
        Case {
            code: InfluenceOutOfScale,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/dematel"),
                    json!({"factors": ["a", "b"], "matrix": [[0, 5], [1, 0]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "d.csv", ",a,b\na,0,5\nb,1,0\n");
                args(&["dematel", "run", id, &f])
            },
        },
        Case {
            code: NonZeroDiagonal,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/dematel"),
                    json!({"factors": ["a", "b"], "matrix": [[1, 1], [1, 0]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "d.csv", ",a,b\na,1,1\nb,1,0\n");
                args(&["dematel", "run", id, &f])
            },
        },
        Case {
            code: NotReciprocal,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"matrix": [[1, 3, 1], [0.5, 1, 1], [1, 1, 1]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "m.json", r#"{"matrix": [[1, 3, 1], [0.5, 1, 1], [1, 1, 1]]}"#);
                args(&["ahp", "edit", id, "goal", "--file", &f])
            },
        },
        Case {
            code: BadDiagonal,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"matrix": [[2, 1, 1], [1, 1, 1], [1, 1, 1]]}),
                )
            },
            cli: |id, d| {
                let f = write_file(d, "m.json", r#"{"matrix": [[2, 1, 1], [1, 1, 1], [1, 1, 1]]}"#);
                args(&["ahp", "edit", id, "goal", "--file", &f])
            },
        },
        Case {
            code: OutOfScale,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"upper": [12, 1, 1]}),
                )
            },
            cli: |id, _| args(&["ahp", "edit", id, "goal", "--upper", "12,1,1"]),
        },
        Case {
            code: UnsupportedOrder,
            env: Env::Normal,
            setup: ahp_initialized,
            api: |id| {
                let labels: Vec<String> = (0..11).map(|i| format!("x{i}")).collect();
                api(
                    "PUT",
                    format!("/projects/{id}/ahp/matrices/goal"),
                    json!({"labels": labels, "matrix": ones(11)}),
                )
            },
            cli: |id, d| {
                let labels: Vec<String> = (0..11).map(|i| format!("x{i}")).collect();
                let f = write_file(d, "m.json", json!({"labels": labels, "matrix": ones(11)}).to_string());
                args(&["ahp", "edit", id, "goal", "--file", &f])
            },
        },
        Case {
            code: InconsistentMatrix,
            env: Env::Normal,
            setup: ahp_inconsistent,
            api: |id| api("GET", format!("/projects/{id}/ahp/ranking"), Value::Null),
            cli: |id, _| args(&["ahp", "rank", id]),
        },
        Case {
            code: IncompleteHierarchy,
            env: Env::Normal,
            setup: fresh,
            api: |id| api("PUT", format!("/projects/{id}/ahp/hierarchy"), incomplete_hierarchy()),
            cli: |id, d| {
                let f = write_file(d, "h.json", incomplete_hierarchy().to_string());
                args(&["ahp", "hierarchy", id, "--set", &f])
            },
        },
        Case {
            code: BrokenReference,
            env: Env::Normal,
            setup: seeded,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/scorecard/links"),
                    json!({"from_objective": "A1", "to_objective": "Z9", "polarity": 1, "strength": 0.5}),
                )
            },
            cli: |id, _| args(&["scorecard", "link", id, "A1", "Z9"]),
        },
        Case {
            code: DuplicateLink,
            env: Env::Normal,
            setup: linked,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/scorecard/links"),
                    json!({"from_objective": "A1", "to_objective": "G1", "polarity": -1, "strength": 0.2}),
                )
            },
            cli: |id, _| args(&["scorecard", "link", id, "A1", "G1", "--negative", "--strength", "0.2"]),
        },
        Case {
            code: InvalidLink,
            env: Env::Normal,
            setup: seeded,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/scorecard/links"),
                    json!({"from_objective": "A1", "to_objective": "A1", "polarity": 1, "strength": 0.5}),
                )
            },
            cli: |id, _| args(&["scorecard", "link", id, "A1", "A2", "--strength", "0"]),
        },
        Case {
            code: InvalidScorecard,
            env: Env::Normal,
            setup: broken_scorecard,
            api: |id| api("POST", format!("/projects/{id}/sdm/compile"), Value::Null),
            cli: |id, _| args(&["scorecard", "validate", id]),
        },
        Case {
            code: NameResolution,
            env: Env::Normal,
            setup: fresh,
            api: |id| api("PUT", format!("/projects/{id}/sdm/model"), unresolved_model()),
            cli: |id, d| {
                let f = write_file(d, "m.json", unresolved_model().to_string());
                args(&["sdm", "import", id, &f])
            },
        },
        Case {
            code: UnboundName,
            env: Env::Normal,
            setup: fresh,
            api: |_| {
                api(
                    "POST",
                    "/sdm/eval".into(),
                    json!({"expression": {"name": "x"}, "env": {}}),
                )
            },
            cli: |_, d| {
                let f = write_file(d, "e.json", r#"{"expression": {"name": "x"}, "env": {}}"#);
                args(&["sdm", "eval", &f])
            },
        },
        Case {
            code: DivisionByZeroGuardTripped,
            env: Env::Normal,
            setup: dividing_model,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/sdm/simulate"),
                    json!({"horizon": 1, "dt": 0.5}),
                )
            },
            cli: |id, _| args(&["sdm", "simulate", id, "--horizon", "1", "--dt", "0.5"]),
        },
        Case {
            code: CyclicAuxiliaries,
            env: Env::Normal,
            setup: fresh,
            api: |id| api("PUT", format!("/projects/{id}/sdm/model"), cyclic_model()),
            cli: |id, d| {
                let f = write_file(d, "m.json", cyclic_model().to_string());
                args(&["sdm", "import", id, &f])
            },
        },
        Case {
            code: InvalidModel,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "PUT",
                    format!("/projects/{id}/sdm/model"),
                    json!({"stocks": [{"name": "x", "initial": 1}, {"name": "x", "initial": 2}]}),
                )
            },
            cli: |id, d| {
                let f = write_file(
                    d,
                    "m.json",
                    r#"{"stocks": [{"name": "x", "initial": 1}, {"name": "x", "initial": 2}]}"#,
                );
                args(&["sdm", "import", id, &f])
            },
        },
        Case {
            code: InvalidScenario,
            env: Env::Normal,
            setup: compiled,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/sdm/simulate"),
                    json!({"horizon": 1, "dt": 0.5, "overrides": {"nosuch": 1}}),
                )
            },
            cli: |id, _| {
                args(&[
                    "sdm",
                    "simulate",
                    id,
                    "--horizon",
                    "1",
                    "--dt",
                    "0.5",
                    "--set",
                    "nosuch=1",
                ])
            },
        },
        Case {
            code: ScenarioLimitExceeded,
            env: Env::Normal,
            setup: compiled,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/sdm/simulate"),
                    json!({"horizon": 1000, "dt": 0.5}),
                )
            },
            cli: |id, _| args(&["sdm", "simulate", id, "--horizon", "1000", "--dt", "0.5"]),
        },
        Case {
            code: EmptyGoal,
            env: Env::Normal,
            setup: fresh,
            api: |_| api("POST", "/projects".into(), json!({"goal": "   "})),
            cli: |_, _| args(&["project", "new", "--goal", "   "]),
        },
        Case {
            code: WrongEvidence,
            env: Env::Normal,
            setup: fresh,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/advance"),
                    json!({"evidence": {"kind": "gaps"}}),
                )
            },
            cli: |id, _| args(&["project", "advance", id, "gaps"]),
        },
        Case {
            code: OutOfOrder,
            env: Env::Normal,
            setup: delphi_open,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/advance"),
                    json!({"evidence": {"kind": "delphi_consensus"}, "target": "GapsIdentified"}),
                )
            },
            cli: |id, _| {
                args(&[
                    "project",
                    "advance",
                    id,
                    "delphi-consensus",
                    "--target",
                    "GapsIdentified",
                ])
            },
        },
        Case {
            code: ConsensusNotReached,
            env: Env::Normal,
            setup: delphi_disagreeing,
            api: |id| {
                api(
                    "POST",
                    format!("/projects/{id}/advance"),
                    json!({"evidence": {"kind": "delphi_consensus"}}),
                )
            },
            cli: |id, _| args(&["project", "advance", id, "delphi-consensus"]),
        },
        Case {
            code: TooFewCriteria,
            env: Env::Normal,
            setup: fresh,
            api: |id| api("POST", format!("/projects/{id}/ahp"), json!({"tools": ["a", "b"]})),
            cli: |id, _| args(&["ahp", "init", id, "--tool", "a", "--tool", "b"]),
        },
        Case {
            code: TooFewAlternatives,
            env: Env::Normal,
            setup: with_requirements,
            api: |id| api("POST", format!("/projects/{id}/ahp"), json!({"tools": ["a"]})),
            cli: |id, _| args(&["ahp", "init", id, "--tool", "a"]),
        },
        Case {
            code: NotFound,
            env: Env::Normal,
            setup: fresh,
            api: |_| api("GET", "/projects/does-not-exist".into(), Value::Null),
            cli: |_, _| args(&["project", "show", "does-not-exist"]),
        },
        Case {
            code: CorruptFile,
            env: Env::Normal,
            setup: corrupt,
            api: |id| api("GET", format!("/projects/{id}"), Value::Null),
            cli: |id, _| args(&["project", "show", id]),
        },
        Case {
            code: Io,
            env: Env::DataDirIsFile,
            setup: |_| String::new(),
            api: |_| api("POST", "/projects".into(), Value::Null),
            cli: |_, _| args(&["project", "new"]),
        },
        Case {
            code: LeaseHeld,
            env: Env::LeaseHeld,
            setup: fresh,
            api: |id| api("POST", format!("/projects/{id}/delphi/tokens"), Value::Null),
            cli: |id, _| args(&["delphi", "token", id]),
        },
    ]
}

fn incomplete_hierarchy() -> Value {
    json!({
        "goal": "g",
        "criteria": [{"id": "c1", "label": "A"}, {"id": "c2", "label": "B"}],
        "alternatives": ["x", "y"],
        "matrices": {
            "goal": {"labels": ["A", "B"], "entries": [[1, 1], [1, 1]]},
            "c1": {"labels": ["x", "y"], "entries": [[1, 1], [1, 1]]}
        }
    })
}

fn unresolved_model() -> Value {
    json!({
        "stocks": [{"name": "x", "initial": 1}],
        "flows": [{"name": "f", "stock": "x", "sign": 1, "rate": {"name": "missing"}}]
    })
}

fn cyclic_model() -> Value {
    json!({
        "auxiliaries": [
            {"name": "a", "expression": {"name": "b"}},
            {"name": "b", "expression": {"name": "a"}}
        ]
    })
}

/// Prepared data directory for one case; the returned guard keeps any held lease alive.
pub struct Prepared {
    pub dir: tempfile::TempDir,
    pub data_dir: PathBuf,
    pub store: Store,
    pub id: String,
    _lease: Option<esi_core::pipeline::Lease>,
}

pub fn prepare(case: &Case) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = match case.env {
        Env::DataDirIsFile => PathBuf::from(write_file(dir.path(), "not-a-dir", "x")),
        _ => dir.path().join("data"),
    };
    let store = store(&data_dir);
    let id = (case.setup)(&store);
    let lease = (case.env == Env::LeaseHeld).then(|| store.lease(&id).unwrap());
    Prepared {
        dir,
        data_dir,
        store,
        id,
        _lease: lease,
    }
}

/// Runs every case over HTTP; returns the codes seen, failing on any mismatch.
pub async fn api_coverage() -> Result<BTreeSet<ErrorCode>, String> {
    let mut seen = BTreeSet::new();
    for case in cases() {
        let p = prepare(&case);
        let call = (case.api)(&p.id);
        let (status, body) = call_raw(&p.store, call.method, &call.path, call.content_type, call.body).await;
        let err: ApiError = serde_json::from_slice(&body).map_err(|e| {
            format!(
                "{:?}: body is not an error ({e}): {}",
                case.code,
                String::from_utf8_lossy(&body)
            )
        })?;
        if err.code != case.code || status != status_for(case.code) {
            return Err(format!(
                "{:?}: got {status} {:?} ({})",
                case.code, err.code, err.message
            ));
        }
        seen.insert(err.code);
    }
    Ok(seen)
}

/// Runs every case through the CLI binary; returns the codes seen, failing on any mismatch.
pub fn cli_coverage() -> Result<BTreeSet<ErrorCode>, String> {
    let mut seen = BTreeSet::new();
    for case in cases() {
        let p = prepare(&case);
        let argv = (case.cli)(&p.id, p.dir.path());
        let mut full = vec!["--format", "json"];
        full.extend(argv.iter().map(String::as_str));
        let out = esi(&p.data_dir, &full);
        let expected_exit = if case.code.is_io() { 2 } else { 1 };
        let err: ApiError = serde_json::from_str(out.stderr.trim())
            .map_err(|e| format!("{:?}: stderr is not an error ({e}): {}", case.code, out.stderr))?;
        if err.code != case.code || out.code != expected_exit {
            return Err(format!(
                "{:?}: exit {} with {:?} ({})",
                case.code, out.code, err.code, err.message
            ));
        }
        seen.insert(err.code);
    }
    Ok(seen)
}

pub fn weights_matrix(n: usize) -> Value {
    let w: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    json!(w
        .iter()
        .map(|a| w.iter().map(|b| a / b).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

pub async fn new_project(store: &esi_core::Store) -> String {
    let (status, body) = call(
        store,
        "POST",
        "/projects",
        Some(json!({"goal": "raise research output"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_string()
}

/// Drives a project from goal to simulation over HTTP only; returns the store and id.
pub async fn run_pipeline(store: &esi_core::Store) -> String {
    let id = new_project(store).await;
    let p = |rest: &str| format!("/projects/{id}{rest}");

    let opinions = json!({"opinions": [
        {"text": "more venture funding", "heading": "Finance"},
        {"text": "shared lab facilities", "heading": "Infrastructure"},
        {"text": "training for researchers", "heading": "Skills"}
    ]});
    let (status, round) = call(store, "POST", &p("/delphi/rounds"), Some(opinions)).await;
    assert_eq!(status, StatusCode::CREATED, "{round}");
    let (status, round) = call(store, "POST", &p("/delphi/rounds"), None).await;
    assert_eq!(status, StatusCode::CREATED, "{round}");
    assert_eq!(round["round"]["index"], 2);
    for who in ["a", "b", "c"] {
        let body = json!({"panelist_id": who, "ratings": {"S1": 9, "S2": 7, "S3": 3}});
        let (status, ack) = call(store, "POST", &p("/delphi/rounds/2/responses"), Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{ack}");
    }
    let (status, decision) = call(store, "GET", &p("/delphi/rounds/2/decision"), None).await;
    assert_eq!(status, StatusCode::OK, "{decision}");
    let adv = |kind: &str| json!({"evidence": {"kind": kind}});
    let (status, body) = call(store, "POST", &p("/advance"), Some(adv("delphi_consensus"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["stage"], "RequirementsElicited");

    let indicators = json!([{"label": "Finance", "value": 40, "unit": "%"}]);
    let (status, body) = call(store, "PUT", &p("/indicators"), Some(indicators)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let dematel =
        json!({"factors": ["Finance", "Infrastructure", "Skills"], "matrix": [[0, 3, 2], [1, 0, 3], [2, 1, 0]]});
    let (status, body) = call(store, "POST", &p("/dematel"), Some(dematel)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, gaps) = call(store, "GET", &p("/scorecard/gaps"), None).await;
    assert_eq!(status, StatusCode::OK, "{gaps}");
    let (status, body) = call(store, "POST", &p("/advance"), Some(adv("gaps"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["stage"], "GapsIdentified");

    let (status, h) = call(
        store,
        "POST",
        &p("/ahp"),
        Some(json!({"tools": ["grants", "tax credit", "incubator"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{h}");
    let mut nodes = vec!["goal".to_string()];
    nodes.extend(
        h["criteria"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["id"].as_str().unwrap().to_string()),
    );
    for node in &nodes {
        let (status, spec) = call(store, "GET", &p(&format!("/ahp/matrices/{node}")), None).await;
        assert_eq!(status, StatusCode::OK, "{spec}");
        let n = spec["compares"].as_array().unwrap().len();
        let (status, body) = call(
            store,
            "PUT",
            &p(&format!("/ahp/matrices/{node}")),
            Some(json!({"matrix": weights_matrix(n)})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["consistent"], true);
    }
    let (status, ranking) = call(store, "GET", &p("/ahp/ranking"), None).await;
    assert_eq!(status, StatusCode::OK, "{ranking}");
    assert_eq!(ranking["ranking"][0]["label"], "incubator");
    let (status, body) = call(store, "POST", &p("/advance"), Some(adv("ahp_ranking"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let (status, card) = call(store, "POST", &p("/scorecard/seed"), None).await;
    assert_eq!(status, StatusCode::CREATED, "{card}");
    for (from, to) in [("A1", "G1"), ("G1", "I1"), ("I1", "P1"), ("A2", "G2"), ("G2", "P1")] {
        let link = json!({"from_objective": from, "to_objective": to, "polarity": 1, "strength": 0.5});
        let (status, body) = call(store, "POST", &p("/scorecard/links"), Some(link)).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
    }
    let (status, map) = call(store, "GET", &p("/scorecard/map"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(map["adjacency"].as_array().unwrap().len(), 5);
    let (status, report) = call(store, "GET", &p("/scorecard/validation"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(report["errors"].as_array().unwrap().is_empty(), "{report}");
    let (status, body) = call(store, "POST", &p("/advance"), Some(adv("scorecard"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let (status, model) = call(store, "POST", &p("/sdm/compile"), None).await;
    assert_eq!(status, StatusCode::OK, "{model}");
    let (status, body) = call(store, "POST", &p("/advance"), Some(adv("sdm_model"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["stage"], "SimulationReady");
    id
}
