use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use crystal_core::audit::{Actor, EditOp, EditPayload};
use crystal_core::extraction::{CandidateChain, ChainLink, ChainStep};
use crystal_core::fixtures::dizziness_graph;
use crystal_core::graph::{EdgeId, EdgePatch, EdgeSpec, NodeKind};
use crystal_core::service::{Request, Response, Service};

fn service() -> (tempfile::TempDir, Service) {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(dir.path()).unwrap();
    (dir, svc)
}

fn import_dizziness(svc: &Service) -> Response {
    let body = json!({ "source": "import", "graph": dizziness_graph() });
    svc.dispatch(&Request::post("/graphs", body.to_string()))
}

fn edit(payload: EditPayload) -> String {
    serde_json::to_string(&EditOp::new(payload, Actor::Expert("dr-k".into()))).unwrap()
}

fn version(svc: &Service, id: &str) -> u64 {
    svc.dispatch(&Request::get(&format!("/graphs/{id}"))).body["version"].as_u64().unwrap()
}

#[test]
fn graphs_are_created_and_read() {
    let (_dir, svc) = service();
    let created = import_dizziness(&svc);
    assert_eq!(created.status, 201, "{}", created.body);
    assert_eq!(created.body["graph_id"], "dizziness");
    assert_eq!(import_dizziness(&svc).status, 409);

    let got = svc.dispatch(&Request::get("/graphs/dizziness"));
    assert_eq!(got.status, 200);
    assert_eq!(got.body["nodes"].as_object().unwrap().len(), 6);
    assert_eq!(svc.dispatch(&Request::get("/graphs/unknown")).status, 404);
    assert_eq!(svc.dispatch(&Request::get("/nowhere")).status, 404);
    assert_eq!(svc.dispatch(&Request::post("/graphs", "{oops")).status, 400);
    assert_eq!(svc.dispatch(&Request::post("/graphs/dizziness", "{}")).status, 405);
}

#[test]
fn cycle_creating_edit_is_409_and_idempotent() {
    let (_dir, svc) = service();
    import_dizziness(&svc);
    let before = version(&svc, "dizziness");
    let body = edit(EditPayload::AddEdge {
        edge: EdgeSpec::new("d_cold", "d_symptom", 0.5),
    });
    let resp = svc.dispatch(&Request::post("/graphs/dizziness/edits", body.clone()));
    assert_eq!(resp.status, 409);
    assert_eq!(resp.body["error"], "CycleRejected");
    let cycle: Vec<&str> = resp.body["result"]["reason"]["cycle"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(cycle.contains(&"d_symptom") && cycle.contains(&"d_cold"), "{cycle:?}");

    // retrying changes nothing but is audited again
    assert_eq!(svc.dispatch(&Request::post("/graphs/dizziness/edits", body)).status, 409);
    assert_eq!(version(&svc, "dizziness"), before);
    let audit = svc.dispatch(&Request::get("/graphs/dizziness/audit?from_seq=2"));
    let records = audit.body.as_array().unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r["result"]["status"] == "rejected"));

    let ok = svc.dispatch(&Request::post(
        "/graphs/dizziness/edits",
        edit(EditPayload::RetireEdge {
            id: EdgeId("e000005".into()),
        }),
    ));
    assert_eq!(ok.status, 200);
    assert_eq!(version(&svc, "dizziness"), before + 1);

    let missing = svc.dispatch(&Request::post(
        "/graphs/dizziness/edits",
        edit(EditPayload::RetireEdge {
            id: EdgeId("e999".into()),
        }),
    ));
    assert_eq!(missing.status, 404);
    assert_eq!(svc.dispatch(&Request::get("/graphs/dizziness/audit?from_seq=x")).status, 400);
}

#[test]
fn session_lifecycle() {
    let (_dir, svc) = service();
    import_dizziness(&svc);
    let opened = svc.dispatch(&Request::post("/graphs/dizziness/sessions", ""));
    assert_eq!(opened.status, 201);
    let sid = opened.body["session_id"].as_str().unwrap().to_string();
    let turn = |text: &str| svc.dispatch(&Request::post(&format!("/sessions/{sid}/turns"), json!({ "text": text }).to_string()));

    let first = turn("");
    assert_eq!(first.body["move"]["kind"], "Ask");
    assert_eq!(turn("::::").status, 400);
    let second = turn("symptom=dizzy;has_cold=yes");
    assert_eq!(second.body["move"]["kind"], "Answer", "{}", second.body);
    assert_eq!(turn("again").status, 409);

    let fb = svc.dispatch(&Request::post(
        &format!("/sessions/{sid}/feedback"),
        json!({ "outcome": "Success" }).to_string(),
    ));
    assert_eq!(fb.status, 200, "{}", fb.body);
    let entries = fb.body["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[0]["new_w"], 51.0);

    let mismatch = svc.dispatch(&Request::post(
        &format!("/sessions/{sid}/feedback"),
        json!({ "outcome": "Success", "visited_edge_ids": ["e000001"] }).to_string(),
    ));
    assert_eq!(mismatch.status, 422);

    let transcript = svc.dispatch(&Request::get(&format!("/sessions/{sid}")));
    assert_eq!(transcript.body["transcript"].as_array().unwrap().len(), 2);
    assert_eq!(svc.dispatch(&Request::post("/sessions/s999999/turns", "{\"text\":\"\"}")).status, 404);
}

fn chain(id: &str, p: f64) -> CandidateChain {
    let mut root = ChainStep::new("1", "What is the symptom?");
    root.kind = NodeKind::Decision;
    root.slot_key = Some("symptom".into());
    let mut end = ChainStep::new("2", "rest at home");
    end.kind = NodeKind::Terminal;
    CandidateChain {
        chain_id: id.into(),
        source_case_id: format!("case-{id}"),
        root: "1".into(),
        steps: vec![root, end],
        links: vec![ChainLink {
            from: "1".into(),
            to: "2".into(),
            confidence: p,
        }],
    }
}

#[test]
fn merged_graph_needs_verification_before_sessions() {
    let (_dir, svc) = service();
    let body = json!({ "source": "merge", "graph_id": "m", "chains": [chain("a", 0.6), chain("b", 0.8)] });
    let created = svc.dispatch(&Request::post("/graphs", body.to_string()));
    assert_eq!(created.status, 201, "{}", created.body);
    assert_eq!(created.body["stage"], "Provisional");
    let item = created.body["review_items"][0]["item_id"].as_str().unwrap().to_string();

    assert_eq!(svc.dispatch(&Request::post("/graphs/m/sessions", "")).status, 409);
    let approve = json!({ "verdict": "Approve", "actor": { "kind": "expert", "id": "dr-k" } }).to_string();
    let path = format!("/graphs/m/reviews/{item}");
    assert_eq!(svc.dispatch(&Request::post(&path, approve.clone())).status, 200);
    assert_eq!(svc.dispatch(&Request::post(&path, approve)).status, 409);
    assert_eq!(svc.dispatch(&Request::get(&path)).body["status"], "Approved");
    assert_eq!(svc.dispatch(&Request::get("/graphs/m/reviews/r404")).status, 404);
    assert_eq!(svc.dispatch(&Request::post("/graphs/m/sessions", "")).status, 201);

    let graph = svc.dispatch(&Request::get("/graphs/m")).body;
    let edge = graph["edges"].as_object().unwrap().values().next().unwrap().clone();
    assert!((edge["confidence"].as_f64().unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn graft_source_builds_from_rules() {
    let (_dir, svc) = service();
    let rules = json!([
        { "rule_id": "r1", "condition": "slot(symptom) == 'fever'", "action": { "RouteTo": "take paracetamol" }, "hardness": "Hard" }
    ]);
    let resp = svc.dispatch(&Request::post(
        "/graphs",
        json!({ "source": "graft", "graph_id": "rb", "rules": rules }).to_string(),
    ));
    assert_eq!(resp.status, 201, "{}", resp.body);
    let bad = svc.dispatch(&Request::post(
        "/graphs",
        json!({ "source": "graft", "graph_id": "../etc", "rules": rules }).to_string(),
    ));
    assert_eq!(bad.status, 400);
}

#[test]
fn consolidate_compresses_and_survives_restart() {
    let (dir, svc) = service();
    import_dizziness(&svc);
    let resp = svc.dispatch(&Request::post("/graphs/dizziness/consolidate", json!({ "compress": true }).to_string()));
    assert_eq!(resp.status, 200, "{}", resp.body);
    assert_eq!(resp.body["shortcuts"].as_array().unwrap().len(), 1);
    let live = svc.dispatch(&Request::get("/graphs/dizziness")).body;
    let audit_len = svc.dispatch(&Request::get("/graphs/dizziness/audit")).body.as_array().unwrap().len();
    drop(svc);

    let reopened = Service::open(dir.path()).unwrap();
    assert_eq!(reopened.dispatch(&Request::get("/graphs/dizziness")).body, live);
    let audit = reopened.dispatch(&Request::get("/graphs/dizziness/audit")).body;
    assert_eq!(audit.as_array().unwrap().len(), audit_len);
}

#[test]
fn concurrent_edits_are_serialized() {
    let (_dir, svc) = service();
    import_dizziness(&svc);
    let svc = Arc::new(svc);
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let svc = Arc::clone(&svc);
            thread::spawn(move || {
                for j in 0..5 {
                    let patch = EdgePatch {
                        weight: Some(f64::from(i * 10 + j)),
                        ..EdgePatch::default()
                    };
                    let body = edit(EditPayload::ModifyEdge {
                        id: EdgeId("e000004".into()),
                        patch,
                    });
                    let resp = svc.dispatch(&Request::post("/graphs/dizziness/edits", body));
                    assert_eq!(resp.status, 200);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(version(&svc, "dizziness"), 41);
    let audit = svc.dispatch(&Request::get("/graphs/dizziness/audit")).body;
    let seqs: Vec<u64> = audit.as_array().unwrap().iter().map(|r| r["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=41).collect::<Vec<_>>());
    let pre: Vec<u64> = audit.as_array().unwrap().iter().map(|r| r["pre_version"].as_u64().unwrap()).collect();
    assert_eq!(pre, (0..41).collect::<Vec<_>>());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_adapter_round_trip() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let (_dir, svc) = service();
    import_dizziness(&svc);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(crystal_core::service::http::serve_on(Arc::new(svc), listener));

    let exchange = |raw: String| async move {
        let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
        stream.write_all(raw.as_bytes()).await.unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).await.unwrap();
        out
    };
    let get = exchange("GET /graphs/unknown HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into()).await;
    assert!(get.starts_with("HTTP/1.1 404"), "{get}");

    let body = "{}";
    let post = exchange(format!(
        "POST /graphs/dizziness/sessions HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ))
    .await;
    assert!(post.starts_with("HTTP/1.1 201"), "{post}");
    let json_start = post.find("\r\n\r\n").unwrap() + 4;
    let parsed: Value = serde_json::from_str(&post[json_start..]).unwrap();
    assert_eq!(parsed["state"]["active_node"], "d_symptom");
}
