//! The HTTP surface, transport-independent. [`Service::dispatch`] maps a
//! request to a response; [`http`] adapts it to axum.
//!
//! Layout under the data directory: `graphs/<id>/graph.json` (checksummed
//! snapshot), `audit.ndjson` (authoritative, append-only), `reviews.json`
//! and `rules.json`. Sessions live in memory.

pub mod http;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::audit::{Actor, AuditLog, AuditResult, EditOp, RejectCode, Rejection};
use crate::config::EngineConfig;
use crate::dialogue::{open_session, DialogueError, Session, StepContext};
use crate::engine::{Engine, EngineError};
use crate::evolution::{Feedback, Outcome};
use crate::extraction::{Agent, CandidateChain, PromptRegistry};
use crate::graph::{CanvasGraph, EdgeId};
use crate::io::{self, to_canonical, IoError};
use crate::merge::{merge_with, HashedTokens};
use crate::review::{ReviewQueue, ReviewVerdict};
use crate::rulebook::{graft_as, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub struct Request {
    pub method: Method,
    pub path: String,
    pub query: Option<String>,
    pub body: String,
}

impl Request {
    pub fn get(path: &str) -> Self {
        let (path, query) = match path.split_once('?') {
            Some((p, q)) => (p, Some(q.to_string())),
            None => (path, None),
        };
        Self {
            method: Method::Get,
            path: path.to_string(),
            query,
            body: String::new(),
        }
    }

    pub fn post(path: &str, body: impl Into<String>) -> Self {
        Self {
            method: Method::Post,
            body: body.into(),
            ..Self::get(path)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

fn ok(status: u16, body: impl serde::Serialize) -> Response {
    Response {
        status,
        body: serde_json::to_value(body).expect("response serializes"),
    }
}

fn error(status: u16, code: &str, message: impl ToString) -> Response {
    Response {
        status,
        body: json!({ "error": code, "message": message.to_string() }),
    }
}

fn rejection_status(code: RejectCode) -> u16 {
    match code {
        RejectCode::CycleRejected | RejectCode::GateBlocked | RejectCode::NotACandidate => 409,
        RejectCode::NotFound => 404,
        RejectCode::InvalidPayload => 422,
    }
}

fn rejection_body(seq: u64, r: &Rejection) -> Value {
    json!({ "error": format!("{:?}", r.code), "message": r.message, "cycle": r.cycle, "seq": seq })
}

fn engine_error(e: EngineError) -> Response {
    match e {
        EngineError::Rejected { seq, rejection } => Response {
            status: rejection_status(rejection.code),
            body: rejection_body(seq, &rejection),
        },
        EngineError::InvalidGraph(report) => ok(422, json!({ "error": "ValidationFailed", "issues": report.issues })),
        EngineError::Config(e) => error(422, "InvalidConfig", e),
        EngineError::UnknownEdge(_) | EngineError::UnknownNode(_) | EngineError::ReviewNotFound(_) => {
            error(404, "NotFound", e)
        }
        EngineError::AlreadyResolved(_) => error(409, "AlreadyResolved", e),
        EngineError::NotACandidate | EngineError::Precondition(_) => error(409, "Conflict", e),
        EngineError::Extract(_) => error(502, "AgentFailure", e),
        EngineError::Io(_) | EngineError::Replay(_) => error(500, "Storage", e),
    }
}

fn dialogue_error(e: DialogueError) -> Response {
    let (status, name) = match &e {
        DialogueError::Engine(_) => {
            let DialogueError::Engine(inner) = e else { unreachable!() };
            return engine_error(inner);
        }
        DialogueError::UtteranceParse { .. } => (400, "UtteranceParse"),
        DialogueError::InvalidGraph(_) => (422, "ValidationFailed"),
        DialogueError::NoRoots => (422, "NoRoots"),
        DialogueError::PathMismatch => (422, "PathMismatch"),
        DialogueError::GraphNotPromoted => (409, "GraphNotPromoted"),
        DialogueError::SessionClosed(_) => (409, "SessionClosed"),
        DialogueError::NothingToAsk(_) => (409, "NothingToAsk"),
        DialogueError::SessionNotFinished => (409, "SessionNotFinished"),
        DialogueError::GraphMismatch { .. } => (409, "GraphMismatch"),
        DialogueError::UnknownStrategy(_) => (500, "UnknownStrategy"),
        DialogueError::Agent(_) => (502, "AgentFailure"),
    };
    error(status, name, e)
}

fn io_error(e: IoError) -> Response {
    match e {
        IoError::ValidationFailed(report) => ok(422, json!({ "error": "ValidationFailed", "issues": report.issues })),
        other => error(500, "Storage", other),
    }
}

fn parse_body<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T, Response> {
    let body = if body.trim().is_empty() { "{}" } else { body };
    serde_json::from_str(body).map_err(|e| error(400, "Malformed", e))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
enum CreateGraph {
    Merge {
        graph_id: String,
        chains: Vec<CandidateChain>,
        #[serde(default)]
        config: Option<EngineConfig>,
        #[serde(default)]
        rules: Option<RuleSet>,
    },
    Graft {
        graph_id: String,
        rules: RuleSet,
        #[serde(default)]
        config: Option<EngineConfig>,
    },
    Import {
        graph: CanvasGraph,
        #[serde(default)]
        config: Option<EngineConfig>,
        #[serde(default)]
        rules: Option<RuleSet>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewBody {
    verdict: ReviewVerdict,
    #[serde(default)]
    actor: Option<Actor>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnBody {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    outcome: Outcome,
    #[serde(default)]
    expert_flag: bool,
    #[serde(default)]
    visited_edge_ids: Option<Vec<EdgeId>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConsolidateBody {
    #[serde(default)]
    compress: bool,
}

struct GraphSlot {
    dir: PathBuf,
    engine: Mutex<Engine>,
    rules: RuleSet,
    /// Latest committed graph; readers never wait on the writer.
    snapshot: RwLock<Arc<CanvasGraph>>,
}

struct SessionSlot {
    graph_id: String,
    session: Session,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

pub struct Service {
    data_dir: PathBuf,
    graphs: RwLock<BTreeMap<String, Arc<GraphSlot>>>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<SessionSlot>>>>,
    next_session: AtomicU64,
    agent: Agent,
    registry: PromptRegistry,
    // serializes graph creation so two POSTs cannot claim one id
    create_lock: Mutex<()>,
}

impl Service {
    /// Opens (or creates) a data directory and reloads every graph in it.
    /// Graphs are rebuilt from their audit logs.
    pub fn open(data_dir: &Path) -> Result<Self, IoError> {
        let graphs_dir = data_dir.join("graphs");
        fs::create_dir_all(&graphs_dir)?;
        let mut graphs = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&graphs_dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join("graph.json").exists())
            .collect();
        entries.sort();
        for dir in entries {
            let slot = Self::load_slot(&dir)?;
            let id = slot.snapshot.read().expect("fresh lock").graph_id.clone();
            graphs.insert(id, Arc::new(slot));
        }
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            graphs: RwLock::new(graphs),
            sessions: Mutex::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
            agent: Agent::reference(),
            registry: PromptRegistry::default(),
            create_lock: Mutex::new(()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn load_slot(dir: &Path) -> Result<GraphSlot, IoError> {
        let (_, config) = io::load_graph(&dir.join("graph.json"))?;
        let log = AuditLog::open(&dir.join("audit.ndjson"))?;
        let reviews: ReviewQueue = match fs::read_to_string(dir.join("reviews.json")) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ReviewQueue::new(),
            Err(e) => return Err(e.into()),
        };
        let rules = match fs::read_to_string(dir.join("rules.json")) {
            Ok(text) => RuleSet::from_json(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RuleSet::new(),
            Err(e) => return Err(e.into()),
        };
        let engine = Engine::restore(config, log, reviews).map_err(|e| match e {
            EngineError::Replay(r) => IoError::Replay(r),
            other => IoError::Malformed(other.to_string()),
        })?;
        // the audit log wins over a snapshot left stale by a crash
        io::save_graph(engine.graph(), engine.config(), &dir.join("graph.json"))?;
        Ok(GraphSlot {
            dir: dir.to_path_buf(),
            snapshot: RwLock::new(Arc::new(engine.graph().clone())),
            engine: Mutex::new(engine),
            rules,
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<GraphSlot>, Response> {
        self.graphs
            .read()
            .expect("graph table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| error(404, "NotFound", format!("unknown graph `{id}`")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionSlot>>, Response> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| error(404, "NotFound", format!("unknown session `{id}`")))
    }

    /// Writes the snapshot and review queue after a mutation.
    fn persist(slot: &GraphSlot, engine: &Engine) -> Result<(), Response> {
        io::save_graph(engine.graph(), engine.config(), &slot.dir.join("graph.json")).map_err(io_error)?;
        let reviews = to_canonical(engine.reviews()).expect("reviews serialize");
        fs::write(slot.dir.join("reviews.json"), reviews).map_err(|e| error(500, "Storage", e))?;
        *slot.snapshot.write().expect("snapshot lock") = Arc::new(engine.graph().clone());
        Ok(())
    }

    pub fn dispatch(&self, req: &Request) -> Response {
        match self.route(req) {
            Ok(resp) | Err(resp) => resp,
        }
    }

    fn route(&self, req: &Request) -> Result<Response, Response> {
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        use Method::{Get, Post};
        match (req.method, segments.as_slice()) {
            (Get, ["graphs"]) => Ok(ok(200, self.graphs.read().expect("lock").keys().collect::<Vec<_>>())),
            (Post, ["graphs"]) => self.create_graph(&req.body),
            (Get, ["graphs", id]) => {
                let slot = self.slot(id)?;
                let snapshot = slot.snapshot.read().expect("snapshot lock").clone();
                Ok(ok(200, &*snapshot))
            }
            (Post, ["graphs", id, "edits"]) => self.edit(id, &req.body),
            (Get, ["graphs", id, "reviews"]) => {
                let slot = self.slot(id)?;
                let engine = lock(&slot.engine);
                Ok(ok(200, engine.reviews().items().collect::<Vec<_>>()))
            }
            (Get, ["graphs", id, "reviews", item]) => {
                let slot = self.slot(id)?;
                let engine = lock(&slot.engine);
                let item = engine
                    .reviews()
                    .get(item)
                    .ok_or_else(|| error(404, "NotFound", format!("unknown review item `{item}`")))?;
                Ok(ok(200, item))
            }
            (Post, ["graphs", id, "reviews", item]) => self.resolve(id, item, &req.body),
            (Post, ["graphs", id, "sessions"]) => self.open_session(id),
            (Get, ["graphs", id, "audit"]) => self.audit(id, req.query.as_deref()),
            (Post, ["graphs", id, "consolidate"]) => self.consolidate(id, &req.body),
            (Get, ["sessions", id]) => {
                let slot = self.session(id)?;
                let slot = lock(&slot);
                Ok(ok(
                    200,
                    json!({ "state": slot.session.state, "transcript": slot.session.transcript() }),
                ))
            }
            (Post, ["sessions", id, "turns"]) => self.turn(id, &req.body),
            (Post, ["sessions", id, "feedback"]) => self.feedback(id, &req.body),
            (
                _,
                ["graphs", _]
                | ["graphs", _, "edits" | "reviews" | "sessions" | "audit" | "consolidate"]
                | ["sessions", _]
                | ["sessions", _, "turns" | "feedback"],
            ) => {
                Err(error(405, "MethodNotAllowed", format!("{:?} {}", req.method, req.path)))
            }
            _ => Err(error(404, "NotFound", format!("no route for {}", req.path))),
        }
    }

    fn create_graph(&self, body: &str) -> Result<Response, Response> {
        let request: CreateGraph = parse_body(body)?;
        let (graph, config, rules, reviews) = match request {
            CreateGraph::Merge {
                graph_id,
                chains,
                config,
                rules,
            } => {
                let config = config.unwrap_or_default();
                if !valid_id(&graph_id) {
                    return Err(error(400, "Malformed", format!("invalid graph id `{graph_id}`")));
                }
                let (graph, report) = merge_with(&graph_id, &chains, &config, &HashedTokens::new(config.embedding_dim))
                    .map_err(|e| error(422, "MergeFailed", e))?;
                (graph, config, rules.unwrap_or_default(), report.review_items_created)
            }
            CreateGraph::Graft {
                graph_id,
                rules,
                config,
            } => {
                if !valid_id(&graph_id) {
                    return Err(error(400, "Malformed", format!("invalid graph id `{graph_id}`")));
                }
                let graph = graft_as(&graph_id, &rules).map_err(|e| error(422, "GraftFailed", e))?;
                (graph, config.unwrap_or_default(), rules, Vec::new())
            }
            CreateGraph::Import { graph, config, rules } => {
                (graph, config.unwrap_or_default(), rules.unwrap_or_default(), Vec::new())
            }
        };
        let id = graph.graph_id.clone();
        if !valid_id(&id) {
            return Err(error(400, "Malformed", format!("invalid graph id `{id}`")));
        }

        let _guard = lock(&self.create_lock);
        if self.graphs.read().expect("lock").contains_key(&id) {
            return Err(error(409, "AlreadyExists", format!("graph `{id}` already exists")));
        }
        let dir = self.data_dir.join("graphs").join(&id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| error(500, "Storage", e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| error(500, "Storage", e))?;
        let built = (|| {
            let log = AuditLog::open(&dir.join("audit.ndjson")).map_err(|e| error(500, "Storage", e))?;
            let mut engine = Engine::with_log(graph, config, log).map_err(engine_error)?;
            for item in reviews {
                engine.adopt_review(item);
            }
            fs::write(dir.join("rules.json"), serde_json::to_string_pretty(&rules).expect("rules serialize"))
                .map_err(|e| error(500, "Storage", e))?;
            Ok::<_, Response>(engine)
        })();
        let engine = match built {
            Ok(engine) => engine,
            Err(resp) => {
                let _ = fs::remove_dir_all(&dir);
                return Err(resp);
            }
        };
        let slot = GraphSlot {
            dir,
            snapshot: RwLock::new(Arc::new(engine.graph().clone())),
            engine: Mutex::new(engine),
            rules,
        };
        let body = {
            let engine = lock(&slot.engine);
            Self::persist(&slot, &engine)?;
            json!({
                "graph_id": id,
                "version": engine.version(),
                "stage": engine.graph().stage,
                "review_items": engine.reviews().items().collect::<Vec<_>>(),
            })
        };
        self.graphs.write().expect("lock").insert(id, Arc::new(slot));
        Ok(ok(201, body))
    }

    fn edit(&self, id: &str, body: &str) -> Result<Response, Response> {
        let edit: EditOp = parse_body(body)?;
        let slot = self.slot(id)?;
        let mut engine = lock(&slot.engine);
        let result = engine.apply_edit(edit).map_err(engine_error)?;
        match &result.result {
            AuditResult::Applied => {
                Self::persist(&slot, &engine)?;
                Ok(ok(200, result))
            }
            AuditResult::Rejected(r) => {
                let mut body = serde_json::to_value(&result).expect("serializes");
                body["error"] = json!(format!("{:?}", r.code));
                Err(Response {
                    status: rejection_status(r.code),
                    body,
                })
            }
        }
    }

    fn resolve(&self, id: &str, item: &str, body: &str) -> Result<Response, Response> {
        let body: ReviewBody = parse_body(body)?;
        let slot = self.slot(id)?;
        let mut engine = lock(&slot.engine);
        let actor = body.actor.unwrap_or_else(|| Actor::Expert("console".into()));
        let resolution = engine.resolve_review(item, body.verdict, actor);
        // a refused batch still wrote an audit record; the queue is unchanged
        let resolution = resolution.map_err(engine_error)?;
        Self::persist(&slot, &engine)?;
        Ok(ok(200, resolution))
    }

    fn open_session(&self, id: &str) -> Result<Response, Response> {
        let slot = self.slot(id)?;
        let snapshot = slot.snapshot.read().expect("snapshot lock").clone();
        let session_id = format!("s{:06}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let session = open_session(snapshot, &session_id).map_err(dialogue_error)?;
        let state = session.state.clone();
        lock(&self.sessions).insert(
            session_id.clone(),
            Arc::new(Mutex::new(SessionSlot {
                graph_id: id.to_string(),
                session,
            })),
        );
        Ok(ok(201, json!({ "session_id": session_id, "state": state })))
    }

    fn turn(&self, id: &str, body: &str) -> Result<Response, Response> {
        let body: TurnBody = parse_body(body)?;
        let session = self.session(id)?;
        let mut session = lock(&session);
        let slot = self.slot(&session.graph_id)?;
        let mut engine = lock(&slot.engine);
        let before = engine.version();
        let mv = session
            .session
            .step(
                &body.text,
                StepContext {
                    ruleset: &slot.rules,
                    agent: &self.agent,
                    registry: &self.registry,
                    engine: &mut engine,
                },
            )
            .map_err(dialogue_error)?;
        if engine.version() != before {
            Self::persist(&slot, &engine)?;
        }
        Ok(ok(200, json!({ "move": mv, "state": session.session.state })))
    }

    fn feedback(&self, id: &str, body: &str) -> Result<Response, Response> {
        let body: FeedbackBody = parse_body(body)?;
        let session = self.session(id)?;
        let session = lock(&session);
        let slot = self.slot(&session.graph_id)?;
        let mut engine = lock(&slot.engine);
        let feedback = Feedback {
            session_id: id.to_string(),
            visited_edge_ids: body
                .visited_edge_ids
                .unwrap_or_else(|| session.session.state.visited_path.clone()),
            outcome: body.outcome,
            expert_flag: body.expert_flag,
        };
        let result = session.session.integrate_feedback(&feedback, &mut engine);
        // partial application is still audited and must reach the snapshot
        Self::persist(&slot, &engine)?;
        Ok(ok(200, result.map_err(dialogue_error)?))
    }

    fn audit(&self, id: &str, query: Option<&str>) -> Result<Response, Response> {
        let mut from_seq = 1;
        for pair in query.unwrap_or("").split('&').filter(|p| !p.is_empty()) {
            match pair.split_once('=') {
                Some(("from_seq", v)) => {
                    from_seq = v
                        .parse()
                        .map_err(|_| error(400, "Malformed", format!("from_seq `{v}` is not a number")))?;
                }
                _ => return Err(error(400, "Malformed", format!("unknown query `{pair}`"))),
            }
        }
        let slot = self.slot(id)?;
        let engine = lock(&slot.engine);
        Ok(ok(200, engine.log().since(from_seq)))
    }

    fn consolidate(&self, id: &str, body: &str) -> Result<Response, Response> {
        let body: ConsolidateBody = parse_body(body)?;
        let slot = self.slot(id)?;
        let mut engine = lock(&slot.engine);
        let candidates = engine.detect_jump();
        let mut shortcuts = Vec::new();
        if body.compress {
            // candidates are vertex-disjoint, but each compression bumps the version
            while let Some(candidate) = engine.detect_jump().into_iter().next() {
                shortcuts.push(engine.compress_subpath(&candidate).map_err(engine_error)?);
            }
        }
        let prune_items = engine.detect_prune();
        Self::persist(&slot, &engine)?;
        Ok(ok(
            200,
            json!({
                "jump_candidates": candidates,
                "shortcuts": shortcuts,
                "prune_items": prune_items,
                "version": engine.version(),
            }),
        ))
    }
}
