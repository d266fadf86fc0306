//! HTTP service for the human study.
//!
//! Participants never see scene ids. Every study scene is addressed by an
//! opaque reference (`s-` plus 16 hex digits of a hash of the id), so neither
//! URLs nor exported ratings reveal the group a scene came from. `analyze`
//! maps references back through [`scene_ref`].
//!
//! | method | path                        | result                                   |
//! |--------|-----------------------------|------------------------------------------|
//! | POST   | `/session`                  | `{session_id, total}`                    |
//! | GET    | `/session/{id}/next`        | `{scene_ref, index, total}` or `{done}`  |
//! | POST   | `/session/{id}/rating`      | `{accepted, index}`                      |
//! | GET    | `/image/{scene_ref}`        | PNG                                      |
//! | GET    | `/export`                   | every rating as JSON lines               |
//! | GET    | anything else               | static file from the UI directory        |
//!
//! Sessions and ratings are appended to `sessions.jsonl` and `ratings.jsonl`
//! in the state directory and synced before the response is sent, so a
//! restarted server resumes every session where it stopped.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use topple_core::eval::RatingRecord;

use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::Dataset;

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const RATINGS_FILE: &str = "ratings.jsonl";
const MAX_BODY: u64 = 16 * 1024;

/// Opaque reference for a study scene.
pub fn scene_ref(scene_id: &str) -> String {
    let h = formats::sha256_hex(format!("topple-study:{scene_id}").as_bytes());
    format!("s-{}", &h[..16])
}

/// Presentation order for one session: the study set sorted by a hash of
/// the session id and the scene reference.
pub fn session_order(session_id: &str, refs: &[String]) -> Vec<String> {
    let mut keyed: Vec<(String, &String)> = refs
        .iter()
        .map(|r| (formats::sha256_hex(format!("{session_id}/{r}").as_bytes()), r))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, r)| r.clone()).collect()
}

#[derive(Serialize, Deserialize)]
struct SessionLine {
    session_id: String,
    created_ms: u64,
}

#[derive(Deserialize)]
struct RatingBody {
    scene_id: String,
    rating: i64,
    response_ms: u64,
}

struct Session {
    order: Vec<String>,
    answered: usize,
}

struct State {
    sessions: BTreeMap<String, Session>,
    sessions_log: File,
    ratings_log: File,
}

/// An HTTP response before it is handed to the transport.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, value: serde_json::Value) -> Reply {
        let mut body = serde_json::to_vec(&value).expect("serializing a json value");
        body.push(b'\n');
        Reply {
            status,
            content_type: "application/json",
            body,
        }
    }

    fn error(status: u16, error: &str, reason: impl Into<String>) -> Reply {
        Reply::json(status, json!({"error": error, "reason": reason.into()}))
    }

    fn not_found() -> Reply {
        Reply::error(404, "not_found", "no such resource")
    }
}

pub struct StudyService {
    dataset_root: PathBuf,
    state_dir: PathBuf,
    static_dir: Option<PathBuf>,
    /// Study references in study-set order, with their image paths.
    refs: Vec<String>,
    images: BTreeMap<String, PathBuf>,
    missing_study: Option<String>,
    state: Mutex<State>,
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Replay a log, cutting off a torn final line left by a crash. Every line
/// before it was synced before its request was acknowledged.
fn recover_log<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = formats::read_bytes(path)?;
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if end < bytes.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.set_len(end as u64).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))?;
    }
    formats::parse_jsonl(path, &bytes[..end])
}

fn append_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value).expect("serializing plain data");
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

impl StudyService {
    /// Load the dataset's study set and replay any saved sessions.
    pub fn open(dataset: &Dataset, state_dir: &Path, static_dir: Option<&Path>) -> Result<Self> {
        std::fs::create_dir_all(state_dir).map_err(|e| Error::io(state_dir, e))?;
        let mut refs = Vec::new();
        let mut images = BTreeMap::new();
        let missing_study = match &dataset.study {
            None => Some("the dataset has no study set (it needs all 16 groups)".to_string()),
            Some(s) if s.is_empty() => Some("the study set is empty".to_string()),
            Some(study) => {
                for id in &study.scene_ids {
                    let rec = dataset.record(id).ok_or_else(|| {
                        Error::format(dataset.root.join(crate::pipeline::STUDY), format!("unknown scene {id}"))
                    })?;
                    let r = scene_ref(id);
                    images.insert(r.clone(), dataset.root.join(&rec.image_path));
                    refs.push(r);
                }
                None
            }
        };

        let sessions_path = state_dir.join(SESSIONS_FILE);
        let ratings_path = state_dir.join(RATINGS_FILE);
        let mut sessions = BTreeMap::new();
        for s in recover_log::<SessionLine>(&sessions_path)? {
            sessions.insert(
                s.session_id.clone(),
                Session {
                    order: session_order(&s.session_id, &refs),
                    answered: 0,
                },
            );
        }
        for r in recover_log::<RatingRecord>(&ratings_path)? {
            if let Some(s) = sessions.get_mut(&r.session_id) {
                s.answered += 1;
            }
        }
        let state = State {
            sessions,
            sessions_log: open_append(&sessions_path)?,
            ratings_log: open_append(&ratings_path)?,
        };
        Ok(StudyService {
            dataset_root: dataset.root.clone(),
            state_dir: state_dir.into(),
            static_dir: static_dir.map(Into::into),
            refs,
            images,
            missing_study,
            state: Mutex::new(state),
        })
    }

    pub fn dataset_root(&self) -> &Path {
        &self.dataset_root
    }

    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> Reply {
        let path = url.split(['?', '#']).next().unwrap_or("");
        let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        let result = match (method, parts.as_slice()) {
            ("POST", ["session"]) => self.new_session(),
            ("GET", ["session", id, "next"]) => self.next(id),
            ("POST", ["session", id, "rating"]) => self.rate(id, body),
            ("GET", ["image", r]) => self.image(r),
            ("GET", ["export"]) => self.export(),
            ("GET", _) => Ok(self.static_file(path)),
            _ => Ok(Reply::error(405, "method_not_allowed", format!("{method} {path}"))),
        };
        result.unwrap_or_else(|e| Reply::error(500, "internal", e.to_string()))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn new_session(&self) -> Result<Reply> {
        if let Some(reason) = &self.missing_study {
            return Ok(Reply::error(503, "study_unavailable", reason.clone()));
        }
        let mut state = self.lock();
        let id = loop {
            let id = fresh_session_id();
            if !state.sessions.contains_key(&id) {
                break id;
            }
        };
        let path = self.state_dir.join(SESSIONS_FILE);
        let line = SessionLine {
            session_id: id.clone(),
            created_ms: now_ms(),
        };
        append_line(&mut state.sessions_log, &path, &line)?;
        state.sessions.insert(
            id.clone(),
            Session {
                order: session_order(&id, &self.refs),
                answered: 0,
            },
        );
        Ok(Reply::json(200, json!({"session_id": id, "total": self.refs.len()})))
    }

    fn next(&self, id: &str) -> Result<Reply> {
        let state = self.lock();
        let Some(s) = state.sessions.get(id) else {
            return Ok(Reply::error(404, "unknown_session", id));
        };
        let total = s.order.len();
        Ok(match s.order.get(s.answered) {
            Some(r) => Reply::json(200, json!({"scene_ref": r, "index": s.answered, "total": total})),
            None => Reply::json(200, json!({"done": true, "total": total})),
        })
    }

    fn rate(&self, id: &str, body: &[u8]) -> Result<Reply> {
        let mut state = self.lock();
        let Some(s) = state.sessions.get(id) else {
            return Ok(Reply::error(404, "unknown_session", id));
        };
        let body: RatingBody = match serde_json::from_slice(body) {
            Ok(b) => b,
            Err(e) => return Ok(Reply::error(400, "bad_request", e.to_string())),
        };
        let Some(expected) = s.order.get(s.answered) else {
            return Ok(Reply::error(409, "session_complete", "every scene has been rated"));
        };
        if body.scene_id != *expected {
            return Ok(Reply::error(
                409,
                "out_of_order",
                format!("expected a rating for {expected}"),
            ));
        }
        if !(1..=5).contains(&body.rating) {
            return Ok(Reply::error(422, "invalid_rating", "rating must be an integer from 1 to 5"));
        }
        let record = RatingRecord {
            session_id: id.to_string(),
            scene_id: body.scene_id,
            rating: body.rating as u8,
            response_ms: body.response_ms,
        };
        let path = self.state_dir.join(RATINGS_FILE);
        append_line(&mut state.ratings_log, &path, &record)?;
        let s = state.sessions.get_mut(id).expect("checked above");
        s.answered += 1;
        Ok(Reply::json(200, json!({"accepted": true, "index": s.answered})))
    }

    fn image(&self, r: &str) -> Result<Reply> {
        let Some(path) = self.images.get(r) else {
            return Ok(Reply::not_found());
        };
        Ok(Reply {
            status: 200,
            content_type: "image/png",
            body: formats::read_bytes(path)?,
        })
    }

    fn export(&self) -> Result<Reply> {
        // Hold the lock so the export never contains a torn line.
        let _state = self.lock();
        let path = self.state_dir.join(RATINGS_FILE);
        Ok(Reply {
            status: 200,
            content_type: "application/x-ndjson",
            body: formats::read_bytes(&path)?,
        })
    }

    fn static_file(&self, path: &str) -> Reply {
        let Some(root) = &self.static_dir else {
            return Reply::not_found();
        };
        let rel = path.trim_start_matches('/');
        let rel = if rel.is_empty() || rel.ends_with('/') {
            format!("{rel}index.html")
        } else {
            rel.to_string()
        };
        let rel = Path::new(&rel);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Reply::not_found();
        }
        let full = root.join(rel);
        match (full.canonicalize(), root.canonicalize()) {
            (Ok(f), Ok(r)) if f.starts_with(&r) && f.is_file() => match std::fs::read(&f) {
                Ok(body) => Reply {
                    status: 200,
                    content_type: content_type(&f),
                    body,
                },
                Err(_) => Reply::not_found(),
            },
            _ => Reply::not_found(),
        }
    }
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn fresh_session_id() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let seed = format!("{nanos}/{}/{n}", std::process::id());
    formats::sha256_hex(seed.as_bytes())[..20].to_string()
}

/// A bound server. Dropping it does not stop the workers; call
/// [`Server::shutdown`].
pub struct Server {
    http: Arc<tiny_http::Server>,
    workers: Vec<std::thread::JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: &str, service: Arc<StudyService>, workers: usize) -> Result<Server> {
        let http = tiny_http::Server::http(addr).map_err(|e| {
            Error::io(
                PathBuf::from(addr),
                std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()),
            )
        })?;
        let http = Arc::new(http);
        let workers = (0..workers.max(1))
            .map(|_| {
                let (http, service) = (http.clone(), service.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = http.recv() {
                        respond(&service, req);
                    }
                })
            })
            .collect();
        Ok(Server { http, workers })
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        self.http.server_addr().to_ip()
    }

    /// Block until the workers exit.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.http.unblock();
        }
        self.join();
    }
}

fn respond(service: &StudyService, mut req: tiny_http::Request) {
    let mut body = Vec::new();
    let reply = if req.body_length().is_some_and(|n| n as u64 > MAX_BODY) {
        Reply::error(413, "too_large", "request body too large")
    } else if req
        .as_reader()
        .take(MAX_BODY + 1)
        .read_to_end(&mut body)
        .is_err()
    {
        Reply::error(400, "bad_request", "could not read the body")
    } else if body.len() as u64 > MAX_BODY {
        Reply::error(413, "too_large", "request body too large")
    } else {
        service.handle(req.method().as_str(), req.url(), &body)
    };
    let header = tiny_http::Header::from_bytes("Content-Type", reply.content_type)
        .expect("static header");
    let resp = tiny_http::Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    let _ = req.respond(resp);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refs_are_stable_and_opaque() {
        let r = scene_ref("4B-2D-Uni-000001");
        assert_eq!(r, scene_ref("4B-2D-Uni-000001"));
        assert_eq!(r.len(), 18);
        assert!(r.starts_with("s-"));
        assert!(!r.contains("4B"));
        assert_ne!(r, scene_ref("4B-2D-Uni-000002"));
    }

    #[test]
    fn session_order_is_a_permutation() {
        let refs: Vec<String> = (0..20).map(|i| format!("s-{i}")).collect();
        let a = session_order("alpha", &refs);
        let b = session_order("beta", &refs);
        assert_eq!(a, session_order("alpha", &refs));
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        let mut want = refs.clone();
        want.sort();
        assert_eq!(sorted, want);
    }
}
