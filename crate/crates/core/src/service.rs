//! In-process session manager behind the HTTP API.
//!
//! Each session has a single writer (a mutex around [`Session`]) and a
//! published snapshot behind an `Arc` that is swapped after every mutation,
//! so readers never block on inference and never see a half-applied write.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dialogue::{Dialogue, QuestionRecord};
use crate::error::Error;
use crate::harness::{metrics_csv_string, EngineConfig, Method, Scenario, Session, SessionSnapshot, StepMetrics};

/// Per-session options accepted by `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    pub method: Method,
    pub seed: u64,
    /// Overrides the server's engine defaults.
    pub engine: Option<EngineConfig>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSessionRequest {
    pub scenario: String,
    #[serde(default)]
    pub config: SessionOptions,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnswerRequest {
    pub text: String,
    pub responding_user: String,
}

/// A snapshot together with the session's identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub scenario_name: String,
    pub created_at: DateTime<Utc>,
    pub state: SessionSnapshot,
}

/// Error payload `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            detail: None,
            status,
        }
    }

    pub fn scenario_not_found(name: &str) -> Self {
        Self::new(404, "scenario_not_found", format!("no scenario named `{name}`"))
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(404, "session_not_found", format!("no session `{id}`"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "invalid_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Conflict(m) => ApiError::new(409, "conflict", m),
            Error::NoCandidates => ApiError::new(409, "session_complete", "every candidate has been answered"),
            Error::Interpretation { raw, reason } => ApiError {
                detail: Some(json!({ "raw": raw, "reason": reason })),
                ..ApiError::new(422, "interpretation_error", "the answer could not be interpreted")
            },
            Error::Input(_) | Error::Hyperparameters(_) | Error::Scenario(_) | Error::Vocabulary(_) => {
                ApiError::new(400, "invalid_request", e.to_string())
            }
            Error::Backend { message, raw } => ApiError {
                detail: raw.map(serde_json::Value::String),
                ..ApiError::new(502, "backend_error", message)
            },
            other => ApiError::new(500, "internal_error", other.to_string()),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

/// Builds the dialogue backend for a scenario.
pub type DialogueFactory = Arc<dyn Fn(&Scenario) -> Arc<dyn Dialogue> + Send + Sync>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Ask,
    Answer { text: String, responding_user: String },
}

/// Replay log written on every mutation when persistence is enabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PersistedSession {
    session_id: String,
    scenario_name: String,
    created_at: DateTime<Utc>,
    options: SessionOptions,
    log: Vec<LogEntry>,
}

struct Writer {
    session: Session,
    log: Vec<LogEntry>,
}

struct Entry {
    session_id: String,
    scenario_name: String,
    created_at: DateTime<Utc>,
    options: SessionOptions,
    dialogue: Arc<dyn Dialogue>,
    writer: Mutex<Writer>,
    published: RwLock<Arc<SessionView>>,
}

pub struct SessionManager {
    scenarios: BTreeMap<String, Scenario>,
    dialogue: DialogueFactory,
    default_engine: EngineConfig,
    persist_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

impl SessionManager {
    pub fn new(scenarios: BTreeMap<String, Scenario>, dialogue: DialogueFactory, default_engine: EngineConfig) -> Self {
        Self {
            scenarios,
            dialogue,
            default_engine,
            persist_dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Manager over the shipped scenarios with the mock backend.
    pub fn with_builtin_mock(default_engine: EngineConfig) -> Self {
        let scenarios = Scenario::builtin_names()
            .into_iter()
            .filter_map(|n| Scenario::builtin(n).map(|s| (n.to_string(), s)))
            .collect();
        let factory: DialogueFactory = Arc::new(|s: &Scenario| Arc::new(s.mock_dialogue(&[])) as Arc<dyn Dialogue>);
        Self::new(scenarios, factory, default_engine)
    }

    /// Persists a replay log per session under `dir`.
    pub fn with_persistence(mut self, dir: impl Into<PathBuf>) -> Self {
        self.persist_dir = Some(dir.into());
        self
    }

    pub fn scenario_names(&self) -> Vec<String> {
        self.scenarios.keys().cloned().collect()
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    /// Runs exploration and classification and registers the session.
    pub fn create_session(&self, scenario_name: &str, options: SessionOptions) -> ApiResult<SessionView> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let view = self.build(id, scenario_name, options, Utc::now(), Vec::new())?;
        Ok(view)
    }

    fn build(&self, id: String, scenario_name: &str, options: SessionOptions, created_at: DateTime<Utc>, log: Vec<LogEntry>) -> ApiResult<SessionView> {
        let scenario = self
            .scenarios
            .get(scenario_name)
            .ok_or_else(|| ApiError::scenario_not_found(scenario_name))?;
        if options.method == Method::LlmOnly {
            return Err(ApiError::bad_request("llm-only cannot drive an interactive session"));
        }
        let engine = options.engine.unwrap_or(self.default_engine);
        let dialogue = (self.dialogue)(scenario);
        let mut session = Session::start(scenario, &engine, options.method, 0, options.seed, dialogue.as_ref())?;
        for entry in &log {
            match entry {
                LogEntry::Ask => {
                    session.ask(dialogue.as_ref())?;
                }
                LogEntry::Answer { text, responding_user } => {
                    session.answer(dialogue.as_ref(), text, responding_user)?;
                }
            }
        }
        let view = Arc::new(SessionView {
            session_id: id.clone(),
            scenario_name: scenario_name.to_string(),
            created_at,
            state: session.snapshot()?,
        });
        let entry = Arc::new(Entry {
            session_id: id.clone(),
            scenario_name: scenario_name.to_string(),
            created_at,
            options,
            dialogue,
            writer: Mutex::new(Writer { session, log }),
            published: RwLock::new(view.clone()),
        });
        self.persist(&entry, &entry.writer.lock().expect("writer poisoned").log);
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, entry);
        Ok((*view).clone())
    }

    /// Latest published snapshot; never blocks on a running update.
    pub fn get_state(&self, id: &str) -> ApiResult<Arc<SessionView>> {
        let entry = self.entry(id)?;
        let view = entry.published.read().expect("snapshot poisoned").clone();
        Ok(view)
    }

    pub fn ask_next(&self, id: &str) -> ApiResult<QuestionRecord> {
        let entry = self.entry(id)?;
        let mut w = entry.writer.lock().expect("writer poisoned");
        let q = w.session.ask(entry.dialogue.as_ref())?;
        w.log.push(LogEntry::Ask);
        self.publish(&entry, &w)?;
        Ok(q)
    }

    pub fn submit_answer(&self, id: &str, text: &str, responding_user: &str) -> ApiResult<StepMetrics> {
        let entry = self.entry(id)?;
        let mut w = entry.writer.lock().expect("writer poisoned");
        let m = w.session.answer(entry.dialogue.as_ref(), text, responding_user)?;
        w.log.push(LogEntry::Answer {
            text: text.to_string(),
            responding_user: responding_user.to_string(),
        });
        self.publish(&entry, &w)?;
        Ok(m)
    }

    pub fn metrics_csv(&self, id: &str) -> ApiResult<String> {
        let view = self.get_state(id)?;
        Ok(metrics_csv_string(&view.state.history)?)
    }

    fn publish(&self, entry: &Entry, w: &Writer) -> ApiResult<()> {
        let view = Arc::new(SessionView {
            session_id: entry.session_id.clone(),
            scenario_name: entry.scenario_name.clone(),
            created_at: entry.created_at,
            state: w.session.snapshot()?,
        });
        *entry.published.write().expect("snapshot poisoned") = view;
        self.persist(entry, &w.log);
        Ok(())
    }

    fn persist(&self, entry: &Entry, log: &[LogEntry]) {
        let Some(dir) = &self.persist_dir else { return };
        let record = PersistedSession {
            session_id: entry.session_id.clone(),
            scenario_name: entry.scenario_name.clone(),
            created_at: entry.created_at,
            options: entry.options.clone(),
            log: log.to_vec(),
        };
        let result = std::fs::create_dir_all(dir).and_then(|_| {
            let tmp = dir.join(format!("{}.json.tmp", entry.session_id));
            std::fs::write(&tmp, serde_json::to_vec_pretty(&record)?)?;
            std::fs::rename(&tmp, dir.join(format!("{}.json", entry.session_id)))
        });
        if let Err(e) = result {
            tracing::warn!(session = %entry.session_id, error = %e, "could not persist session");
        }
    }

    /// Rebuilds sessions from the replay logs in the persistence directory.
    /// Returns how many sessions were restored.
    pub fn restore(&self) -> std::io::Result<usize> {
        let Some(dir) = self.persist_dir.clone() else { return Ok(0) };
        if !dir.exists() {
            return Ok(0);
        }
        let mut restored = 0;
        for path in sorted_json_files(&dir)? {
            let record: PersistedSession = match std::fs::read(&path).map(|b| serde_json::from_slice(&b)) {
                Ok(Ok(r)) => r,
                _ => {
                    tracing::warn!(path = %path.display(), "skipping unreadable session file");
                    continue;
                }
            };
            match self.build(record.session_id, &record.scenario_name, record.options, record.created_at, record.log) {
                Ok(_) => restored += 1,
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "could not replay session"),
            }
        }
        Ok(restored)
    }
}

fn sorted_json_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}
