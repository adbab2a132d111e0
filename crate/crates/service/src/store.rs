//! File-backed session and response state, independent of HTTP.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqdr::testbench::{
    aggregate, check_confidence, load_plan, parse_responses, response_to_json, Choice, Question,
    TestPlan, TestbenchError, TrialResponse,
};

use crate::ServiceError;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// One listener's run through a plan. The cursor is the next unanswered
/// trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub plan_id: String,
    pub listener_id: String,
    pub cursor: usize,
    pub created_at: u64,
}

/// What the listener's client sees for one trial. Stimuli appear only as
/// opaque tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub trial_index: usize,
    pub total: usize,
    pub question: Question,
    pub question_text: String,
    pub slot_a: String,
    pub slot_b: String,
    pub reference_x: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub trial_index: usize,
    pub cursor: usize,
    /// True when this was a repeat of an already recorded response.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanInfo {
    pub plan_id: String,
    pub design: String,
    pub total: usize,
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    plan_id: String,
    listener_id: String,
    created_at: u64,
}

struct PlanLog {
    sessions: HashMap<String, Session>,
    responses: Vec<TrialResponse>,
    by_key: HashMap<(String, usize), usize>,
    sessions_file: File,
    responses_file: File,
}

struct PlanState {
    plan: TestPlan,
    token_of: HashMap<String, String>,
    log: Mutex<PlanLog>,
}

/// All plans found in a directory, with their sessions and response logs.
pub struct Store {
    plan_dir: PathBuf,
    audio_root: PathBuf,
    plans: HashMap<String, Arc<PlanState>>,
    stimuli: HashMap<String, PathBuf>,
    session_plan: RwLock<HashMap<String, String>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn stimulus_token(plan: &TestPlan, stim_id: &str, path: &Path) -> String {
    let mut h = Sha256::new();
    for part in [plan.plan_id.as_bytes(), &plan.seed.to_le_bytes(), stim_id.as_bytes(), path.to_string_lossy().as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(&h.finalize()[..16])
}

/// Opens a JSONL log for appending, first cutting any torn final line.
fn open_log(path: &Path) -> Result<(File, String)> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        file.set_len(keep as u64)?;
        file.seek(SeekFrom::End(0))?;
    }
    Ok((file, text))
}

fn append_line(file: &mut File, line: &str) -> Result<()> {
    file.write_all(format!("{line}\n").as_bytes())?;
    file.sync_data()?;
    Ok(())
}

impl Store {
    /// Loads every `*.plan` file in `plan_dir`. Relative stimulus paths are
    /// resolved against `audio_root`, or `plan_dir` when none is given.
    pub fn open(plan_dir: impl Into<PathBuf>, audio_root: Option<PathBuf>) -> Result<Self> {
        let plan_dir = plan_dir.into();
        let audio_root = audio_root.unwrap_or_else(|| plan_dir.clone());
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&plan_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "plan"))
            .collect();
        entries.sort();

        let mut store = Store {
            plan_dir,
            audio_root,
            plans: HashMap::new(),
            stimuli: HashMap::new(),
            session_plan: RwLock::new(HashMap::new()),
        };
        for path in entries {
            let plan = load_plan(&path)?;
            store.add_plan(plan)?;
        }
        Ok(store)
    }

    fn add_plan(&mut self, plan: TestPlan) -> Result<()> {
        if self.plans.contains_key(&plan.plan_id) {
            return Err(ServiceError::BadRequest(format!("plan {} defined twice", plan.plan_id)));
        }
        let (sessions_file, sessions_text) = open_log(&self.plan_dir.join(format!("{}.sessions.jsonl", plan.plan_id)))?;
        let (responses_file, responses_text) = open_log(&self.plan_dir.join(format!("{}.responses.jsonl", plan.plan_id)))?;

        let mut sessions = HashMap::new();
        for (i, line) in sessions_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: SessionRecord = serde_json::from_str(line).map_err(|e| {
                ServiceError::Testbench(TestbenchError::BadResponseLog { line: i + 1, message: e.to_string() })
            })?;
            sessions.insert(
                r.session_id.clone(),
                Session { session_id: r.session_id, plan_id: r.plan_id, listener_id: r.listener_id, cursor: 0, created_at: r.created_at },
            );
        }
        let responses = parse_responses(&responses_text)?;
        let mut by_key = HashMap::new();
        for (i, r) in responses.iter().enumerate() {
            by_key.insert((r.session_id.clone(), r.trial_index), i);
            if let Some(s) = sessions.get_mut(&r.session_id) {
                s.cursor = s.cursor.max(r.trial_index + 1);
            }
        }

        let mut token_of = HashMap::new();
        for s in &plan.stimuli {
            let token = stimulus_token(&plan, &s.stim_id, &s.path);
            let path = if s.path.is_absolute() { s.path.clone() } else { self.audio_root.join(&s.path) };
            self.stimuli.insert(token.clone(), path);
            token_of.insert(s.stim_id.clone(), token);
        }
        {
            let mut index = self.session_plan.write().unwrap();
            for id in sessions.keys() {
                index.insert(id.clone(), plan.plan_id.clone());
            }
        }
        let state = PlanState {
            log: Mutex::new(PlanLog { sessions, responses, by_key, sessions_file, responses_file }),
            token_of,
            plan,
        };
        self.plans.insert(state.plan.plan_id.clone(), Arc::new(state));
        Ok(())
    }

    pub fn plan_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.plans.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn plan(&self, plan_id: &str) -> Result<&Arc<PlanState>> {
        self.plans.get(plan_id).ok_or_else(|| ServiceError::UnknownPlan(plan_id.to_string()))
    }

    fn plan_of_session(&self, session_id: &str) -> Result<&Arc<PlanState>> {
        let plan_id = self
            .session_plan
            .read()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        self.plan(&plan_id)
    }

    pub fn plan_info(&self, plan_id: &str) -> Result<PlanInfo> {
        let p = &self.plan(plan_id)?.plan;
        Ok(PlanInfo {
            plan_id: p.plan_id.clone(),
            design: p.design.to_string(),
            total: p.trials.len(),
        })
    }

    pub fn create_session(&self, plan_id: &str, listener_id: &str) -> Result<Session> {
        let state = self.plan(plan_id)?;
        if listener_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("listener_id must not be empty".into()));
        }
        let session = Session {
            session_id: uuid::Uuid::new_v4().to_string(),
            plan_id: plan_id.to_string(),
            listener_id: listener_id.to_string(),
            cursor: 0,
            created_at: now_ms(),
        };
        let record = SessionRecord {
            session_id: session.session_id.clone(),
            plan_id: session.plan_id.clone(),
            listener_id: session.listener_id.clone(),
            created_at: session.created_at,
        };
        let mut log = state.log.lock().unwrap();
        append_line(&mut log.sessions_file, &serde_json::to_string(&record).expect("record serializes"))?;
        log.sessions.insert(session.session_id.clone(), session.clone());
        self.session_plan
            .write()
            .unwrap()
            .insert(session.session_id.clone(), plan_id.to_string());
        Ok(session)
    }

    pub fn session(&self, session_id: &str) -> Result<Session> {
        let state = self.plan_of_session(session_id)?;
        let log = state.log.lock().unwrap();
        Ok(log.sessions[session_id].clone())
    }

    pub fn get_trial(&self, session_id: &str, n: usize) -> Result<TrialPayload> {
        let state = self.plan_of_session(session_id)?;
        let cursor = state.log.lock().unwrap().sessions[session_id].cursor;
        let total = state.plan.trials.len();
        if n >= total {
            return Err(ServiceError::PlanComplete { total });
        }
        if n != cursor {
            return Err(ServiceError::OutOfOrder { expected: cursor, got: n });
        }
        let t = &state.plan.trials[n];
        let token = |id: &String| state.token_of[id].clone();
        Ok(TrialPayload {
            trial_index: n,
            total,
            question: t.question,
            question_text: t.question.text().to_string(),
            slot_a: token(&t.slot_a),
            slot_b: token(&t.slot_b),
            reference_x: t.reference_x.as_ref().map(token),
        })
    }

    /// Records a response; durable on disk before returning.
    pub fn submit_response(&self, session_id: &str, n: usize, choice: Choice, confidence: i64) -> Result<Ack> {
        let state = self.plan_of_session(session_id)?;
        let confidence = check_confidence(confidence)?;
        let total = state.plan.trials.len();
        let mut log = state.log.lock().unwrap();
        let cursor = log.sessions[session_id].cursor;
        if n < cursor {
            let i = log.by_key.get(&(session_id.to_string(), n)).copied();
            return match i.map(|i| &log.responses[i]) {
                Some(prev) if prev.choice == choice && prev.confidence == confidence => Ok(Ack {
                    session_id: session_id.to_string(),
                    trial_index: n,
                    cursor,
                    duplicate: true,
                }),
                _ => Err(ServiceError::Testbench(TestbenchError::DuplicateResponse {
                    session_id: session_id.to_string(),
                    trial_index: n,
                })),
            };
        }
        if n >= total {
            return Err(ServiceError::PlanComplete { total });
        }
        if n != cursor {
            return Err(ServiceError::OutOfOrder { expected: cursor, got: n });
        }
        let response = TrialResponse {
            session_id: session_id.to_string(),
            trial_index: n,
            choice,
            confidence,
            timestamp: now_ms(),
        };
        append_line(&mut log.responses_file, &response_to_json(&response))?;
        let idx = log.responses.len();
        log.responses.push(response);
        log.by_key.insert((session_id.to_string(), n), idx);
        let session = log.sessions.get_mut(session_id).expect("session indexed");
        session.cursor = n + 1;
        Ok(Ack {
            session_id: session_id.to_string(),
            trial_index: n,
            cursor: n + 1,
            duplicate: false,
        })
    }

    fn snapshot(&self, plan_id: &str) -> Result<(&Arc<PlanState>, Vec<TrialResponse>)> {
        let state = self.plan(plan_id)?;
        let responses = state.log.lock().unwrap().responses.clone();
        Ok((state, responses))
    }

    pub fn results_csv(&self, plan_id: &str) -> Result<String> {
        let (state, responses) = self.snapshot(plan_id)?;
        Ok(aggregate(&responses, &state.plan)?.to_csv())
    }

    pub fn responses_jsonl(&self, plan_id: &str) -> Result<String> {
        let (_, responses) = self.snapshot(plan_id)?;
        Ok(responses.iter().map(|r| response_to_json(r) + "\n").collect())
    }

    /// Path of the audio behind a stimulus token.
    pub fn stimulus_path(&self, token: &str) -> Result<&Path> {
        self.stimuli
            .get(token)
            .map(PathBuf::as_path)
            .ok_or_else(|| ServiceError::UnknownStimulus(token.to_string()))
    }
}
