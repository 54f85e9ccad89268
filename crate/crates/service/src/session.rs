//! Flat-file session persistence.
//!
//! Each session lives in `<root>/sessions/<id>/`: the case in `case.json`
//! (written once), the mutable state in `state.json`, exports in `exports/`.
//! Plan sets are only ever appended.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use brachynav_core::case::{load_case, save_case, PatientCase};
use brachynav_core::optimizer::{Plan, PlanId, PlanSet};
use brachynav_core::SCHEMA_VERSION;

use crate::error::{ErrorCode, Result, ServiceError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub id: String,
    pub case_id: String,
    /// Run history, oldest first.
    pub plan_sets: Vec<PlanSet>,
    pub favorites: BTreeSet<PlanId>,
    pub selected_plan: Option<PlanId>,
}

impl SessionState {
    pub fn new(id: &str, case: &PatientCase) -> Self {
        SessionState {
            schema_version: SCHEMA_VERSION,
            id: id.to_string(),
            case_id: case.id.clone(),
            plan_sets: Vec::new(),
            favorites: BTreeSet::new(),
            selected_plan: None,
        }
    }

    pub fn plan(&self, id: PlanId) -> Option<&Plan> {
        self.plan_set(id.run).and_then(|s| s.plan(id))
    }

    pub fn require_plan(&self, id: PlanId) -> Result<&Plan> {
        self.plan(id)
            .ok_or_else(|| ServiceError::not_found(format!("plan {id} not found in session {}", self.id)))
    }

    pub fn plan_set(&self, run: u32) -> Option<&PlanSet> {
        self.plan_sets.iter().find(|s| s.run_id == run)
    }

    pub fn require_plan_set(&self, run: u32) -> Result<&PlanSet> {
        self.plan_set(run)
            .ok_or_else(|| ServiceError::not_found(format!("plan set {run} not found in session {}", self.id)))
    }

    pub fn latest_plan_set(&self) -> Option<&PlanSet> {
        self.plan_sets.last()
    }

    /// Next unused run id.
    pub fn next_run_id(&self) -> u32 {
        self.plan_sets.iter().map(|s| s.run_id).max().map_or(1, |r| r + 1)
    }

    /// Appends a plan set and selects its default plan when nothing is selected.
    pub fn add_plan_set(&mut self, set: PlanSet) -> Result<()> {
        if self.plan_set(set.run_id).is_some() {
            return Err(ServiceError::new(
                ErrorCode::Conflict,
                format!("plan set {} already exists", set.run_id),
            ));
        }
        if self.selected_plan.is_none() && !set.plans.is_empty() {
            self.selected_plan = Some(set.default_plan()?);
        }
        self.plan_sets.push(set);
        Ok(())
    }

    /// Flips the favorite flag; returns the new value.
    pub fn toggle_favorite(&mut self, id: PlanId) -> Result<bool> {
        self.require_plan(id)?;
        if self.favorites.remove(&id) {
            Ok(false)
        } else {
            self.favorites.insert(id);
            Ok(true)
        }
    }

    pub fn select(&mut self, id: PlanId) -> Result<()> {
        self.require_plan(id)?;
        self.selected_plan = Some(id);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub case: PatientCase,
    pub state: SessionState,
}

/// Session directory tree under a data root.
#[derive(Clone, Debug)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::not_found(format!("session {id:?} not found")));
        }
        Ok(self.sessions_dir().join(id))
    }

    pub fn exports_dir(&self, id: &str) -> Result<PathBuf> {
        Ok(self.session_dir(id)?.join("exports"))
    }

    /// Creates a session with a fresh id `s<n>`.
    pub fn create(&self, case: PatientCase) -> Result<Session> {
        case.validate()?;
        fs::create_dir_all(self.sessions_dir())?;
        let mut n = fs::read_dir(self.sessions_dir())?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_prefix('s')?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        let (id, dir) = loop {
            n += 1;
            let id = format!("s{n}");
            let dir = self.sessions_dir().join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        };
        save_case(&case, dir.join("case.json"))?;
        let session = Session {
            state: SessionState::new(&id, &case),
            case,
        };
        self.save_state(&session.state)?;
        Ok(session)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.session_dir(id).map(|d| d.join("state.json").is_file()).unwrap_or(false)
    }

    pub fn load_state(&self, id: &str) -> Result<SessionState> {
        let path = self.session_dir(id)?.join("state.json");
        if !path.is_file() {
            return Err(ServiceError::not_found(format!("session {id} not found")));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn load_case(&self, id: &str) -> Result<PatientCase> {
        if !self.exists(id) {
            return Err(ServiceError::not_found(format!("session {id} not found")));
        }
        Ok(load_case(self.session_dir(id)?.join("case.json"))?)
    }

    pub fn load(&self, id: &str) -> Result<Session> {
        Ok(Session {
            state: self.load_state(id)?,
            case: self.load_case(id)?,
        })
    }

    /// Replaces `state.json` atomically.
    pub fn save_state(&self, state: &SessionState) -> Result<()> {
        let dir = self.session_dir(&state.id)?;
        let tmp = dir.join("state.json.tmp");
        fs::write(&tmp, serde_json::to_vec(state)?)?;
        fs::rename(tmp, dir.join("state.json"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use brachynav_core::case::{generate_phantom, PhantomSpec};

    fn small_case() -> PatientCase {
        generate_phantom(&PhantomSpec {
            samples_per_roi: 200,
            ..PhantomSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn ids_are_fresh_and_unknown_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        let a = store.create(small_case()).unwrap();
        let b = store.create(small_case()).unwrap();
        assert_eq!((a.state.id.as_str(), b.state.id.as_str()), ("s1", "s2"));
        assert_eq!(store.load_state("s9").unwrap_err().code, ErrorCode::NotFound);
        assert_eq!(store.load_state("../x").unwrap_err().code, ErrorCode::NotFound);
        assert_eq!(store.load("s1").unwrap().case, a.case);
    }
}
