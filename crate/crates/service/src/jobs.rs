use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use deepquali_core::canonical;
use deepquali_core::harness::{write_atomic, HarnessError};

pub const SHUTDOWN_ERROR: &str = "service shut down before the job finished";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_active(self) -> bool {
        matches!(self, JobState::Queued | JobState::Running)
    }
}

/// An assessment run. `report_id` is set exactly when the job is done and
/// `error` exactly when it failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub story_id: String,
    pub story_version: u32,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_id: Option<String>,
}

/// Job records mirrored to `jobs/<id>.json` on every state change.
#[derive(Debug)]
pub(crate) struct Jobs {
    dir: PathBuf,
    inner: Mutex<JobsInner>,
}

#[derive(Debug)]
struct JobsInner {
    records: BTreeMap<String, JobRecord>,
    next: u64,
}

#[derive(Debug)]
pub(crate) enum SubmitError {
    Active(String),
    Store(HarnessError),
}

impl Jobs {
    /// Loads persisted jobs. Jobs left queued or running by a previous
    /// process are marked failed.
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let mut records = BTreeMap::new();
        let mut next = 1;
        if dir.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|source| HarnessError::Io {
                    path: dir.to_owned(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                let mut job: JobRecord =
                    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
                        path: path.clone(),
                        line: e.line(),
                        message: e.to_string(),
                    })?;
                if let Some(n) = job
                    .job_id
                    .strip_prefix("job-")
                    .and_then(|n| n.parse::<u64>().ok())
                {
                    next = next.max(n + 1);
                }
                if job.state.is_active() {
                    job.state = JobState::Failed;
                    job.error = Some(SHUTDOWN_ERROR.into());
                    persist(dir, &job)?;
                }
                records.insert(job.job_id.clone(), job);
            }
        }
        Ok(Jobs {
            dir: dir.to_owned(),
            inner: Mutex::new(JobsInner { records, next }),
        })
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.inner.lock().unwrap().records.get(id).cloned()
    }

    pub fn all(&self) -> Vec<JobRecord> {
        self.inner
            .lock()
            .unwrap()
            .records
            .values()
            .cloned()
            .collect()
    }

    /// Creates a queued job unless the story already has an active one.
    pub fn submit(&self, story_id: &str, story_version: u32) -> Result<JobRecord, SubmitError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(active) = inner
            .records
            .values()
            .find(|j| j.story_id == story_id && j.state.is_active())
        {
            return Err(SubmitError::Active(active.job_id.clone()));
        }
        let job = JobRecord {
            job_id: format!("job-{:06}", inner.next),
            story_id: story_id.to_owned(),
            story_version,
            state: JobState::Queued,
            error: None,
            report_id: None,
        };
        persist(&self.dir, &job).map_err(SubmitError::Store)?;
        inner.next += 1;
        inner.records.insert(job.job_id.clone(), job.clone());
        Ok(job)
    }

    pub fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(job) = inner.records.get_mut(id) {
            f(job);
            if let Err(e) = persist(&self.dir, job) {
                tracing::error!(job = id, error = %e, "cannot persist job state");
            }
        }
    }

    pub fn running(&self, id: &str) {
        self.update(id, |j| j.state = JobState::Running);
    }

    pub fn done(&self, id: &str, report_id: String) {
        self.update(id, |j| {
            j.state = JobState::Done;
            j.report_id = Some(report_id);
            j.error = None;
        });
    }

    pub fn failed(&self, id: &str, error: String) {
        self.update(id, |j| {
            j.state = JobState::Failed;
            j.error = Some(error);
            j.report_id = None;
        });
    }

    /// Marks every active job failed with the shutdown error.
    pub fn fail_active(&self) {
        let active: Vec<String> = self
            .all()
            .into_iter()
            .filter(|j| j.state.is_active())
            .map(|j| j.job_id)
            .collect();
        for id in active {
            self.failed(&id, SHUTDOWN_ERROR.into());
        }
    }
}

fn persist(dir: &Path, job: &JobRecord) -> Result<(), HarnessError> {
    let text = canonical::to_canonical_string(job).expect("jobs serialize");
    write_atomic(&dir.join(format!("{}.json", job.job_id)), text.as_bytes())
}
