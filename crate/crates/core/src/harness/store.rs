use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::engine::{parse_report, AssessmentReport, REPORT_FILE_EXTENSION};
use crate::quality_model::{load_quality_model, ModelKind, MODEL_FILE_EXTENSION};
use crate::story::{load_corpus, parse_story, story_digest, to_canonical_text, UserStory};

use super::records::{
    AcceptanceItems, AcceptanceRecord, ExpertProfile, FeedbackRecord, LabelRecord, RecordKind,
    StudyRecord,
};
use super::{HarnessError, ModelSet};

pub const LOCK_FILE: &str = ".deepquali.lock";
const EXPERTS_FILE: &str = "experts.json";
const AUDIT_FILE: &str = "audit.jsonl";
const ACCEPTANCE_ITEMS_FILE: &str = "acceptance_items.json";

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

fn read_optional(path: &Path) -> Result<Option<String>, HarnessError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(HarnessError::io(path)(e)),
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> HarnessError {
    HarnessError::Format {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    }
}

/// One stored revision of a story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryVersion {
    pub story_id: String,
    pub version: u32,
    pub digest: String,
    /// Canonical text identical to the previous version.
    pub unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub key: String,
    pub replaced: bool,
}

/// A study directory. Any number of readers may open it; writers hold an
/// exclusive lock on a file inside it for as long as the value lives.
#[derive(Debug)]
pub struct StudyDir {
    root: PathBuf,
    lock: Option<File>,
}

impl StudyDir {
    /// Opens an existing study directory for reading.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(HarnessError::NotFound {
                kind: "study directory",
                id: root.display().to_string(),
            });
        }
        Ok(StudyDir { root, lock: None })
    }

    /// Creates the directory layout if needed and takes the writer lock.
    pub fn open_writer(root: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let root = root.into();
        for dir in ["stories/revisions", "reports", "out", "jobs", "models"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(HarnessError::io(&p))?;
        }
        let lock_path = root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(HarnessError::io(&lock_path))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(HarnessError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(HarnessError::io(lock_path)(e)),
        }
        Ok(StudyDir {
            root,
            lock: Some(file),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writer(&self) -> bool {
        self.lock.is_some()
    }

    fn ensure_writer(&self) -> Result<(), HarnessError> {
        if self.is_writer() {
            Ok(())
        } else {
            Err(HarnessError::ReadOnly)
        }
    }

    pub fn stories_dir(&self) -> PathBuf {
        self.root.join("stories")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.root.join("out")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.root.join("jobs")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    fn revisions_dir(&self, story_id: &str) -> PathBuf {
        self.stories_dir().join("revisions").join(story_id)
    }

    // ---- models ----

    /// Built-in INVEST and RTI models, overridden by any `.qm.json` files
    /// of the same kind in `models/`; a `custom_dor` file there becomes the
    /// study's DoR model.
    pub fn model_set(&self) -> Result<ModelSet, HarnessError> {
        let mut set = ModelSet::default();
        let dir = self.models_dir();
        if !dir.is_dir() {
            return Ok(set);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(HarnessError::io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(MODEL_FILE_EXTENSION))
            })
            .collect();
        paths.sort();
        let mut seen = BTreeMap::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
            let model = load_quality_model(&text).map_err(|e| HarnessError::Format {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            if let Some(prev) = seen.insert(model.kind, path.clone()) {
                return Err(HarnessError::Invalid(format!(
                    "both {} and {} define a {} model",
                    prev.display(),
                    path.display(),
                    model.kind
                )));
            }
            match model.kind {
                ModelKind::Invest => set.invest = model,
                ModelKind::Rti => set.rti = model,
                ModelKind::CustomDor => set.dor = Some(model),
            }
        }
        ModelSet::new(set.invest, set.rti, set.dor)
    }

    // ---- experts ----

    pub fn experts(&self) -> Result<Vec<ExpertProfile>, HarnessError> {
        let path = self.root.join(EXPERTS_FILE);
        let Some(text) = read_optional(&path)? else {
            return Ok(Vec::new());
        };
        let mut experts: Vec<ExpertProfile> =
            serde_json::from_str(&text).map_err(|e| json_error(&path, e))?;
        experts.sort_by(|a, b| a.expert_id.cmp(&b.expert_id));
        Ok(experts)
    }

    /// Adds or replaces a profile. Returns whether one was replaced.
    pub fn put_expert(&mut self, profile: ExpertProfile) -> Result<bool, HarnessError> {
        self.ensure_writer()?;
        profile.validate()?;
        let mut experts = self.experts()?;
        let replaced = match experts
            .iter_mut()
            .find(|e| e.expert_id == profile.expert_id)
        {
            Some(existing) => {
                let changed = *existing != profile;
                if changed {
                    self.audit("expert", &profile.expert_id, existing, &profile)?;
                }
                *existing = profile;
                true
            }
            None => {
                experts.push(profile);
                false
            }
        };
        experts.sort_by(|a, b| a.expert_id.cmp(&b.expert_id));
        let text = canonical::to_canonical_string(&experts).expect("profiles serialize");
        write_atomic(
            &self.root.join(EXPERTS_FILE),
            format!("{text}\n").as_bytes(),
        )?;
        Ok(replaced)
    }

    pub fn acceptance_items(&self) -> Result<AcceptanceItems, HarnessError> {
        let path = self.root.join(ACCEPTANCE_ITEMS_FILE);
        match read_optional(&path)? {
            Some(text) => serde_json::from_str(&text).map_err(|e| json_error(&path, e)),
            None => Ok(AcceptanceItems::default()),
        }
    }

    // ---- stories ----

    /// Latest version of every story, sorted by id.
    pub fn stories(&self) -> Result<Vec<UserStory>, HarnessError> {
        let dir = self.stories_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        Ok(load_corpus(&dir)?)
    }

    pub fn story(&self, id: &str) -> Result<UserStory, HarnessError> {
        let path = self.stories_dir().join(format!("{id}.story.json"));
        if !crate::story::is_safe_id(id) {
            return Err(HarnessError::NotFound {
                kind: "story",
                id: id.into(),
            });
        }
        match read_optional(&path)? {
            Some(text) => Ok(parse_story(&text)?),
            None => Err(HarnessError::NotFound {
                kind: "story",
                id: id.into(),
            }),
        }
    }

    pub fn has_story(&self, id: &str) -> bool {
        crate::story::is_safe_id(id)
            && self
                .stories_dir()
                .join(format!("{id}.story.json"))
                .is_file()
    }

    pub fn story_versions(&self, id: &str) -> Result<Vec<StoryVersion>, HarnessError> {
        if !self.has_story(id) {
            return Err(HarnessError::NotFound {
                kind: "story",
                id: id.into(),
            });
        }
        let dir = self.revisions_dir(id);
        let mut numbers: Vec<u32> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    name.strip_prefix('v')?
                        .strip_suffix(".story.json")?
                        .parse()
                        .ok()
                })
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(HarnessError::io(dir)(e)),
        };
        numbers.sort_unstable();
        let mut versions: Vec<StoryVersion> = Vec::with_capacity(numbers.len());
        for n in numbers {
            let digest = story_digest(&self.story_version(id, n)?);
            let unchanged = versions.last().is_some_and(|p| p.digest == digest);
            versions.push(StoryVersion {
                story_id: id.into(),
                version: n,
                digest,
                unchanged,
            });
        }
        Ok(versions)
    }

    pub fn story_version(&self, id: &str, version: u32) -> Result<UserStory, HarnessError> {
        let path = self
            .revisions_dir(id)
            .join(format!("v{version}.story.json"));
        match read_optional(&path)? {
            Some(text) => Ok(parse_story(&text)?),
            None => Err(HarnessError::NotFound {
                kind: "story version",
                id: format!("{id}@v{version}"),
            }),
        }
    }

    pub fn latest_version(&self, id: &str) -> Result<u32, HarnessError> {
        Ok(self.story_versions(id)?.last().map_or(1, |v| v.version))
    }

    /// Stores `story` as the next version. Unless `always_new` is set, a
    /// story identical to its latest version is left alone and that
    /// version is returned.
    pub fn add_story_version(
        &mut self,
        story: &UserStory,
        always_new: bool,
    ) -> Result<StoryVersion, HarnessError> {
        self.ensure_writer()?;
        story.validate()?;
        let digest = story_digest(story);
        let previous = if self.has_story(&story.id) {
            self.story_versions(&story.id)?.pop()
        } else {
            None
        };
        let unchanged = previous.as_ref().is_some_and(|p| p.digest == digest);
        if unchanged && !always_new {
            return Ok(StoryVersion {
                unchanged: true,
                ..previous.unwrap()
            });
        }
        let version = previous.map_or(1, |p| p.version + 1);
        let text = format!("{}\n", to_canonical_text(story));
        write_atomic(
            &self
                .revisions_dir(&story.id)
                .join(format!("v{version}.story.json")),
            text.as_bytes(),
        )?;
        write_atomic(
            &self.stories_dir().join(format!("{}.story.json", story.id)),
            text.as_bytes(),
        )?;
        Ok(StoryVersion {
            story_id: story.id.clone(),
            version,
            digest,
            unchanged,
        })
    }

    // ---- reports ----

    fn report_path(&self, report_id: &str) -> PathBuf {
        self.reports_dir()
            .join(format!("{report_id}{REPORT_FILE_EXTENSION}"))
    }

    pub fn has_report(&self, report_id: &str) -> bool {
        crate::story::is_safe_id(report_id) && self.report_path(report_id).is_file()
    }

    /// Writes a new report file. Existing reports are never overwritten; a
    /// colliding id gets a `.rN` suffix. Returns the id actually used.
    pub fn save_report(&mut self, report: &AssessmentReport) -> Result<String, HarnessError> {
        self.ensure_writer()?;
        report
            .validate()
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let mut report = report.clone();
        let base = report.report_id.clone();
        let mut n = 1;
        while self.report_path(&report.report_id).exists() {
            n += 1;
            report.report_id = format!("{base}.r{n}");
        }
        write_atomic(
            &self.report_path(&report.report_id),
            format!("{}\n", report.to_canonical()).as_bytes(),
        )?;
        Ok(report.report_id)
    }

    pub fn report(&self, report_id: &str) -> Result<AssessmentReport, HarnessError> {
        let path = self.report_path(report_id);
        if !crate::story::is_safe_id(report_id) {
            return Err(HarnessError::NotFound {
                kind: "report",
                id: report_id.into(),
            });
        }
        match read_optional(&path)? {
            Some(text) => Ok(parse_report(&text)?),
            None => Err(HarnessError::NotFound {
                kind: "report",
                id: report_id.into(),
            }),
        }
    }

    /// All reports, sorted by id.
    pub fn reports(&self) -> Result<Vec<AssessmentReport>, HarnessError> {
        let dir = self.reports_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(HarnessError::io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(REPORT_FILE_EXTENSION))
            })
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(HarnessError::io(p))?;
                parse_report(&text).map_err(|e| HarnessError::Format {
                    path: p.clone(),
                    line: 0,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// For every story, the most recent report on its latest version.
    pub fn latest_reports(&self) -> Result<BTreeMap<String, AssessmentReport>, HarnessError> {
        let mut latest_version = BTreeMap::new();
        for story in self.stories()? {
            latest_version.insert(story.id.clone(), self.latest_version(&story.id)?);
        }
        let mut out: BTreeMap<String, AssessmentReport> = BTreeMap::new();
        for report in self.reports()? {
            if latest_version.get(&report.story_id) != Some(&report.story_version) {
                continue;
            }
            let newer = out.get(&report.story_id).is_none_or(|cur| {
                (report.created_at, &report.report_id) > (cur.created_at, &cur.report_id)
            });
            if newer {
                out.insert(report.story_id.clone(), report);
            }
        }
        Ok(out)
    }

    // ---- survey records ----

    fn read_records(&self, kind: RecordKind) -> Result<Vec<StudyRecord>, HarnessError> {
        let path = self.root.join(kind.file_name());
        let Some(text) = read_optional(&path)? else {
            return Ok(Vec::new());
        };
        let mut latest: BTreeMap<String, StudyRecord> = BTreeMap::new();
        // A trailing line without a newline is a write in progress.
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        for (i, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| HarnessError::Format {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let record =
                StudyRecord::from_value(kind, value).map_err(|e| HarnessError::Format {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            latest.insert(record.key(), record);
        }
        Ok(latest.into_values().collect())
    }

    /// Effective label records (later duplicates win), sorted by key.
    pub fn labels(&self) -> Result<Vec<LabelRecord>, HarnessError> {
        Ok(self
            .read_records(RecordKind::Label)?
            .into_iter()
            .filter_map(|r| match r {
                StudyRecord::Label(l) => Some(l),
                _ => None,
            })
            .collect())
    }

    pub fn feedback(&self) -> Result<Vec<FeedbackRecord>, HarnessError> {
        Ok(self
            .read_records(RecordKind::Feedback)?
            .into_iter()
            .filter_map(|r| match r {
                StudyRecord::Feedback(f) => Some(f),
                _ => None,
            })
            .collect())
    }

    pub fn acceptance(&self) -> Result<Vec<AcceptanceRecord>, HarnessError> {
        Ok(self
            .read_records(RecordKind::Acceptance)?
            .into_iter()
            .filter_map(|r| match r {
                StudyRecord::Acceptance(a) => Some(a),
                _ => None,
            })
            .collect())
    }

    pub fn record(&mut self, record: StudyRecord) -> Result<RecordOutcome, HarnessError> {
        Ok(self.record_all(vec![record])?.remove(0))
    }

    /// Validates every record against the study, then appends them all.
    /// Nothing is written if any record is rejected.
    pub fn record_all(
        &mut self,
        records: Vec<StudyRecord>,
    ) -> Result<Vec<RecordOutcome>, HarnessError> {
        self.ensure_writer()?;
        let models = self.model_set()?;
        let experts: BTreeSet<String> = self.experts()?.into_iter().map(|e| e.expert_id).collect();
        let items = self.acceptance_items()?;
        let mut stories = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !experts.contains(r.expert_id()) {
                return Err(HarnessError::Referential(format!(
                    "expert '{}'",
                    r.expert_id()
                )));
            }
            let story_id = match r {
                StudyRecord::Label(l) => Some(&l.story_id),
                StudyRecord::Feedback(f) => Some(&f.story_id),
                StudyRecord::Acceptance(_) => None,
            };
            if let Some(id) = story_id {
                if !stories.contains(id) {
                    if !self.has_story(id) {
                        return Err(HarnessError::Referential(format!("story '{id}'")));
                    }
                    stories.insert(id.clone());
                }
            }
            match r {
                StudyRecord::Label(l) => {
                    let criterion = models.criterion(&l.criterion_id).ok_or_else(|| {
                        HarnessError::Referential(format!("criterion '{}'", l.criterion_id))
                    })?;
                    if l.statement_index >= criterion.label_rows() {
                        return Err(HarnessError::Referential(format!(
                            "statement {} of criterion '{}' (has {})",
                            l.statement_index,
                            l.criterion_id,
                            criterion.label_rows()
                        )));
                    }
                }
                StudyRecord::Acceptance(a) => {
                    let n = items.items(a.construct).len();
                    if a.item_index >= n {
                        return Err(HarnessError::Referential(format!(
                            "item {} of construct '{}' (has {n})",
                            a.item_index, a.construct
                        )));
                    }
                }
                StudyRecord::Feedback(_) => {}
            }
        }

        let mut existing: BTreeMap<RecordKind, BTreeMap<String, StudyRecord>> = BTreeMap::new();
        let mut outcomes = Vec::with_capacity(records.len());
        let mut lines: BTreeMap<RecordKind, String> = BTreeMap::new();
        for r in records {
            let kind = r.kind();
            let current = match existing.entry(kind) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(
                    self.read_records(kind)?
                        .into_iter()
                        .map(|r| (r.key(), r))
                        .collect(),
                ),
            };
            let key = r.key();
            let previous = current.insert(key.clone(), r.clone());
            if let Some(prev) = &previous {
                if *prev != r {
                    self.audit(kind_name(kind), &key, &prev.to_value(), &r.to_value())?;
                }
            }
            let line = lines.entry(kind).or_default();
            line.push_str(&canonical::canonicalize(&r.to_value()));
            line.push('\n');
            outcomes.push(RecordOutcome {
                key,
                replaced: previous.is_some(),
            });
        }
        for (kind, text) in lines {
            append(&self.root.join(kind.file_name()), &text)?;
        }
        Ok(outcomes)
    }

    fn audit<T: Serialize>(
        &self,
        kind: &str,
        key: &str,
        previous: &T,
        current: &T,
    ) -> Result<(), HarnessError> {
        let note = serde_json::json!({
            "at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "kind": kind,
            "key": key,
            "previous": previous,
            "current": current,
        });
        append(
            &self.root.join(AUDIT_FILE),
            &format!("{}\n", canonical::canonicalize(&note)),
        )
    }

    /// Writes a table to `out/<name>.json` and `out/<name>.csv`.
    pub fn write_output(&mut self, name: &str, json: &str, csv: &str) -> Result<(), HarnessError> {
        self.ensure_writer()?;
        let out = self.out_dir();
        write_atomic(
            &out.join(format!("{name}.json")),
            format!("{json}\n").as_bytes(),
        )?;
        write_atomic(&out.join(format!("{name}.csv")), csv.as_bytes())
    }
}

fn kind_name(kind: RecordKind) -> &'static str {
    match kind {
        RecordKind::Label => "label",
        RecordKind::Feedback => "feedback",
        RecordKind::Acceptance => "acceptance",
    }
}

fn append(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(HarnessError::io(path))?;
    f.write_all(text.as_bytes()).map_err(HarnessError::io(path))
}
