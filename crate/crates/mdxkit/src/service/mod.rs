//! The listening-test backend: sessions, blind AB comparisons, judgments
//! and live TrueSkill standings.
//!
//! The comparison log (`comparisons.jsonl`) is the source of truth. Ratings
//! and session cursors are rebuilt from it on start, so a restart at any
//! point (including between a log append and the rating update) recovers
//! the same state.

pub mod http;
pub mod stimuli;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mdxkit_core::rating::{
    apply_record, assessor_stats, rank, schedule_comparisons, AssessorStats, Choice, ComparisonRecord, RankedModel,
    Rating, RatingError, ScheduleConfig, SchedulePlan, Stimulus, TrueSkillParams,
};
use mdxkit_core::separation::SeparationError;
use mdxkit_core::SourceClass;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{JsonlError, JsonlWriter};
use crate::wav::WavError;
pub use stimuli::{prepare_stimuli, StimulusIndex};

pub const COMPARISON_LOG: &str = "comparisons.jsonl";
pub const SESSION_LOG: &str = "sessions.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown comparison {0:?}")]
    UnknownComparison(String),
    #[error("comparison {0:?} was already submitted")]
    DuplicateSubmission(String),
    #[error("the session's comparison plan is exhausted")]
    PlanExhausted,
    #[error("unknown stimulus {0:?}")]
    UnknownStimulus(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid stimulus: {0}")]
    InvalidStimulus(String),
    #[error("service stopped after a simulated crash; reopen it from the log")]
    Crashed,
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Audio(#[from] mdxkit_core::audio::AudioError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "unknown_session",
            Self::UnknownComparison(_) => "unknown_comparison",
            Self::DuplicateSubmission(_) => "duplicate_submission",
            Self::PlanExhausted => "plan_exhausted",
            Self::UnknownStimulus(_) => "unknown_stimulus",
            Self::InvalidRequest(_) => "invalid_request",
            Self::InvalidStimulus(_) => "invalid_stimulus",
            Self::Crashed => "crashed",
            Self::Rating(_) => "rating_error",
            Self::Separation(_) => "separation_error",
            Self::Audio(_) | Self::Wav(_) => "audio_error",
            Self::Log(_) | Self::Io(_) => "io_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Producer,
    MusicianEducator,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Self::Producer => "producer",
            Self::MusicianEducator => "musician_educator",
        }
    }
}

/// Persisted when a session is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub assessor: String,
    pub category: Category,
    /// Free-text description of the listening setup.
    #[serde(default)]
    pub equipment: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub assessor: String,
    pub category: Category,
    #[serde(default)]
    pub equipment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub category: Category,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRef {
    pub id: String,
    pub url: String,
}

impl StimulusRef {
    fn new(id: &str) -> Self {
        Self { id: id.into(), url: format!("/audio/{id}") }
    }
}

/// What an assessor sees: no model names, only opaque clip ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPayload {
    pub comparison_id: String,
    /// Zero-based position in the session's plan.
    pub index: usize,
    pub total: usize,
    pub class: SourceClass,
    pub stimulus: Stimulus,
    pub a: StimulusRef,
    pub b: StimulusRef,
    pub reference: StimulusRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub comparison_id: String,
    pub choice: Choice,
    pub elapsed_seconds: f64,
    pub switch_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standings {
    pub comparisons: usize,
    pub ranking: Vec<RankedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub schedule: ScheduleConfig,
    pub params: TrueSkillParams,
}

impl TestConfig {
    /// Three comparisons per cell with TrueSkill defaults.
    pub fn new(seed: u64) -> Self {
        Self { schedule: ScheduleConfig { per_cell: 3, segments: 1, seed }, params: TrueSkillParams::default() }
    }
}

#[derive(Debug)]
struct Session {
    record: SessionRecord,
    plan: SchedulePlan,
    cursor: usize,
}

/// Listening-test state over a stimulus index and a log directory.
#[derive(Debug)]
pub struct ListeningTest {
    config: TestConfig,
    index: StimulusIndex,
    log_dir: PathBuf,
    comparisons: JsonlWriter,
    session_log: JsonlWriter,
    sessions: BTreeMap<String, Session>,
    by_assessor: BTreeMap<String, String>,
    ratings: BTreeMap<String, Rating>,
    records: Vec<ComparisonRecord>,
    clock: fn() -> u64,
    crash_after_append: bool,
    crashed: bool,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn assessor_stream(assessor: &str) -> u64 {
    let digest = Sha256::digest(assessor.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn session_id(seed: u64, assessor: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"session");
    h.update(seed.to_le_bytes());
    h.update(assessor.as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl ListeningTest {
    /// Opens (or resumes) a test, replaying any existing logs in `log_dir`.
    pub fn open(mut config: TestConfig, index: StimulusIndex, log_dir: &Path) -> Result<Self, ServiceError> {
        if index.models.len() < 2 {
            return Err(RatingError::TooFewModels(index.models.len()).into());
        }
        config.schedule.segments = index.segments.len();
        config.params.validate()?;
        let (session_log, session_records) = JsonlWriter::open::<SessionRecord>(&log_dir.join(SESSION_LOG))?;
        let (comparisons, records) = JsonlWriter::open::<ComparisonRecord>(&log_dir.join(COMPARISON_LOG))?;
        let mut test = Self {
            config,
            index,
            log_dir: log_dir.to_path_buf(),
            comparisons,
            session_log,
            sessions: BTreeMap::new(),
            by_assessor: BTreeMap::new(),
            ratings: BTreeMap::new(),
            records: Vec::new(),
            clock: now_ms,
            crash_after_append: false,
            crashed: false,
        };
        for record in session_records {
            test.install_session(record)?;
        }
        for record in records {
            let sid = test
                .by_assessor
                .get(&record.assessor)
                .cloned()
                .ok_or_else(|| ServiceError::UnknownSession(record.assessor.clone()))?;
            apply_record(&mut test.ratings, &record, &test.config.params)?;
            test.sessions.get_mut(&sid).expect("indexed session").cursor += 1;
            test.records.push(record);
        }
        Ok(test)
    }

    /// Replaces the wall clock used for record timestamps.
    pub fn set_clock(&mut self, clock: fn() -> u64) {
        self.clock = clock;
    }

    /// Makes the next submission stop after appending to the log, as if the
    /// process died before updating ratings. The instance refuses further
    /// work; reopen from the same log directory to recover.
    #[doc(hidden)]
    pub fn crash_after_next_append(&mut self) {
        self.crash_after_append = true;
    }

    pub fn index(&self) -> &StimulusIndex {
        &self.index
    }

    pub fn log_dir(&self) -> &Path {
        &self.log_dir
    }

    fn install_session(&mut self, record: SessionRecord) -> Result<&Session, ServiceError> {
        let plan = schedule_comparisons(&self.index.models, &self.config.schedule, assessor_stream(&record.assessor))?;
        let sid = record.session_id.clone();
        self.by_assessor.insert(record.assessor.clone(), sid.clone());
        Ok(self.sessions.entry(sid).or_insert(Session { record, plan, cursor: 0 }))
    }

    fn info(session: &Session) -> SessionInfo {
        SessionInfo {
            session_id: session.record.session_id.clone(),
            category: session.record.category,
            completed: session.cursor,
            total: session.plan.comparisons.len(),
        }
    }

    /// Starts a session, or returns the assessor's existing one.
    pub fn create_session(&mut self, request: NewSession) -> Result<SessionInfo, ServiceError> {
        self.check_alive()?;
        if request.assessor.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("assessor id must not be empty".into()));
        }
        if let Some(sid) = self.by_assessor.get(&request.assessor) {
            return Ok(Self::info(&self.sessions[sid]));
        }
        let record = SessionRecord {
            session_id: session_id(self.config.schedule.seed, &request.assessor),
            assessor: request.assessor,
            category: request.category,
            equipment: request.equipment,
            timestamp: (self.clock)(),
        };
        self.session_log.append(&record)?;
        let session = self.install_session(record)?;
        Ok(Self::info(session))
    }

    pub fn session(&self, session_id: &str) -> Result<SessionInfo, ServiceError> {
        self.sessions.get(session_id).map(Self::info).ok_or_else(|| ServiceError::UnknownSession(session_id.into()))
    }

    /// The session's current comparison. Plans are linear: the same
    /// comparison is returned until it is answered.
    pub fn next_comparison(&self, session_id: &str) -> Result<ComparisonPayload, ServiceError> {
        self.check_alive()?;
        let session = self.sessions.get(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.into()))?;
        let planned = session.plan.comparisons.get(session.cursor).ok_or(ServiceError::PlanExhausted)?;
        let a = self.index.clip(&planned.model_a, planned.segment, planned.class, planned.stimulus)?;
        let b = self.index.clip(&planned.model_b, planned.segment, planned.class, planned.stimulus)?;
        let reference = &self.index.segments[planned.segment].reference;
        Ok(ComparisonPayload {
            comparison_id: format!("{session_id}.{}", session.cursor),
            index: session.cursor,
            total: session.plan.comparisons.len(),
            class: planned.class,
            stimulus: planned.stimulus,
            a: StimulusRef::new(&a.id),
            b: StimulusRef::new(&b.id),
            reference: StimulusRef::new(reference),
        })
    }

    /// Records a judgment: appends it to the log, then updates ratings.
    pub fn submit(&mut self, submission: &Submission) -> Result<Standings, ServiceError> {
        self.check_alive()?;
        let unknown = || ServiceError::UnknownComparison(submission.comparison_id.clone());
        let (sid, position) = submission.comparison_id.rsplit_once('.').ok_or_else(unknown)?;
        let position: usize = position.parse().map_err(|_| unknown())?;
        let session = self.sessions.get(sid).ok_or_else(unknown)?;
        if position >= session.plan.comparisons.len() || position > session.cursor {
            return Err(unknown());
        }
        if position < session.cursor {
            return Err(ServiceError::DuplicateSubmission(submission.comparison_id.clone()));
        }
        if !(submission.elapsed_seconds.is_finite() && submission.elapsed_seconds >= 0.0) {
            return Err(ServiceError::InvalidRequest("elapsed_seconds must be a non-negative number".into()));
        }
        let planned = &session.plan.comparisons[position];
        let segment = &self.index.segments[planned.segment];
        let record = ComparisonRecord {
            assessor: session.record.assessor.clone(),
            model_a: planned.model_a.clone(),
            model_b: planned.model_b.clone(),
            song_id: segment.song_id.clone(),
            segment_id: segment.segment,
            class: planned.class,
            stimulus: planned.stimulus,
            choice: submission.choice,
            elapsed_seconds: submission.elapsed_seconds,
            switch_count: submission.switch_count,
            timestamp: (self.clock)(),
        };
        record.validate()?;
        self.comparisons.append(&record)?;
        if self.crash_after_append {
            self.crashed = true;
            return Err(ServiceError::Crashed);
        }
        apply_record(&mut self.ratings, &record, &self.config.params)?;
        self.sessions.get_mut(sid).expect("checked above").cursor += 1;
        self.records.push(record);
        self.standings()
    }

    fn check_alive(&self) -> Result<(), ServiceError> {
        if self.crashed {
            Err(ServiceError::Crashed)
        } else {
            Ok(())
        }
    }

    /// Current ratings, including models not yet compared.
    pub fn ratings(&self) -> BTreeMap<String, Rating> {
        let mut all: BTreeMap<String, Rating> =
            self.index.models.iter().map(|m| (m.clone(), self.config.params.initial_rating())).collect();
        all.extend(self.ratings.iter().map(|(k, v)| (k.clone(), *v)));
        all
    }

    /// Ratings of the models that took part in at least one comparison.
    pub fn rated(&self) -> &BTreeMap<String, Rating> {
        &self.ratings
    }

    pub fn standings(&self) -> Result<Standings, ServiceError> {
        Ok(Standings { comparisons: self.records.len(), ranking: rank(&self.ratings())? })
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    pub fn categories(&self) -> BTreeMap<String, String> {
        self.sessions.values().map(|s| (s.record.assessor.clone(), s.record.category.name().to_string())).collect()
    }

    pub fn stats(&self) -> Result<AssessorStats, ServiceError> {
        Ok(assessor_stats(&self.records, &self.categories())?)
    }
}

/// Ratings obtained by folding a comparison log from initial ratings.
pub fn replay_log(path: &Path, params: &TrueSkillParams) -> Result<BTreeMap<String, Rating>, ServiceError> {
    let records: Vec<ComparisonRecord> = crate::jsonl::read_jsonl(path)?;
    Ok(mdxkit_core::rating::rate_records(&records, params)?)
}
