//! Append-only event store with course and student dimensions.
//!
//! On disk a store is a directory of three newline-delimited JSON files:
//!
//! * `courses.jsonl`  – one [`CourseConfig`] per line, later lines replace earlier ones
//! * `students.jsonl` – one [`StudentRecord`] per line, merged by `user_id`
//! * `events.jsonl`   – one canonical [`Event`] per line (see [`Event::to_canonical_json`])
//!
//! Indexes live in memory and are rebuilt on open. Readers work on an
//! immutable [`Snapshot`]; appends build the next snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::event::{Activity, Event, EventKind};
use crate::table::Table;

const COURSES_FILE: &str = "courses.jsonl";
const STUDENTS_FILE: &str = "students.jsonl";
const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    #[error("corrupt store file {file} line {line}: {reason}")]
    Corrupt {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("unknown course `{0}`")]
    UnknownCourse(String),
    #[error("unknown user `{user}` in course `{course}`")]
    UnknownUser { course: String, user: String },
    #[error("unknown table kind `{0}`")]
    UnknownTableKind(String),
    #[error("invalid course configuration: {0}")]
    InvalidCourse(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

/// How a quiz counts as passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassRule {
    /// Highest attempt score reaches the threshold.
    #[default]
    BestOf,
    /// Every single attempt reaches the threshold.
    EveryAttempt,
}

fn default_max_attempts() -> u32 {
    5
}

fn default_offset() -> i32 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseConfig {
    pub course_id: String,
    pub title: String,
    pub start: NaiveDate,
    pub duration_weeks: u32,
    pub pass_threshold_pct: f64,
    #[serde(default = "default_max_attempts")]
    pub max_quiz_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_hours_per_week: Option<f64>,
    #[serde(default)]
    pub pass_rule: PassRule,
    /// Quizzes a completer must pass. Empty means every quiz seen in the course.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quizzes: Vec<String>,
    /// Course-local UTC offset, used for hour-of-day statistics.
    #[serde(default = "default_offset")]
    pub utc_offset_minutes: i32,
}

impl CourseConfig {
    pub fn new(
        course_id: impl Into<String>,
        title: impl Into<String>,
        start: NaiveDate,
        duration_weeks: u32,
        pass_threshold_pct: f64,
    ) -> Self {
        CourseConfig {
            course_id: course_id.into(),
            title: title.into(),
            start,
            duration_weeks,
            pass_threshold_pct,
            max_quiz_attempts: default_max_attempts(),
            workload_hours_per_week: None,
            pass_rule: PassRule::BestOf,
            quizzes: Vec::new(),
            utc_offset_minutes: default_offset(),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let fail = |m: String| Err(StoreError::InvalidCourse(m));
        if self.course_id.is_empty() {
            return fail("course_id is empty".into());
        }
        if self.duration_weeks < 1 {
            return fail("duration_weeks must be >= 1".into());
        }
        if !(self.pass_threshold_pct > 0.0 && self.pass_threshold_pct <= 100.0) {
            return fail(format!(
                "pass_threshold_pct {} outside (0, 100]",
                self.pass_threshold_pct
            ));
        }
        if self.max_quiz_attempts < 1 {
            return fail("max_quiz_attempts must be >= 1".into());
        }
        if self.utc_offset_minutes.abs() >= 24 * 60 {
            return fail("utc_offset_minutes must be within a day".into());
        }
        Ok(())
    }

    /// Week index of an instant: 0 before the start, `w` for days
    /// `[7(w-1), 7w)` after it, and `duration_weeks + 1` after the end.
    pub fn week_of(&self, at: DateTime<Utc>) -> u32 {
        let start = self.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        let secs = (at - start).num_seconds();
        if secs < 0 {
            return 0;
        }
        let week = (secs / (7 * 86_400)) as u64 + 1;
        week.min(self.duration_weeks as u64 + 1) as u32
    }

    /// Weeks `0..=duration_weeks + 1`.
    pub fn all_weeks(&self) -> std::ops::RangeInclusive<u32> {
        0..=self.duration_weeks + 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub user_id: String,
    #[serde(default)]
    pub course_ids: BTreeSet<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl StudentRecord {
    pub fn new(user_id: impl Into<String>, course_id: impl Into<String>) -> Self {
        StudentRecord {
            user_id: user_id.into(),
            course_ids: BTreeSet::from([course_id.into()]),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    fn merge(&mut self, other: StudentRecord) {
        self.course_ids.extend(other.course_ids);
        self.attributes.extend(other.attributes);
    }
}

/// Identity of an event for deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventKey {
    pub course_id: String,
    pub user_id: String,
    pub kind: EventKind,
    pub at: DateTime<Utc>,
    pub payload_digest: [u8; 32],
}

impl EventKey {
    pub fn of(event: &Event) -> Self {
        let payload = serde_json::to_string(&event.activity).expect("payload serializes");
        EventKey {
            course_id: event.course_id.clone(),
            user_id: event.user_id.clone(),
            kind: event.kind(),
            at: event.at,
            payload_digest: Sha256::digest(payload.as_bytes()).into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AppendOutcome {
    pub accepted: usize,
    pub duplicates: usize,
}

/// Conjunctive event filter; `None` fields match everything.
#[derive(Debug, Clone, Default)]
pub struct EventFilter {
    pub course: Option<String>,
    pub user: Option<String>,
    pub kind: Option<EventKind>,
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
    /// Requires `course`.
    pub week: Option<u32>,
}

impl EventFilter {
    pub fn course(course: impl Into<String>) -> Self {
        EventFilter {
            course: Some(course.into()),
            ..Default::default()
        }
    }

    pub fn user(mut self, user: impl Into<String>) -> Self {
        self.user = Some(user.into());
        self
    }

    pub fn kind(mut self, kind: EventKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn week(mut self, week: u32) -> Self {
        self.week = Some(week);
        self
    }
}

/// Immutable view of the store contents.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    courses: BTreeMap<String, CourseConfig>,
    students: BTreeMap<String, StudentRecord>,
    events: Vec<Event>,
    keys: HashSet<EventKey>,
    by_course: HashMap<String, Vec<usize>>,
}

impl Snapshot {
    pub fn courses(&self) -> impl Iterator<Item = &CourseConfig> {
        self.courses.values()
    }

    pub fn course(&self, course_id: &str) -> Result<&CourseConfig, StoreError> {
        self.courses
            .get(course_id)
            .ok_or_else(|| StoreError::UnknownCourse(course_id.to_string()))
    }

    pub fn student(&self, user_id: &str) -> Option<&StudentRecord> {
        self.students.get(user_id)
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentRecord> {
        self.students.values()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// All events of a course in insertion order.
    pub fn course_events<'a>(&'a self, course_id: &str) -> impl Iterator<Item = &'a Event> + 'a {
        self.by_course
            .get(course_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// Registered students of the course plus everyone with an event in it.
    pub fn registrants(&self, course_id: &str) -> Result<BTreeSet<String>, StoreError> {
        self.course(course_id)?;
        let mut set: BTreeSet<String> = self
            .students
            .values()
            .filter(|s| s.course_ids.contains(course_id))
            .map(|s| s.user_id.clone())
            .collect();
        set.extend(self.course_events(course_id).map(|e| e.user_id.clone()));
        Ok(set)
    }

    /// Fails with `UnknownUser` unless the user is a registrant of the course.
    pub fn ensure_registrant(&self, course_id: &str, user_id: &str) -> Result<(), StoreError> {
        self.course(course_id)?;
        let registered = self
            .students
            .get(user_id)
            .is_some_and(|s| s.course_ids.contains(course_id));
        if registered || self.course_events(course_id).any(|e| e.user_id == user_id) {
            Ok(())
        } else {
            Err(StoreError::UnknownUser {
                course: course_id.to_string(),
                user: user_id.to_string(),
            })
        }
    }

    /// Events matching every supplied predicate, ordered by `(at, user_id)`.
    pub fn query_events(&self, filter: &EventFilter) -> Result<Vec<Event>, StoreError> {
        let course = match &filter.course {
            Some(c) => Some(self.course(c)?),
            None => None,
        };
        if filter.week.is_some() && course.is_none() {
            return Err(StoreError::InvalidEvent(
                "a week filter needs a course filter".into(),
            ));
        }
        let candidates: Box<dyn Iterator<Item = &Event>> = match course {
            Some(c) => Box::new(self.course_events(&c.course_id)),
            None => Box::new(self.events.iter()),
        };
        let mut out: Vec<Event> = candidates
            .filter(|e| filter.user.as_ref().is_none_or(|u| &e.user_id == u))
            .filter(|e| filter.kind.is_none_or(|k| e.kind() == k))
            .filter(|e| filter.from.is_none_or(|t| e.at >= t))
            .filter(|e| filter.until.is_none_or(|t| e.at < t))
            .filter(|e| match (filter.week, course) {
                (Some(w), Some(c)) => c.week_of(e.at) == w,
                _ => true,
            })
            .cloned()
            .collect();
        out.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.user_id.cmp(&b.user_id)));
        Ok(out)
    }

    fn insert_event(&mut self, event: Event) {
        let idx = self.events.len();
        self.by_course
            .entry(event.course_id.clone())
            .or_default()
            .push(idx);
        self.events.push(event);
    }

    fn upsert_student(&mut self, record: StudentRecord) {
        match self.students.get_mut(&record.user_id) {
            Some(existing) => existing.merge(record),
            None => {
                self.students.insert(record.user_id.clone(), record);
            }
        }
    }

    /// Materializes one of the fixed table projections, optionally for a
    /// single course.
    pub fn export_table(&self, kind: TableKind, course: Option<&str>) -> Result<Table, StoreError> {
        if let Some(c) = course {
            self.course(c)?;
        }
        let filter = EventFilter {
            course: course.map(str::to_string),
            ..Default::default()
        };
        let events = self.query_events(&filter)?;
        let mut table = Table::with_rows(kind.columns(), Vec::new());
        let ts = |e: &Event| e.at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        match kind {
            TableKind::Courses => {
                for c in self.courses.values().filter(|c| course.is_none_or(|id| id == c.course_id)) {
                    table.push_row(vec![
                        c.course_id.clone(),
                        c.title.clone(),
                        c.start.to_string(),
                        c.duration_weeks.to_string(),
                        fmt_num(c.pass_threshold_pct),
                        c.max_quiz_attempts.to_string(),
                        match c.pass_rule {
                            PassRule::BestOf => "best_of".into(),
                            PassRule::EveryAttempt => "every_attempt".into(),
                        },
                    ]);
                }
            }
            TableKind::Students => {
                for s in self.students.values().filter(|s| course.is_none_or(|c| s.course_ids.contains(c))) {
                    let courses: Vec<&str> = s.course_ids.iter().map(String::as_str).collect();
                    let attrs: Vec<String> = s.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    table.push_row(vec![s.user_id.clone(), courses.join("|"), attrs.join(";")]);
                }
            }
            TableKind::Logins => {
                for e in events.iter().filter(|e| e.kind() == EventKind::Login) {
                    table.push_row(vec![e.user_id.clone(), e.course_id.clone(), ts(e)]);
                }
            }
            TableKind::ForumReads | TableKind::ForumPosts => {
                let want = if kind == TableKind::ForumReads {
                    EventKind::ForumRead
                } else {
                    EventKind::ForumPost
                };
                for e in events.iter().filter(|e| e.kind() == want) {
                    let thread = e.activity.thread_id().unwrap_or_default().to_string();
                    table.push_row(vec![e.user_id.clone(), e.course_id.clone(), thread, ts(e)]);
                }
            }
            TableKind::DownloadedFiles => {
                for e in &events {
                    if let Activity::FileDownload { file_id } = &e.activity {
                        table.push_row(vec![e.user_id.clone(), e.course_id.clone(), file_id.clone(), ts(e)]);
                    }
                }
            }
            TableKind::QuizAttempts => {
                for e in &events {
                    if let Activity::QuizAttempt {
                        quiz_id,
                        attempt_no,
                        score_pct,
                    } = &e.activity
                    {
                        table.push_row(vec![
                            e.user_id.clone(),
                            e.course_id.clone(),
                            quiz_id.clone(),
                            attempt_no.to_string(),
                            fmt_num(*score_pct),
                            ts(e),
                        ]);
                    }
                }
            }
            TableKind::VideoEvents => {
                for e in events.iter().filter(|e| e.kind().is_video()) {
                    let (video, pos) = e.activity.video_position().expect("video event");
                    table.push_row(vec![
                        e.user_id.clone(),
                        e.course_id.clone(),
                        video.to_string(),
                        e.kind().to_string(),
                        pos.to_string(),
                        ts(e),
                    ]);
                }
            }
            TableKind::Files => {
                let mut agg: BTreeMap<(String, String), (usize, BTreeSet<String>)> = BTreeMap::new();
                for e in &events {
                    if let Activity::FileDownload { file_id } = &e.activity {
                        let slot = agg.entry((e.course_id.clone(), file_id.clone())).or_default();
                        slot.0 += 1;
                        slot.1.insert(e.user_id.clone());
                    }
                }
                for ((c, f), (n, users)) in agg {
                    table.push_row(vec![c, f, n.to_string(), users.len().to_string()]);
                }
            }
            TableKind::Forums => {
                let mut agg: BTreeMap<(String, String), (usize, usize, BTreeSet<String>)> = BTreeMap::new();
                for e in &events {
                    if let Some(thread) = e.activity.thread_id() {
                        let slot = agg.entry((e.course_id.clone(), thread.to_string())).or_default();
                        if e.kind() == EventKind::ForumRead {
                            slot.0 += 1;
                        } else {
                            slot.1 += 1;
                        }
                        slot.2.insert(e.user_id.clone());
                    }
                }
                for ((c, t), (reads, posts, users)) in agg {
                    table.push_row(vec![c, t, reads.to_string(), posts.to_string(), users.len().to_string()]);
                }
            }
            TableKind::QuizDetails => {
                // (attempts, participants, score sum, max score)
                type QuizAgg = (usize, BTreeSet<String>, f64, f64);
                let mut agg: BTreeMap<(String, String), QuizAgg> = BTreeMap::new();
                for e in &events {
                    if let Activity::QuizAttempt { quiz_id, score_pct, .. } = &e.activity {
                        let slot = agg
                            .entry((e.course_id.clone(), quiz_id.clone()))
                            .or_insert((0, BTreeSet::new(), 0.0, f64::MIN));
                        slot.0 += 1;
                        slot.1.insert(e.user_id.clone());
                        slot.2 += score_pct;
                        slot.3 = slot.3.max(*score_pct);
                    }
                }
                for ((c, q), (n, users, sum, max)) in agg {
                    table.push_row(vec![
                        c,
                        q,
                        n.to_string(),
                        users.len().to_string(),
                        fmt_num((sum / n as f64 * 100.0).round() / 100.0),
                        fmt_num(max),
                    ]);
                }
            }
            TableKind::Videos => {
                let mut agg: BTreeMap<(String, String), (usize, BTreeSet<String>, u32)> = BTreeMap::new();
                for e in &events {
                    if let Some((video, pos)) = e.activity.video_position() {
                        let slot = agg.entry((e.course_id.clone(), video.to_string())).or_default();
                        slot.0 += 1;
                        slot.1.insert(e.user_id.clone());
                        slot.2 = slot.2.max(pos);
                    }
                }
                for ((c, v), (n, users, max)) in agg {
                    table.push_row(vec![c, v, n.to_string(), users.len().to_string(), max.to_string()]);
                }
            }
        }
        Ok(table)
    }
}

/// Renders a number without a trailing `.0` for whole values.
pub(crate) fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// The twelve table projections of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableKind {
    Courses,
    Files,
    DownloadedFiles,
    Forums,
    ForumReads,
    ForumPosts,
    QuizAttempts,
    Logins,
    QuizDetails,
    Students,
    /// One row per play/pause/complete event.
    VideoEvents,
    /// One row per video with aggregate counts.
    Videos,
}

impl TableKind {
    pub const ALL: [TableKind; 12] = [
        TableKind::Courses,
        TableKind::Files,
        TableKind::DownloadedFiles,
        TableKind::Forums,
        TableKind::ForumReads,
        TableKind::ForumPosts,
        TableKind::QuizAttempts,
        TableKind::Logins,
        TableKind::QuizDetails,
        TableKind::Students,
        TableKind::VideoEvents,
        TableKind::Videos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Courses => "courses",
            TableKind::Files => "files",
            TableKind::DownloadedFiles => "downloaded_files",
            TableKind::Forums => "forums",
            TableKind::ForumReads => "forum_reads",
            TableKind::ForumPosts => "forum_posts",
            TableKind::QuizAttempts => "quiz_attempts",
            TableKind::Logins => "logins",
            TableKind::QuizDetails => "quiz_details",
            TableKind::Students => "students",
            TableKind::VideoEvents => "video_events",
            TableKind::Videos => "videos",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TableKind::Courses => &[
                "course_id",
                "title",
                "start",
                "duration_weeks",
                "pass_threshold_pct",
                "max_quiz_attempts",
                "pass_rule",
            ],
            TableKind::Files => &["course_id", "file_id", "downloads", "downloaders"],
            TableKind::DownloadedFiles => &["user_id", "course_id", "file_id", "at"],
            TableKind::Forums => &["course_id", "thread_id", "reads", "posts", "participants"],
            TableKind::ForumReads | TableKind::ForumPosts => &["user_id", "course_id", "thread_id", "at"],
            TableKind::QuizAttempts => &["user_id", "course_id", "quiz_id", "attempt_no", "score_pct", "at"],
            TableKind::Logins => &["user_id", "course_id", "at"],
            TableKind::QuizDetails => &["course_id", "quiz_id", "attempts", "participants", "mean_score_pct", "max_score_pct"],
            TableKind::Students => &["user_id", "course_ids", "attributes"],
            TableKind::VideoEvents => &["user_id", "course_id", "video_id", "event", "position_seconds", "at"],
            TableKind::Videos => &["course_id", "video_id", "events", "viewers", "max_position_seconds"],
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TableKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StoreError::UnknownTableKind(s.to_string()))
    }
}

/// The store handle. Writes go through `&mut self`; share it behind a lock
/// and hand readers [`EventStore::snapshot`]s.
#[derive(Debug, Clone, Default)]
pub struct EventStore {
    dir: Option<PathBuf>,
    snapshot: Arc<Snapshot>,
}

impl EventStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        EventStore::default()
    }

    /// Opens (creating if needed) a store directory and replays its files.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut snap = Snapshot::default();
        for line in read_lines::<CourseConfig>(&dir.join(COURSES_FILE))? {
            snap.courses.insert(line.course_id.clone(), line);
        }
        for line in read_lines::<StudentRecord>(&dir.join(STUDENTS_FILE))? {
            snap.upsert_student(line);
        }
        for event in read_lines::<Event>(&dir.join(EVENTS_FILE))? {
            if snap.keys.insert(EventKey::of(&event)) {
                snap.insert_event(event);
            }
        }
        Ok(EventStore {
            dir: Some(dir),
            snapshot: Arc::new(snap),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot)
    }

    pub fn register_course(&mut self, course: CourseConfig) -> Result<(), StoreError> {
        course.validate()?;
        self.append_lines(COURSES_FILE, &[serde_json::to_string(&course).expect("serializes")])?;
        Arc::make_mut(&mut self.snapshot)
            .courses
            .insert(course.course_id.clone(), course);
        Ok(())
    }

    pub fn register_student(&mut self, student: StudentRecord) -> Result<(), StoreError> {
        if student.user_id.is_empty() {
            return Err(StoreError::InvalidEvent("empty user_id".into()));
        }
        self.append_lines(STUDENTS_FILE, &[serde_json::to_string(&student).expect("serializes")])?;
        Arc::make_mut(&mut self.snapshot).upsert_student(student);
        Ok(())
    }

    /// Appends a batch, dropping events whose [`EventKey`] is already stored
    /// (or repeated within the batch). Either the whole batch is persisted or
    /// nothing changes.
    pub fn append_events(&mut self, events: impl IntoIterator<Item = Event>) -> Result<AppendOutcome, StoreError> {
        let mut outcome = AppendOutcome::default();
        let mut fresh_keys = HashSet::new();
        let mut fresh = Vec::new();
        for event in events {
            event.activity.validate().map_err(StoreError::InvalidEvent)?;
            let key = EventKey::of(&event);
            if self.snapshot.keys.contains(&key) || !fresh_keys.insert(key) {
                outcome.duplicates += 1;
            } else {
                fresh.push(event);
            }
        }
        outcome.accepted = fresh.len();
        if fresh.is_empty() {
            return Ok(outcome);
        }
        let lines: Vec<String> = fresh.iter().map(Event::to_canonical_json).collect();
        self.append_lines(EVENTS_FILE, &lines)?;
        let snap = Arc::make_mut(&mut self.snapshot);
        snap.keys.extend(fresh_keys);
        for e in fresh {
            snap.insert_event(e);
        }
        Ok(outcome)
    }

    fn append_lines(&self, file: &str, lines: &[String]) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(file))?;
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let last = lines.len();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // A torn final line from an interrupted append is dropped.
            Err(_) if i + 1 == last => {}
            Err(e) => {
                return Err(StoreError::Corrupt {
                    file: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    fn course() -> CourseConfig {
        CourseConfig::new("gol", "Gratis Online Lernen", NaiveDate::from_ymd_opt(2014, 10, 6).unwrap(), 8, 50.0)
    }

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2014, 10, 6, 0, 0, 0).unwrap()
    }

    fn login(user: &str, secs: i64) -> Event {
        Event::new("gol", user, start() + Duration::seconds(secs), Activity::Login)
    }

    #[test]
    fn dedup_batch_twice() {
        let mut s = EventStore::in_memory();
        s.register_course(course()).unwrap();
        let batch: Vec<Event> = (0..10).map(|i| login("u", i * 60)).collect();
        assert_eq!(s.append_events(batch.clone()).unwrap(), AppendOutcome { accepted: 10, duplicates: 0 });
        assert_eq!(s.append_events(batch).unwrap(), AppendOutcome { accepted: 0, duplicates: 10 });
        assert_eq!(s.append_events(vec![]).unwrap(), AppendOutcome::default());
    }

    #[test]
    fn payload_difference_is_not_duplicate() {
        let mut s = EventStore::in_memory();
        let video = |pos| {
            Event::new("gol", "u", start(), Activity::VideoPause { video_id: "v1".into(), position_seconds: pos })
        };
        let out = s.append_events(vec![video(10), video(11)]).unwrap();
        assert_eq!(out.accepted, 2);
    }

    #[test]
    fn duplicates_inside_one_batch() {
        let mut s = EventStore::in_memory();
        let out = s.append_events(vec![login("u", 0), login("u", 0)]).unwrap();
        assert_eq!(out, AppendOutcome { accepted: 1, duplicates: 1 });
    }

    #[test]
    fn week_boundaries() {
        let c = course();
        assert_eq!(c.week_of(start() + Duration::days(3)), 1);
        assert_eq!(c.week_of(start() + Duration::days(7)), 2);
        assert_eq!(c.week_of(start() + Duration::days(7) - Duration::seconds(1)), 1);
        assert_eq!(c.week_of(start() - Duration::days(2)), 0);
        assert_eq!(c.week_of(start() + Duration::days(7 * 8)), 9);
        assert_eq!(c.week_of(start() + Duration::days(400)), 9);
    }

    #[test]
    fn week_filter_query() {
        let mut s = EventStore::in_memory();
        s.register_course(course()).unwrap();
        s.append_events(vec![login("a", 3 * 86_400), login("b", 7 * 86_400), login("c", -2 * 86_400)]).unwrap();
        let snap = s.snapshot();
        let users = |w| -> Vec<String> {
            snap.query_events(&EventFilter::course("gol").week(w)).unwrap().into_iter().map(|e| e.user_id).collect()
        };
        assert_eq!(users(1), vec!["a"]);
        assert_eq!(users(2), vec!["b"]);
        assert_eq!(users(0), vec!["c"]);
    }

    #[test]
    fn query_ordering_and_unknown_course() {
        let mut s = EventStore::in_memory();
        s.register_course(course()).unwrap();
        assert!(s.snapshot().query_events(&EventFilter::default()).unwrap().is_empty());
        s.append_events(vec![login("b", 10), login("a", 10), login("c", 5)]).unwrap();
        let order: Vec<String> = s
            .snapshot()
            .query_events(&EventFilter::default())
            .unwrap()
            .into_iter()
            .map(|e| e.user_id)
            .collect();
        assert_eq!(order, vec!["c", "a", "b"]);
        assert!(matches!(
            s.snapshot().query_events(&EventFilter::course("nope")),
            Err(StoreError::UnknownCourse(_))
        ));
    }

    #[test]
    fn export_projections() {
        let mut s = EventStore::in_memory();
        s.register_course(course()).unwrap();
        let mut lin = course();
        lin.course_id = "lin".into();
        s.register_course(lin).unwrap();
        s.append_events(vec![login("a", 1), login("b", 2), login("c", 3)]).unwrap();
        s.append_events(vec![Event::new(
            "gol",
            "a",
            start(),
            Activity::QuizAttempt { quiz_id: "q1".into(), attempt_no: 1, score_pct: 72.5 },
        )])
        .unwrap();
        let snap = s.snapshot();
        let logins = snap.export_table(TableKind::Logins, None).unwrap();
        assert_eq!(logins.header, vec!["user_id", "course_id", "at"]);
        assert_eq!(logins.row_count(), 3);
        let quiz = snap.export_table(TableKind::QuizAttempts, Some("gol")).unwrap();
        assert_eq!(quiz.rows, vec![vec!["a", "gol", "q1", "1", "72.5", "2014-10-06T00:00:00Z"]]);
        assert_eq!(snap.export_table(TableKind::Courses, None).unwrap().row_count(), 2);
        assert!(matches!("bogus".parse::<TableKind>(), Err(StoreError::UnknownTableKind(_))));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = EventStore::open(dir.path()).unwrap();
            s.register_course(course()).unwrap();
            s.register_student(StudentRecord::new("a", "gol").with_attribute("class", "pupil")).unwrap();
            s.append_events(vec![login("a", 1), login("b", 2)]).unwrap();
        }
        let mut s = EventStore::open(dir.path()).unwrap();
        let snap = s.snapshot();
        assert_eq!(snap.event_count(), 2);
        assert_eq!(snap.course("gol").unwrap(), &course());
        assert_eq!(snap.student("a").unwrap().attributes["class"], "pupil");
        assert_eq!(s.append_events(vec![login("a", 1)]).unwrap().duplicates, 1);
    }

    #[test]
    fn torn_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = EventStore::open(dir.path()).unwrap();
            s.append_events(vec![login("a", 1)]).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(EVENTS_FILE)).unwrap();
        f.write_all(b"{\"course_id\":\"gol\",\"us").unwrap();
        assert_eq!(EventStore::open(dir.path()).unwrap().snapshot().event_count(), 1);
    }

    #[test]
    fn snapshots_are_isolated_from_later_appends() {
        let mut s = EventStore::in_memory();
        s.append_events(vec![login("a", 1)]).unwrap();
        let before = s.snapshot();
        s.append_events(vec![login("b", 1)]).unwrap();
        assert_eq!(before.event_count(), 1);
        assert_eq!(s.snapshot().event_count(), 2);
    }

    #[test]
    fn course_validation() {
        let mut c = course();
        c.pass_threshold_pct = 0.0;
        assert!(c.validate().is_err());
        c.pass_threshold_pct = 100.0;
        c.duration_weeks = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn registrants_include_event_only_users() {
        let mut s = EventStore::in_memory();
        s.register_course(course()).unwrap();
        s.register_student(StudentRecord::new("quiet", "gol")).unwrap();
        s.append_events(vec![login("loud", 1)]).unwrap();
        let r = s.snapshot().registrants("gol").unwrap();
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec!["loud", "quiet"]);
        assert!(s.snapshot().ensure_registrant("gol", "ghost").is_err());
    }
}
