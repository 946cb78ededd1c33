//! Per-student and per-course engagement indicators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{self, ActiveDefinition};
use crate::event::{Activity, Event, EventKind};
use crate::stats::{self, BoxStats, Correlation, StatsError};
use crate::store::{CourseConfig, PassRule, Snapshot, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum IndicatorError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown video `{0}`")]
    UnknownVideo(String),
    #[error("user `{user}` has {attempts} attempts on quiz `{quiz_id}` (limit {limit})")]
    AttemptLimitExceeded {
        user: String,
        quiz_id: String,
        attempts: usize,
        limit: u32,
    },
    #[error("no observations")]
    NoObservations,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// The weekly count channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Logins,
    ForumReads,
    ForumPosts,
    VideoEvents,
    QuizAttempts,
    Downloads,
}

impl Indicator {
    pub const ALL: [Indicator; 6] = [
        Indicator::Logins,
        Indicator::ForumReads,
        Indicator::ForumPosts,
        Indicator::VideoEvents,
        Indicator::QuizAttempts,
        Indicator::Downloads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Logins => "logins",
            Indicator::ForumReads => "forum_reads",
            Indicator::ForumPosts => "forum_posts",
            Indicator::VideoEvents => "video_events",
            Indicator::QuizAttempts => "quiz_attempts",
            Indicator::Downloads => "downloads",
        }
    }

    pub fn of_kind(kind: EventKind) -> Option<Indicator> {
        Some(match kind {
            EventKind::Login => Indicator::Logins,
            EventKind::ForumRead => Indicator::ForumReads,
            EventKind::ForumPost => Indicator::ForumPosts,
            EventKind::VideoPlay | EventKind::VideoPause | EventKind::VideoComplete => Indicator::VideoEvents,
            EventKind::QuizAttempt => Indicator::QuizAttempts,
            EventKind::FileDownload => Indicator::Downloads,
            _ => return None,
        })
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Indicator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown indicator `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeeklyIndicators {
    pub user_id: String,
    pub week: u32,
    pub logins: u64,
    pub forum_reads: u64,
    pub forum_posts: u64,
    pub video_events: u64,
    pub quiz_attempts: u64,
    pub downloads: u64,
}

impl WeeklyIndicators {
    pub fn empty(user_id: &str, week: u32) -> Self {
        WeeklyIndicators {
            user_id: user_id.to_string(),
            week,
            ..Default::default()
        }
    }

    pub fn get(&self, indicator: Indicator) -> u64 {
        match indicator {
            Indicator::Logins => self.logins,
            Indicator::ForumReads => self.forum_reads,
            Indicator::ForumPosts => self.forum_posts,
            Indicator::VideoEvents => self.video_events,
            Indicator::QuizAttempts => self.quiz_attempts,
            Indicator::Downloads => self.downloads,
        }
    }

    fn slot(&mut self, indicator: Indicator) -> &mut u64 {
        match indicator {
            Indicator::Logins => &mut self.logins,
            Indicator::ForumReads => &mut self.forum_reads,
            Indicator::ForumPosts => &mut self.forum_posts,
            Indicator::VideoEvents => &mut self.video_events,
            Indicator::QuizAttempts => &mut self.quiz_attempts,
            Indicator::Downloads => &mut self.downloads,
        }
    }

    pub fn record(&mut self, kind: EventKind) {
        if let Some(i) = Indicator::of_kind(kind) {
            *self.slot(i) += 1;
        }
    }

    pub fn total(&self) -> u64 {
        Indicator::ALL.iter().map(|i| self.get(*i)).sum()
    }
}

fn empty_weeks(course: &CourseConfig, user: &str) -> Vec<WeeklyIndicators> {
    course.all_weeks().map(|w| WeeklyIndicators::empty(user, w)).collect()
}

/// One row per week `0..=duration_weeks + 1`, zero rows included.
pub fn weekly_indicators(snap: &Snapshot, course_id: &str, user: &str) -> Result<Vec<WeeklyIndicators>, IndicatorError> {
    snap.ensure_registrant(course_id, user)?;
    let course = snap.course(course_id)?;
    let mut weeks = empty_weeks(course, user);
    for e in snap.course_events(course_id).filter(|e| e.user_id == user) {
        weeks[course.week_of(e.at) as usize].record(e.kind());
    }
    Ok(weeks)
}

/// Weekly indicators for every registrant, keyed by user.
pub fn weekly_by_user(snap: &Snapshot, course_id: &str) -> Result<BTreeMap<String, Vec<WeeklyIndicators>>, IndicatorError> {
    let course = snap.course(course_id)?;
    let mut out: BTreeMap<String, Vec<WeeklyIndicators>> = snap
        .registrants(course_id)?
        .into_iter()
        .map(|u| {
            let weeks = empty_weeks(course, &u);
            (u, weeks)
        })
        .collect();
    for e in snap.course_events(course_id) {
        if let Some(weeks) = out.get_mut(&e.user_id) {
            weeks[course.week_of(e.at) as usize].record(e.kind());
        }
    }
    Ok(out)
}

/// Course-wide weekly totals for one indicator over weeks `1..=duration_weeks`.
pub fn weekly_series(snap: &Snapshot, course_id: &str, indicator: Indicator) -> Result<Vec<u64>, IndicatorError> {
    let course = snap.course(course_id)?;
    let mut series = vec![0u64; course.duration_weeks as usize];
    for e in snap.course_events(course_id) {
        if Indicator::of_kind(e.kind()) == Some(indicator) {
            let w = course.week_of(e.at);
            if (1..=course.duration_weeks).contains(&w) {
                series[w as usize - 1] += 1;
            }
        }
    }
    Ok(series)
}

/// How "videos watched" is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoCounting {
    /// Distinct videos with at least one play/pause/complete event.
    #[default]
    DistinctVideos,
    /// Every play/pause/complete event.
    RawEvents,
}

/// The four clustering features of one student.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementVector {
    pub user_id: String,
    pub reading_freq: u64,
    pub writing_freq: u64,
    pub videos_watched: u64,
    pub quiz_attempts: u64,
}

impl EngagementVector {
    pub const VARIABLES: [&'static str; 4] = ["reading_freq", "writing_freq", "videos_watched", "quiz_attempts"];

    pub fn values(&self) -> [f64; 4] {
        [
            self.reading_freq as f64,
            self.writing_freq as f64,
            self.videos_watched as f64,
            self.quiz_attempts as f64,
        ]
    }
}

/// Whole-course totals of every per-student metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StudentTotals {
    pub user_id: String,
    pub logins: u64,
    pub forum_reads: u64,
    pub forum_posts: u64,
    pub video_events: u64,
    pub videos_watched: u64,
    pub quiz_attempts: u64,
    pub downloads: u64,
    /// Mean of the recorded (best) score over attempted quizzes; 0 if none.
    pub quiz_score: f64,
}

/// Per-student metrics selectable for comparisons and clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Logins,
    ForumReads,
    ForumPosts,
    VideoEvents,
    VideosWatched,
    QuizAttempts,
    Downloads,
    QuizScore,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Logins,
        Metric::ForumReads,
        Metric::ForumPosts,
        Metric::VideoEvents,
        Metric::VideosWatched,
        Metric::QuizAttempts,
        Metric::Downloads,
        Metric::QuizScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Logins => "logins",
            Metric::ForumReads => "forum_reads",
            Metric::ForumPosts => "forum_posts",
            Metric::VideoEvents => "video_events",
            Metric::VideosWatched => "videos_watched",
            Metric::QuizAttempts => "quiz_attempts",
            Metric::Downloads => "downloads",
            Metric::QuizScore => "quiz_score",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

impl StudentTotals {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Logins => self.logins as f64,
            Metric::ForumReads => self.forum_reads as f64,
            Metric::ForumPosts => self.forum_posts as f64,
            Metric::VideoEvents => self.video_events as f64,
            Metric::VideosWatched => self.videos_watched as f64,
            Metric::QuizAttempts => self.quiz_attempts as f64,
            Metric::Downloads => self.downloads as f64,
            Metric::QuizScore => self.quiz_score,
        }
    }

    pub fn engagement(&self, counting: VideoCounting) -> EngagementVector {
        EngagementVector {
            user_id: self.user_id.clone(),
            reading_freq: self.forum_reads,
            writing_freq: self.forum_posts,
            videos_watched: match counting {
                VideoCounting::DistinctVideos => self.videos_watched,
                VideoCounting::RawEvents => self.video_events,
            },
            quiz_attempts: self.quiz_attempts,
        }
    }
}

fn totals_from_events<'a>(user: &str, events: impl Iterator<Item = &'a Event>) -> StudentTotals {
    let mut t = StudentTotals {
        user_id: user.to_string(),
        ..Default::default()
    };
    let mut videos = BTreeSet::new();
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for e in events {
        match &e.activity {
            Activity::Login => t.logins += 1,
            Activity::ForumRead { .. } => t.forum_reads += 1,
            Activity::ForumPost { .. } => t.forum_posts += 1,
            Activity::FileDownload { .. } => t.downloads += 1,
            Activity::QuizAttempt { quiz_id, score_pct, .. } => {
                t.quiz_attempts += 1;
                let slot = best.entry(quiz_id.as_str()).or_insert(0.0);
                *slot = slot.max(*score_pct);
            }
            a => {
                if let Some((video, _)) = a.video_position() {
                    t.video_events += 1;
                    videos.insert(video);
                }
            }
        }
    }
    t.videos_watched = videos.len() as u64;
    if !best.is_empty() {
        t.quiz_score = best.values().sum::<f64>() / best.len() as f64;
    }
    t
}

/// Whole-course totals for every registrant, sorted by user id.
pub fn student_totals(snap: &Snapshot, course_id: &str) -> Result<Vec<StudentTotals>, IndicatorError> {
    let registrants = snap.registrants(course_id)?;
    let mut by_user: BTreeMap<&str, Vec<&Event>> = registrants.iter().map(|u| (u.as_str(), Vec::new())).collect();
    for e in snap.course_events(course_id) {
        if let Some(v) = by_user.get_mut(e.user_id.as_str()) {
            v.push(e);
        }
    }
    Ok(by_user
        .into_iter()
        .map(|(u, events)| totals_from_events(u, events.into_iter()))
        .collect())
}

pub fn engagement_vector(
    snap: &Snapshot,
    course_id: &str,
    user: &str,
    counting: VideoCounting,
) -> Result<EngagementVector, IndicatorError> {
    snap.ensure_registrant(course_id, user)?;
    let totals = totals_from_events(user, snap.course_events(course_id).filter(|e| e.user_id == user));
    Ok(totals.engagement(counting))
}

pub fn engagement_vectors(snap: &Snapshot, course_id: &str, counting: VideoCounting) -> Result<Vec<EngagementVector>, IndicatorError> {
    Ok(student_totals(snap, course_id)?
        .iter()
        .map(|t| t.engagement(counting))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuizSummary {
    pub user_id: String,
    pub quiz_id: String,
    /// Scores in attempt order.
    pub attempts: Vec<f64>,
    /// Highest attempt score.
    pub recorded: f64,
    pub passed: bool,
}

pub fn passes(attempts: &[f64], threshold: f64, rule: PassRule) -> bool {
    if attempts.is_empty() {
        return false;
    }
    match rule {
        PassRule::BestOf => attempts.iter().copied().fold(f64::MIN, f64::max) >= threshold,
        PassRule::EveryAttempt => attempts.iter().all(|s| *s >= threshold),
    }
}

fn summarize_quizzes<'a>(
    course: &CourseConfig,
    user: &str,
    events: impl Iterator<Item = &'a Event>,
) -> Result<Vec<QuizSummary>, IndicatorError> {
    // quiz -> (attempt_no, at, score)
    type Attempt = (u32, chrono::DateTime<chrono::Utc>, f64);
    let mut per_quiz: BTreeMap<&str, Vec<Attempt>> = BTreeMap::new();
    for e in events {
        if let Activity::QuizAttempt {
            quiz_id,
            attempt_no,
            score_pct,
        } = &e.activity
        {
            per_quiz.entry(quiz_id).or_default().push((*attempt_no, e.at, *score_pct));
        }
    }
    per_quiz
        .into_iter()
        .map(|(quiz, mut attempts)| {
            if attempts.len() > course.max_quiz_attempts as usize {
                return Err(IndicatorError::AttemptLimitExceeded {
                    user: user.to_string(),
                    quiz_id: quiz.to_string(),
                    attempts: attempts.len(),
                    limit: course.max_quiz_attempts,
                });
            }
            attempts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let scores: Vec<f64> = attempts.iter().map(|a| a.2).collect();
            Ok(QuizSummary {
                user_id: user.to_string(),
                quiz_id: quiz.to_string(),
                recorded: scores.iter().copied().fold(f64::MIN, f64::max),
                passed: passes(&scores, course.pass_threshold_pct, course.pass_rule),
                attempts: scores,
            })
        })
        .collect()
}

/// Best-of summaries for every quiz the user attempted.
pub fn quiz_summary(snap: &Snapshot, course_id: &str, user: &str) -> Result<Vec<QuizSummary>, IndicatorError> {
    snap.ensure_registrant(course_id, user)?;
    let course = snap.course(course_id)?;
    summarize_quizzes(course, user, snap.course_events(course_id).filter(|e| e.user_id == user))
}

/// Quiz summaries of every registrant.
pub fn quiz_summaries_by_user(snap: &Snapshot, course_id: &str) -> Result<BTreeMap<String, Vec<QuizSummary>>, IndicatorError> {
    let course = snap.course(course_id)?;
    let mut by_user: BTreeMap<String, Vec<&Event>> = snap.registrants(course_id)?.into_iter().map(|u| (u, Vec::new())).collect();
    for e in snap.course_events(course_id) {
        if matches!(e.activity, Activity::QuizAttempt { .. }) {
            if let Some(v) = by_user.get_mut(&e.user_id) {
                v.push(e);
            }
        }
    }
    by_user
        .into_iter()
        .map(|(u, events)| {
            let s = summarize_quizzes(course, &u, events.into_iter())?;
            Ok((u, s))
        })
        .collect()
}

/// Activity axis of the profile matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileActivity {
    ForumPosts,
    ForumReads,
    QuizTrials,
    VideoClicks,
}

impl ProfileActivity {
    pub const ALL: [ProfileActivity; 4] = [
        ProfileActivity::ForumPosts,
        ProfileActivity::ForumReads,
        ProfileActivity::QuizTrials,
        ProfileActivity::VideoClicks,
    ];

    fn of(w: &WeeklyIndicators, a: ProfileActivity) -> u64 {
        match a {
            ProfileActivity::ForumPosts => w.forum_posts,
            ProfileActivity::ForumReads => w.forum_reads,
            ProfileActivity::QuizTrials => w.quiz_attempts,
            ProfileActivity::VideoClicks => w.video_events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub user_id: String,
    /// Value of the `class` student attribute (e.g. `pupil`), if registered.
    pub class: Option<String>,
    pub certified: bool,
    /// `counts[week][activity]` in [`ProfileActivity::ALL`] order.
    pub counts: Vec<[u64; 4]>,
}

/// Activities × weeks × students, annotated with class and certification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityProfile {
    pub course_id: String,
    pub activities: Vec<ProfileActivity>,
    pub weeks: Vec<u32>,
    pub students: Vec<ProfileRow>,
}

impl ActivityProfile {
    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn class_count(&self, class: Option<&str>) -> usize {
        self.students.iter().filter(|s| s.class.as_deref() == class).count()
    }

    pub fn certified_count(&self, class: Option<&str>) -> usize {
        self.students
            .iter()
            .filter(|s| s.certified && s.class.as_deref() == class)
            .count()
    }

    pub fn total(&self, activity: ProfileActivity, class: Option<&str>) -> u64 {
        let idx = ProfileActivity::ALL.iter().position(|a| *a == activity).expect("listed");
        self.students
            .iter()
            .filter(|s| s.class.as_deref() == class)
            .flat_map(|s| s.counts.iter().map(move |c| c[idx]))
            .sum()
    }

    /// Mean per student of the given class; `None` for an empty class.
    pub fn mean_per_student(&self, activity: ProfileActivity, class: Option<&str>) -> Option<f64> {
        let n = self.class_count(class);
        (n > 0).then(|| self.total(activity, class) as f64 / n as f64)
    }
}

pub fn activity_profile(snap: &Snapshot, course_id: &str) -> Result<ActivityProfile, IndicatorError> {
    let course = snap.course(course_id)?;
    let membership = cohort::membership(snap, course_id, ActiveDefinition::default())
        .map_err(|e| match e {
            cohort::CohortError::Indicator(i) => i,
            other => IndicatorError::Store(StoreError::InvalidEvent(other.to_string())),
        })?;
    let weekly = weekly_by_user(snap, course_id)?;
    let students = weekly
        .into_iter()
        .map(|(user, weeks)| ProfileRow {
            class: snap.student(&user).and_then(|s| s.attributes.get("class").cloned()),
            certified: membership.certified.contains(&user),
            counts: weeks
                .iter()
                .map(|w| ProfileActivity::ALL.map(|a| ProfileActivity::of(w, a)))
                .collect(),
            user_id: user,
        })
        .collect();
    Ok(ActivityProfile {
        course_id: course_id.to_string(),
        activities: ProfileActivity::ALL.to_vec(),
        weeks: course.all_weeks().collect(),
        students,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// 101 positions, 0% to 100% of the video length.
    Percent,
    /// One position per second up to the furthest observed position.
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionCurve {
    pub video_id: String,
    pub granularity: Granularity,
    /// Longest observed position, taken as the video length.
    pub duration_seconds: u32,
    pub viewers: usize,
    pub positions: Vec<u32>,
    /// Viewers whose furthest position is at or after each position.
    pub watchers_at: Vec<usize>,
    /// Watchers plus repeated passes over each position.
    pub views_at: Vec<usize>,
    /// Share of viewers whose furthest position is exactly here (never at the last position).
    pub drop_ratio_at: Vec<f64>,
}

/// Retention estimated from play/pause/complete positions: each viewer is
/// counted as present up to the furthest position they reached.
pub fn video_retention(
    snap: &Snapshot,
    course_id: &str,
    video_id: &str,
    granularity: Granularity,
) -> Result<RetentionCurve, IndicatorError> {
    snap.course(course_id)?;
    let mut per_viewer: BTreeMap<&str, Vec<(&Event, u32)>> = BTreeMap::new();
    for e in snap.course_events(course_id) {
        if let Some((v, pos)) = e.activity.video_position() {
            if v == video_id {
                per_viewer.entry(e.user_id.as_str()).or_default().push((e, pos));
            }
        }
    }
    if per_viewer.is_empty() {
        return Err(IndicatorError::UnknownVideo(video_id.to_string()));
    }
    let duration = per_viewer.values().flatten().map(|(_, p)| *p).max().unwrap_or(0);
    let to_index = |pos: u32| -> usize {
        match granularity {
            Granularity::Second => pos as usize,
            Granularity::Percent if duration == 0 => 0,
            Granularity::Percent => (pos as u64 * 100 / duration as u64) as usize,
        }
    };
    let len = match granularity {
        Granularity::Second => duration as usize + 1,
        Granularity::Percent => 101,
    };
    let last = to_index(duration);
    let mut furthest_hist = vec![0usize; len];
    let mut replays = vec![0usize; len];
    for events in per_viewer.values_mut() {
        events.sort_by_key(|(e, _)| e.at);
        let furthest = events.iter().map(|(_, p)| *p).max().unwrap_or(0);
        furthest_hist[to_index(furthest)] += 1;
        // Coverage from each play to the position of the following pause/complete.
        let mut cover = vec![0i64; len + 1];
        for (i, (e, pos)) in events.iter().enumerate() {
            if e.kind() != EventKind::VideoPlay {
                continue;
            }
            let end = match events.get(i + 1) {
                Some((next, p)) if next.kind() != EventKind::VideoPlay && *p >= *pos => *p,
                _ => *pos,
            };
            cover[to_index(*pos)] += 1;
            cover[to_index(end) + 1] -= 1;
        }
        let mut running = 0i64;
        for (p, slot) in replays.iter_mut().enumerate() {
            running += cover[p];
            if running > 1 {
                *slot += (running - 1) as usize;
            }
        }
    }
    let viewers = per_viewer.len();
    let mut watchers_at = vec![0usize; len];
    let mut remaining = viewers;
    for p in 0..len {
        watchers_at[p] = remaining;
        remaining -= furthest_hist[p];
    }
    let views_at = watchers_at.iter().zip(&replays).map(|(w, r)| w + r).collect();
    let drop_ratio_at = (0..len)
        .map(|p| if p < last { furthest_hist[p] as f64 / viewers as f64 } else { 0.0 })
        .collect();
    Ok(RetentionCurve {
        video_id: video_id.to_string(),
        granularity,
        duration_seconds: duration,
        viewers,
        positions: (0..len as u32).collect(),
        watchers_at,
        views_at,
        drop_ratio_at,
    })
}

pub const DEFAULT_DELAY_CAP_SECONDS: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayGroup {
    pub group: String,
    pub stats: Option<BoxStats>,
    /// Observations above the cap, left out of `stats`.
    pub excluded_over_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayReport {
    pub cap_seconds: f64,
    pub week: Option<u32>,
    pub certified: DelayGroup,
    pub non_certified: DelayGroup,
}

/// Box statistics of in-video question reaction delays, split by certification.
pub fn reaction_delay_stats(
    snap: &Snapshot,
    course_id: &str,
    cap_seconds: f64,
    week: Option<u32>,
) -> Result<DelayReport, IndicatorError> {
    let course = snap.course(course_id)?;
    let membership = cohort::membership(snap, course_id, ActiveDefinition::default()).map_err(|e| match e {
        cohort::CohortError::Indicator(i) => i,
        other => IndicatorError::Store(StoreError::InvalidEvent(other.to_string())),
    })?;
    let mut values: [(Vec<f64>, usize); 2] = Default::default();
    for e in snap.course_events(course_id) {
        let Activity::VideoQuestion { delay_seconds, .. } = e.activity else {
            continue;
        };
        if week.is_some_and(|w| course.week_of(e.at) != w) {
            continue;
        }
        let slot = &mut values[usize::from(!membership.certified.contains(&e.user_id))];
        if delay_seconds > cap_seconds {
            slot.1 += 1;
        } else {
            slot.0.push(delay_seconds);
        }
    }
    if values.iter().all(|(v, excluded)| v.is_empty() && *excluded == 0) {
        return Err(IndicatorError::NoObservations);
    }
    let [(cert, cert_x), (non, non_x)] = values;
    Ok(DelayReport {
        cap_seconds,
        week,
        certified: DelayGroup {
            group: "certified".into(),
            stats: stats::tukey_box(&cert),
            excluded_over_cap: cert_x,
        },
        non_certified: DelayGroup {
            group: "non_certified".into(),
            stats: stats::tukey_box(&non),
            excluded_over_cap: non_x,
        },
    })
}

/// Event counts of one kind per course-local hour of day.
pub fn hourly_rhythm(snap: &Snapshot, course_id: &str, kind: EventKind) -> Result<[u64; 24], IndicatorError> {
    let course = snap.course(course_id)?;
    let mut hours = [0u64; 24];
    for e in snap.course_events(course_id).filter(|e| e.kind() == kind) {
        let local = crate::logparse::local_time(e.at, course.utc_offset_minutes);
        hours[chrono::Timelike::hour(&local) as usize] += 1;
    }
    Ok(hours)
}

/// Two metrics side by side for every registrant, with their correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricComparison {
    pub x: Metric,
    pub y: Metric,
    pub users: Vec<String>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub correlation: Option<Correlation>,
}

pub fn compare_metrics(snap: &Snapshot, course_id: &str, x: Metric, y: Metric) -> Result<MetricComparison, IndicatorError> {
    let totals = student_totals(snap, course_id)?;
    let xs: Vec<f64> = totals.iter().map(|t| t.get(x)).collect();
    let ys: Vec<f64> = totals.iter().map(|t| t.get(y)).collect();
    Ok(MetricComparison {
        x,
        y,
        users: totals.into_iter().map(|t| t.user_id).collect(),
        correlation: stats::pearson(&xs, &ys).ok(),
        xs,
        ys,
    })
}
