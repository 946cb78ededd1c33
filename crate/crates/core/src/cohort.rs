//! Student categories, dropout rates, dropout-point detection and success-rate scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::event::{Activity, EventKind};
use crate::indicators::{self, Indicator, IndicatorError, WeeklyIndicators};
use crate::store::Snapshot;

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error("series has {0} weeks, need at least 3")]
    SeriesTooShort(usize),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
}

impl From<crate::store::StoreError> for CohortError {
    fn from(e: crate::store::StoreError) -> Self {
        CohortError::Indicator(IndicatorError::Store(e))
    }
}

/// Which interactions make a registrant active.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveDefinition {
    /// Watched a video, posted in the forum, or attempted a quiz.
    #[default]
    VideoPostQuiz,
    /// Posted in the forum, read the forum, or attempted a quiz.
    PostReadQuiz,
}

impl ActiveDefinition {
    pub fn qualifies(self, kind: EventKind) -> bool {
        match self {
            ActiveDefinition::VideoPostQuiz => {
                kind.is_video() || matches!(kind, EventKind::ForumPost | EventKind::QuizAttempt)
            }
            ActiveDefinition::PostReadQuiz => {
                matches!(kind, EventKind::ForumPost | EventKind::ForumRead | EventKind::QuizAttempt)
            }
        }
    }
}

/// Nested category membership: certified ⊆ completers ⊆ active ⊆ registrants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Membership {
    pub registrants: BTreeSet<String>,
    pub active: BTreeSet<String>,
    pub completers: BTreeSet<String>,
    pub certified: BTreeSet<String>,
}

impl Membership {
    pub fn dropped(&self) -> BTreeSet<String> {
        self.active.difference(&self.certified).cloned().collect()
    }
}

/// Quizzes a completer must pass: the configured list, or every quiz seen in the course.
pub fn course_quizzes(snap: &Snapshot, course_id: &str) -> Result<BTreeSet<String>, CohortError> {
    let course = snap.course(course_id)?;
    if !course.quizzes.is_empty() {
        return Ok(course.quizzes.iter().cloned().collect());
    }
    Ok(snap
        .course_events(course_id)
        .filter_map(|e| match &e.activity {
            Activity::QuizAttempt { quiz_id, .. } => Some(quiz_id.clone()),
            _ => None,
        })
        .collect())
}

pub fn membership(snap: &Snapshot, course_id: &str, def: ActiveDefinition) -> Result<Membership, CohortError> {
    let registrants = snap.registrants(course_id)?;
    let mut active = BTreeSet::new();
    let mut claimed = BTreeSet::new();
    for e in snap.course_events(course_id) {
        if def.qualifies(e.kind()) {
            active.insert(e.user_id.clone());
        }
        if e.kind() == EventKind::Certificate {
            claimed.insert(e.user_id.clone());
        }
    }
    let required = course_quizzes(snap, course_id)?;
    let summaries = indicators::quiz_summaries_by_user(snap, course_id)?;
    let completers: BTreeSet<String> = if required.is_empty() {
        BTreeSet::new()
    } else {
        active
            .iter()
            .filter(|u| {
                let passed: BTreeSet<&str> = summaries
                    .get(*u)
                    .into_iter()
                    .flatten()
                    .filter(|s| s.passed)
                    .map(|s| s.quiz_id.as_str())
                    .collect();
                required.iter().all(|q| passed.contains(q.as_str()))
            })
            .cloned()
            .collect()
    };
    let certified = completers.intersection(&claimed).cloned().collect();
    Ok(Membership {
        registrants,
        active,
        completers,
        certified,
    })
}

/// Category ratios in percent of registrants; `None` when there are no registrants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryRatios {
    pub active: Option<f64>,
    pub completers: Option<f64>,
    pub certified: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub course_id: String,
    pub registrants: u64,
    pub active: u64,
    pub completers: u64,
    pub certified: u64,
    pub ratios: CategoryRatios,
}

/// `100 * num / den`, undefined for an empty denominator.
pub fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl CohortSummary {
    /// Builds a summary from known counts. Counts must be nested.
    pub fn from_counts(
        course_id: impl Into<String>,
        registrants: u64,
        active: u64,
        completers: u64,
        certified: u64,
    ) -> Result<Self, CohortError> {
        if !(certified <= completers && completers <= active && active <= registrants) {
            return Err(CohortError::InvalidConfig(format!(
                "counts not nested: {registrants}/{active}/{completers}/{certified}"
            )));
        }
        Ok(CohortSummary {
            course_id: course_id.into(),
            registrants,
            active,
            completers,
            certified,
            ratios: CategoryRatios {
                active: percent(active, registrants),
                completers: percent(completers, registrants),
                certified: percent(certified, registrants),
            },
        })
    }

    fn from_membership(course_id: &str, m: &Membership) -> Self {
        Self::from_counts(
            course_id,
            m.registrants.len() as u64,
            m.active.len() as u64,
            m.completers.len() as u64,
            m.certified.len() as u64,
        )
        .expect("membership is nested")
    }
}

pub fn categorize(snap: &Snapshot, course_id: &str, def: ActiveDefinition) -> Result<CohortSummary, CohortError> {
    let m = membership(snap, course_id, def)?;
    Ok(CohortSummary::from_membership(course_id, &m))
}

/// The five dropout definitions, each `100 * (1 - numerator / denominator)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropoutRates {
    pub certified_of_registrants: Option<f64>,
    pub certified_of_active: Option<f64>,
    pub completers_of_registrants: Option<f64>,
    pub completers_of_active: Option<f64>,
    pub active_of_registrants: Option<f64>,
}

impl DropoutRates {
    pub const NAMES: [&'static str; 5] = [
        "certified_of_registrants",
        "certified_of_active",
        "completers_of_registrants",
        "completers_of_active",
        "active_of_registrants",
    ];

    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.certified_of_registrants,
            self.certified_of_active,
            self.completers_of_registrants,
            self.completers_of_active,
            self.active_of_registrants,
        ]
    }
}

pub fn dropout_rates(s: &CohortSummary) -> DropoutRates {
    let rate = |num, den| percent(num, den).map(|p| 100.0 - p);
    DropoutRates {
        certified_of_registrants: rate(s.certified, s.registrants),
        certified_of_active: rate(s.certified, s.active),
        completers_of_registrants: rate(s.completers, s.registrants),
        completers_of_active: rate(s.completers, s.active),
        active_of_registrants: rate(s.active, s.registrants),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutPointConfig {
    pub epsilon: f64,
    pub allowed_exceedances: usize,
    pub indicator: Indicator,
}

impl Default for DropoutPointConfig {
    fn default() -> Self {
        DropoutPointConfig {
            epsilon: 0.15,
            allowed_exceedances: 0,
            indicator: Indicator::QuizAttempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropoutPoint {
    /// `(w, w + 1)` with 1-based weeks; `None` when the series never settles.
    pub week_boundary: Option<(u32, u32)>,
    pub stabilized: bool,
    /// Relative declines `d_j` for `j = 1..n-1`.
    pub declines: Vec<f64>,
    /// Declines above epsilon after the boundary.
    pub exceedances: usize,
}

/// Relative week-over-week decline, clamped at 0; 0 after an empty week.
pub fn relative_declines(series: &[u64]) -> Vec<f64> {
    series
        .windows(2)
        .map(|w| {
            if w[0] == 0 {
                0.0
            } else {
                ((w[0] as f64 - w[1] as f64) / w[0] as f64).max(0.0)
            }
        })
        .collect()
}

/// Smallest week `w` after which every relative decline stays within
/// epsilon, up to `allowed_exceedances` violations. Violations must stay in
/// the minority of the remaining declines.
pub fn dropout_point(series: &[u64], cfg: &DropoutPointConfig) -> Result<DropoutPoint, CohortError> {
    if series.len() < 3 {
        return Err(CohortError::SeriesTooShort(series.len()));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(CohortError::InvalidConfig(format!("epsilon {} outside (0, 1)", cfg.epsilon)));
    }
    let declines = relative_declines(series);
    let mut found = None;
    for start in 0..declines.len() {
        let tail = &declines[start..];
        let over = tail.iter().filter(|d| **d > cfg.epsilon).count();
        if over <= cfg.allowed_exceedances && tail.len() - over > over {
            found = Some((start, over));
            break;
        }
    }
    Ok(match found {
        Some((start, over)) => {
            let w = start as u32 + 1;
            DropoutPoint {
                week_boundary: Some((w, w + 1)),
                stabilized: true,
                declines,
                exceedances: over,
            }
        }
        None => DropoutPoint {
            week_boundary: None,
            stabilized: false,
            declines,
            exceedances: 0,
        },
    })
}

/// Dropout point of a course's weekly series for the configured indicator.
pub fn course_dropout_point(snap: &Snapshot, course_id: &str, cfg: &DropoutPointConfig) -> Result<(Vec<u64>, DropoutPoint), CohortError> {
    let series = indicators::weekly_series(snap, course_id, cfg.indicator)?;
    let point = dropout_point(&series, cfg)?;
    Ok((series, point))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRateWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for SuccessRateWeights {
    fn default() -> Self {
        SuccessRateWeights {
            w1: 0.4,
            w2: 0.3,
            w3: 0.2,
            w4: 0.1,
        }
    }
}

impl SuccessRateWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Result<Self, CohortError> {
        let w = SuccessRateWeights { w1, w2, w3, w4 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let all = [self.w1, self.w2, self.w3, self.w4];
        if all.iter().any(|v| !v.is_finite()) || !(self.w1 > self.w2 && self.w2 > self.w3 && self.w3 > self.w4 && self.w4 >= 0.0) {
            return Err(CohortError::InvalidWeights(format!(
                "need w1 > w2 > w3 > w4 >= 0, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Weighted weekly sum of reads, quiz attempts, logins and posts.
pub fn success_rate(week: &WeeklyIndicators, w: &SuccessRateWeights) -> Result<f64, CohortError> {
    w.validate()?;
    Ok(w.w1 * week.forum_reads as f64
        + w.w2 * week.quiz_attempts as f64
        + w.w3 * week.logins as f64
        + w.w4 * week.forum_posts as f64)
}

/// Success rate of every registrant for every week `1..=duration`.
pub fn success_rate_table(
    snap: &Snapshot,
    course_id: &str,
    w: &SuccessRateWeights,
) -> Result<BTreeMap<String, Vec<f64>>, CohortError> {
    w.validate()?;
    let course = snap.course(course_id)?;
    let weekly = indicators::weekly_by_user(snap, course_id)?;
    weekly
        .into_iter()
        .map(|(u, weeks)| {
            let sr = weeks[1..=course.duration_weeks as usize]
                .iter()
                .map(|wk| success_rate(wk, w))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((u, sr))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMeans {
    pub group: String,
    pub students: usize,
    /// Mean per-week count per student for each indicator in [`Indicator::ALL`] order.
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupComparison {
    pub weeks: (u32, u32),
    pub indicators: Vec<Indicator>,
    pub certified: GroupMeans,
    pub dropped: GroupMeans,
    /// `certified - dropped` per indicator.
    pub gaps: Vec<f64>,
}

/// Average weekly activity of certified versus dropped (active, not certified) students.
pub fn compare_groups(
    snap: &Snapshot,
    course_id: &str,
    window: Option<(u32, u32)>,
    def: ActiveDefinition,
) -> Result<GroupComparison, CohortError> {
    let course = snap.course(course_id)?;
    let (from, to) = window.unwrap_or((1, course.duration_weeks));
    if from < 1 || from > to || to > course.duration_weeks {
        return Err(CohortError::InvalidConfig(format!(
            "week window {from}..{to} outside 1..{}",
            course.duration_weeks
        )));
    }
    let m = membership(snap, course_id, def)?;
    let weekly = indicators::weekly_by_user(snap, course_id)?;
    let n_weeks = (to - from + 1) as f64;
    let group = |name: &str, users: &BTreeSet<String>| -> Result<GroupMeans, CohortError> {
        if users.is_empty() {
            return Err(CohortError::EmptyGroup(name.to_string()));
        }
        let mut sums = vec![0.0; Indicator::ALL.len()];
        for u in users {
            for wk in &weekly[u][from as usize..=to as usize] {
                for (slot, i) in sums.iter_mut().zip(Indicator::ALL) {
                    *slot += wk.get(i) as f64;
                }
            }
        }
        Ok(GroupMeans {
            group: name.to_string(),
            students: users.len(),
            means: sums.iter().map(|s| s / n_weeks / users.len() as f64).collect(),
        })
    };
    let certified = group("certified", &m.certified)?;
    let dropped = group("dropped", &m.dropped())?;
    let gaps = certified.means.iter().zip(&dropped.means).map(|(a, b)| a - b).collect();
    Ok(GroupComparison {
        weeks: (from, to),
        indicators: Indicator::ALL.to_vec(),
        certified,
        dropped,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use crate::store::{CourseConfig, EventStore, StudentRecord};
    use chrono::{Duration, NaiveDate, TimeZone, Utc};
    use proptest::prelude::*;

    fn close(a: Option<f64>, b: f64, tol: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() <= tol)
    }

    #[test]
    fn gol_ratios_and_rates() {
        let s = CohortSummary::from_counts("gol", 1012, 479, 217, 177).unwrap();
        assert!(close(s.ratios.active, 47.33, 0.005));
        assert!(close(s.ratios.completers, 21.44, 0.005));
        assert!(close(s.ratios.certified, 17.49, 0.005));
        let r = dropout_rates(&s).values();
        for (got, want) in r.iter().zip([82.50, 63.04, 78.55, 54.69, 52.67]) {
            assert!(close(*got, want, 0.05), "{got:?} vs {want}");
        }
    }

    #[test]
    fn lin_rates() {
        let s = CohortSummary::from_counts("lin", 519, 333, 131, 99).unwrap();
        assert!(close(s.ratios.active, 64.16, 0.005));
        for (got, want) in dropout_rates(&s).values().iter().zip([80.92, 70.27, 74.75, 60.66, 35.84]) {
            assert!(close(*got, want, 0.05), "{got:?} vs {want}");
        }
    }

    #[test]
    fn empty_and_full_cohorts() {
        let s = CohortSummary::from_counts("e", 0, 0, 0, 0).unwrap();
        assert_eq!(s.ratios.active, None);
        assert!(dropout_rates(&s).values().iter().all(Option::is_none));
        let s = CohortSummary::from_counts("f", 7, 7, 7, 7).unwrap();
        assert!(dropout_rates(&s).values().iter().all(|r| *r == Some(0.0)));
        assert!(CohortSummary::from_counts("x", 5, 6, 1, 1).is_err());
    }

    #[test]
    fn knee_at_four() {
        let p = dropout_point(&[1000, 600, 400, 250, 240, 235, 230, 228], &DropoutPointConfig::default()).unwrap();
        assert_eq!(p.week_boundary, Some((4, 5)));
        assert!(p.stabilized);
    }

    #[test]
    fn constant_and_geometric() {
        let cfg = DropoutPointConfig::default();
        assert_eq!(dropout_point(&[50; 6], &cfg).unwrap().week_boundary, Some((1, 2)));
        let p = dropout_point(&[1024, 512, 256, 128, 64, 32], &cfg).unwrap();
        assert!(!p.stabilized);
        assert_eq!(p.week_boundary, None);
        assert!(matches!(dropout_point(&[1, 2], &cfg), Err(CohortError::SeriesTooShort(2))));
    }

    #[test]
    fn spike_tolerated_with_one_exceedance() {
        // Decline after the week-8 spike is 1 - 200/300.
        let s = [1000, 600, 350, 220, 210, 205, 200, 300, 200, 195];
        let strict = dropout_point(&s, &DropoutPointConfig::default()).unwrap();
        assert_eq!(strict.week_boundary, Some((9, 10)));
        let cfg = DropoutPointConfig {
            allowed_exceedances: 1,
            ..Default::default()
        };
        let p = dropout_point(&s, &cfg).unwrap();
        assert_eq!(p.week_boundary, Some((4, 5)));
        assert_eq!(p.exceedances, 1);
    }

    #[test]
    fn success_rate_examples() {
        let w = SuccessRateWeights::default();
        assert_eq!(success_rate(&WeeklyIndicators::default(), &w).unwrap(), 0.0);
        let wk = WeeklyIndicators {
            forum_reads: 10,
            quiz_attempts: 2,
            logins: 5,
            forum_posts: 1,
            ..Default::default()
        };
        assert!((success_rate(&wk, &w).unwrap() - 5.7).abs() < 1e-12);
        assert!(SuccessRateWeights::new(0.3, 0.4, 0.2, 0.1).is_err());
        assert!(SuccessRateWeights::new(0.4, 0.3, 0.2, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn dropout_point_monotone_in_epsilon(
            series in prop::collection::vec(0u64..2000, 3..14),
            e1 in 0.01f64..0.98,
            gap in 0.0f64..0.5,
            allowed in 0usize..3,
        ) {
            let e2 = (e1 + gap).min(0.99);
            let a = dropout_point(&series, &DropoutPointConfig { epsilon: e1, allowed_exceedances: allowed, ..Default::default() }).unwrap();
            let b = dropout_point(&series, &DropoutPointConfig { epsilon: e2, allowed_exceedances: allowed, ..Default::default() }).unwrap();
            if let Some((wa, _)) = a.week_boundary {
                let (wb, _) = b.week_boundary.expect("larger epsilon also settles");
                prop_assert!(wb <= wa);
            }
        }

        #[test]
        fn success_rate_scaling_keeps_order(
            weeks in prop::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 2..20),
            c in 0.01f64..100.0,
        ) {
            let w = SuccessRateWeights::default();
            let scaled = SuccessRateWeights::new(w.w1 * c, w.w2 * c, w.w3 * c, w.w4 * c).unwrap();
            let rows: Vec<WeeklyIndicators> = weeks.iter().map(|&(r, q, l, p)| WeeklyIndicators {
                forum_reads: r, quiz_attempts: q, logins: l, forum_posts: p, ..Default::default()
            }).collect();
            for a in &rows {
                for b in &rows {
                    let (x, y) = (success_rate(a, &w).unwrap(), success_rate(b, &w).unwrap());
                    let (xs, ys) = (success_rate(a, &scaled).unwrap(), success_rate(b, &scaled).unwrap());
                    if (x - y).abs() > 1e-9 {
                        prop_assert_eq!(x < y, xs < ys);
                    }
                }
            }
        }
    }

    fn course_store() -> EventStore {
        let mut s = EventStore::in_memory();
        s.register_course(CourseConfig::new("c", "C", NaiveDate::from_ymd_opt(2015, 3, 2).unwrap(), 6, 50.0))
            .unwrap();
        s
    }

    fn at(week: u32, n: i64) -> chrono::DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 3, 2, 10, 0, 0).unwrap() + Duration::days(7 * (week as i64 - 1)) + Duration::seconds(n)
    }

    #[test]
    fn categorize_nests_membership() {
        let mut s = course_store();
        s.register_student(StudentRecord::new("idle", "c")).unwrap();
        s.append_events(vec![
            Event::new("c", "reader", at(1, 0), Activity::ForumRead { thread_id: "t".into() }),
            Event::new("c", "viewer", at(1, 0), Activity::VideoPlay { video_id: "v".into(), position_seconds: 0 }),
            Event::new("c", "pass", at(1, 0), Activity::QuizAttempt { quiz_id: "q".into(), attempt_no: 1, score_pct: 90.0 }),
            Event::new("c", "cert", at(1, 0), Activity::QuizAttempt { quiz_id: "q".into(), attempt_no: 1, score_pct: 60.0 }),
            Event::new("c", "cert", at(6, 0), Activity::Certificate),
            Event::new("c", "fail", at(1, 0), Activity::QuizAttempt { quiz_id: "q".into(), attempt_no: 1, score_pct: 10.0 }),
            Event::new("c", "fail", at(6, 0), Activity::Certificate),
        ])
        .unwrap();
        let snap = s.snapshot();
        let m = membership(&snap, "c", ActiveDefinition::default()).unwrap();
        assert_eq!(m.registrants.len(), 6);
        assert_eq!(m.active.iter().map(String::as_str).collect::<Vec<_>>(), ["cert", "fail", "pass", "viewer"]);
        assert_eq!(m.completers.iter().map(String::as_str).collect::<Vec<_>>(), ["cert", "pass"]);
        assert_eq!(m.certified.iter().map(String::as_str).collect::<Vec<_>>(), ["cert"]);
        assert!(m.certified.is_subset(&m.completers) && m.completers.is_subset(&m.active) && m.active.is_subset(&m.registrants));
        let alt = membership(&snap, "c", ActiveDefinition::PostReadQuiz).unwrap();
        assert!(alt.active.contains("reader") && !alt.active.contains("viewer"));
    }

    #[test]
    fn group_comparison() {
        let mut s = course_store();
        let mut evs = vec![
            Event::new("c", "good", at(1, 0), Activity::QuizAttempt { quiz_id: "q".into(), attempt_no: 1, score_pct: 90.0 }),
            Event::new("c", "good", at(6, 0), Activity::Certificate),
            Event::new("c", "bad", at(1, 0), Activity::QuizAttempt { quiz_id: "q".into(), attempt_no: 1, score_pct: 10.0 }),
        ];
        for w in 3..=6 {
            for n in 0..3 {
                evs.push(Event::new("c", "good", at(w, n), Activity::ForumRead { thread_id: format!("t{n}") }));
            }
            evs.push(Event::new("c", "bad", at(w, 0), Activity::ForumRead { thread_id: "t".into() }));
        }
        s.append_events(evs).unwrap();
        let g = compare_groups(&s.snapshot(), "c", Some((3, 6)), ActiveDefinition::default()).unwrap();
        let reads = Indicator::ALL.iter().position(|i| *i == Indicator::ForumReads).unwrap();
        assert_eq!(g.certified.means[reads], 3.0);
        assert_eq!(g.dropped.means[reads], 1.0);
        assert_eq!(g.gaps[reads], 2.0);
        assert!(matches!(
            compare_groups(&course_store().snapshot(), "c", None, ActiveDefinition::default()),
            Err(CohortError::EmptyGroup(_))
        ));
    }
}
