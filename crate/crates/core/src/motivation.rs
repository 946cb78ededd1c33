//! Weekly activity battery: a gamified percentage of last week's engagement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cohort::{self, ActiveDefinition, CohortError};
use crate::event::Activity;
use crate::store::{CourseConfig, Snapshot, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum MotivationError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("week {week} outside 1..={max}")]
    WeekOutOfRange { week: u32, max: u32 },
    #[error("status {percent}% is not reachable in {mode} mode")]
    UnachievableStatus { percent: u8, mode: BatteryMode },
}

/// Which rule set charges the battery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryMode {
    /// Four dimensions (login, video, quiz, forum), 25 each.
    Framework,
    /// Login 50, quiz +25, forum +25; nothing without a login; video ignored.
    #[default]
    Implemented,
}

impl fmt::Display for BatteryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatteryMode::Framework => "framework",
            BatteryMode::Implemented => "implemented",
        })
    }
}

impl FromStr for BatteryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "framework" => Ok(BatteryMode::Framework),
            "implemented" => Ok(BatteryMode::Implemented),
            other => Err(format!("unknown battery mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatteryRuleSet {
    pub mode: BatteryMode,
    /// Distinct threads a student must read for the forum dimension without posting.
    pub forum_read_threshold: usize,
}

impl Default for BatteryRuleSet {
    fn default() -> Self {
        BatteryRuleSet::new(BatteryMode::default())
    }
}

impl BatteryRuleSet {
    pub fn new(mode: BatteryMode) -> Self {
        BatteryRuleSet {
            mode,
            forum_read_threshold: 2,
        }
    }

    pub fn achievable(&self) -> &'static [u8] {
        match self.mode {
            BatteryMode::Framework => &[0, 25, 50, 75, 100],
            BatteryMode::Implemented => &[0, 50, 75, 100],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Login,
    Video,
    Quiz,
    Forum,
}

/// One student's activity in one week, reduced to what the battery needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WeekActivity {
    pub logins: u64,
    pub video_events: u64,
    pub quiz_attempts: u64,
    pub forum_posts: u64,
    pub threads_read: BTreeSet<String>,
}

impl WeekActivity {
    pub fn record(&mut self, activity: &Activity) {
        match activity {
            Activity::Login => self.logins += 1,
            Activity::QuizAttempt { .. } => self.quiz_attempts += 1,
            Activity::ForumPost { .. } => self.forum_posts += 1,
            Activity::ForumRead { thread_id } => {
                self.threads_read.insert(thread_id.clone());
            }
            a if a.kind().is_video() => self.video_events += 1,
            _ => {}
        }
    }
}

/// Battery percent and the dimensions that contributed to it.
pub fn battery_percent(a: &WeekActivity, rules: &BatteryRuleSet) -> (u8, Vec<Dimension>) {
    let forum = a.forum_posts >= 1 || a.threads_read.len() >= rules.forum_read_threshold;
    let mut dims = Vec::new();
    match rules.mode {
        BatteryMode::Framework => {
            for (ok, d) in [
                (a.logins > 0, Dimension::Login),
                (a.video_events > 0, Dimension::Video),
                (a.quiz_attempts > 0, Dimension::Quiz),
                (forum, Dimension::Forum),
            ] {
                if ok {
                    dims.push(d);
                }
            }
            (25 * dims.len() as u8, dims)
        }
        BatteryMode::Implemented => {
            if a.logins == 0 {
                return (0, dims);
            }
            dims.push(Dimension::Login);
            let mut pct = 50;
            if a.quiz_attempts > 0 {
                dims.push(Dimension::Quiz);
                pct += 25;
            }
            if forum {
                dims.push(Dimension::Forum);
                pct += 25;
            }
            (pct, dims)
        }
    }
}

const TOOLTIP_0: &str = "No activity last week \u{2013} we are looking forward to seeing you again this week!";
const TOOLTIP_25: &str = "Your activity last week is 25%. A first step! Add more activities to charge your battery!";
const TOOLTIP_50: &str = "Your activity last week is 50%. Good! Increase your activities to score better!";
const TOOLTIP_75: &str = "Your activity last week is 75%. Great! Keep it up!";
const TOOLTIP_100: &str =
    "Your activity in the previous week is 100%. Congratulations. Your commitment is excellent. Keep it up!";

pub fn tooltip(percent: u8, rules: &BatteryRuleSet) -> Result<&'static str, MotivationError> {
    if !rules.achievable().contains(&percent) {
        return Err(MotivationError::UnachievableStatus {
            percent,
            mode: rules.mode,
        });
    }
    Ok(match percent {
        0 => TOOLTIP_0,
        25 => TOOLTIP_25,
        50 => TOOLTIP_50,
        75 => TOOLTIP_75,
        _ => TOOLTIP_100,
    })
}

/// Identifier of the battery image for a percent.
pub fn symbol_id(percent: u8) -> String {
    format!("battery-{percent}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryStatus {
    pub user_id: String,
    pub week: u32,
    pub percent: u8,
    pub dimensions: Vec<Dimension>,
    pub symbol_id: String,
    pub tooltip: String,
}

impl BatteryStatus {
    fn build(user: &str, week: u32, a: &WeekActivity, rules: &BatteryRuleSet) -> Self {
        let (percent, dimensions) = battery_percent(a, rules);
        BatteryStatus {
            user_id: user.to_string(),
            week,
            percent,
            dimensions,
            symbol_id: symbol_id(percent),
            tooltip: tooltip(percent, rules).expect("rules only yield achievable statuses").to_string(),
        }
    }
}

fn check_week(course: &CourseConfig, week: u32) -> Result<(), MotivationError> {
    if week < 1 || week > course.duration_weeks {
        return Err(MotivationError::WeekOutOfRange {
            week,
            max: course.duration_weeks,
        });
    }
    Ok(())
}

fn week_activity(snap: &Snapshot, course: &CourseConfig, week: u32) -> BTreeMap<String, WeekActivity> {
    let mut out: BTreeMap<String, WeekActivity> = BTreeMap::new();
    for e in snap.course_events(&course.course_id) {
        if course.week_of(e.at) == week {
            out.entry(e.user_id.clone()).or_default().record(&e.activity);
        }
    }
    out
}

/// Status for one student, computed from that week's events.
pub fn battery_week(
    snap: &Snapshot,
    course_id: &str,
    user: &str,
    week: u32,
    rules: &BatteryRuleSet,
) -> Result<BatteryStatus, MotivationError> {
    snap.ensure_registrant(course_id, user)?;
    let course = snap.course(course_id)?;
    check_week(course, week)?;
    let mut a = WeekActivity::default();
    for e in snap.course_events(course_id) {
        if e.user_id == user && course.week_of(e.at) == week {
            a.record(&e.activity);
        }
    }
    Ok(BatteryStatus::build(user, week, &a, rules))
}

/// The last fully elapsed course week at `now`, if any.
pub fn last_completed_week(course: &CourseConfig, now: DateTime<Utc>) -> Option<u32> {
    let current = course.week_of(now);
    match current {
        0 | 1 => None,
        w if w > course.duration_weeks => Some(course.duration_weeks),
        w => Some(w - 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub course_id: String,
    pub week: u32,
    pub mode: BatteryMode,
    /// Students counted: the course's active students.
    pub students: usize,
    pub distribution: BTreeMap<u8, usize>,
    pub statuses: Vec<BatteryStatus>,
}

/// Battery distribution over the course's active students for one week.
pub fn battery_report(
    snap: &Snapshot,
    course_id: &str,
    week: u32,
    rules: &BatteryRuleSet,
    def: ActiveDefinition,
) -> Result<BatteryReport, MotivationError> {
    let course = snap.course(course_id)?;
    check_week(course, week)?;
    let active = cohort::membership(snap, course_id, def)?.active;
    let activity = week_activity(snap, course, week);
    let empty = WeekActivity::default();
    let statuses: Vec<BatteryStatus> = active
        .iter()
        .map(|u| BatteryStatus::build(u, week, activity.get(u).unwrap_or(&empty), rules))
        .collect();
    let mut distribution = BTreeMap::new();
    for s in &statuses {
        *distribution.entry(s.percent).or_insert(0) += 1;
    }
    Ok(BatteryReport {
        course_id: course_id.to_string(),
        week,
        mode: rules.mode,
        students: statuses.len(),
        distribution,
        statuses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityRatio {
    /// `None` for the whole course.
    pub week: Option<u32>,
    pub active: usize,
    pub registrants: usize,
    /// Percent of registrants; `None` without registrants.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityTrend {
    pub weekly: Vec<ActivityRatio>,
    pub overall: ActivityRatio,
}

/// Active-to-registrant ratio per course week and for the whole course.
pub fn activity_ratio_trend(snap: &Snapshot, course_id: &str, def: ActiveDefinition) -> Result<ActivityTrend, MotivationError> {
    let course = snap.course(course_id)?;
    let m = cohort::membership(snap, course_id, def)?;
    let registrants = m.registrants.len();
    let mut per_week: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); course.duration_weeks as usize];
    for e in snap.course_events(course_id) {
        let w = course.week_of(e.at);
        if (1..=course.duration_weeks).contains(&w) && def.qualifies(e.kind()) {
            per_week[w as usize - 1].insert(e.user_id.as_str());
        }
    }
    let ratio = |week, active: usize| ActivityRatio {
        week,
        active,
        registrants,
        ratio: cohort::percent(active as u64, registrants as u64),
    };
    Ok(ActivityTrend {
        weekly: per_week
            .iter()
            .enumerate()
            .map(|(i, s)| ratio(Some(i as u32 + 1), s.len()))
            .collect(),
        overall: ratio(None, m.active.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(login: bool, video: bool, quiz: bool, forum: bool) -> WeekActivity {
        let mut a = WeekActivity {
            logins: login as u64,
            video_events: video as u64,
            quiz_attempts: quiz as u64,
            forum_posts: forum as u64,
            ..Default::default()
        };
        a.threads_read.clear();
        a
    }

    #[test]
    fn framework_mode_truth_table() {
        let rules = BatteryRuleSet::new(BatteryMode::Framework);
        for bits in 0u8..16 {
            let flags = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0];
            let (pct, dims) = battery_percent(&act(flags[0], flags[1], flags[2], flags[3]), &rules);
            assert_eq!(pct, 25 * bits.count_ones() as u8);
            assert_eq!(dims.len(), bits.count_ones() as usize);
        }
    }

    #[test]
    fn implemented_mode_truth_table() {
        let rules = BatteryRuleSet::default();
        // (login, quiz, forum) -> percent
        let expected = [
            ((false, false, false), 0),
            ((false, true, false), 0),
            ((false, false, true), 0),
            ((false, true, true), 0),
            ((true, false, false), 50),
            ((true, true, false), 75),
            ((true, false, true), 75),
            ((true, true, true), 100),
        ];
        for ((login, quiz, forum), pct) in expected {
            for video in [false, true] {
                assert_eq!(battery_percent(&act(login, video, quiz, forum), &rules).0, pct);
            }
        }
    }

    #[test]
    fn forum_reads_need_two_distinct_threads() {
        let rules = BatteryRuleSet::default();
        let mut a = act(true, false, false, false);
        a.record(&Activity::ForumRead { thread_id: "t1".into() });
        a.record(&Activity::ForumRead { thread_id: "t1".into() });
        assert_eq!(battery_percent(&a, &rules).0, 50);
        a.record(&Activity::ForumRead { thread_id: "t2".into() });
        assert_eq!(battery_percent(&a, &rules).0, 75);
    }

    #[test]
    fn tooltips() {
        let imp = BatteryRuleSet::default();
        assert_eq!(
            tooltip(0, &imp).unwrap(),
            "No activity last week – we are looking forward to seeing you again this week!"
        );
        assert!(tooltip(100, &imp).unwrap().contains("Congratulations"));
        assert!(matches!(tooltip(25, &imp), Err(MotivationError::UnachievableStatus { percent: 25, .. })));
        assert!(tooltip(25, &BatteryRuleSet::new(BatteryMode::Framework)).is_ok());
        assert!(tooltip(60, &BatteryRuleSet::new(BatteryMode::Framework)).is_err());
    }
}
