//! Payloads shared by the CLI (`--format json`) and the HTTP service.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::anonymizer::AnonError;
use crate::clustering::{self, ClusterError, ClusterLabeling, ColumnMeta, CryerPlacement, Elbow, KMeansOptions, ScaleRule};
use crate::cohort::{self, ActiveDefinition, CohortError, CohortSummary, DropoutPoint, DropoutPointConfig, DropoutRates};
use crate::event::EventKind;
use crate::indicators::{self, IndicatorError, QuizSummary, StudentTotals, VideoCounting, WeeklyIndicators};
use crate::logparse::{self, ClassificationRuleSet, CourseMap, LogError, Reject};
use crate::motivation::{self, BatteryRuleSet, BatteryStatus, MotivationError};
use crate::store::{EventStore, Snapshot, StoreError, StudentRecord};
use crate::synthkit::SynthError;
use crate::table::{Table, TableError};

/// Every failure a front end can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Motivation(#[from] MotivationError),
    #[error(transparent)]
    Anon(#[from] AnonError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timed out after {0} s")]
    Timeout(u64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse class of an error, used for exit diagnostics and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Invalid,
    Timeout,
    Internal,
}

fn store_class(e: &StoreError) -> ErrorClass {
    match e {
        StoreError::UnknownCourse(_) | StoreError::UnknownUser { .. } => ErrorClass::NotFound,
        StoreError::StorageFailure(_) | StoreError::Corrupt { .. } => ErrorClass::Internal,
        _ => ErrorClass::Invalid,
    }
}

fn indicator_class(e: &IndicatorError) -> ErrorClass {
    match e {
        IndicatorError::Store(s) => store_class(s),
        IndicatorError::UnknownVideo(_) => ErrorClass::NotFound,
        _ => ErrorClass::Invalid,
    }
}

fn cohort_class(e: &CohortError) -> ErrorClass {
    match e {
        CohortError::Indicator(i) => indicator_class(i),
        _ => ErrorClass::Invalid,
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Store(e) => store_class(e),
            Error::Indicator(e) => indicator_class(e),
            Error::Cohort(e) => cohort_class(e),
            Error::Motivation(MotivationError::Store(e)) => store_class(e),
            Error::Motivation(MotivationError::Cohort(e)) => cohort_class(e),
            Error::Anon(AnonError::Io(_)) | Error::Io(_) => ErrorClass::Internal,
            Error::Timeout(_) => ErrorClass::Timeout,
            _ => ErrorClass::Invalid,
        }
    }

    /// Short machine-readable kind, e.g. `unknown_course`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Store(StoreError::UnknownCourse(_)) => "unknown_course",
            Error::Store(StoreError::UnknownUser { .. }) => "unknown_user",
            Error::Store(_) => "store",
            Error::Indicator(IndicatorError::Store(StoreError::UnknownCourse(_))) => "unknown_course",
            Error::Indicator(IndicatorError::Store(StoreError::UnknownUser { .. })) => "unknown_user",
            Error::Indicator(_) => "indicator",
            Error::Cohort(CohortError::Indicator(IndicatorError::Store(StoreError::UnknownCourse(_)))) => "unknown_course",
            Error::Cohort(_) => "cohort",
            Error::Cluster(_) => "clustering",
            Error::Motivation(MotivationError::Store(StoreError::UnknownCourse(_))) => "unknown_course",
            Error::Motivation(MotivationError::Store(StoreError::UnknownUser { .. })) => "unknown_user",
            Error::Motivation(_) => "battery",
            Error::Anon(_) => "anonymizer",
            Error::Log(_) => "log",
            Error::Table(_) => "table",
            Error::Synth(_) => "synth",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Timeout(_) => "timeout",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub rejects: Vec<Reject>,
    /// `(record, reason)` for records whose timestamp or payload failed.
    pub failures: Vec<(String, String)>,
    pub accepted: usize,
    pub duplicates: usize,
    pub unclassified: usize,
    pub courses: BTreeSet<String>,
}

/// Parses, classifies and appends a raw log.
pub fn ingest_log(store: &mut EventStore, text: &str, rules: &ClassificationRuleSet, map: &CourseMap) -> Result<IngestReport> {
    let log = logparse::ingest_text(text, rules, map);
    let unclassified = log.events.iter().filter(|e| e.kind() == EventKind::Unclassified).count();
    let courses = log.events.iter().map(|e| e.course_id.clone()).collect();
    let records = log.events.len() + log.failures.len();
    let failures = log
        .failures
        .into_iter()
        .map(|(r, why)| (format!("{} {} {}", r.timestamp_text, r.username, r.url), why))
        .collect();
    let outcome = store.append_events(log.events)?;
    Ok(IngestReport {
        records,
        rejects: log.rejects,
        failures,
        accepted: outcome.accepted,
        duplicates: outcome.duplicates,
        unclassified,
        courses,
    })
}

/// Registers one student per row; `user_id` is required, every other
/// column becomes an attribute.
pub fn register_students(store: &mut EventStore, course_id: &str, t: &Table) -> Result<usize> {
    let id = t.column_index("user_id")?;
    for row in &t.rows {
        let mut rec = StudentRecord::new(row[id].clone(), course_id);
        for (j, name) in t.header.iter().enumerate() {
            if j != id && !row[j].is_empty() {
                rec = rec.with_attribute(name.clone(), row[j].clone());
            }
        }
        store.register_student(rec)?;
    }
    Ok(t.rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CourseSummaryReport {
    pub summary: CohortSummary,
    pub dropout_rates: DropoutRates,
    pub active_definition: ActiveDefinition,
    pub events: usize,
}

pub fn course_summary(snap: &Snapshot, course_id: &str, def: ActiveDefinition) -> Result<CourseSummaryReport> {
    let summary = cohort::categorize(snap, course_id, def)?;
    Ok(CourseSummaryReport {
        dropout_rates: cohort::dropout_rates(&summary),
        events: snap.course_events(course_id).count(),
        summary,
        active_definition: def,
    })
}

/// Tabular form of a summary: one row per category and per dropout rate.
pub fn summary_table(r: &CourseSummaryReport) -> Table {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
    let s = &r.summary;
    let mut t = Table::new(vec!["measure".into(), "count".into(), "percent".into()]);
    t.push_row(vec!["registrants".into(), s.registrants.to_string(), fmt((s.registrants > 0).then_some(100.0))]);
    t.push_row(vec!["active".into(), s.active.to_string(), fmt(s.ratios.active)]);
    t.push_row(vec!["completers".into(), s.completers.to_string(), fmt(s.ratios.completers)]);
    t.push_row(vec!["certified".into(), s.certified.to_string(), fmt(s.ratios.certified)]);
    for (name, v) in DropoutRates::NAMES.iter().zip(r.dropout_rates.values()) {
        t.push_row(vec![format!("dropout_{name}"), String::new(), fmt(v)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentProfile {
    pub course_id: String,
    pub user_id: String,
    pub totals: StudentTotals,
    pub weekly: Vec<WeeklyIndicators>,
    pub quizzes: Vec<QuizSummary>,
    /// One status per course week.
    pub battery: Vec<BatteryStatus>,
}

pub fn student_profile(snap: &Snapshot, course_id: &str, user: &str, rules: &BatteryRuleSet) -> Result<StudentProfile> {
    snap.ensure_registrant(course_id, user)?;
    let course = snap.course(course_id)?;
    let totals = indicators::student_totals(snap, course_id)?
        .into_iter()
        .find(|t| t.user_id == user)
        .unwrap_or_else(|| StudentTotals {
            user_id: user.to_string(),
            ..Default::default()
        });
    let battery = (1..=course.duration_weeks)
        .map(|w| motivation::battery_week(snap, course_id, user, w, rules))
        .collect::<std::result::Result<_, _>>()?;
    Ok(StudentProfile {
        course_id: course_id.to_string(),
        user_id: user.to_string(),
        totals,
        weekly: indicators::weekly_indicators(snap, course_id, user)?,
        quizzes: indicators::quiz_summary(snap, course_id, user)?,
        battery,
    })
}

pub fn weekly_table(rows: &[WeeklyIndicators]) -> Table {
    let mut header = vec!["user_id".to_string(), "week".to_string()];
    header.extend(indicators::Indicator::ALL.iter().map(|i| i.name().to_string()));
    let mut t = Table::new(header);
    for r in rows {
        let mut cells = vec![r.user_id.clone(), r.week.to_string()];
        cells.extend(indicators::Indicator::ALL.iter().map(|i| r.get(*i).to_string()));
        t.push_row(cells);
    }
    t
}

/// Either a fixed k or an elbow search over a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KChoice {
    Auto { lo: usize, hi: usize },
    Fixed(usize),
}

impl Default for KChoice {
    fn default() -> Self {
        KChoice::Auto { lo: 3, hi: 6 }
    }
}

impl std::str::FromStr for KChoice {
    type Err = Error;

    /// `auto`, `auto:LO-HI` or a number.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("k must be `auto`, `auto:LO-HI` or a number, got `{s}`"));
        if s == "auto" {
            return Ok(KChoice::default());
        }
        if let Some(range) = s.strip_prefix("auto:") {
            let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
            return Ok(KChoice::Auto {
                lo: lo.parse().map_err(|_| bad())?,
                hi: hi.parse().map_err(|_| bad())?,
            });
        }
        s.parse().map(KChoice::Fixed).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRequest {
    /// Restricts to students whose `population` attribute equals this.
    pub population: Option<String>,
    pub k: KChoice,
    pub seed: u64,
    pub options: KMeansOptions,
    /// Cluster on z-scored columns; labels still use raw means.
    pub standardize: bool,
    pub rule: ScaleRule,
    pub r_threshold: f64,
    pub counting: VideoCounting,
    pub active_definition: ActiveDefinition,
}

impl Default for ClusterRequest {
    fn default() -> Self {
        ClusterRequest {
            population: None,
            k: KChoice::default(),
            seed: 42,
            options: KMeansOptions::default(),
            standardize: true,
            rule: ScaleRule::default(),
            r_threshold: clustering::DEFAULT_R_THRESHOLD,
            counting: VideoCounting::default(),
            active_definition: ActiveDefinition::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub user_id: String,
    pub cluster: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub course_id: String,
    pub population: Option<String>,
    pub students: usize,
    pub k: usize,
    pub elbow: Option<Elbow>,
    pub variables: Vec<ColumnMeta>,
    pub standardized: bool,
    pub wss: f64,
    pub labeling: ClusterLabeling,
    pub cryer: Vec<CryerPlacement>,
    pub assignments: Vec<Assignment>,
}

/// Variable pruning, optional elbow search, k-means, labeling and the
/// Cryer map for the course's students.
pub fn cluster_course(snap: &Snapshot, course_id: &str, req: &ClusterRequest) -> Result<ClusterReport> {
    let mut totals = indicators::student_totals(snap, course_id)?;
    if let Some(pop) = &req.population {
        totals.retain(|t| {
            snap.student(&t.user_id)
                .and_then(|s| s.attributes.get("population"))
                .is_some_and(|p| p == pop)
        });
    }
    if totals.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} students to cluster, need at least 2", totals.len())));
    }
    let candidates = clustering::candidate_matrix(&totals, req.counting == VideoCounting::DistinctVideos);
    let raw = clustering::select_variables(&candidates, req.r_threshold)?;
    let fit_on = if req.standardize { raw.standardized() } else { raw.clone() };
    let (k, elbow) = match req.k {
        KChoice::Fixed(k) => (k, None),
        KChoice::Auto { lo, hi } => {
            let e = clustering::choose_k(&fit_on, lo, hi, req.seed, &req.options)?;
            (e.k, Some(e))
        }
    };
    let model = clustering::kmeans(&fit_on, k, req.seed, &req.options)?;
    let certified = cohort::membership(snap, course_id, req.active_definition)?.certified;
    let flags: Vec<bool> = raw.row_ids.iter().map(|u| certified.contains(u)).collect();
    let labeling = clustering::label_clusters(&model, &raw, Some(&flags), req.rule);
    let cryer = clustering::cryer_map(&labeling);
    let xy = clustering::project_2d(&fit_on);
    let assignments = raw
        .row_ids
        .iter()
        .zip(&model.assignments)
        .zip(&xy)
        .map(|((u, &c), p)| Assignment {
            user_id: u.clone(),
            cluster: c,
            x: p[0],
            y: p[1],
        })
        .collect();
    Ok(ClusterReport {
        course_id: course_id.to_string(),
        population: req.population.clone(),
        students: raw.rows(),
        k,
        elbow,
        variables: raw.meta.clone(),
        standardized: req.standardize,
        wss: model.wss,
        labeling,
        cryer,
        assignments,
    })
}

/// One row per cluster: size, share, archetype, scale pattern and raw means.
pub fn cluster_table(r: &ClusterReport) -> Table {
    let l = &r.labeling;
    let mut header: Vec<String> = ["cluster", "size", "share_pct", "archetype", "pattern", "certified_pct", "quadrant"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(l.variables.iter().flat_map(|v| [format!("{v}_mean"), format!("{v}_sd")]));
    let mut t = Table::new(header);
    for (c, label) in l.clusters.iter().enumerate() {
        let mut row = vec![
            c.to_string(),
            label.size.to_string(),
            format!("{:.2}", label.share_pct),
            label.archetype.to_string(),
            l.scale_pattern(c),
            label.certification_ratio.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.cryer[c]
                .quadrant
                .map(|q| serde_json::to_value(q).expect("serializes").as_str().unwrap_or_default().to_string())
                .unwrap_or_default(),
        ];
        row.extend(label.vars.iter().flat_map(|m| [format!("{:.2}", m.mean), format!("{:.2}", m.sd)]));
        t.push_row(row);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropoutReport {
    pub course_id: String,
    pub config: DropoutPointConfig,
    /// Course weeks 1..=duration.
    pub series: Vec<u64>,
    pub point: DropoutPoint,
}

pub fn dropout_report(snap: &Snapshot, course_id: &str, cfg: &DropoutPointConfig) -> Result<DropoutReport> {
    let (series, point) = cohort::course_dropout_point(snap, course_id, cfg)?;
    Ok(DropoutReport {
        course_id: course_id.to_string(),
        config: *cfg,
        series,
        point,
    })
}

pub fn dropout_table(r: &DropoutReport) -> Table {
    let declines = cohort::relative_declines(&r.series);
    let mut t = Table::new(vec!["week".into(), "count".into(), "decline_to_next".into(), "boundary".into()]);
    for (i, count) in r.series.iter().enumerate() {
        let week = i as u32 + 1;
        t.push_row(vec![
            week.to_string(),
            count.to_string(),
            declines.get(i).map(|d| format!("{d:.4}")).unwrap_or_default(),
            (r.point.week_boundary.map(|(w, _)| w) == Some(week)).to_string(),
        ]);
    }
    t
}

pub fn battery_table(r: &motivation::BatteryReport) -> Table {
    let mut t = Table::new(vec!["user_id".into(), "week".into(), "percent".into(), "symbol".into(), "tooltip".into()]);
    for s in &r.statuses {
        t.push_row(vec![s.user_id.clone(), s.week.to_string(), s.percent.to_string(), s.symbol_id.clone(), s.tooltip.clone()]);
    }
    t
}

pub fn distribution_table(distribution: &BTreeMap<u8, usize>) -> Table {
    let mut t = Table::new(vec!["percent".into(), "students".into()]);
    for (p, n) in distribution {
        t.push_row(vec![p.to_string(), n.to_string()]);
    }
    t
}

pub fn comparison_table(c: &indicators::MetricComparison) -> Table {
    let mut t = Table::new(vec!["user_id".into(), c.x.name().into(), c.y.name().into()]);
    for ((u, x), y) in c.users.iter().zip(&c.xs).zip(&c.ys) {
        t.push_row(vec![u.clone(), crate::store::fmt_num(*x), crate::store::fmt_num(*y)]);
    }
    t
}
