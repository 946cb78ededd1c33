//! Seeded synthetic cohorts, weekly series and raw logs with known ground truth.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::event::{Activity, Event};
use crate::indicators::EngagementVector;
use crate::logparse::{self, RawLogRecord, ZoneStyle};
use crate::store::CourseConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub mean: f64,
    pub sd: f64,
}

const fn v(mean: f64, sd: f64) -> VarSpec {
    VarSpec { mean, sd }
}

/// One generating group of students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    pub proportion: f64,
    pub reading: VarSpec,
    pub writing: VarSpec,
    pub videos: VarSpec,
    pub quizzes: VarSpec,
    pub certification_probability: f64,
    /// Weekly multiplier of activity likelihood; lower means earlier fade-out.
    pub decay: f64,
}

fn spec(name: &str, size: f64, total: f64, vars: [VarSpec; 4], cert_pct: f64, decay: f64) -> ArchetypeSpec {
    ArchetypeSpec {
        name: name.to_string(),
        proportion: size / total,
        reading: vars[0],
        writing: vars[1],
        videos: vars[2],
        quizzes: vars[3],
        certification_probability: cert_pct / 100.0,
        decay,
    }
}

pub const DROPOUT: &str = "dropout";
pub const PERFECT: &str = "perfect";
pub const GAMING: &str = "gaming";
pub const SOCIAL: &str = "social";

/// Undergraduate clusters: 95 / 154 / 206 / 4 of 459.
pub fn undergraduate_specs() -> Vec<ArchetypeSpec> {
    vec![
        spec(DROPOUT, 95.0, 459.0, [v(6.25, 6.38), v(0.01, 0.10), v(2.44, 3.42), v(2.76, 3.86)], 10.53, 0.5),
        spec(PERFECT, 154.0, 459.0, [v(42.23, 23.23), v(0.03, 0.19), v(20.76, 6.01), v(20.56, 3.84)], 96.10, 0.95),
        spec(GAMING, 206.0, 459.0, [v(23.99, 11.19), v(0.00, 0.07), v(5.77, 4.01), v(19.64, 3.84)], 94.36, 0.9),
        spec(SOCIAL, 4.0, 459.0, [v(62.00, 53.68), v(4.00, 1.41), v(3.25, 4.72), v(8.50, 9.61)], 50.0, 0.85),
    ]
}

/// External clusters: 329 / 8 / 42 of 379.
pub fn external_specs() -> Vec<ArchetypeSpec> {
    vec![
        spec(DROPOUT, 329.0, 379.0, [v(6.03, 10.97), v(0.23, 0.98), v(1.24, 2.52), v(0.68, 2.09)], 0.5, 0.5),
        spec(PERFECT, 8.0, 379.0, [v(198.63, 63.05), v(16.13, 9.42), v(24.75, 6.34), v(21.50, 3.82)], 100.0, 0.95),
        spec(GAMING, 42.0, 379.0, [v(51.76, 43.22), v(0.71, 1.88), v(18.10, 8.36), v(19.33, 6.06)], 76.19, 0.9),
    ]
}

/// Largest-remainder allocation of `n` over proportions; ties go to the earlier entry.
pub fn allocate(proportions: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Course layout used by the generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCourse {
    pub config: CourseConfig,
    pub host: String,
    pub videos: usize,
    pub threads: usize,
    pub files: usize,
}

impl SynthCourse {
    pub fn new(course_id: &str, start: NaiveDate, weeks: u32) -> Self {
        let mut config = CourseConfig::new(course_id, format!("Synthetic course {course_id}"), start, weeks, 50.0);
        config.quizzes = (1..=weeks.max(1)).map(|i| format!("q{i}")).collect();
        SynthCourse {
            config,
            host: "https://mooc.example.org".into(),
            videos: 28,
            threads: 40,
            files: 10,
        }
    }

    pub fn quiz_count(&self) -> usize {
        self.config.quizzes.len()
    }

    pub fn max_quiz_attempts(&self) -> u64 {
        self.quiz_count() as u64 * self.config.max_quiz_attempts as u64
    }

    fn video_length(&self, j: usize) -> u32 {
        240 + (j as u32 * 37) % 600
    }
}

/// A generated student with the totals the pipeline must recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStudent {
    pub user_id: String,
    pub role: String,
    pub population: String,
    pub certified: bool,
    pub reading_freq: u64,
    pub writing_freq: u64,
    pub videos_watched: u64,
    pub quiz_attempts: u64,
    pub logins: u64,
    pub downloads: u64,
    /// Weekly activity multiplier of the student's role.
    pub decay: f64,
}

impl SynthStudent {
    pub fn vector(&self) -> EngagementVector {
        EngagementVector {
            user_id: self.user_id.clone(),
            reading_freq: self.reading_freq,
            writing_freq: self.writing_freq,
            videos_watched: self.videos_watched,
            quiz_attempts: self.quiz_attempts,
        }
    }

    /// One play and one complete event per watched video.
    pub fn video_events(&self) -> u64 {
        2 * self.videos_watched
    }

    pub fn has_activity(&self) -> bool {
        self.reading_freq + self.writing_freq + self.videos_watched + self.quiz_attempts + self.downloads > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohort {
    pub students: Vec<SynthStudent>,
}

impl SynthCohort {
    pub fn roles(&self) -> Vec<&str> {
        self.students.iter().map(|s| s.role.as_str()).collect()
    }

    pub fn role_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for s in &self.students {
            *m.entry(s.role.clone()).or_insert(0) += 1;
        }
        m
    }
}

/// Draws from N(mean, sd) truncated at 0 (by rejection), rounded, capped.
pub fn truncated_count(rng: &mut ChaCha8Rng, spec: VarSpec, cap: u64) -> u64 {
    if spec.sd <= 0.0 {
        return (spec.mean.max(0.0).round() as u64).min(cap);
    }
    let normal = Normal::new(spec.mean, spec.sd).expect("sd > 0");
    for _ in 0..10_000 {
        let x = normal.sample(rng);
        if x >= 0.0 {
            return (x.round() as u64).min(cap);
        }
    }
    0
}

fn validate_specs(specs: &[ArchetypeSpec]) -> Result<(), SynthError> {
    if specs.is_empty() {
        return Err(SynthError::InvalidSpec("no specs".into()));
    }
    let total: f64 = specs.iter().map(|s| s.proportion).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(SynthError::InvalidSpec(format!("proportions sum to {total}")));
    }
    for s in specs {
        let vars = [s.reading, s.writing, s.videos, s.quizzes];
        if s.proportion < 0.0 || vars.iter().any(|v| v.sd < 0.0 || !v.mean.is_finite() || !v.sd.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("`{}` has negative or non-finite parameters", s.name)));
        }
        if !(0.0..=1.0).contains(&s.certification_probability) || !(s.decay > 0.0 && s.decay <= 1.0) {
            return Err(SynthError::InvalidSpec(format!("`{}` has probabilities outside [0, 1]", s.name)));
        }
    }
    Ok(())
}

/// Draws `n` students. Counts per spec follow largest-remainder allocation;
/// row order is shuffled so roles are interleaved.
pub fn synth_cohort(
    specs: &[ArchetypeSpec],
    n: usize,
    seed: u64,
    course: &SynthCourse,
    population: &str,
) -> Result<SynthCohort, SynthError> {
    if n == 0 {
        return Err(SynthError::InvalidSpec("n must be >= 1".into()));
    }
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = allocate(&specs.iter().map(|s| s.proportion).collect::<Vec<_>>(), n);
    let quiz_floor = course.quiz_count() as u64;
    let mut students = Vec::with_capacity(n);
    for (spec, &count) in specs.iter().zip(&counts) {
        for _ in 0..count {
            let certified = rng.random_bool(spec.certification_probability);
            let reading = truncated_count(&mut rng, spec.reading, u64::MAX);
            let writing = truncated_count(&mut rng, spec.writing, u64::MAX);
            let videos = truncated_count(&mut rng, spec.videos, course.videos as u64);
            let mut quizzes = truncated_count(&mut rng, spec.quizzes, course.max_quiz_attempts());
            if certified {
                quizzes = quizzes.max(quiz_floor);
            }
            let login_noise = Normal::new(0.0, 2.0).expect("valid");
            let mut logins = (0.5 * reading as f64 + 0.2 * quizzes as f64 + login_noise.sample(&mut rng)).round().max(0.0) as u64;
            let download_noise = Normal::new(0.0, 1.5).expect("valid");
            let downloads = (0.3 * reading as f64 + download_noise.sample(&mut rng)).round().max(0.0) as u64;
            let mut s = SynthStudent {
                user_id: String::new(),
                role: spec.name.clone(),
                population: population.to_string(),
                certified,
                reading_freq: reading,
                writing_freq: writing,
                videos_watched: videos,
                quiz_attempts: quizzes,
                logins: 0,
                downloads,
                decay: spec.decay,
            };
            if s.has_activity() {
                logins = logins.max(1);
            }
            s.logins = logins;
            students.push(s);
        }
    }
    students.shuffle(&mut rng);
    let width = n.to_string().len().max(4);
    for (i, s) in students.iter_mut().enumerate() {
        s.user_id = format!("{population}{:0width$}", i + 1);
    }
    Ok(SynthCohort { students })
}

/// Students whose forum reads and posts follow a bivariate normal with
/// correlation `r` (reads ~ N(40, 10), posts ~ N(20, 5)); other activity is light.
pub fn synth_correlated_cohort(n: usize, r: f64, seed: u64, population: &str) -> Result<SynthCohort, SynthError> {
    if !(-1.0..=1.0).contains(&r) || n == 0 {
        return Err(SynthError::InvalidSpec(format!("need n >= 1 and r in [-1, 1], got n = {n}, r = {r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).expect("valid");
    let width = n.to_string().len().max(4);
    let students = (0..n)
        .map(|i| {
            let (a, b): (f64, f64) = (z.sample(&mut rng), z.sample(&mut rng));
            let x = 40.0 + 10.0 * a;
            let y = 20.0 + 5.0 * (r * a + (1.0 - r * r).sqrt() * b);
            SynthStudent {
                user_id: format!("{population}{:0width$}", i + 1),
                role: "forum".into(),
                population: population.to_string(),
                certified: false,
                reading_freq: x.round().max(0.0) as u64,
                writing_freq: y.round().max(0.0) as u64,
                videos_watched: 1,
                quiz_attempts: 0,
                logins: 1,
                downloads: 0,
                decay: 1.0,
            }
        })
        .collect();
    Ok(SynthCohort { students })
}

/// Shape of a weekly activity series with a knee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesShape {
    pub start_level: u64,
    /// First week after which declines stay small; 1 means no steep phase.
    pub knee_week: u32,
    /// Upper bound of the relative weekly decline after the knee.
    pub post_knee_decline: f64,
    /// Optional one-week surge, e.g. an exam week.
    pub spike_week: Option<u32>,
}

impl Default for SeriesShape {
    fn default() -> Self {
        SeriesShape {
            start_level: 1000,
            knee_week: 4,
            post_knee_decline: 0.10,
            spike_week: None,
        }
    }
}

/// Weekly counts: multiplicative declines of 30–45% until the knee week,
/// then declines in `[0, post_knee_decline]`. A spike week is 1.5× its trend.
pub fn synth_weekly_series(shape: &SeriesShape, weeks: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trend = Vec::with_capacity(weeks);
    let mut level = shape.start_level as f64;
    for w in 1..=weeks as u32 {
        trend.push(level);
        let factor = if w < shape.knee_week {
            rng.random_range(0.55..0.70)
        } else {
            1.0 - rng.random_range(0.0..=shape.post_knee_decline)
        };
        level *= factor;
    }
    trend
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let boost = if shape.spike_week == Some(i as u32 + 1) { 1.5 } else { 1.0 };
            (t * boost).round() as u64
        })
        .collect()
}

/// What the generator planted for one student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub user_id: String,
    pub role: String,
    pub population: String,
    pub certified: bool,
    pub logins: u64,
    pub forum_reads: u64,
    pub forum_posts: u64,
    pub video_events: u64,
    pub videos_watched: u64,
    pub quiz_attempts: u64,
    pub downloads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub course_id: String,
    pub events: usize,
    pub students: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn of(cohort: &SynthCohort, course: &SynthCourse, events: usize) -> Self {
        GroundTruth {
            course_id: course.config.course_id.clone(),
            events,
            students: cohort
                .students
                .iter()
                .map(|s| TruthRow {
                    user_id: s.user_id.clone(),
                    role: s.role.clone(),
                    population: s.population.clone(),
                    certified: s.certified,
                    logins: s.logins,
                    forum_reads: s.reading_freq,
                    forum_posts: s.writing_freq,
                    video_events: s.video_events(),
                    videos_watched: s.videos_watched,
                    quiz_attempts: s.quiz_attempts,
                    downloads: s.downloads,
                })
                .collect(),
        }
    }
}

struct Clock {
    start: DateTime<Utc>,
    weeks: u32,
    taken: BTreeSet<DateTime<Utc>>,
}

impl Clock {
    /// A fresh instant in the given week (1-based), unique for this student.
    fn in_week(&mut self, rng: &mut ChaCha8Rng, week: u32) -> DateTime<Utc> {
        let week = week.clamp(1, self.weeks);
        let base = self.start + Duration::days(7 * (week as i64 - 1));
        let mut at = base + Duration::seconds(rng.random_range(0..7 * 86_400 - 3_600));
        while !self.taken.insert(at) {
            at += Duration::seconds(1);
        }
        at
    }

    fn decayed(&mut self, rng: &mut ChaCha8Rng, weights: &[f64]) -> DateTime<Utc> {
        let week = weighted_index(rng, weights) as u32 + 1;
        self.in_week(rng, week)
    }

    fn before_start(&mut self, secs: i64) -> DateTime<Utc> {
        let mut at = self.start - Duration::seconds(secs);
        while !self.taken.insert(at) {
            at -= Duration::seconds(1);
        }
        at
    }
}

/// Index drawn in proportion to non-negative weights (at least one positive).
fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).expect("a positive weight")
}

/// Splits `attempts` over quizzes (one per weight) with at most `cap` each,
/// choosing quizzes in proportion to `weights`. With `cover_all`, every quiz
/// gets at least one.
fn spread_attempts(rng: &mut ChaCha8Rng, attempts: u64, weights: &[f64], cap: u64, cover_all: bool) -> Vec<u64> {
    let quizzes = weights.len();
    let mut per = vec![0u64; quizzes];
    let mut left = attempts.min(cap * quizzes as u64);
    if cover_all {
        for slot in per.iter_mut() {
            if left == 0 {
                break;
            }
            *slot = 1;
            left -= 1;
        }
    }
    while left > 0 {
        let open: Vec<f64> = (0..quizzes).map(|q| if per[q] < cap { weights[q] } else { 0.0 }).collect();
        let q = weighted_index(rng, &open);
        per[q] += 1;
        left -= 1;
    }
    per
}

/// Events realizing every planted total of the cohort.
pub fn synth_events(cohort: &SynthCohort, course: &SynthCourse, seed: u64) -> Vec<Event> {
    let cfg = &course.config;
    let start = cfg.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let weeks = cfg.duration_weeks;
    let mut events = Vec::new();
    for (idx, s) in cohort.students.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64 + 1);
        let mut clock = Clock {
            start,
            weeks,
            taken: BTreeSet::new(),
        };
        let weights: Vec<f64> = (0..weeks).map(|w| s.decay.powi(w as i32)).collect();
        let course_id = cfg.course_id.as_str();
        let mut push = |at, a| events.push(Event::new(course_id, s.user_id.clone(), at, a));

        push(clock.before_start(86_400 + idx as i64), Activity::Enrollment);
        for _ in 0..s.logins {
            push(clock.decayed(&mut rng, &weights), Activity::Login);
        }
        for _ in 0..s.reading_freq {
            let thread_id = format!("t{}", rng.random_range(1..=course.threads));
            push(clock.decayed(&mut rng, &weights), Activity::ForumRead { thread_id });
        }
        for _ in 0..s.writing_freq {
            let thread_id = format!("t{}", rng.random_range(1..=course.threads));
            push(clock.decayed(&mut rng, &weights), Activity::ForumPost { thread_id });
        }
        for _ in 0..s.downloads {
            let file_id = format!("f{}", rng.random_range(1..=course.files));
            push(clock.decayed(&mut rng, &weights), Activity::FileDownload { file_id });
        }
        let mut videos: Vec<usize> = (0..course.videos).collect();
        videos.shuffle(&mut rng);
        for &j in videos.iter().take(s.videos_watched as usize) {
            let week = 1 + (j as u32 * weeks) / course.videos as u32;
            let video_id = format!("v{}", j + 1);
            let len = course.video_length(j);
            let play = clock.in_week(&mut rng, week);
            let mut done = play + Duration::seconds(len as i64);
            while !clock.taken.insert(done) {
                done += Duration::seconds(1);
            }
            push(play, Activity::VideoPlay { video_id: video_id.clone(), position_seconds: 0 });
            push(done, Activity::VideoComplete { video_id: video_id.clone(), position_seconds: len });
            let tenths: u32 = if s.certified { rng.random_range(20..250) } else { rng.random_range(50..700) };
            let mut asked = play + Duration::seconds(len as i64 / 2);
            while !clock.taken.insert(asked) {
                asked += Duration::seconds(1);
            }
            push(asked, Activity::VideoQuestion { video_id, delay_seconds: tenths as f64 / 10.0 });
        }
        let threshold = cfg.pass_threshold_pct.ceil() as u32;
        let quiz_weights: Vec<f64> = (0..course.quiz_count()).map(|q| s.decay.powi(q as i32)).collect();
        let per_quiz = spread_attempts(&mut rng, s.quiz_attempts, &quiz_weights, cfg.max_quiz_attempts as u64, s.certified);
        for (q, &n) in per_quiz.iter().enumerate() {
            let week = 1 + (q as u32 * weeks) / course.quiz_count() as u32;
            let mut times: Vec<DateTime<Utc>> = (0..n).map(|_| clock.in_week(&mut rng, week)).collect();
            times.sort();
            for (a, at) in times.into_iter().enumerate() {
                let last = a as u64 + 1 == n;
                let score = if s.certified && last {
                    rng.random_range(threshold..=100)
                } else if s.certified {
                    rng.random_range(20..=100)
                } else {
                    rng.random_range(0..threshold)
                };
                push(
                    at,
                    Activity::QuizAttempt {
                        quiz_id: cfg.quizzes[q].clone(),
                        attempt_no: a as u32 + 1,
                        score_pct: score as f64,
                    },
                );
            }
        }
        if s.certified {
            let end = start + Duration::days(7 * weeks as i64) - Duration::seconds(600 + idx as i64 % 3000);
            let mut at = end;
            while !clock.taken.insert(at) {
                at -= Duration::seconds(1);
            }
            push(at, Activity::Certificate);
        }
    }
    events.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.user_id.cmp(&b.user_id)));
    events
}

/// URL under the reference rule scheme for an event.
pub fn event_url(host: &str, e: &Event) -> String {
    let base = format!("{host}/courses/{}", e.course_id);
    match &e.activity {
        Activity::Enrollment => format!("{base}/enroll"),
        Activity::Login => format!("{base}/login"),
        Activity::ForumRead { thread_id } => format!("{base}/forum/threads/{thread_id}"),
        Activity::ForumPost { thread_id } => format!("{base}/forum/threads/{thread_id}/reply"),
        Activity::VideoPlay { video_id, position_seconds } => format!("{base}/videos/{video_id}/play?t={position_seconds}"),
        Activity::VideoPause { video_id, position_seconds } => format!("{base}/videos/{video_id}/pause?t={position_seconds}"),
        Activity::VideoComplete { video_id, position_seconds } => {
            format!("{base}/videos/{video_id}/complete?t={position_seconds}")
        }
        Activity::VideoQuestion { video_id, delay_seconds } => {
            format!("{base}/videos/{video_id}/question?delay={}", crate::store::fmt_num(*delay_seconds))
        }
        Activity::QuizAttempt {
            quiz_id,
            attempt_no,
            score_pct,
        } => format!("{base}/quizzes/{quiz_id}/attempts/{attempt_no}?score={}", crate::store::fmt_num(*score_pct)),
        Activity::FileDownload { file_id } => format!("{base}/files/{file_id}/download"),
        Activity::Certificate => format!("{base}/certificate"),
        Activity::Unclassified { url } => url.clone(),
    }
}

/// Raw log records for events; zone styles cycle through the three variants.
pub fn render_records(events: &[Event], host: &str, offset_minutes: i32) -> Vec<RawLogRecord> {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| RawLogRecord {
            timestamp_text: logparse::render_timestamp(e.at, offset_minutes, ZoneStyle::ALL[i % ZoneStyle::ALL.len()]),
            username: e.user_id.clone(),
            url: event_url(host, e),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthLogs {
    pub text: String,
    pub truth: GroundTruth,
    pub course: CourseConfig,
}

/// Raw log text for a cohort plus the ground truth it encodes.
pub fn synth_logs(cohort: &SynthCohort, course: &SynthCourse, seed: u64) -> SynthLogs {
    let events = synth_events(cohort, course, seed);
    let records = render_records(&events, &course.host, course.config.utc_offset_minutes);
    SynthLogs {
        text: logparse::serialize_log(&records),
        truth: GroundTruth::of(cohort, course, events.len()),
        course: course.config.clone(),
    }
}
