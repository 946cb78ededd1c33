//! Command-line front end. Exit codes: 0 success, 1 domain error (one
//! `error: <kind>: <message>` line on stderr), 2 usage error.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::anonymizer::{self, MaskMode, Recipe, Step};
use crate::clustering::{KMeansOptions, ScaleRule};
use crate::cohort::{self, ActiveDefinition, DropoutPointConfig, SuccessRateWeights};
use crate::event::EventKind;
use crate::indicators::{self, Indicator, Metric, ProfileActivity};
use crate::logparse::{ClassificationRuleSet, CourseMap};
use crate::motivation::{self, BatteryMode, BatteryRuleSet};
use crate::reports::{self, ClusterRequest, Error, KChoice, Result};
use crate::service::{self, ApiConfig};
use crate::store::{CourseConfig, EventStore, TableKind};
use crate::synthkit::{self, SynthCourse};
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "mooc-analytics", version, about = "Learning analytics for MOOC interaction logs")]
pub struct Cli {
    /// Event store directory.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// TOML file with defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output format of reports.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw logs and append the classified events to the store.
    Ingest(IngestArgs),
    /// Course reports: summary, weekly indicators, group comparisons, exports.
    Report(ReportArgs),
    /// One student's weekly indicators, quizzes and battery history.
    Profile(ProfileArgs),
    /// Engagement clustering with labeling and quadrant placement.
    Cluster(ClusterArgs),
    /// Week after which activity decline stabilizes.
    Dropout(DropoutArgs),
    /// Weekly activity battery of active students.
    Battery(BatteryArgs),
    /// Apply de-identification techniques to a CSV file.
    Anonymize(AnonymizeArgs),
    /// Generate a synthetic course: logs, course config, students and ground truth.
    Synth(SynthArgs),
    /// Run the HTTP API (settings from MOOC_* environment variables).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Course assigned to events whose URL names no course.
    #[arg(long)]
    pub course: Option<String>,
    /// Course configuration JSON to register before ingesting.
    #[arg(long)]
    pub course_config: Option<PathBuf>,
    /// Student CSV (`user_id` plus attribute columns) to register.
    #[arg(long)]
    pub students: Option<PathBuf>,
    /// Classification rules JSON; defaults to the reference rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Log files; `-` reads stdin.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Summary,
    Weekly,
    Totals,
    ActivityProfile,
    Groups,
    SuccessRate,
    Delays,
    Rhythm,
    ActivityRatio,
    Compare,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActiveArg {
    /// Video, forum post or quiz attempt.
    VideoPostQuiz,
    /// Forum post, forum read or quiz attempt.
    PostReadQuiz,
}

impl From<ActiveArg> for ActiveDefinition {
    fn from(a: ActiveArg) -> Self {
        match a {
            ActiveArg::VideoPostQuiz => ActiveDefinition::VideoPostQuiz,
            ActiveArg::PostReadQuiz => ActiveDefinition::PostReadQuiz,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub course: String,
    #[arg(long, value_enum, default_value = "summary")]
    pub kind: ReportKind,
    #[arg(long, value_enum)]
    pub active: Option<ActiveArg>,
    /// Week window `FROM-TO` for `groups`.
    #[arg(long)]
    pub window: Option<String>,
    /// Success-rate weights `w1,w2,w3,w4`.
    #[arg(long)]
    pub weights: Option<String>,
    /// Week filter for `delays`.
    #[arg(long)]
    pub week: Option<u32>,
    /// Reaction-delay cap in seconds for `delays`.
    #[arg(long, default_value_t = indicators::DEFAULT_DELAY_CAP_SECONDS)]
    pub cap: f64,
    /// Event kind for `rhythm`.
    #[arg(long, default_value = "login")]
    pub event: String,
    /// Metrics for `compare`.
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    /// Store projection for `table`, e.g. `quiz_attempts`.
    #[arg(long)]
    pub table: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Framework,
    Implemented,
}

impl From<ModeArg> for BatteryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Framework => BatteryMode::Framework,
            ModeArg::Implemented => BatteryMode::Implemented,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub course: String,
    #[arg(long)]
    pub user: String,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    SdOverlap,
    Extremes,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub course: String,
    /// Only students whose `population` attribute matches.
    #[arg(long)]
    pub population: Option<String>,
    /// `auto`, `auto:LO-HI` or a fixed number.
    #[arg(long, default_value = "auto")]
    pub k: String,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Cluster raw counts instead of z-scored columns.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Correlation above which a lower-priority variable is pruned.
    #[arg(long)]
    pub r_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub active: Option<ActiveArg>,
    /// Also write per-student assignments to this CSV.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DropoutArgs {
    /// Course whose weekly series is analysed.
    #[arg(long, required_unless_present = "series")]
    pub course: Option<String>,
    /// Explicit comma-separated weekly counts instead of a course.
    #[arg(long, conflicts_with = "course")]
    pub series: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub exceedances: Option<usize>,
    /// Weekly indicator, e.g. `quiz_attempts`.
    #[arg(long)]
    pub indicator: Option<String>,
}

#[derive(Debug, Args)]
pub struct BatteryArgs {
    #[arg(long)]
    pub course: String,
    /// Course week; defaults to the last completed week.
    #[arg(long)]
    pub week: Option<u32>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub active: Option<ActiveArg>,
    /// Print only the status distribution.
    #[arg(long)]
    pub distribution: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Technique {
    Hash,
    Suppress,
    Mask,
    Swap,
    Noise,
    KAnonymity,
    Code,
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Recipe JSON with a list of steps.
    #[arg(long, conflicts_with = "technique")]
    pub recipe: Option<PathBuf>,
    /// Single technique configured from flags.
    #[arg(long, value_enum, required_unless_present = "recipe")]
    pub technique: Option<Technique>,
    /// Target columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Columns emptied to `0` instead of NULL by `suppress`.
    #[arg(long, value_delimiter = ',')]
    pub numeric: Vec<String>,
    /// HMAC key for `hash`.
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long, default_value_t = anonymizer::DEFAULT_HASH_LENGTH)]
    pub truncation: usize,
    /// Hash the targeted columns together.
    #[arg(long)]
    pub joint: bool,
    #[arg(long, default_value_t = '$')]
    pub mask_char: char,
    /// Fixed mask length instead of preserving lengths.
    #[arg(long)]
    pub mask_length: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Noise domain `LO,HI`.
    #[arg(long)]
    pub domain: Option<String>,
    /// Quasi-identifiers for `k-anonymity`.
    #[arg(long, value_delimiter = ',')]
    pub qi: Vec<String>,
    /// `column=path` hierarchy CSVs, repeatable.
    #[arg(long = "hierarchy")]
    pub hierarchies: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub suppression_limit: usize,
    /// Require a hierarchy for every quasi-identifier.
    #[arg(long)]
    pub strict: bool,
    /// Key store JSON for `code`.
    #[arg(long)]
    pub key_store: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationArg {
    Undergraduate,
    External,
    /// Both populations split 459 : 379.
    Mixed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 459)]
    pub students: usize,
    #[arg(long, value_enum, default_value = "undergraduate")]
    pub population: PopulationArg,
    #[arg(long, default_value = "synth")]
    pub course: String,
    /// Course start date (YYYY-MM-DD).
    #[arg(long, default_value = "2016-03-07")]
    pub start: String,
    #[arg(long, default_value_t = 8)]
    pub weeks: u32,
    /// Directory receiving logs.txt, course.json, students.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides MOOC_BIND.
    #[arg(long)]
    pub bind: Option<String>,
}

/// Defaults read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data_dir: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub rules: Option<PathBuf>,
    pub active_definition: Option<ActiveArg>,
    pub battery_mode: Option<BatteryMode>,
    pub epsilon: Option<f64>,
    pub allowed_exceedances: Option<usize>,
    pub restarts: Option<usize>,
    pub r_threshold: Option<f64>,
    pub standardize: Option<bool>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

const DEFAULT_SEED: u64 = 42;
const DEFAULT_DATA_DIR: &str = "mooc-data";

struct Ctx {
    cfg: CliConfig,
    data_dir: PathBuf,
    format: Format,
    seed: u64,
}

impl Ctx {
    fn open_store(&self) -> Result<EventStore> {
        Ok(EventStore::open(&self.data_dir)?)
    }

    fn active(&self, flag: Option<ActiveArg>) -> ActiveDefinition {
        flag.or(self.cfg.active_definition).map(Into::into).unwrap_or_default()
    }

    fn battery(&self, flag: Option<ModeArg>) -> BatteryRuleSet {
        BatteryRuleSet::new(flag.map(Into::into).or(self.cfg.battery_mode).unwrap_or_default())
    }

    /// Writes a table as CSV or a payload as pretty JSON, per `--format`.
    fn emit<T: Serialize>(&self, out: &mut dyn Write, payload: &T, table: impl FnOnce() -> Table) -> Result<()> {
        match self.format {
            Format::Json => {
                let text = serde_json::to_string_pretty(payload).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                writeln!(out, "{text}")?;
            }
            Format::Csv => out.write_all(table().to_csv_string().as_bytes())?,
        }
        Ok(())
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        // Reader closed the pipe early (`| head`).
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error: {}: {msg}", e.kind());
            1
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let ctx = Ctx {
        data_dir: cli
            .data_dir
            .or_else(|| cfg.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
        format: cli.format.or(cfg.format).unwrap_or_default(),
        seed: cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        cfg,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Report(a) => report(&ctx, a, out),
        Command::Profile(a) => profile(&ctx, a, out),
        Command::Cluster(a) => cluster(&ctx, a, out),
        Command::Dropout(a) => dropout(&ctx, a, out),
        Command::Battery(a) => battery(&ctx, a, out),
        Command::Anonymize(a) => anonymize(&ctx, a, out),
        Command::Synth(a) => synth(&ctx, a, out),
        Command::Serve(a) => serve(&ctx, a),
    }
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let mut store = ctx.open_store()?;
    if let Some(p) = &a.course_config {
        let course: CourseConfig =
            serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?;
        let current = store.snapshot();
        if current.course(&course.course_id).ok() != Some(&course) {
            store.register_course(course)?;
        }
    }
    let course = a.course.clone().or_else(|| {
        a.course_config
            .as_ref()
            .and_then(|_| store.snapshot().courses().last().map(|c| c.course_id.clone()))
    });
    if let Some(c) = &course {
        store.snapshot().course(c)?;
    }
    if let Some(p) = &a.students {
        let c = course
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--students needs --course".into()))?;
        reports::register_students(&mut store, c, &Table::load(p, ',')?)?;
    }
    let rules = match a.rules.as_ref().or(ctx.cfg.rules.as_ref()) {
        Some(p) => ClassificationRuleSet::load(p)?,
        None => ClassificationRuleSet::reference(),
    };
    let map = course.map(CourseMap::with_default).unwrap_or_default();
    let mut reports_ = Vec::new();
    for path in &a.logs {
        reports_.push(reports::ingest_log(&mut store, &read_input(path)?, &rules, &map)?);
    }
    ctx.emit(out, &reports_, || {
        let mut t = Table::new(
            ["file", "records", "accepted", "duplicates", "unclassified", "rejects", "failures"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        for (p, r) in a.logs.iter().zip(&reports_) {
            t.push_row(vec![
                p.display().to_string(),
                r.records.to_string(),
                r.accepted.to_string(),
                r.duplicates.to_string(),
                r.unclassified.to_string(),
                r.rejects.len().to_string(),
                r.failures.len().to_string(),
            ]);
        }
        t
    })
}

fn parse_window(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidArgument(format!("window must be FROM-TO, got `{s}`"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad {what} value `{x}`"))))
        .collect()
}

fn parse_metric(s: Option<&str>, name: &str) -> Result<Metric> {
    let s = s.ok_or_else(|| Error::InvalidArgument(format!("--{name} is required")))?;
    s.parse().map_err(|_| Error::InvalidArgument(format!("unknown metric `{s}`")))
}

fn report(ctx: &Ctx, a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let snap = ctx.open_store()?.snapshot();
    let course = a.course.as_str();
    let def = ctx.active(a.active);
    match a.kind {
        ReportKind::Summary => {
            let r = reports::course_summary(&snap, course, def)?;
            ctx.emit(out, &r, || reports::summary_table(&r))
        }
        ReportKind::Weekly => {
            let by_user = indicators::weekly_by_user(&snap, course)?;
            let rows: Vec<_> = by_user.into_values().flatten().collect();
            ctx.emit(out, &rows, || reports::weekly_table(&rows))
        }
        ReportKind::Totals => {
            let totals = indicators::student_totals(&snap, course)?;
            ctx.emit(out, &totals, || {
                let mut header = vec!["user_id".to_string()];
                header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
                let mut t = Table::new(header);
                for s in &totals {
                    let mut row = vec![s.user_id.clone()];
                    row.extend(Metric::ALL.iter().map(|m| crate::store::fmt_num(s.get(*m))));
                    t.push_row(row);
                }
                t
            })
        }
        ReportKind::ActivityProfile => {
            let p = indicators::activity_profile(&snap, course)?;
            ctx.emit(out, &p, || {
                let mut header: Vec<String> = ["user_id", "class", "certified", "week"].iter().map(|s| s.to_string()).collect();
                header.extend(ProfileActivity::ALL.iter().map(|a| {
                    serde_json::to_value(a).expect("serializes").as_str().unwrap_or_default().to_string()
                }));
                let mut t = Table::new(header);
                for s in &p.students {
                    for (w, counts) in p.weeks.iter().zip(&s.counts) {
                        let mut row = vec![s.user_id.clone(), s.class.clone().unwrap_or_default(), s.certified.to_string(), w.to_string()];
                        row.extend(counts.iter().map(u64::to_string));
                        t.push_row(row);
                    }
                }
                t
            })
        }
        ReportKind::Groups => {
            let window = a.window.as_deref().map(parse_window).transpose()?;
            let g = cohort::compare_groups(&snap, course, window, def)?;
            ctx.emit(out, &g, || {
                let mut t = Table::new(vec!["indicator".into(), "certified".into(), "dropped".into(), "gap".into()]);
                for (j, i) in g.indicators.iter().enumerate() {
                    t.push_row(vec![
                        i.name().to_string(),
                        format!("{:.4}", g.certified.means[j]),
                        format!("{:.4}", g.dropped.means[j]),
                        format!("{:.4}", g.gaps[j]),
                    ]);
                }
                t
            })
        }
        ReportKind::SuccessRate => {
            let w = match a.weights.as_deref() {
                Some(s) => match parse_floats(s, "weight")?.as_slice() {
                    [w1, w2, w3, w4] => SuccessRateWeights::new(*w1, *w2, *w3, *w4)?,
                    _ => return Err(Error::InvalidArgument("--weights needs four values".into())),
                },
                None => SuccessRateWeights::default(),
            };
            let table = cohort::success_rate_table(&snap, course, &w)?;
            ctx.emit(out, &table, || {
                let mut t = Table::new(vec!["user_id".into(), "week".into(), "success_rate".into()]);
                for (u, weeks) in &table {
                    for (i, sr) in weeks.iter().enumerate() {
                        t.push_row(vec![u.clone(), (i + 1).to_string(), crate::store::fmt_num(*sr)]);
                    }
                }
                t
            })
        }
        ReportKind::Delays => {
            let d = indicators::reaction_delay_stats(&snap, course, a.cap, a.week)?;
            ctx.emit(out, &d, || {
                let mut t = Table::new(
                    ["group", "n", "q1", "median", "q3", "outliers", "excluded_over_cap"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                );
                for g in [&d.certified, &d.non_certified] {
                    let f = |v: Option<f64>| v.map(crate::store::fmt_num).unwrap_or_default();
                    let s = g.stats.as_ref();
                    t.push_row(vec![
                        g.group.clone(),
                        s.map(|s| s.n).unwrap_or(0).to_string(),
                        f(s.map(|s| s.q1)),
                        f(s.map(|s| s.median)),
                        f(s.map(|s| s.q3)),
                        s.map(|s| s.outliers.len()).unwrap_or(0).to_string(),
                        g.excluded_over_cap.to_string(),
                    ]);
                }
                t
            })
        }
        ReportKind::Rhythm => {
            let kind: EventKind = a
                .event
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("unknown event kind `{}`", a.event)))?;
            let hours = indicators::hourly_rhythm(&snap, course, kind)?;
            ctx.emit(out, &hours, || {
                let mut t = Table::new(vec!["hour".into(), "events".into()]);
                for (h, n) in hours.iter().enumerate() {
                    t.push_row(vec![h.to_string(), n.to_string()]);
                }
                t
            })
        }
        ReportKind::ActivityRatio => {
            let trend = motivation::activity_ratio_trend(&snap, course, def)?;
            ctx.emit(out, &trend, || {
                let mut t = Table::new(vec!["week".into(), "active".into(), "registrants".into(), "ratio".into()]);
                for r in trend.weekly.iter().chain(std::iter::once(&trend.overall)) {
                    t.push_row(vec![
                        r.week.map(|w| w.to_string()).unwrap_or_else(|| "all".into()),
                        r.active.to_string(),
                        r.registrants.to_string(),
                        r.ratio.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    ]);
                }
                t
            })
        }
        ReportKind::Compare => {
            let x = parse_metric(a.x.as_deref(), "x")?;
            let y = parse_metric(a.y.as_deref(), "y")?;
            if x == y {
                return Err(Error::InvalidArgument("--x and --y must differ".into()));
            }
            let c = indicators::compare_metrics(&snap, course, x, y)?;
            ctx.emit(out, &c, || reports::comparison_table(&c))
        }
        ReportKind::Table => {
            let name = a
                .table
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument(format!("--table is required; one of {}", table_names())))?;
            let kind: TableKind = name.parse()?;
            let t = snap.export_table(kind, Some(course))?;
            ctx.emit(out, &t, || t.clone())
        }
    }
}

fn table_names() -> String {
    TableKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}

fn profile(ctx: &Ctx, a: ProfileArgs, out: &mut dyn Write) -> Result<()> {
    let snap = ctx.open_store()?.snapshot();
    let p = reports::student_profile(&snap, &a.course, &a.user, &ctx.battery(a.mode))?;
    ctx.emit(out, &p, || {
        let mut t = reports::weekly_table(&p.weekly);
        t.header.push("battery".into());
        for row in &mut t.rows {
            let week: u32 = row[1].parse().unwrap_or(0);
            let pct = p.battery.iter().find(|b| b.week == week).map(|b| b.percent.to_string());
            row.push(pct.unwrap_or_default());
        }
        t
    })
}

fn cluster(ctx: &Ctx, a: ClusterArgs, out: &mut dyn Write) -> Result<()> {
    let snap = ctx.open_store()?.snapshot();
    let defaults = ClusterRequest::default();
    let req = ClusterRequest {
        population: a.population.clone(),
        k: a.k.parse::<KChoice>()?,
        seed: ctx.seed,
        options: KMeansOptions {
            restarts: a.restarts.or(ctx.cfg.restarts).unwrap_or(defaults.options.restarts),
            ..defaults.options
        },
        standardize: !a.raw && ctx.cfg.standardize.unwrap_or(true),
        rule: match a.rule {
            Some(RuleArg::Extremes) => ScaleRule::Extremes,
            Some(RuleArg::SdOverlap) => ScaleRule::SdOverlap,
            None => ScaleRule::default(),
        },
        r_threshold: a.r_threshold.or(ctx.cfg.r_threshold).unwrap_or(defaults.r_threshold),
        counting: defaults.counting,
        active_definition: ctx.active(a.active),
    };
    let r = reports::cluster_course(&snap, &a.course, &req)?;
    if let Some(path) = &a.assignments {
        let mut t = Table::new(vec!["user_id".into(), "cluster".into(), "pc1".into(), "pc2".into()]);
        for s in &r.assignments {
            t.push_row(vec![s.user_id.clone(), s.cluster.to_string(), format!("{:.6}", s.x), format!("{:.6}", s.y)]);
        }
        t.save(path)?;
    }
    ctx.emit(out, &r, || reports::cluster_table(&r))
}

fn dropout(ctx: &Ctx, a: DropoutArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = DropoutPointConfig::default();
    if let Some(e) = a.epsilon.or(ctx.cfg.epsilon) {
        cfg.epsilon = e;
    }
    if let Some(x) = a.exceedances.or(ctx.cfg.allowed_exceedances) {
        cfg.allowed_exceedances = x;
    }
    if let Some(i) = &a.indicator {
        cfg.indicator = i
            .parse::<Indicator>()
            .map_err(|_| Error::InvalidArgument(format!("unknown indicator `{i}`")))?;
    }
    let r = match (&a.course, &a.series) {
        (_, Some(s)) => {
            let series = s
                .split(',')
                .map(|x| x.trim().parse::<u64>().map_err(|_| Error::InvalidArgument(format!("bad count `{x}`"))))
                .collect::<Result<Vec<_>>>()?;
            reports::DropoutReport {
                course_id: String::new(),
                config: cfg,
                point: cohort::dropout_point(&series, &cfg)?,
                series,
            }
        }
        (Some(c), None) => reports::dropout_report(&ctx.open_store()?.snapshot(), c, &cfg)?,
        (None, None) => return Err(Error::InvalidArgument("--course or --series is required".into())),
    };
    ctx.emit(out, &r, || reports::dropout_table(&r))
}

fn battery(ctx: &Ctx, a: BatteryArgs, out: &mut dyn Write) -> Result<()> {
    let snap = ctx.open_store()?.snapshot();
    let course = snap.course(&a.course)?;
    let week = match a.week {
        Some(w) => w,
        None => motivation::last_completed_week(course, chrono::Utc::now())
            .ok_or_else(|| Error::InvalidArgument("no completed course week yet; pass --week".into()))?,
    };
    let r = motivation::battery_report(&snap, &a.course, week, &ctx.battery(a.mode), ctx.active(a.active))?;
    if a.distribution {
        ctx.emit(out, &r.distribution, || reports::distribution_table(&r.distribution))
    } else {
        ctx.emit(out, &r, || reports::battery_table(&r))
    }
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for this technique")))
}

fn single_step(a: &AnonymizeArgs, technique: Technique, seed: u64) -> Result<Step> {
    Ok(match technique {
        Technique::Hash => Step::Hash {
            columns: a.columns.clone(),
            key: require(a.key.clone(), "key")?,
            truncation: a.truncation,
            joint: a.joint,
        },
        Technique::Suppress => Step::Suppress {
            columns: a.columns.clone(),
            numeric: a.numeric.clone(),
        },
        Technique::Mask => Step::Mask {
            columns: a.columns.clone(),
            mask_char: a.mask_char,
            mode: a.mask_length.map(MaskMode::Fixed).unwrap_or(MaskMode::LengthPreserving),
        },
        Technique::Swap => Step::Swap {
            columns: a.columns.clone(),
            seed,
        },
        Technique::Noise => Step::Noise {
            columns: a.columns.clone(),
            delta: require(a.delta, "delta")?,
            seed,
            domain: match a.domain.as_deref() {
                Some(d) => match parse_floats(d, "domain")?.as_slice() {
                    [lo, hi] => (*lo, *hi),
                    _ => return Err(Error::InvalidArgument("--domain needs LO,HI".into())),
                },
                None => anonymizer::DEFAULT_NOISE_DOMAIN,
            },
        },
        Technique::KAnonymity => Step::KAnonymity {
            quasi_identifiers: a.qi.clone(),
            k: require(a.k, "k")?,
            hierarchies: a
                .hierarchies
                .iter()
                .map(|h| {
                    h.split_once('=')
                        .map(|(c, p)| (c.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| Error::InvalidArgument(format!("--hierarchy needs column=path, got `{h}`")))
                })
                .collect::<Result<_>>()?,
            suppression_limit: a.suppression_limit,
            strict: a.strict,
        },
        Technique::Code => Step::Code {
            columns: a.columns.clone(),
            key_store: require(a.key_store.clone(), "key-store")?,
        },
    })
}

fn anonymize(ctx: &Ctx, a: AnonymizeArgs, out: &mut dyn Write) -> Result<()> {
    let recipe = match (&a.recipe, a.technique) {
        (Some(p), _) => Recipe::load(p)?,
        (None, Some(t)) => Recipe {
            steps: vec![single_step(&a, t, ctx.seed)?],
        },
        (None, None) => return Err(Error::InvalidArgument("--recipe or --technique is required".into())),
    };
    let table = Table::load(&a.input, ',')?;
    let outcome = anonymizer::apply_recipe(&table, &recipe, a.output.as_deref())?;
    match &a.output {
        Some(p) => {
            outcome.table.save(p)?;
            let summary = serde_json::json!({
                "rows": outcome.table.row_count(),
                "warnings": outcome.warnings,
                "k_anonymity": outcome.k_anonymity,
            });
            writeln!(out, "{}", serde_json::to_string(&summary).expect("serializes"))?;
        }
        None => out.write_all(outcome.table.to_csv_string().as_bytes())?,
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let start = chrono::NaiveDate::parse_from_str(&a.start, "%Y-%m-%d")
        .map_err(|_| Error::InvalidArgument(format!("--start must be YYYY-MM-DD, got `{}`", a.start)))?;
    let course = SynthCourse::new(&a.course, start, a.weeks);
    let parts: Vec<(&str, Vec<synthkit::ArchetypeSpec>, usize)> = match a.population {
        PopulationArg::Undergraduate => vec![("undergraduate", synthkit::undergraduate_specs(), a.students)],
        PopulationArg::External => vec![("external", synthkit::external_specs(), a.students)],
        PopulationArg::Mixed => {
            let n = synthkit::allocate(&[459.0, 379.0], a.students);
            vec![
                ("undergraduate", synthkit::undergraduate_specs(), n[0]),
                ("external", synthkit::external_specs(), n[1]),
            ]
        }
    };
    let mut students = Vec::new();
    for (i, (name, specs, n)) in parts.into_iter().enumerate() {
        if n > 0 {
            let c = synthkit::synth_cohort(&specs, n, ctx.seed.wrapping_add(i as u64 * 7919), &course, name)?;
            students.extend(c.students);
        }
    }
    let cohort = synthkit::SynthCohort { students };
    let logs = synthkit::synth_logs(&cohort, &course, ctx.seed.wrapping_add(1));
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("logs.txt"), &logs.text)?;
    std::fs::write(
        a.out.join("course.json"),
        serde_json::to_string_pretty(&logs.course).expect("serializes") + "\n",
    )?;
    std::fs::write(
        a.out.join("truth.json"),
        serde_json::to_string_pretty(&logs.truth).expect("serializes") + "\n",
    )?;
    let mut t = Table::new(vec!["user_id".into(), "population".into()]);
    for s in &cohort.students {
        t.push_row(vec![s.user_id.clone(), s.population.clone()]);
    }
    t.save(a.out.join("students.csv"))?;
    let summary = serde_json::json!({
        "students": cohort.students.len(),
        "events": logs.truth.events,
        "roles": cohort.role_counts(),
        "out": a.out.display().to_string(),
    });
    writeln!(out, "{}", serde_json::to_string(&summary).expect("serializes"))?;
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let mut cfg = ApiConfig::from_env()?;
    if std::env::var_os("MOOC_DATA_DIR").is_none() {
        cfg.data_dir = Some(ctx.data_dir.clone());
    }
    if let Some(b) = a.bind {
        cfg.bind = b
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("--bind `{b}` is not host:port")))?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(cfg))
}
