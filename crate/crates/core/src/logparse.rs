//! Raw interaction-log parsing and URL-rule classification.
//!
//! The raw format is a single stream of records joined by `%|`; each record
//! holds three fields joined by `%\`: a browser-rendered timestamp, the
//! platform login name and the visited URL.
//!
//! ```text
//! Mon Mar 16 2015 06:47:44 GMT+0100 (CET)%\ulstahl%\https://...%|Mon Mar 16 ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::event::{Activity, Event, EventKind};

pub const RECORD_SEPARATOR: &str = "%|";
pub const FIELD_SEPARATOR: &str = "%\\";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("unparsable timestamp `{0}`")]
    UnparsableTimestamp(String),
    #[error("invalid classification rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
    #[error("rule {rule} produced an invalid payload for `{url}`: {reason}")]
    InvalidPayload {
        rule: usize,
        url: String,
        reason: String,
    },
    #[error("cannot read rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed rule file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One `timestamp %\ username %\ url` triple, fields kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub timestamp_text: String,
    pub username: String,
    pub url: String,
}

/// A fragment between two record separators that is not a well-formed triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    /// Position of the fragment among all non-blank fragments.
    pub fragment_index: usize,
    pub fragment: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParsedLog {
    pub records: Vec<RawLogRecord>,
    pub rejects: Vec<Reject>,
}

impl ParsedLog {
    pub fn fragment_count(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

/// Splits a raw log into records. Blank fragments (e.g. after a trailing
/// separator) are not counted; every other fragment ends up either as a
/// record or as a reject.
pub fn parse_log(text: &str) -> ParsedLog {
    let mut parsed = ParsedLog::default();
    let fragments = text
        .split(RECORD_SEPARATOR)
        .map(|f| f.trim_matches(|c: char| c == '\n' || c == '\r'))
        .filter(|f| !f.trim().is_empty());
    for (fragment_index, fragment) in fragments.enumerate() {
        match parse_fragment(fragment) {
            Ok(record) => parsed.records.push(record),
            Err(reason) => parsed.rejects.push(Reject {
                fragment_index,
                fragment: fragment.to_string(),
                reason,
            }),
        }
    }
    parsed
}

fn parse_fragment(fragment: &str) -> Result<RawLogRecord, String> {
    let fields: Vec<&str> = fragment.split(FIELD_SEPARATOR).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    }
    let names = ["timestamp", "username", "url"];
    for (field, name) in fields.iter().zip(names) {
        if field.trim().is_empty() {
            return Err(format!("empty {name} field"));
        }
    }
    Ok(RawLogRecord {
        timestamp_text: fields[0].trim().to_string(),
        username: fields[1].trim().to_string(),
        url: fields[2].trim().to_string(),
    })
}

/// Inverse of [`parse_log`] for well-formed records.
pub fn serialize_log(records: &[RawLogRecord]) -> String {
    records
        .iter()
        .map(|r| {
            [r.timestamp_text.as_str(), &r.username, &r.url].join(FIELD_SEPARATOR)
        })
        .collect::<Vec<_>>()
        .join(RECORD_SEPARATOR)
}

/// A timestamp split into its instant, the numeric offset it was rendered
/// with and the (entity-decoded) zone name, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTimestamp {
    pub instant: DateTime<Utc>,
    pub offset_minutes: i32,
    pub zone_name: Option<String>,
}

fn timestamp_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:Mon|Tue|Wed|Thu|Fri|Sat|Sun) (Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) (\d{1,2}) (\d{4}) (\d{2}):(\d{2}):(\d{2}) GMT([+-])(\d{2})(\d{2})(?: \((.*)\))?$",
        )
        .expect("timestamp pattern compiles")
    })
}

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

pub fn parse_timestamp(text: &str) -> Result<ParsedTimestamp, LogError> {
    let bad = || LogError::UnparsableTimestamp(text.to_string());
    let caps = timestamp_regex().captures(text.trim()).ok_or_else(bad)?;
    let num = |i: usize| caps[i].parse::<u32>().map_err(|_| bad());
    let month = MONTHS.iter().position(|m| *m == &caps[1]).ok_or_else(bad)? as u32 + 1;
    let date = NaiveDate::from_ymd_opt(caps[3].parse().map_err(|_| bad())?, month, num(2)?)
        .ok_or_else(bad)?;
    let local = date.and_hms_opt(num(4)?, num(5)?, num(6)?).ok_or_else(bad)?;
    let (oh, om) = (num(8)? as i32, num(9)? as i32);
    if oh > 23 || om > 59 {
        return Err(bad());
    }
    let sign = if &caps[7] == "-" { -1 } else { 1 };
    let offset_minutes = sign * (oh * 60 + om);
    let offset = FixedOffset::east_opt(offset_minutes * 60).ok_or_else(bad)?;
    let instant = offset
        .from_local_datetime(&local)
        .single()
        .ok_or_else(bad)?
        .with_timezone(&Utc);
    Ok(ParsedTimestamp {
        instant,
        offset_minutes,
        zone_name: caps.get(10).map(|m| decode_html_entities(m.as_str())),
    })
}

/// Converts a log timestamp to UTC using only its numeric `GMT±HHMM` offset.
pub fn normalize_timestamp(text: &str) -> Result<DateTime<Utc>, LogError> {
    parse_timestamp(text).map(|p| p.instant)
}

/// Zone-name suffix used when rendering a timestamp back into log form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneStyle {
    /// `... GMT+0100 (CET)`
    Abbreviated,
    /// `... GMT+0100 (Mittleurop&#228;ische Zeit)`
    EntityEncoded,
    /// `... GMT+0100`
    Bare,
}

impl ZoneStyle {
    pub const ALL: [ZoneStyle; 3] = [ZoneStyle::Abbreviated, ZoneStyle::EntityEncoded, ZoneStyle::Bare];
}

/// Renders an instant the way the platform's browser logger does.
pub fn render_timestamp(instant: DateTime<Utc>, offset_minutes: i32, style: ZoneStyle) -> String {
    let offset = FixedOffset::east_opt(offset_minutes * 60).expect("offset within a day");
    let local = instant.with_timezone(&offset);
    let sign = if offset_minutes < 0 { '-' } else { '+' };
    let abs = offset_minutes.abs();
    let base = format!(
        "{} {} {:02} {} {} GMT{}{:02}{:02}",
        local.format("%a"),
        MONTHS[local.month0() as usize],
        local.day(),
        local.year(),
        local.format("%H:%M:%S"),
        sign,
        abs / 60,
        abs % 60
    );
    match style {
        ZoneStyle::Abbreviated => format!("{base} (CET)"),
        ZoneStyle::EntityEncoded => format!("{base} (Mittleurop&#228;ische Zeit)"),
        ZoneStyle::Bare => base,
    }
}

/// Decodes numeric (`&#228;`, `&#xE4;`) and a handful of named entities.
/// Unknown entities are left as written.
pub fn decode_html_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('&') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let decoded = tail.find(';').and_then(|end| {
            let body = &tail[1..end];
            let ch = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
            } else if let Some(dec) = body.strip_prefix('#') {
                dec.parse::<u32>().ok().and_then(char::from_u32)
            } else {
                match body {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" => Some('\''),
                    "auml" => Some('ä'),
                    "ouml" => Some('ö'),
                    "uuml" => Some('ü'),
                    "Auml" => Some('Ä'),
                    "Ouml" => Some('Ö'),
                    "Uuml" => Some('Ü'),
                    "szlig" => Some('ß'),
                    _ => None,
                }
            };
            ch.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, consumed)) => {
                out.push(c);
                rest = &tail[consumed..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// One URL rule as written in the rule file.
///
/// `pattern` is a regular expression searched in the URL (anchor it with
/// `^`/`$` for whole-URL matches). Payload fields are filled from named
/// capture groups: by default a group named like the field (`quiz_id`,
/// `attempt_no`, `score_pct`, `video_id`, `position_seconds`, `thread_id`,
/// `file_id`, `delay_seconds`), or the group named in `extractors`.
/// A group named `course` overrides the course map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extractors: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    spec: RuleSpec,
    regex: Regex,
}

/// Ordered URL rules; the first match wins.
#[derive(Debug, Clone)]
pub struct ClassificationRuleSet {
    rules: Vec<CompiledRule>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RuleFile {
    rules: Vec<RuleSpec>,
}

impl ClassificationRuleSet {
    pub fn new(specs: Vec<RuleSpec>) -> Result<Self, LogError> {
        let rules = specs
            .into_iter()
            .enumerate()
            .map(|(index, spec)| {
                let regex = Regex::new(&spec.pattern).map_err(|e| LogError::InvalidRule {
                    index,
                    reason: e.to_string(),
                })?;
                for (field, group) in &spec.extractors {
                    if !regex.capture_names().flatten().any(|n| n == group) {
                        return Err(LogError::InvalidRule {
                            index,
                            reason: format!("extractor `{field}` names missing group `{group}`"),
                        });
                    }
                }
                Ok(CompiledRule { spec, regex })
            })
            .collect::<Result<_, _>>()?;
        Ok(ClassificationRuleSet { rules })
    }

    pub fn from_json(json: &str) -> Result<Self, LogError> {
        let file: RuleFile = serde_json::from_str(json)?;
        Self::new(file.rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = RuleFile {
            rules: self.specs().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule serialization is infallible")
    }

    pub fn specs(&self) -> impl Iterator<Item = &RuleSpec> {
        self.rules.iter().map(|r| &r.spec)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rules for the reference URL scheme
    /// `https://<host>/courses/<course>/<resource>...`, the one produced by
    /// the synthetic log generator:
    ///
    /// | path                                              | kind            |
    /// |---------------------------------------------------|-----------------|
    /// | `/enroll`                                         | Enrollment      |
    /// | `/login`                                          | Login           |
    /// | `/forum/threads/<thread>/reply`                   | ForumPost       |
    /// | `/forum/threads/<thread>`                         | ForumRead       |
    /// | `/videos/<video>/(play\|pause\|complete)?t=<s>`   | Video*          |
    /// | `/videos/<video>/question?delay=<s>`              | VideoQuestion   |
    /// | `/quizzes/<quiz>/attempts/<n>?score=<pct>`        | QuizAttempt     |
    /// | `/files/<file>/download`                          | FileDownload    |
    /// | `/certificate`                                    | Certificate     |
    pub fn reference() -> Self {
        const PREFIX: &str = r"^https?://[^/]+/courses/(?P<course>[^/?#]+)";
        let rule = |path: &str, kind| RuleSpec {
            pattern: format!("{PREFIX}{path}"),
            kind,
            extractors: BTreeMap::new(),
        };
        Self::new(vec![
            rule(r"/enroll/?$", EventKind::Enrollment),
            rule(r"/login/?$", EventKind::Login),
            rule(r"/forum/threads/(?P<thread_id>[^/?#]+)/reply/?$", EventKind::ForumPost),
            rule(r"/forum/threads/(?P<thread_id>[^/?#]+)/?$", EventKind::ForumRead),
            rule(r"/videos/(?P<video_id>[^/?#]+)/play\?t=(?P<position_seconds>\d+)$", EventKind::VideoPlay),
            rule(r"/videos/(?P<video_id>[^/?#]+)/pause\?t=(?P<position_seconds>\d+)$", EventKind::VideoPause),
            rule(r"/videos/(?P<video_id>[^/?#]+)/complete\?t=(?P<position_seconds>\d+)$", EventKind::VideoComplete),
            rule(r"/videos/(?P<video_id>[^/?#]+)/question\?delay=(?P<delay_seconds>\d+(?:\.\d+)?)$", EventKind::VideoQuestion),
            rule(
                r"/quizzes/(?P<quiz_id>[^/?#]+)/attempts/(?P<attempt_no>\d+)\?score=(?P<score_pct>\d+(?:\.\d+)?)$",
                EventKind::QuizAttempt,
            ),
            rule(r"/files/(?P<file_id>[^/?#]+)/download/?$", EventKind::FileDownload),
            rule(r"/certificate/?$", EventKind::Certificate),
        ])
        .expect("reference rules are valid")
    }

    /// Returns the index of the first matching rule and the activity it
    /// extracts, or `None` when no rule matches.
    pub fn classify_url(&self, url: &str) -> Result<Option<(usize, Activity, Option<String>)>, LogError> {
        for (index, rule) in self.rules.iter().enumerate() {
            let Some(caps) = rule.regex.captures(url) else {
                continue;
            };
            let field = |name: &str| -> Result<String, LogError> {
                let group = rule.spec.extractors.get(name).map(String::as_str).unwrap_or(name);
                caps.name(group)
                    .map(|m| m.as_str().to_string())
                    .ok_or_else(|| LogError::InvalidPayload {
                        rule: index,
                        url: url.to_string(),
                        reason: format!("missing capture for `{name}`"),
                    })
            };
            let number = |name: &str| -> Result<f64, LogError> {
                let raw = field(name)?;
                raw.parse::<f64>().map_err(|_| LogError::InvalidPayload {
                    rule: index,
                    url: url.to_string(),
                    reason: format!("`{name}` is not a number: {raw}"),
                })
            };
            let whole = |name: &str| -> Result<u32, LogError> {
                let raw = field(name)?;
                raw.parse::<u32>().map_err(|_| LogError::InvalidPayload {
                    rule: index,
                    url: url.to_string(),
                    reason: format!("`{name}` is not a non-negative integer: {raw}"),
                })
            };
            let activity = match rule.spec.kind {
                EventKind::Enrollment => Activity::Enrollment,
                EventKind::Login => Activity::Login,
                EventKind::Certificate => Activity::Certificate,
                EventKind::ForumRead => Activity::ForumRead {
                    thread_id: field("thread_id")?,
                },
                EventKind::ForumPost => Activity::ForumPost {
                    thread_id: field("thread_id")?,
                },
                EventKind::VideoPlay => Activity::VideoPlay {
                    video_id: field("video_id")?,
                    position_seconds: whole("position_seconds")?,
                },
                EventKind::VideoPause => Activity::VideoPause {
                    video_id: field("video_id")?,
                    position_seconds: whole("position_seconds")?,
                },
                EventKind::VideoComplete => Activity::VideoComplete {
                    video_id: field("video_id")?,
                    position_seconds: whole("position_seconds")?,
                },
                EventKind::VideoQuestion => Activity::VideoQuestion {
                    video_id: field("video_id")?,
                    delay_seconds: number("delay_seconds")?,
                },
                EventKind::QuizAttempt => Activity::QuizAttempt {
                    quiz_id: field("quiz_id")?,
                    attempt_no: whole("attempt_no")?,
                    score_pct: number("score_pct")?,
                },
                EventKind::FileDownload => Activity::FileDownload {
                    file_id: field("file_id")?,
                },
                EventKind::Unclassified => Activity::Unclassified {
                    url: url.to_string(),
                },
            };
            activity.validate().map_err(|reason| LogError::InvalidPayload {
                rule: index,
                url: url.to_string(),
                reason,
            })?;
            let course = caps.name("course").map(|m| m.as_str().to_string());
            return Ok(Some((index, activity, course)));
        }
        Ok(None)
    }
}

/// URL-prefix → course lookup with an optional fallback course.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseMap {
    #[serde(default)]
    pub prefixes: Vec<(String, String)>,
    #[serde(default)]
    pub default_course: Option<String>,
}

impl CourseMap {
    pub fn with_default(course_id: impl Into<String>) -> Self {
        CourseMap {
            prefixes: Vec::new(),
            default_course: Some(course_id.into()),
        }
    }

    /// Longest matching prefix wins, then the default.
    pub fn lookup(&self, url: &str) -> Option<&str> {
        self.prefixes
            .iter()
            .filter(|(prefix, _)| url.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, course)| course.as_str())
            .or(self.default_course.as_deref())
    }
}

/// Course id used when neither a rule capture nor the course map applies.
pub const UNMAPPED_COURSE: &str = "unmapped";

/// Turns a raw record into an [`Event`]. The course comes from a rule's
/// `course` capture, else the course map, else [`UNMAPPED_COURSE`].
pub fn classify_event(
    record: &RawLogRecord,
    rules: &ClassificationRuleSet,
    course_map: &CourseMap,
) -> Result<Event, LogError> {
    let at = normalize_timestamp(&record.timestamp_text)?;
    let (activity, captured_course) = match rules.classify_url(&record.url)? {
        Some((_, activity, course)) => (activity, course),
        None => (
            Activity::Unclassified {
                url: record.url.clone(),
            },
            None,
        ),
    };
    let course_id = captured_course
        .or_else(|| course_map.lookup(&record.url).map(str::to_string))
        .unwrap_or_else(|| UNMAPPED_COURSE.to_string());
    Ok(Event {
        course_id,
        user_id: record.username.clone(),
        at,
        activity,
    })
}

/// Classification result over a whole log.
#[derive(Debug, Clone, Default)]
pub struct ClassifiedLog {
    pub events: Vec<Event>,
    pub rejects: Vec<Reject>,
    /// Records whose timestamp or payload could not be interpreted.
    pub failures: Vec<(RawLogRecord, String)>,
}

/// Parses and classifies a raw log in one pass. Unparsable timestamps and
/// invalid payloads are collected, never fatal.
pub fn ingest_text(text: &str, rules: &ClassificationRuleSet, course_map: &CourseMap) -> ClassifiedLog {
    let parsed = parse_log(text);
    let mut out = ClassifiedLog {
        rejects: parsed.rejects,
        ..Default::default()
    };
    for record in parsed.records {
        match classify_event(&record, rules, course_map) {
            Ok(e) => out.events.push(e),
            Err(e) => out.failures.push((record, e.to_string())),
        }
    }
    out
}

/// Renders a UTC instant as a naive local time for a fixed offset; handy for
/// hour-of-day bucketing.
pub fn local_time(instant: DateTime<Utc>, offset_minutes: i32) -> NaiveDateTime {
    let offset = FixedOffset::east_opt(offset_minutes * 60).expect("offset within a day");
    instant.with_timezone(&offset).naive_local()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn single_record() {
        let p = parse_log("Mon Mar 16 2015 06:47:44 GMT+0100 (CET)%\\ulstahl%\\https://online.tugraz.at/...");
        assert!(p.rejects.is_empty());
        assert_eq!(
            p.records,
            vec![RawLogRecord {
                timestamp_text: "Mon Mar 16 2015 06:47:44 GMT+0100 (CET)".into(),
                username: "ulstahl".into(),
                url: "https://online.tugraz.at/...".into(),
            }]
        );
    }

    #[test]
    fn empty_input() {
        let p = parse_log("");
        assert!(p.records.is_empty() && p.rejects.is_empty());
    }

    #[test]
    fn two_field_fragment_is_rejected() {
        let p = parse_log("Mon Mar 16 2015 06:47:44 GMT+0100%\\someone");
        assert_eq!(p.records.len(), 0);
        assert_eq!(p.rejects.len(), 1);
        assert_eq!(p.rejects[0].fragment_index, 0);
    }

    #[test]
    fn empty_field_is_rejected() {
        let p = parse_log("ts%\\%\\http://x");
        assert_eq!(p.rejects.len(), 1);
        assert!(p.rejects[0].reason.contains("username"));
    }

    #[test]
    fn trailing_separator_adds_no_fragment() {
        let p = parse_log("a%\\b%\\c%|");
        assert_eq!(p.fragment_count(), 1);
    }

    #[test]
    fn timestamp_variants() {
        let expect = Utc.with_ymd_and_hms(2015, 3, 16, 5, 47, 44).unwrap();
        assert_eq!(normalize_timestamp("Mon Mar 16 2015 06:47:44 GMT+0100 (CET)").unwrap(), expect);
        assert_eq!(
            normalize_timestamp("Mon Mar 16 2015 08:20:47 GMT+0100 (Mittleurop&#228;ische Zeit)").unwrap(),
            Utc.with_ymd_and_hms(2015, 3, 16, 7, 20, 47).unwrap()
        );
        assert_eq!(
            normalize_timestamp("Mon Mar 16 2015 08:22:56 GMT+0100").unwrap(),
            Utc.with_ymd_and_hms(2015, 3, 16, 7, 22, 56).unwrap()
        );
        assert_eq!(
            normalize_timestamp("Sun Mar 15 2015 23:30:00 GMT-0230").unwrap(),
            Utc.with_ymd_and_hms(2015, 3, 16, 2, 0, 0).unwrap()
        );
    }

    #[test]
    fn garbage_timestamps() {
        for bad in ["X", "", "Mon Mar 16 2015 06:47:44", "Mon Foo 16 2015 06:47:44 GMT+0100", "Mon Feb 30 2015 06:47:44 GMT+0100"] {
            assert!(matches!(normalize_timestamp(bad), Err(LogError::UnparsableTimestamp(_))), "{bad}");
        }
    }

    #[test]
    fn zone_name_is_entity_decoded() {
        let p = parse_timestamp("Mon Mar 16 2015 08:20:47 GMT+0100 (Mittleurop&#228;ische Zeit)").unwrap();
        assert_eq!(p.zone_name.as_deref(), Some("Mittleuropäische Zeit"));
        assert_eq!(p.offset_minutes, 60);
    }

    #[test]
    fn entities() {
        assert_eq!(decode_html_entities("a&#228;b&#xE4;&amp;&bogus;&"), "aäbä&&bogus;&");
    }

    #[test]
    fn render_round_trips_every_style() {
        let t = Utc.with_ymd_and_hms(2016, 10, 10, 23, 5, 9).unwrap();
        for style in ZoneStyle::ALL {
            let text = render_timestamp(t, 60, style);
            assert_eq!(normalize_timestamp(&text).unwrap(), t, "{text}");
        }
        assert_eq!(render_timestamp(t, 60, ZoneStyle::Bare), "Tue Oct 11 2016 00:05:09 GMT+0100");
    }

    fn record(url: &str) -> RawLogRecord {
        RawLogRecord {
            timestamp_text: "Mon Mar 16 2015 06:47:44 GMT+0100 (CET)".into(),
            username: "u1".into(),
            url: url.into(),
        }
    }

    #[test]
    fn quiz_rule_extracts_score() {
        let rules = ClassificationRuleSet::reference();
        let e = classify_event(
            &record("https://mooc.example.org/courses/gol/quizzes/q3/attempts/2?score=85"),
            &rules,
            &CourseMap::default(),
        )
        .unwrap();
        assert_eq!(e.course_id, "gol");
        assert_eq!(
            e.activity,
            Activity::QuizAttempt {
                quiz_id: "q3".into(),
                attempt_no: 2,
                score_pct: 85.0
            }
        );
    }

    #[test]
    fn fallthrough_keeps_url() {
        let url = "http://elearningblog.tugraz.at";
        let e = classify_event(&record(url), &ClassificationRuleSet::reference(), &CourseMap::with_default("gol")).unwrap();
        assert_eq!(e.kind(), EventKind::Unclassified);
        assert_eq!(e.activity, Activity::Unclassified { url: url.into() });
        assert_eq!(e.course_id, "gol");
    }

    #[test]
    fn reply_rule_precedes_read_rule() {
        let rules = ClassificationRuleSet::reference();
        let post = classify_event(&record("https://h/courses/c/forum/threads/t9/reply"), &rules, &CourseMap::default()).unwrap();
        let read = classify_event(&record("https://h/courses/c/forum/threads/t9"), &rules, &CourseMap::default()).unwrap();
        assert_eq!(post.kind(), EventKind::ForumPost);
        assert_eq!(read.kind(), EventKind::ForumRead);
    }

    #[test]
    fn out_of_range_score_is_an_error() {
        let rules = ClassificationRuleSet::reference();
        let r = classify_event(&record("https://h/courses/c/quizzes/q/attempts/1?score=150"), &rules, &CourseMap::default());
        assert!(matches!(r, Err(LogError::InvalidPayload { .. })));
    }

    #[test]
    fn bad_timestamp_propagates() {
        let mut r = record("https://h/courses/c/login");
        r.timestamp_text = "X".into();
        assert!(matches!(
            classify_event(&r, &ClassificationRuleSet::reference(), &CourseMap::default()),
            Err(LogError::UnparsableTimestamp(_))
        ));
    }

    #[test]
    fn custom_extractor_names() {
        let rules = ClassificationRuleSet::from_json(
            r#"{"rules":[{"pattern":"thread=(?P<t>\\w+)","kind":"forum_read","extractors":{"thread_id":"t"}}]}"#,
        )
        .unwrap();
        let e = classify_event(&record("http://x/?thread=abc"), &rules, &CourseMap::default()).unwrap();
        assert_eq!(e.activity, Activity::ForumRead { thread_id: "abc".into() });
        assert_eq!(e.course_id, UNMAPPED_COURSE);
    }

    #[test]
    fn extractor_must_name_existing_group() {
        let err = ClassificationRuleSet::from_json(
            r#"{"rules":[{"pattern":"x","kind":"forum_read","extractors":{"thread_id":"t"}}]}"#,
        );
        assert!(matches!(err, Err(LogError::InvalidRule { index: 0, .. })));
    }

    #[test]
    fn rule_json_round_trip() {
        let rules = ClassificationRuleSet::reference();
        let again = ClassificationRuleSet::from_json(&rules.to_json()).unwrap();
        assert_eq!(rules.specs().collect::<Vec<_>>(), again.specs().collect::<Vec<_>>());
    }

    #[test]
    fn course_map_prefers_longest_prefix() {
        let map = CourseMap {
            prefixes: vec![("http://a/".into(), "x".into()), ("http://a/b".into(), "y".into())],
            default_course: Some("z".into()),
        };
        assert_eq!(map.lookup("http://a/b/c"), Some("y"));
        assert_eq!(map.lookup("http://a/c"), Some("x"));
        assert_eq!(map.lookup("http://q"), Some("z"));
    }
}
