//! Classified MOOC interactions.
//!
//! An [`Event`] is one interaction of one student in one course. The
//! activity-specific payload lives inside [`Activity`], so a quiz attempt
//! always carries its score and a video event always carries a position.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Coarse activity category, used for filtering and table projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Enrollment,
    Login,
    ForumRead,
    ForumPost,
    VideoPlay,
    VideoPause,
    VideoComplete,
    VideoQuestion,
    QuizAttempt,
    FileDownload,
    Certificate,
    Unclassified,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::Enrollment,
        EventKind::Login,
        EventKind::ForumRead,
        EventKind::ForumPost,
        EventKind::VideoPlay,
        EventKind::VideoPause,
        EventKind::VideoComplete,
        EventKind::VideoQuestion,
        EventKind::QuizAttempt,
        EventKind::FileDownload,
        EventKind::Certificate,
        EventKind::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enrollment => "enrollment",
            EventKind::Login => "login",
            EventKind::ForumRead => "forum_read",
            EventKind::ForumPost => "forum_post",
            EventKind::VideoPlay => "video_play",
            EventKind::VideoPause => "video_pause",
            EventKind::VideoComplete => "video_complete",
            EventKind::VideoQuestion => "video_question",
            EventKind::QuizAttempt => "quiz_attempt",
            EventKind::FileDownload => "file_download",
            EventKind::Certificate => "certificate",
            EventKind::Unclassified => "unclassified",
        }
    }

    /// Play, pause and completion events. Question answers are tracked
    /// separately for reaction delays.
    pub fn is_video(self) -> bool {
        matches!(
            self,
            EventKind::VideoPlay | EventKind::VideoPause | EventKind::VideoComplete
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

/// What the student did, with the fields that kind of interaction carries.
///
/// Serialized adjacently tagged (`{"kind": ..., "payload": {...}}`) with a
/// fixed field order, which is what the store and the dedup digest rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Activity {
    Enrollment,
    Login,
    ForumRead { thread_id: String },
    ForumPost { thread_id: String },
    VideoPlay { video_id: String, position_seconds: u32 },
    VideoPause { video_id: String, position_seconds: u32 },
    VideoComplete { video_id: String, position_seconds: u32 },
    /// An in-video question answered `delay_seconds` after it was shown.
    VideoQuestion { video_id: String, delay_seconds: f64 },
    QuizAttempt { quiz_id: String, attempt_no: u32, score_pct: f64 },
    FileDownload { file_id: String },
    /// Submission of the end-of-course evaluation form that unlocks the certificate.
    Certificate,
    Unclassified { url: String },
}

impl Activity {
    pub fn kind(&self) -> EventKind {
        match self {
            Activity::Enrollment => EventKind::Enrollment,
            Activity::Login => EventKind::Login,
            Activity::ForumRead { .. } => EventKind::ForumRead,
            Activity::ForumPost { .. } => EventKind::ForumPost,
            Activity::VideoPlay { .. } => EventKind::VideoPlay,
            Activity::VideoPause { .. } => EventKind::VideoPause,
            Activity::VideoComplete { .. } => EventKind::VideoComplete,
            Activity::VideoQuestion { .. } => EventKind::VideoQuestion,
            Activity::QuizAttempt { .. } => EventKind::QuizAttempt,
            Activity::FileDownload { .. } => EventKind::FileDownload,
            Activity::Certificate => EventKind::Certificate,
            Activity::Unclassified { .. } => EventKind::Unclassified,
        }
    }

    /// `(video_id, position)` for play/pause/complete events.
    pub fn video_position(&self) -> Option<(&str, u32)> {
        match self {
            Activity::VideoPlay { video_id, position_seconds }
            | Activity::VideoPause { video_id, position_seconds }
            | Activity::VideoComplete { video_id, position_seconds } => {
                Some((video_id.as_str(), *position_seconds))
            }
            _ => None,
        }
    }

    pub fn video_id(&self) -> Option<&str> {
        match self {
            Activity::VideoQuestion { video_id, .. } => Some(video_id),
            _ => self.video_position().map(|(v, _)| v),
        }
    }

    pub fn thread_id(&self) -> Option<&str> {
        match self {
            Activity::ForumRead { thread_id } | Activity::ForumPost { thread_id } => {
                Some(thread_id)
            }
            _ => None,
        }
    }

    /// Checks the payload ranges: scores in [0, 100], attempts from 1,
    /// finite non-negative delays.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Activity::QuizAttempt {
                attempt_no,
                score_pct,
                ..
            } => {
                if *attempt_no == 0 {
                    return Err("attempt_no must be >= 1".into());
                }
                if !(0.0..=100.0).contains(score_pct) {
                    return Err(format!("score_pct {score_pct} outside [0, 100]"));
                }
                Ok(())
            }
            Activity::VideoQuestion { delay_seconds, .. } => {
                if delay_seconds.is_finite() && *delay_seconds >= 0.0 {
                    Ok(())
                } else {
                    Err(format!("delay_seconds {delay_seconds} must be finite and >= 0"))
                }
            }
            _ => Ok(()),
        }
    }
}

/// One classified interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub course_id: String,
    pub user_id: String,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub activity: Activity,
}

impl Event {
    pub fn new(
        course_id: impl Into<String>,
        user_id: impl Into<String>,
        at: DateTime<Utc>,
        activity: Activity,
    ) -> Self {
        Event {
            course_id: course_id.into(),
            user_id: user_id.into(),
            at,
            activity,
        }
    }

    pub fn kind(&self) -> EventKind {
        self.activity.kind()
    }

    /// Canonical single-line JSON rendering used for storage and dedup.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }
}
