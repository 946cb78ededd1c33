//! Weekly battery statuses under both rule sets.
use chrono::{NaiveDate, TimeZone, Utc};
use mooc_analytics::cohort::ActiveDefinition;
use mooc_analytics::event::{Activity, Event};
use mooc_analytics::motivation::{self, BatteryMode, BatteryRuleSet};
use mooc_analytics::store::{CourseConfig, EventStore};

fn main() {
    let mut store = EventStore::in_memory();
    store
        .register_course(CourseConfig::new("bat", "Battery demo", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8, 50.0))
        .unwrap();
    let at = |h| Utc.with_ymd_and_hms(2016, 3, 8, h, 0, 0).unwrap();
    let thread = |t: &str| Activity::ForumRead { thread_id: t.into() };
    let quiz = Activity::QuizAttempt { quiz_id: "q1".into(), attempt_no: 1, score_pct: 80.0 };
    let video = Activity::VideoPlay { video_id: "v1".into(), position_seconds: 0 };
    store
        .append_events(vec![
            Event::new("bat", "login-only", at(8), Activity::Login),
            Event::new("bat", "login-only", at(9), video.clone()),
            Event::new("bat", "reader", at(8), Activity::Login),
            Event::new("bat", "reader", at(9), thread("a")),
            Event::new("bat", "reader", at(10), thread("b")),
            Event::new("bat", "reader", at(11), video.clone()),
            Event::new("bat", "all-in", at(8), Activity::Login),
            Event::new("bat", "all-in", at(9), quiz.clone()),
            Event::new("bat", "all-in", at(10), Activity::ForumPost { thread_id: "a".into() }),
            Event::new("bat", "no-login", at(9), quiz),
        ])
        .unwrap();
    let snap = store.snapshot();
    for mode in [BatteryMode::Implemented, BatteryMode::Framework] {
        let r = motivation::battery_report(&snap, "bat", 1, &BatteryRuleSet::new(mode), ActiveDefinition::default()).unwrap();
        println!("{mode} mode, week 1, distribution {:?}", r.distribution);
        for s in &r.statuses {
            println!("  {:<10} {:>3}%  {}", s.user_id, s.percent, s.tooltip);
        }
    }
}
