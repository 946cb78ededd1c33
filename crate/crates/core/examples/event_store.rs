//! Opens a file-backed store, registers a course, appends events twice to
//! show deduplication and exports one of the table projections.
use chrono::{NaiveDate, TimeZone, Utc};
use mooc_analytics::event::{Activity, Event};
use mooc_analytics::store::{CourseConfig, EventFilter, EventStore, TableKind};

fn main() {
    let dir = std::env::temp_dir().join(format!("mooc-store-example-{}", std::process::id()));
    let mut store = EventStore::open(&dir).expect("store opens");
    store
        .register_course(CourseConfig::new("demo", "Demo course", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8, 50.0))
        .expect("valid course");
    let at = |d, h| Utc.with_ymd_and_hms(2016, 3, d, h, 0, 0).unwrap();
    let batch = vec![
        Event::new("demo", "anna", at(8, 9), Activity::Login),
        Event::new("demo", "anna", at(8, 10), Activity::ForumRead { thread_id: "t1".into() }),
        Event::new("demo", "ben", at(16, 18), Activity::QuizAttempt { quiz_id: "q1".into(), attempt_no: 1, score_pct: 72.0 }),
    ];
    println!("first append:  {:?}", store.append_events(batch.clone()).unwrap());
    println!("second append: {:?}", store.append_events(batch).unwrap());

    let reopened = EventStore::open(&dir).expect("store reopens");
    let snap = reopened.snapshot();
    let week2 = snap.query_events(&EventFilter::course("demo").week(2)).unwrap();
    println!("{} events on disk, {} in week 2", snap.event_count(), week2.len());
    print!("{}", snap.export_table(TableKind::QuizAttempts, Some("demo")).unwrap().to_csv_string());
    std::fs::remove_dir_all(&dir).ok();
}
