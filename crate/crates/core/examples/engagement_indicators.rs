//! Weekly indicators, whole-course totals and a metric comparison on a
//! small synthetic course.
use chrono::NaiveDate;
use mooc_analytics::indicators::{self, Indicator, Metric};
use mooc_analytics::logparse::{ClassificationRuleSet, CourseMap};
use mooc_analytics::reports;
use mooc_analytics::store::EventStore;
use mooc_analytics::synthkit::{self, SynthCourse};

fn main() {
    let course = SynthCourse::new("ind", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8);
    let cohort = synthkit::synth_cohort(&synthkit::undergraduate_specs(), 60, 1, &course, "undergraduate").unwrap();
    let logs = synthkit::synth_logs(&cohort, &course, 1);
    let mut store = EventStore::in_memory();
    store.register_course(logs.course.clone()).unwrap();
    reports::ingest_log(&mut store, &logs.text, &ClassificationRuleSet::reference(), &CourseMap::with_default("ind")).unwrap();
    let snap = store.snapshot();

    let user = &cohort.students[0].user_id;
    print!("{}", reports::weekly_table(&indicators::weekly_indicators(&snap, "ind", user).unwrap()).to_csv_string());
    for i in [Indicator::QuizAttempts, Indicator::ForumReads] {
        println!("{i:>14}: {:?}", indicators::weekly_series(&snap, "ind", i).unwrap());
    }
    let c = indicators::compare_metrics(&snap, "ind", Metric::ForumReads, Metric::Logins).unwrap();
    if let Some(r) = c.correlation {
        println!("forum reads vs logins: r = {:.3}, 95% CI {:?}", r.r, r.ci95);
    }
}
