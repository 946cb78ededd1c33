//! Generates a course, ingests its log and checks recovered totals against
//! the planted ground truth.
use chrono::NaiveDate;
use mooc_analytics::cohort::ActiveDefinition;
use mooc_analytics::indicators;
use mooc_analytics::logparse::{ClassificationRuleSet, CourseMap};
use mooc_analytics::reports;
use mooc_analytics::store::EventStore;
use mooc_analytics::synthkit::{self, SynthCourse};

fn main() {
    let course = SynthCourse::new("pipe", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8);
    let cohort = synthkit::synth_cohort(&synthkit::external_specs(), 379, 11, &course, "external").unwrap();
    let logs = synthkit::synth_logs(&cohort, &course, 11);
    let mut store = EventStore::in_memory();
    store.register_course(logs.course.clone()).unwrap();
    let ingest = reports::ingest_log(&mut store, &logs.text, &ClassificationRuleSet::reference(), &CourseMap::with_default("pipe")).unwrap();
    println!("planted {} events, accepted {}, rejected {}", logs.truth.events, ingest.accepted, ingest.rejects.len());

    let snap = store.snapshot();
    let totals = indicators::student_totals(&snap, "pipe").unwrap();
    let mismatches = logs
        .truth
        .students
        .iter()
        .zip(&totals)
        .filter(|(t, s)| (t.forum_reads, t.quiz_attempts, t.videos_watched) != (s.forum_reads, s.quiz_attempts, s.videos_watched))
        .count();
    println!("{} students, {mismatches} with totals differing from the ground truth", totals.len());
    let summary = reports::course_summary(&snap, "pipe", ActiveDefinition::default()).unwrap();
    print!("{}", reports::summary_table(&summary).to_csv_string());
}
