//! Clusters a synthetic cohort, labels the clusters and places them on
//! the quadrant map.
use chrono::NaiveDate;
use mooc_analytics::logparse::{ClassificationRuleSet, CourseMap};
use mooc_analytics::reports::{self, ClusterRequest, KChoice};
use mooc_analytics::store::EventStore;
use mooc_analytics::synthkit::{self, SynthCourse};

fn main() {
    let course = SynthCourse::new("clu", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8);
    let cohort = synthkit::synth_cohort(&synthkit::undergraduate_specs(), 459, 3, &course, "undergraduate").unwrap();
    let logs = synthkit::synth_logs(&cohort, &course, 3);
    let mut store = EventStore::in_memory();
    store.register_course(logs.course.clone()).unwrap();
    reports::ingest_log(&mut store, &logs.text, &ClassificationRuleSet::reference(), &CourseMap::with_default("clu")).unwrap();

    let req = ClusterRequest { k: KChoice::Fixed(4), ..Default::default() };
    let report = reports::cluster_course(&store.snapshot(), "clu", &req).unwrap();
    println!("{} students", report.students);
    for v in &report.variables {
        match &v.reason {
            Some(why) if !v.retained => println!("  dropped {}: {why}", v.name),
            _ => println!("  kept {}", v.name),
        }
    }
    print!("{}", reports::cluster_table(&report).to_csv_string());
    println!("planted roles: {:?}", cohort.role_counts());
}
