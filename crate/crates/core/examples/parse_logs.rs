//! Parses the bundled sample log, normalizes timestamps to UTC and
//! classifies each URL with the reference rule set.
use mooc_analytics::logparse::{self, ClassificationRuleSet, CourseMap};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/sample_log_full.txt");
    let text = std::fs::read_to_string(path).expect("fixture exists");
    let parsed = logparse::parse_log(&text);
    println!("{} records, {} rejects", parsed.records.len(), parsed.rejects.len());
    for r in &parsed.rejects {
        println!("  reject #{}: {}", r.fragment_index, r.reason);
    }
    let rules = ClassificationRuleSet::reference();
    for r in parsed.records.iter().take(5) {
        let at = logparse::normalize_timestamp(&r.timestamp_text).expect("valid timestamp");
        let kind = rules.classify_url(&r.url).ok().flatten().map(|(_, a, _)| a.kind().as_str()).unwrap_or("unclassified");
        println!("{at}  {:<14} {kind:<12} {}", r.username, r.url);
    }
    let log = logparse::ingest_text(&text, &rules, &CourseMap::with_default("sample"));
    println!("{} events after classification", log.events.len());
}
