//! Applies each de-identification technique and a k-anonymity search to
//! the bundled example table.
use std::collections::BTreeMap;

use mooc_analytics::anonymizer::{self, Hierarchy, MaskMode};
use mooc_analytics::table::Table;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/");
    let t = Table::load(format!("{dir}data.csv"), ',').unwrap();
    let cols = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    println!("hashed ids:\n{}", anonymizer::apply_hashing(&t, &cols(&["id"]), "secret", 10, false).unwrap().to_csv_string());
    println!("masked gender:\n{}", anonymizer::apply_masking(&t, &cols(&["gender"]), '$', MaskMode::LengthPreserving).unwrap().to_csv_string());
    println!("noised age (±3):\n{}", anonymizer::apply_noising(&t, &cols(&["age"]), 3.0, 7, (0.0, 120.0)).unwrap().to_csv_string());

    let mut hierarchies = BTreeMap::new();
    hierarchies.insert("age".to_string(), Hierarchy::load(format!("{dir}age_hierarchy.csv")).unwrap());
    hierarchies.insert("zipcode".to_string(), Hierarchy::load(format!("{dir}zipcode_hierarchy.csv")).unwrap());
    let r = anonymizer::k_anonymize(&t, &cols(&["age", "zipcode"]), &hierarchies, 2, 0, true).unwrap();
    println!("2-anonymous at levels {:?}, classes {:?}, {} suppressed:", r.levels, r.class_sizes, r.suppressed);
    print!("{}", r.table.to_csv_string());
}
