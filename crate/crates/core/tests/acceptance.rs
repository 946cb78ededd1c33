//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Duration as ChronoDuration, NaiveDate, TimeZone, Utc};
use mooc_analytics::anonymizer::{self, Hierarchy, MaskMode};
use mooc_analytics::clustering::{self, Archetype, ClusterStats, FeatureMatrix, KMeansOptions, MeanSd, ScaleRule};
use mooc_analytics::cohort::{self, ActiveDefinition, CohortSummary, DropoutPointConfig};
use mooc_analytics::event::{Activity, Event};
use mooc_analytics::indicators::{self, IndicatorError, Metric};
use mooc_analytics::logparse::{self, ClassificationRuleSet, CourseMap, RawLogRecord, ZoneStyle};
use mooc_analytics::motivation::{self, BatteryMode, BatteryRuleSet, WeekActivity};
use mooc_analytics::reports;
use mooc_analytics::stats;
use mooc_analytics::store::{CourseConfig, EventStore, PassRule, StudentRecord};
use mooc_analytics::synthkit::{self, ArchetypeSpec, SeriesShape, SynthCourse};
use mooc_analytics::table::Table;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(actual: f64, expected: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((actual - expected).abs() <= tol, || format!("{what}: {actual:.4} vs {expected} (tol {tol})"))
}

fn timed(limit: Duration, what: &str, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------- cohort

const DROPOUT_FIXTURES: [(&str, [u64; 4], [f64; 5]); 2] = [
    ("gol-2014", [1012, 479, 217, 177], [82.50, 63.04, 78.55, 54.69, 52.67]),
    ("lin-2014", [519, 333, 131, 99], [80.92, 70.27, 74.75, 60.66, 35.84]),
];

fn dropout_rates_from_counts() -> Outcome {
    let start = Instant::now();
    for (name, [r, a, c, cert], expected) in DROPOUT_FIXTURES {
        let s = CohortSummary::from_counts(name, r, a, c, cert).map_err(|e| e.to_string())?;
        let rates = cohort::dropout_rates(&s);
        for ((label, got), want) in cohort::DropoutRates::NAMES.iter().zip(rates.values()).zip(expected) {
            within(got.ok_or(format!("{name} {label} undefined"))?, want, 0.05, &format!("{name} {label}"))?;
        }
    }
    let took = timed(Duration::from_secs(1), "dropout rates", start)?;
    Ok(format!("10/10 rates within 0.05 pp in {took:?}"))
}

fn category_ratios() -> Outcome {
    let expected: [(&str, [Option<f64>; 3]); 2] = [
        ("gol-2014", [Some(47.33), Some(21.44), Some(17.49)]),
        ("lin-2014", [Some(64.16), None, Some(19.0)]),
    ];
    for ((name, [r, a, c, cert], _), (_, want)) in DROPOUT_FIXTURES.iter().zip(expected) {
        let s = CohortSummary::from_counts(*name, *r, *a, *c, *cert).map_err(|e| e.to_string())?;
        let got = [s.ratios.active, s.ratios.completers, s.ratios.certified];
        for (label, (g, w)) in ["active", "completers", "certified"].iter().zip(got.iter().zip(want)) {
            if let Some(w) = w {
                // Whole-number values carry no decimals.
                let g = g.ok_or(format!("{name} {label} undefined"))?;
                let g = if w.fract() == 0.0 { g.round() } else { g };
                within(g, w, 0.05, &format!("{name} {label}"))?;
            }
        }
    }
    let undergrad = cohort::percent(367, 459).ok_or("empty")?;
    let external = cohort::percent(43, 379).ok_or("empty")?;
    let overall = cohort::percent(367 + 43, 459 + 379).ok_or("empty")?;
    within(undergrad, 79.96, 0.1, "undergraduate certified")?;
    within(external, 11.35, 0.1, "external certified")?;
    within(overall.round(), 49.0, 0.1, "overall certified")?;
    Ok(format!("ratios match; certified {undergrad:.2}% / {external:.2}% / {overall:.2}%"))
}

// ---------------------------------------------------------------- log parser

fn log_parser() -> Outcome {
    let text = std::fs::read_to_string(fixture("sample_log.txt")).map_err(|e| e.to_string())?;
    let parsed = logparse::parse_log(&text);
    ensure(parsed.rejects.is_empty(), || format!("{} rejects", parsed.rejects.len()))?;
    ensure(parsed.records.len() == 23, || format!("{} records, expected 23", parsed.records.len()))?;
    for r in &parsed.records {
        logparse::normalize_timestamp(&r.timestamp_text).map_err(|e| e.to_string())?;
    }

    let spots = [
        ("Mon Mar 16 2015 06:47:44 GMT+0100 (CET)", "2015-03-16T05:47:44Z"),
        ("Mon Mar 16 2015 08:20:47 GMT+0100 (Mittleurop&#228;ische Zeit)", "2015-03-16T07:20:47Z"),
        ("Mon Mar 16 2015 08:22:56 GMT+0100", "2015-03-16T07:22:56Z"),
    ];
    for (raw, want) in spots {
        ensure(parsed.records.iter().any(|r| r.timestamp_text == raw), || format!("`{raw}` not in sample"))?;
        let got = logparse::normalize_timestamp(raw).map_err(|e| e.to_string())?;
        let want: DateTime<Utc> = want.parse().expect("valid literal");
        ensure(got == want, || format!("`{raw}` -> {got}, expected {want}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let base = Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap();
    let records: Vec<RawLogRecord> = (0..1000)
        .map(|i| {
            let at = base + ChronoDuration::seconds(rng.random_range(0..400 * 86_400));
            let offset = [60, 120, 0, -300, 330][rng.random_range(0..5)];
            let style = ZoneStyle::ALL[rng.random_range(0..3)];
            RawLogRecord {
                timestamp_text: logparse::render_timestamp(at, offset, style),
                username: format!("user{}", rng.random_range(0..200)),
                url: format!("https://mooc.example.org/course/c{}/item/{i}?p={}", rng.random_range(0..5), rng.random::<u32>()),
            }
        })
        .collect();
    let back = logparse::parse_log(&logparse::serialize_log(&records));
    ensure(back.rejects.is_empty(), || format!("{} rejects after round trip", back.rejects.len()))?;
    ensure(back.records == records, || "round trip changed records".into())?;
    Ok("23 records, 0 rejects, 3 timestamp variants, 1000-record round trip exact".into())
}

// ---------------------------------------------------------------- k-anonymity

/// Brute-force oracle: enumerates every level vector, keeps the ones whose
/// undersized classes fit the suppression budget, and picks the smallest
/// by level sum, then lexicographically.
struct OracleResult {
    levels: Vec<usize>,
    suppressed: usize,
    classes: Vec<usize>,
}

fn oracle_k_anonymity(rows: &[Vec<String>], hiers: &[HashMap<String, Vec<String>>], k: usize, limit: usize) -> Option<OracleResult> {
    let depth: Vec<usize> = hiers.iter().map(|h| h.values().next().map_or(0, |c| c.len())).collect();
    let mut best: Option<OracleResult> = None;
    let mut node = vec![0usize; hiers.len()];
    loop {
        let mut classes: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in rows {
            let key: Vec<&str> = r.iter().zip(hiers).zip(&node).map(|((v, h), &l)| if l == 0 { v.as_str() } else { h[v][l - 1].as_str() }).collect();
            *classes.entry(key).or_default() += 1;
        }
        let small: usize = classes.values().filter(|&&s| s < k).sum();
        if small <= limit {
            let better = match &best {
                None => true,
                Some(b) => {
                    let (s1, s2) = (node.iter().sum::<usize>(), b.levels.iter().sum::<usize>());
                    s1 < s2 || (s1 == s2 && node < b.levels)
                }
            };
            if better {
                let mut sizes: Vec<usize> = classes.values().copied().filter(|&s| s >= k).collect();
                sizes.sort_unstable();
                best = Some(OracleResult {
                    levels: node.clone(),
                    suppressed: small,
                    classes: sizes,
                });
            }
        }
        // odometer step
        let mut i = 0;
        loop {
            if i == node.len() {
                return best;
            }
            if node[i] < depth[i] {
                node[i] += 1;
                break;
            }
            node[i] = 0;
            i += 1;
        }
    }
}

fn chains_of(text: &str) -> HashMap<String, Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut cells = l.split(',').map(|c| c.trim().to_string());
            let leaf = cells.next().unwrap();
            (leaf, cells.collect())
        })
        .collect()
}

fn compare_with_oracle(t: &Table, qis: &[String], texts: &[String], k: usize, limit: usize) -> Result<Option<OracleResult>, String> {
    let hierarchies: BTreeMap<String, Hierarchy> = qis
        .iter()
        .zip(texts)
        .map(|(q, text)| Ok((q.clone(), Hierarchy::parse(text).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    let idx: Vec<usize> = qis.iter().map(|q| t.column_index(q).unwrap()).collect();
    let rows: Vec<Vec<String>> = t.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
    let chains: Vec<_> = texts.iter().map(|s| chains_of(s)).collect();
    let oracle = oracle_k_anonymity(&rows, &chains, k, limit);
    let got = anonymizer::k_anonymize(t, qis, &hierarchies, k, limit, true);
    match (&oracle, got) {
        (None, Err(anonymizer::AnonError::Unsatisfiable { .. })) => {}
        (None, other) => return Err(format!("oracle finds no node, implementation gave {other:?}")),
        (Some(_), Err(e)) => return Err(format!("implementation failed: {e}")),
        (Some(o), Ok(r)) => {
            let by_name: HashMap<&str, usize> = r.levels.iter().map(|(c, l)| (c.as_str(), *l)).collect();
            let levels: Vec<usize> = qis.iter().map(|q| by_name[q.as_str()]).collect();
            let mut sizes = r.class_sizes.clone();
            sizes.sort_unstable();
            ensure(levels == o.levels, || format!("levels {levels:?} vs oracle {:?}", o.levels))?;
            ensure(r.suppressed == o.suppressed, || format!("suppressed {} vs oracle {}", r.suppressed, o.suppressed))?;
            ensure(sizes == o.classes, || format!("classes {sizes:?} vs oracle {:?}", o.classes))?;
            ensure(r.table.row_count() + r.suppressed == t.row_count(), || "rows lost".into())?;
            let report = anonymizer::verify_k_anonymity(&r.table, qis, k).map_err(|e| e.to_string())?;
            ensure(report.ok, || "output not k-anonymous".into())?;
        }
    }
    Ok(oracle)
}

fn k_anonymity() -> Outcome {
    let start = Instant::now();
    let t = Table::load(fixture("data.csv"), ',').map_err(|e| e.to_string())?;
    let texts = [
        std::fs::read_to_string(fixture("age_hierarchy.csv")).map_err(|e| e.to_string())?,
        std::fs::read_to_string(fixture("zipcode_hierarchy.csv")).map_err(|e| e.to_string())?,
    ];
    let qis = vec!["age".to_string(), "zipcode".to_string()];
    let o = compare_with_oracle(&t, &qis, &texts, 2, 0)?.ok_or("fixture has no 2-anonymous node")?;
    ensure(o.levels == [1, 2], || format!("chosen node {:?}, expected [1, 2]", o.levels))?;
    ensure(o.classes == [2, 2, 3] && o.suppressed == 0, || format!("classes {:?}, suppressed {}", o.classes, o.suppressed))?;
    let fixture_time = timed(Duration::from_secs(1), "fixture search", start)?;

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = Duration::ZERO;
    for case in 0..50 {
        let q = rng.random_range(1..=3);
        let n = rng.random_range(1..=10);
        let mut texts = Vec::new();
        let mut header = vec!["id".to_string()];
        for j in 0..q {
            let leaves = rng.random_range(2..=6);
            let depth = rng.random_range(1..=3);
            let mut text = String::new();
            for v in 0..leaves {
                let mut chain = vec![format!("v{v}")];
                for l in 1..=depth {
                    chain.push(if l == depth { "*".into() } else { format!("g{l}_{}", v >> l) });
                }
                text.push_str(&chain.join(","));
                text.push('\n');
            }
            texts.push(text);
            header.push(format!("q{j}"));
        }
        let mut t = Table::new(header);
        for i in 0..n {
            let mut row = vec![i.to_string()];
            for text in &texts {
                let leaves = text.lines().count();
                row.push(format!("v{}", rng.random_range(0..leaves)));
            }
            t.push_row(row);
        }
        let qis: Vec<String> = t.header[1..].to_vec();
        let k = rng.random_range(1..=3);
        let limit = rng.random_range(0..=2);
        let s = Instant::now();
        compare_with_oracle(&t, &qis, &texts, k, limit).map_err(|e| format!("random case {case}: {e}"))?;
        worst = worst.max(timed(Duration::from_secs(1), "random case", s)?);
    }
    Ok(format!("node (1, 2), classes {{2, 2, 3}}, 0 suppressed in {fixture_time:?}; 50/50 random tables agree with oracle (max {worst:?})"))
}

// ---------------------------------------------------------------- techniques

fn thousand_rows() -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let first = ["Anna", "Bernd", "Clara", "Dominik", "Eva", "Felix", "Greta", "Hannes", "Ines", "Jakob", "Ömer", "Zoë"];
    let mut t = Table::new(["id", "name", "email", "age", "score"].iter().map(|s| s.to_string()).collect());
    for i in 0..1000 {
        let name = first[rng.random_range(0..first.len())];
        t.push_row(vec![
            format!("{i:05}"),
            name.to_string(),
            format!("{}.{i}@uni.example.org", name.to_lowercase()),
            rng.random_range(17..70).to_string(),
            format!("{:.1}", rng.random_range(0.0..100.0)),
        ]);
    }
    t
}

fn reloads(t: &Table, what: &str) -> Result<(), String> {
    let back = Table::parse(&t.to_csv_string(), ',').map_err(|e| format!("{what}: {e}"))?;
    ensure(back.header == t.header && back.rows == t.rows, || format!("{what} does not reload identically"))
}

fn technique_properties() -> Outcome {
    let t = thousand_rows();
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let multiset = |t: &Table, c: usize| {
        let mut v: Vec<String> = t.column(c).map(str::to_string).collect();
        v.sort();
        v
    };

    let (swapped, warning) = anonymizer::apply_swapping(&t, &cols(&["name", "age"]), 7).map_err(|e| e.to_string())?;
    ensure(warning.is_none(), || "unexpected swap warning".into())?;
    for c in 0..t.header.len() {
        ensure(multiset(&swapped, c) == multiset(&t, c), || format!("swap changed multiset of {}", t.header[c]))?;
    }
    // name and age travel together to a different row
    let moved = (0..1000).filter(|&i| swapped.rows[i][0] == t.rows[i][0] && swapped.rows[i][2] == t.rows[i][2]).count();
    ensure(moved == 1000, || "swap touched untargeted columns".into())?;
    reloads(&swapped, "swapped")?;

    let masked = anonymizer::apply_masking(&t, &cols(&["name", "email"]), '*', MaskMode::LengthPreserving).map_err(|e| e.to_string())?;
    for (a, b) in t.rows.iter().zip(&masked.rows) {
        for c in [1, 2] {
            ensure(a[c].chars().count() == b[c].chars().count() && b[c].chars().all(|ch| ch == '*'), || format!("mask of `{}` is `{}`", a[c], b[c]))?;
        }
    }
    reloads(&masked, "masked")?;

    let delta = 2.5;
    let wide = anonymizer::apply_noising(&t, &cols(&["score"]), delta, 11, (-1e9, 1e9)).map_err(|e| e.to_string())?;
    for (a, b) in t.rows.iter().zip(&wide.rows) {
        let (x, y): (f64, f64) = (a[4].parse().unwrap(), b[4].parse().unwrap());
        within((y - x).abs(), delta, 1e-9, "noise magnitude")?;
    }
    let clamped = anonymizer::apply_noising(&t, &cols(&["score"]), delta, 11, (0.0, 100.0)).map_err(|e| e.to_string())?;
    for ((a, w), c) in t.rows.iter().zip(&wide.rows).zip(&clamped.rows) {
        let (w, c): (f64, f64) = (w[4].parse().unwrap(), c[4].parse().unwrap());
        ensure((0.0..=100.0).contains(&c) && c == w.clamp(0.0, 100.0), || format!("clamp of {} gave {c}", a[4]))?;
    }
    reloads(&wide, "noised")?;

    let h1 = anonymizer::apply_hashing(&t, &cols(&["email"]), "k3y", anonymizer::DEFAULT_HASH_LENGTH, false).map_err(|e| e.to_string())?;
    let h2 = anonymizer::apply_hashing(&t, &cols(&["email"]), "k3y", anonymizer::DEFAULT_HASH_LENGTH, false).map_err(|e| e.to_string())?;
    ensure(h1 == h2, || "hashing not deterministic".into())?;
    let distinct_in: HashSet<&str> = t.column(2).collect();
    let distinct_out: HashSet<&str> = h1.column(2).collect();
    ensure(distinct_in.len() == distinct_out.len(), || format!("{} inputs hash to {} digests", distinct_in.len(), distinct_out.len()))?;
    let mut pairs: HashMap<&str, &str> = HashMap::new();
    for (a, b) in t.column(2).zip(h1.column(2)) {
        ensure(*pairs.entry(b).or_insert(a) == a, || format!("collision on {b}"))?;
    }
    reloads(&h1, "hashed")?;

    let suppressed = anonymizer::apply_suppression(&t, &cols(&["name", "email", "age"]), &cols(&["age"])).map_err(|e| e.to_string())?;
    for row in &suppressed.rows {
        ensure(row[1] == anonymizer::NULL_TOKEN && row[2] == anonymizer::NULL_TOKEN && row[3] == "0", || format!("suppressed row {row:?}"))?;
    }
    reloads(&suppressed, "suppressed")?;
    Ok("swap/mask/noise/hash/suppress properties hold on 1000 rows; all outputs reload".into())
}

// ---------------------------------------------------------------- clustering

/// Best agreement over all relabelings of the clusters (k ≤ 4, so 24 at most).
fn matched_agreement(assign: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut confusion = vec![vec![0usize; k]; k];
    for (&a, &t) in assign.iter().zip(truth) {
        confusion[a][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        best = best.max((0..k).map(|c| confusion[c][p[c]]).sum());
    });
    best as f64 / assign.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, visit: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}

fn engagement_matrix(cohort: &synthkit::SynthCohort) -> FeatureMatrix {
    let ids = cohort.students.iter().map(|s| s.user_id.clone()).collect();
    let cols = [clustering::READING, clustering::WRITING, clustering::VIDEOS, clustering::QUIZZES].map(String::from).to_vec();
    let data = cohort.students.iter().map(|s| s.vector().values().to_vec()).collect();
    FeatureMatrix::new(ids, cols, data).expect("finite rows")
}

fn recovery(specs: &[ArchetypeSpec], n: usize, k: usize, seed: u64, population: &str) -> Result<f64, String> {
    let course = SynthCourse::new("rec", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8);
    let cohort = synthkit::synth_cohort(specs, n, seed, &course, population).map_err(|e| e.to_string())?;
    let roles: Vec<usize> = cohort.students.iter().map(|s| specs.iter().position(|sp| sp.name == s.role).unwrap()).collect();
    let opts = KMeansOptions { max_iter: 100, restarts: 50 };
    let model = clustering::kmeans(&engagement_matrix(&cohort).standardized(), k, 42, &opts).map_err(|e| e.to_string())?;
    Ok(matched_agreement(&model.assignments, &roles, k))
}

fn labels_from_means(specs: &[ArchetypeSpec]) -> (Vec<String>, Vec<Archetype>) {
    let vars = [clustering::READING, clustering::WRITING, clustering::VIDEOS, clustering::QUIZZES].map(String::from).to_vec();
    let ms = |v: synthkit::VarSpec| MeanSd { mean: v.mean, sd: v.sd };
    let stats: Vec<ClusterStats> = specs
        .iter()
        .map(|s| ClusterStats {
            size: (s.proportion * 1000.0).round() as usize,
            vars: vec![ms(s.reading), ms(s.writing), ms(s.videos), ms(s.quizzes)],
            certification_ratio: Some(100.0 * s.certification_probability),
        })
        .collect();
    let l = clustering::label_stats(&vars, &stats, ScaleRule::SdOverlap);
    ((0..specs.len()).map(|c| l.scale_pattern(c)).collect(), l.clusters.iter().map(|c| c.archetype).collect())
}

fn clustering_recovery() -> Outcome {
    let (pat, arch) = labels_from_means(&synthkit::undergraduate_specs());
    ensure(pat == ["LLLL", "HLHH", "MLLH", "HHLM"], || format!("undergraduate patterns {pat:?}"))?;
    use Archetype::*;
    ensure(arch == [Dropout, PerfectStudents, GamingTheSystem, Social], || format!("undergraduate archetypes {arch:?}"))?;
    let (pat, arch) = labels_from_means(&synthkit::external_specs());
    ensure(pat == ["LLLL", "HHHH", "MLMH"], || format!("external patterns {pat:?}"))?;
    ensure(arch == [Dropout, PerfectStudents, GamingTheSystem], || format!("external archetypes {arch:?}"))?;

    let mut lines = Vec::new();
    for (name, specs, n, k) in [
        ("undergraduate", synthkit::undergraduate_specs(), 459, 4),
        ("external", synthkit::external_specs(), 379, 3),
    ] {
        let mut worst = 1.0f64;
        let mut slowest = Duration::ZERO;
        for seed in 1..=5 {
            let s = Instant::now();
            let a = recovery(&specs, n, k, seed, name)?;
            slowest = slowest.max(timed(Duration::from_secs(5), name, s)?);
            ensure(a >= 0.90, || format!("{name} seed {seed}: agreement {a:.3}"))?;
            worst = worst.min(a);
        }
        lines.push(format!("{name} min agreement {worst:.3} over 5 cohorts (slowest {slowest:?})"));
    }
    Ok(format!("labels from means reproduce LLLL/HLHH/MLLH/HHLM and LLLL/HHHH/MLMH; {}", lines.join("; ")))
}

fn elbow() -> Outcome {
    let opts = KMeansOptions::default();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [(0.0, 0.0), (12.0, 0.0), (0.0, 12.0)];
        let mut data = Vec::new();
        for (cx, cy) in centers {
            for _ in 0..60 {
                data.push(vec![cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)]);
            }
        }
        data.shuffle(&mut rng);
        let ids = (0..data.len()).map(|i| format!("p{i}")).collect();
        let m = FeatureMatrix::new(ids, vec!["x".into(), "y".into()], data).map_err(|e| e.to_string())?;
        let e = clustering::choose_k(&m, 2, 6, seed, &opts).map_err(|e| e.to_string())?;
        ensure(e.k == 3, || format!("seed {seed}: elbow at k = {}", e.k))?;
    }
    let curve: Vec<(usize, f64)> = [100.0, 70.0, 30.0, 28.0, 27.0].iter().enumerate().map(|(i, w)| (i + 1, *w)).collect();
    let e = clustering::elbow_from_curve(&curve, 2, 4).ok_or("no elbow on hand curve")?;
    ensure(e.k == 3, || format!("hand curve elbow at {}", e.k))?;
    Ok("k = 3 on 20/20 planted data sets and on the hand curve".into())
}

// ---------------------------------------------------------------- dropout point

fn dropout_point() -> Outcome {
    let cfg = DropoutPointConfig::default();
    for seed in 0..20 {
        let series = synthkit::synth_weekly_series(&SeriesShape::default(), 10, seed);
        let p = cohort::dropout_point(&series, &cfg).map_err(|e| e.to_string())?;
        ensure(p.week_boundary == Some((4, 5)), || format!("seed {seed}: {:?} on {series:?}", p.week_boundary))?;
    }
    let spiky = SeriesShape {
        spike_week: Some(8),
        ..SeriesShape::default()
    };
    let series = synthkit::synth_weekly_series(&spiky, 10, 3);
    let strict = cohort::dropout_point(&series, &cfg).map_err(|e| e.to_string())?;
    let lenient = cohort::dropout_point(&series, &DropoutPointConfig { allowed_exceedances: 1, ..cfg }).map_err(|e| e.to_string())?;
    ensure(lenient.week_boundary == Some((4, 5)) && lenient.exceedances == 1, || format!("spike series {series:?}: {lenient:?}"))?;
    Ok(format!(
        "(4, 5) on 20/20 seeds; spike series gives {:?} with 0 exceedances and (4, 5) with 1",
        strict.week_boundary
    ))
}

// ---------------------------------------------------------------- battery

fn week(login: bool, video: bool, quiz: bool, forum: bool) -> WeekActivity {
    WeekActivity {
        logins: login as u64,
        video_events: video as u64,
        quiz_attempts: quiz as u64,
        forum_posts: forum as u64,
        threads_read: BTreeSet::new(),
    }
}

fn random_activity(rng: &mut ChaCha8Rng) -> Activity {
    let thread = format!("t{}", rng.random_range(0..4));
    let video = format!("v{}", rng.random_range(0..4));
    match rng.random_range(0..8) {
        0 => Activity::Login,
        1 => Activity::ForumRead { thread_id: thread },
        2 => Activity::ForumPost { thread_id: thread },
        3 => Activity::VideoPlay { video_id: video, position_seconds: 0 },
        4 => Activity::VideoComplete { video_id: video, position_seconds: 300 },
        5 => Activity::QuizAttempt {
            quiz_id: "q1".into(),
            attempt_no: 1,
            score_pct: 50.0,
        },
        6 => Activity::FileDownload { file_id: "f".into() },
        _ => Activity::Enrollment,
    }
}

fn gol_2016_store() -> Result<EventStore, String> {
    let mut store = EventStore::in_memory();
    let course = CourseConfig::new("gol-2016", "Fixture course", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 8, 50.0);
    store.register_course(course).map_err(|e| e.to_string())?;
    let t0 = Utc.with_ymd_and_hms(2016, 3, 8, 10, 0, 0).unwrap();
    let mut events = Vec::new();
    for i in 0..284 {
        let user = format!("s{i:03}");
        store.register_student(StudentRecord::new(&user, "gol-2016")).map_err(|e| e.to_string())?;
        events.push(Event::new("gol-2016", &user, t0, Activity::Login));
        if i < 209 {
            events.push(Event::new(
                "gol-2016",
                &user,
                t0 + ChronoDuration::minutes(5),
                Activity::VideoPlay {
                    video_id: "v1".into(),
                    position_seconds: 0,
                },
            ));
        }
    }
    store.append_events(events).map_err(|e| e.to_string())?;
    Ok(store)
}

fn battery() -> Outcome {
    let framework = BatteryRuleSet::new(BatteryMode::Framework);
    let implemented = BatteryRuleSet::new(BatteryMode::Implemented);
    for bits in 0..16u8 {
        let flags = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0];
        let a = week(flags[0], flags[1], flags[2], flags[3]);
        let (p, _) = motivation::battery_percent(&a, &framework);
        let satisfied = flags.iter().filter(|f| **f).count() as u8;
        ensure(p == 25 * satisfied, || format!("framework mode {flags:?}: {p}"))?;
    }
    for bits in 0..8u8 {
        let (login, quiz, forum) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
        let expected = match (login, quiz, forum) {
            (false, _, _) => 0,
            (true, false, false) => 50,
            (true, true, false) | (true, false, true) => 75,
            (true, true, true) => 100,
        };
        for video in [false, true] {
            let (p, _) = motivation::battery_percent(&week(login, video, quiz, forum), &implemented);
            ensure(p == expected, || format!("implemented mode login={login} quiz={quiz} forum={forum} video={video}: {p}"))?;
        }
    }
    // reads count toward the forum dimension from two distinct threads
    let mut reads = week(true, false, false, false);
    reads.threads_read.insert("a".into());
    ensure(motivation::battery_percent(&reads, &implemented).0 == 50, || "one read counted as forum".into())?;
    reads.threads_read.insert("b".into());
    ensure(motivation::battery_percent(&reads, &implemented).0 == 75, || "two reads not counted as forum".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    for i in 0..10_000 {
        let mut a = WeekActivity::default();
        for _ in 0..rng.random_range(0..6) {
            a.record(&random_activity(&mut rng));
        }
        let before = (motivation::battery_percent(&a, &framework).0, motivation::battery_percent(&a, &implemented).0);
        a.record(&random_activity(&mut rng));
        let after = (motivation::battery_percent(&a, &framework).0, motivation::battery_percent(&a, &implemented).0);
        ensure(after.0 >= before.0 && after.1 >= before.1, || format!("addition {i} lowered {before:?} to {after:?}"))?;
    }

    let store = gol_2016_store()?;
    let trend = motivation::activity_ratio_trend(&store.snapshot(), "gol-2016", ActiveDefinition::VideoPostQuiz).map_err(|e| e.to_string())?;
    let o = &trend.overall;
    let ratio = o.ratio.ok_or("no registrants")?;
    ensure(o.active == 209 && o.registrants == 284 && format!("{ratio:.1}") == "73.6", || format!("{}/{} = {ratio}", o.active, o.registrants))?;
    Ok(format!("16/16 framework, 8/8 implemented, 10000 additions monotone, 209/284 = {ratio:.1}%"))
}

// ---------------------------------------------------------------- quiz rule

fn quiz_course(rule: PassRule, threshold: f64) -> CourseConfig {
    let mut c = CourseConfig::new("quiz", "Quiz fixture", NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(), 4, threshold);
    c.pass_rule = rule;
    c
}

fn quiz_store(course: CourseConfig, lists: &[Vec<f64>]) -> Result<EventStore, String> {
    let mut store = EventStore::in_memory();
    let id = course.course_id.clone();
    store.register_course(course).map_err(|e| e.to_string())?;
    let t0 = Utc.with_ymd_and_hms(2016, 3, 8, 9, 0, 0).unwrap();
    let events = lists.iter().enumerate().flat_map(|(u, scores)| {
        let id = id.clone();
        scores.iter().enumerate().map(move |(i, s)| {
            Event::new(
                id.clone(),
                format!("u{u}"),
                t0 + ChronoDuration::minutes(i as i64),
                Activity::QuizAttempt {
                    quiz_id: "q1".into(),
                    attempt_no: i as u32 + 1,
                    score_pct: *s,
                },
            )
        })
    });
    store.append_events(events.collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    Ok(store)
}

fn quiz_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lists: Vec<Vec<f64>> = (0..300)
        .map(|_| (0..rng.random_range(1..=5)).map(|_| (rng.random_range(0..=1000) as f64) / 10.0).collect())
        .collect();
    let store = quiz_store(quiz_course(PassRule::BestOf, 50.0), &lists)?;
    let snap = store.snapshot();
    for (u, scores) in lists.iter().enumerate() {
        let q = indicators::quiz_summary(&snap, "quiz", &format!("u{u}")).map_err(|e| e.to_string())?;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let max = *sorted.last().unwrap();
        ensure(q.len() == 1 && q[0].recorded == max && q[0].attempts == *scores, || format!("u{u}: {q:?} vs {scores:?}"))?;
        ensure(q[0].passed == (max >= 50.0), || format!("u{u}: pass flag"))?;
    }

    let store = quiz_store(quiz_course(PassRule::BestOf, 50.0), &[vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]])?;
    match indicators::quiz_summary(&store.snapshot(), "quiz", "u0") {
        Err(IndicatorError::AttemptLimitExceeded { attempts: 6, limit: 5, .. }) => {}
        other => return Err(format!("six attempts gave {other:?}")),
    }

    let store = quiz_store(quiz_course(PassRule::BestOf, 50.0), &[vec![60.0, 80.0, 75.0], vec![40.0]])?;
    let snap = store.snapshot();
    let a = &indicators::quiz_summary(&snap, "quiz", "u0").map_err(|e| e.to_string())?[0];
    let b = &indicators::quiz_summary(&snap, "quiz", "u1").map_err(|e| e.to_string())?[0];
    ensure(a.recorded == 80.0 && a.passed, || format!("[60, 80, 75]: {a:?}"))?;
    ensure(b.recorded == 40.0 && !b.passed, || format!("[40]: {b:?}"))?;
    for (rule, expect) in [(PassRule::EveryAttempt, false), (PassRule::BestOf, true)] {
        let store = quiz_store(quiz_course(rule, 75.0), &[vec![70.0, 80.0]])?;
        let q = &indicators::quiz_summary(&store.snapshot(), "quiz", "u0").map_err(|e| e.to_string())?[0];
        ensure(q.passed == expect && indicators::passes(&[70.0, 80.0], 75.0, rule) == expect, || format!("{rule:?} on [70, 80]: {q:?}"))?;
    }
    Ok("recorded = max on 300 lists; 6 attempts rejected; examples pass/fail as expected under both rules".into())
}

// ---------------------------------------------------------------- pearson

/// Textbook two-pass formula, kept apart from the library code.
fn oracle_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn ingest_synthetic(cohort: &synthkit::SynthCohort, course: &SynthCourse, seed: u64) -> Result<(EventStore, synthkit::SynthLogs, reports::IngestReport), String> {
    let logs = synthkit::synth_logs(cohort, course, seed);
    let mut store = EventStore::in_memory();
    store.register_course(logs.course.clone()).map_err(|e| e.to_string())?;
    let report = reports::ingest_log(
        &mut store,
        &logs.text,
        &ClassificationRuleSet::reference(),
        &CourseMap::with_default(logs.course.course_id.clone()),
    )
    .map_err(|e| e.to_string())?;
    Ok((store, logs, report))
}

fn pearson() -> Outcome {
    let c = stats::pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    within(c.r, 0.8, 1e-9, "four-point r")?;

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for i in 0..1000 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| rng.random_range(-1.0..1.0) * v + rng.random_range(-30.0..30.0)).collect();
        let r = stats::pearson(&x, &y).map_err(|e| format!("pair {i}: {e}"))?.r;
        ensure((-1.0..=1.0).contains(&r), || format!("pair {i}: r = {r}"))?;
        within(r, oracle_r(&x, &y), 1e-9, "oracle formula")?;
        let (a, b, cc, d) = (rng.random_range(0.1..5.0), rng.random_range(-9.0..9.0), rng.random_range(0.1..5.0), rng.random_range(-9.0..9.0));
        let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let xa: Vec<f64> = x.iter().map(|v| sign * a * v + b).collect();
        let yc: Vec<f64> = y.iter().map(|v| cc * v + d).collect();
        let r2 = stats::pearson(&xa, &yc).map_err(|e| e.to_string())?.r;
        within(r2, sign * r, 1e-9, &format!("pair {i} affine"))?;
        let swapped = stats::pearson(&y, &x).map_err(|e| e.to_string())?.r;
        within(swapped, r, 1e-12, "symmetry")?;
    }

    let cohort = synthkit::synth_correlated_cohort(1500, 0.52, 52, "forum").map_err(|e| e.to_string())?;
    let course = SynthCourse::new("forum", NaiveDate::from_ymd_opt(2014, 10, 6).unwrap(), 8);
    let (store, _, _) = ingest_synthetic(&cohort, &course, 52)?;
    let cmp = indicators::compare_metrics(&store.snapshot(), "forum", Metric::ForumReads, Metric::ForumPosts).map_err(|e| e.to_string())?;
    let r = cmp.correlation.ok_or("no correlation")?;
    within(r.r, 0.52, 0.05, "planted correlation")?;
    let ci = r.ci95.ok_or("no interval")?;
    Ok(format!("four-point r = {:.12}; 1000 random pairs ok; planted 0.52 recovered as {:.3} (95% CI {:.3}..{:.3})", c.r, r.r, ci.0, ci.1))
}

// ---------------------------------------------------------------- end to end

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = mooc_analytics::cli::run(std::iter::once("mooc-analytics").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        return Err(format!("`{}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err)));
    }
    String::from_utf8(out).map_err(|e| e.to_string())
}

fn json(text: &str) -> Result<serde_json::Value, String> {
    serde_json::from_str(text).map_err(|e| format!("{e}: {text}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("store");
    let out = dir.path().join("synth");
    let (data_s, out_s) = (data.to_str().unwrap(), out.to_str().unwrap());
    let g = |rest: &[&str]| {
        let mut v = vec!["--data-dir", data_s, "--format", "json", "--seed", "7"];
        v.extend_from_slice(rest);
        cli(&v)
    };
    g(&["synth", "--students", "1000", "--course", "e2e", "--weeks", "8", "--out", out_s])?;
    let truth: synthkit::GroundTruth = serde_json::from_str(&std::fs::read_to_string(out.join("truth.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let course_json = out.join("course.json");
    let students_csv = out.join("students.csv");
    let logs_txt = out.join("logs.txt");
    let ingest = json(&g(&[
        "ingest",
        "--course",
        "e2e",
        "--course-config",
        course_json.to_str().unwrap(),
        "--students",
        students_csv.to_str().unwrap(),
        logs_txt.to_str().unwrap(),
    ])?)?;
    let r = &ingest[0];
    ensure(r["accepted"] == truth.events && r["duplicates"] == 0 && r["unclassified"] == 0, || format!("ingest {r}"))?;
    ensure(r["rejects"].as_array().is_some_and(|a| a.is_empty()) && r["failures"].as_array().is_some_and(|a| a.is_empty()), || format!("ingest {r}"))?;

    let totals = json(&g(&["report", "--course", "e2e", "--kind", "totals"])?)?;
    let by_user: HashMap<&str, &serde_json::Value> = totals
        .as_array()
        .ok_or("totals not a list")?
        .iter()
        .map(|t| (t["user_id"].as_str().unwrap_or_default(), t))
        .collect();
    ensure(by_user.len() == truth.students.len(), || format!("{} users in totals, {} planted", by_user.len(), truth.students.len()))?;
    let mut checked = 0;
    for s in &truth.students {
        let t = by_user.get(s.user_id.as_str()).ok_or(format!("{} missing", s.user_id))?;
        let planted = [
            ("logins", s.logins),
            ("forum_reads", s.forum_reads),
            ("forum_posts", s.forum_posts),
            ("video_events", s.video_events),
            ("videos_watched", s.videos_watched),
            ("quiz_attempts", s.quiz_attempts),
            ("downloads", s.downloads),
        ];
        for (m, want) in planted {
            ensure(t[m] == want, || format!("{} {m}: {} vs planted {want}", s.user_id, t[m]))?;
            checked += 1;
        }
    }

    let summary = json(&g(&["report", "--course", "e2e", "--kind", "summary"])?)?;
    let s = &summary["summary"];
    let certified = truth.students.iter().filter(|s| s.certified).count();
    let active = truth
        .students
        .iter()
        .filter(|s| s.video_events + s.forum_posts + s.quiz_attempts > 0)
        .count();
    ensure(s["registrants"] == 1000 && s["certified"] == certified && s["active"] == active, || format!("summary {s}"))?;

    let cluster = json(&g(&["cluster", "--course", "e2e", "--k", "4", "--population", "undergraduate"])?)?;
    let sizes: u64 = cluster["labeling"]["clusters"].as_array().ok_or("no clusters")?.iter().map(|c| c["size"].as_u64().unwrap_or(0)).sum();
    ensure(cluster["students"] == 1000 && sizes == 1000, || format!("cluster covers {} / {sizes}", cluster["students"]))?;

    for w in 1..=8 {
        let b = json(&g(&["battery", "--course", "e2e", "--week", &w.to_string()])?)?;
        let dist: u64 = b["distribution"].as_object().ok_or("no distribution")?.values().map(|v| v.as_u64().unwrap_or(0)).sum();
        ensure(b["students"] == active && dist == active as u64, || format!("week {w} battery {} / {dist}", b["students"]))?;
    }
    let took = timed(Duration::from_secs(30), "pipeline", start)?;
    Ok(format!(
        "{} events, {checked} planted totals, {certified} certified, {active} active all conserved; 1000 students in {took:?}",
        truth.events
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [Criterion; 12] = [
        ("dropout rates from category counts", dropout_rates_from_counts),
        ("category ratios", category_ratios),
        ("log parser", log_parser),
        ("k-anonymity lattice search", k_anonymity),
        ("anonymization technique properties", technique_properties),
        ("clustering recovery and labeling", clustering_recovery),
        ("elbow selection", elbow),
        ("dropout point", dropout_point),
        ("activity battery", battery),
        ("quiz recording and pass rules", quiz_rule),
        ("pearson correlation", pearson),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.2?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
