//! k-means engagement clustering, elbow selection, scale labels and archetypes.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::indicators::StudentTotals;
use crate::stats;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid k {k} for {rows} rows")]
    InvalidK { k: usize, rows: usize },
    #[error("invalid k range {lo}..={hi} for {rows} rows")]
    RangeInvalid { lo: usize, hi: usize, rows: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
}

/// Column bookkeeping of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnMeta {
    pub name: String,
    pub retained: bool,
    pub reason: Option<String>,
}

/// Rows are students, columns are retained variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
    /// Every candidate column, retained or not.
    pub meta: Vec<ColumnMeta>,
}

impl FeatureMatrix {
    pub fn new(row_ids: Vec<String>, columns: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self, ClusterError> {
        if row_ids.len() != data.len() {
            return Err(ClusterError::InvalidMatrix(format!("{} ids for {} rows", row_ids.len(), data.len())));
        }
        if let Some((i, r)) = data.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(ClusterError::InvalidMatrix(format!(
                "row {i} has {} cells, expected {}",
                r.len(),
                columns.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ClusterError::InvalidMatrix("non-finite cell".into()));
        }
        let meta = columns
            .iter()
            .map(|c| ColumnMeta {
                name: c.clone(),
                retained: true,
                reason: None,
            })
            .collect();
        Ok(FeatureMatrix {
            row_ids,
            columns,
            data,
            meta,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.len()
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Columns rescaled to mean 0 and unit population SD; constant columns become 0.
    pub fn standardized(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for j in 0..self.dims() {
            let col = self.column(j);
            let (m, sd) = (stats::mean(&col), stats::std_dev(&col));
            for row in &mut out.data {
                row[j] = if sd > 0.0 { (row[j] - m) / sd } else { 0.0 };
            }
        }
        out
    }

    /// Keeps only the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            data: rows.iter().map(|&i| self.data[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

pub const READING: &str = "reading_freq";
pub const WRITING: &str = "writing_freq";
pub const VIDEOS: &str = "videos_watched";
pub const QUIZZES: &str = "quiz_attempts";
pub const LOGINS: &str = "logins";
pub const DOWNLOADS: &str = "downloads";

/// Pruning priority: earlier names survive a correlated pair.
pub const PRIORITY: [&str; 6] = [READING, WRITING, VIDEOS, QUIZZES, LOGINS, DOWNLOADS];

/// Candidate matrix with the six indicator columns in priority order.
pub fn candidate_matrix(totals: &[StudentTotals], distinct_videos: bool) -> FeatureMatrix {
    let data = totals
        .iter()
        .map(|t| {
            vec![
                t.forum_reads as f64,
                t.forum_posts as f64,
                if distinct_videos { t.videos_watched } else { t.video_events } as f64,
                t.quiz_attempts as f64,
                t.logins as f64,
                t.downloads as f64,
            ]
        })
        .collect();
    FeatureMatrix::new(
        totals.iter().map(|t| t.user_id.clone()).collect(),
        PRIORITY.iter().map(|s| s.to_string()).collect(),
        data,
    )
    .expect("shape is fixed")
}

fn priority_rank(name: &str) -> usize {
    PRIORITY.iter().position(|p| *p == name).unwrap_or(PRIORITY.len())
}

pub const DEFAULT_R_THRESHOLD: f64 = 0.8;

/// Greedy correlation pruning. Columns are visited in priority order; a
/// column is dropped when constant or when `|r| > threshold` against any
/// column already kept.
pub fn select_variables(candidates: &FeatureMatrix, r_threshold: f64) -> Result<FeatureMatrix, ClusterError> {
    if candidates.dims() < 2 {
        return Err(ClusterError::InvalidMatrix("need at least 2 candidate columns".into()));
    }
    let mut order: Vec<usize> = (0..candidates.dims()).collect();
    order.sort_by_key(|&j| (priority_rank(&candidates.columns[j]), j));
    let mut kept: Vec<usize> = Vec::new();
    let mut reasons: Vec<Option<String>> = vec![None; candidates.dims()];
    for j in order {
        let col = candidates.column(j);
        if col.windows(2).all(|w| w[0] == w[1]) {
            reasons[j] = Some("constant column".into());
            continue;
        }
        let clash = kept.iter().find_map(|&i| {
            let r = stats::pearson(&candidates.column(i), &col).ok()?.r;
            (r.abs() > r_threshold).then_some((i, r))
        });
        match clash {
            Some((i, r)) => reasons[j] = Some(format!("|r| = {:.3} with {}", r.abs(), candidates.columns[i])),
            None => kept.push(j),
        }
    }
    kept.sort_unstable();
    Ok(FeatureMatrix {
        row_ids: candidates.row_ids.clone(),
        columns: kept.iter().map(|&j| candidates.columns[j].clone()).collect(),
        data: candidates
            .data
            .iter()
            .map(|r| kept.iter().map(|&j| r[j]).collect())
            .collect(),
        meta: candidates
            .columns
            .iter()
            .zip(reasons)
            .map(|(name, reason)| ColumnMeta {
                name: name.clone(),
                retained: reason.is_none(),
                reason,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 100,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wss: f64,
    pub wss_per_cluster: Vec<f64>,
    pub seed: u64,
    /// Restart that produced this model.
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Total WSS after each assignment step.
    pub wss_history: Vec<f64>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == cluster)
            .map(|(i, _)| i)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn wss_of(data: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> (f64, Vec<f64>) {
    let mut per = vec![0.0; centroids.len()];
    for (row, &a) in data.iter().zip(assignments) {
        per[a] += sq_dist(row, &centroids[a]);
    }
    (per.iter().sum(), per)
}

fn initial_centroids(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in &idx {
        if chosen.len() == k {
            break;
        }
        if !chosen.contains(&data[i]) {
            chosen.push(data[i].clone());
        }
    }
    // Fewer distinct rows than k: duplicates become empty clusters and get repaired.
    for &i in &idx {
        if chosen.len() == k {
            break;
        }
        chosen.push(data[i].clone());
    }
    chosen
}

fn lloyd(data: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize, bool, Vec<f64>) {
    let dims = data[0].len();
    let mut centroids = initial_centroids(data, k, rng);
    let mut assignments: Vec<usize> = data.iter().map(|r| nearest(r, &centroids)).collect();
    let mut history = vec![wss_of(data, &centroids, &assignments).0];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (row, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // An empty cluster takes over the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..data.len())
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&i, &j| {
                        sq_dist(&data[i], &centroids[assignments[i]])
                            .total_cmp(&sq_dist(&data[j], &centroids[assignments[j]]))
                            .then(j.cmp(&i))
                    });
                if let Some(i) = far {
                    counts[assignments[i]] -= 1;
                    counts[c] = 1;
                    centroids[c] = data[i].clone();
                    assignments[i] = c;
                }
            }
        }
        let next: Vec<usize> = data.iter().map(|r| nearest(r, &centroids)).collect();
        let changed = next != assignments;
        assignments = next;
        history.push(wss_of(data, &centroids, &assignments).0);
        if !changed {
            converged = true;
            break;
        }
    }
    // Final centroids are the means of the final assignment.
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (row, &a) in data.iter().zip(&assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(row) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    (centroids, assignments, iterations, converged, history)
}

/// Best-of-restarts Lloyd k-means with Euclidean distance.
pub fn kmeans(m: &FeatureMatrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterModel, ClusterError> {
    if k == 0 || k > m.rows() {
        return Err(ClusterError::InvalidK { k, rows: m.rows() });
    }
    if m.dims() == 0 {
        return Err(ClusterError::InvalidMatrix("no columns to cluster".into()));
    }
    let restarts = opts.restarts.max(1);
    let runs: Vec<ClusterModel> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (centroids, assignments, iterations, converged, wss_history) = lloyd(&m.data, k, opts.max_iter, &mut rng);
            let (wss, wss_per_cluster) = wss_of(&m.data, &centroids, &assignments);
            ClusterModel {
                k,
                centroids,
                assignments,
                wss,
                wss_per_cluster,
                seed,
                restart: r,
                iterations,
                converged,
                wss_history,
            }
        })
        .collect();
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.wss.total_cmp(&b.wss).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Elbow {
    pub k: usize,
    /// `(k, wss)` including the neighbours of the requested range.
    pub wss_curve: Vec<(usize, f64)>,
    /// `(k, second difference)` for each candidate k.
    pub second_differences: Vec<(usize, f64)>,
    /// Set when the best second difference is not positive or is tied.
    pub low_confidence: bool,
}

/// Elbow of a WSS curve: the candidate k in `lo..=hi` with both neighbours
/// on the curve that maximizes `(W[k-1] - W[k]) - (W[k] - W[k+1])`.
pub fn elbow_from_curve(curve: &[(usize, f64)], lo: usize, hi: usize) -> Option<Elbow> {
    let w = |k: usize| curve.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v);
    let diffs: Vec<(usize, f64)> = (lo.max(1)..=hi)
        .filter_map(|k| {
            let (prev, cur, next) = (w(k.checked_sub(1)?)?, w(k)?, w(k + 1)?);
            Some((k, (prev - cur) - (cur - next)))
        })
        .collect();
    let best = diffs.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = diffs.iter().filter(|d| d.1 == best).map(|d| d.0).collect();
    let k = *winners.first()?;
    Some(Elbow {
        k,
        wss_curve: curve.to_vec(),
        low_confidence: best <= 0.0 || winners.len() > 1,
        second_differences: diffs,
    })
}

/// Runs k-means for every k around `lo..=hi` and applies the elbow rule.
pub fn choose_k(m: &FeatureMatrix, lo: usize, hi: usize, seed: u64, opts: &KMeansOptions) -> Result<Elbow, ClusterError> {
    let rows = m.rows();
    if lo < 2 || lo > hi || hi + 1 > rows {
        return Err(ClusterError::RangeInvalid { lo, hi, rows });
    }
    let curve: Vec<(usize, f64)> = (lo - 1..=hi + 1)
        .into_par_iter()
        .map(|k| kmeans(m, k, seed, opts).map(|model| (k, model.wss)))
        .collect::<Result<_, _>>()?;
    Ok(elbow_from_curve(&curve, lo, hi).expect("range has interior points"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Low,
    Moderate,
    High,
}

impl Scale {
    pub fn letter(self) -> char {
        match self {
            Scale::Low => 'L',
            Scale::Moderate => 'M',
            Scale::High => 'H',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Dropout,
    PerfectStudents,
    GamingTheSystem,
    Social,
    Unnamed,
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Archetype::Dropout => "Dropout",
            Archetype::PerfectStudents => "Perfect students",
            Archetype::GamingTheSystem => "Gaming the system",
            Archetype::Social => "Social",
            Archetype::Unnamed => "Unnamed",
        })
    }
}

/// How cluster means map to Low/Moderate/High.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    /// High for clusters whose one-SD band and the top cluster's band reach
    /// each other, Low likewise against the bottom cluster, else Moderate.
    #[default]
    SdOverlap,
    /// High for the top mean only, Low for the bottom mean only.
    Extremes,
}

/// Mean and SD of one variable in one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Scales of one variable across clusters.
pub fn scale_variable(values: &[MeanSd], rule: ScaleRule) -> Vec<Scale> {
    if values.len() < 2 {
        return vec![Scale::Moderate; values.len()];
    }
    let cmp = |a: &&MeanSd, b: &&MeanSd| a.mean.total_cmp(&b.mean);
    let top = *values.iter().max_by(cmp).expect("non-empty");
    let bottom = *values.iter().min_by(cmp).expect("non-empty");
    if top.mean == bottom.mean {
        return vec![Scale::Moderate; values.len()];
    }
    values
        .iter()
        .map(|v| {
            if v.mean == top.mean {
                return Scale::High;
            }
            if v.mean == bottom.mean {
                return Scale::Low;
            }
            let (high, low) = match rule {
                ScaleRule::Extremes => (false, false),
                ScaleRule::SdOverlap => (
                    v.mean + v.sd >= top.mean && top.mean - top.sd <= v.mean,
                    v.mean - v.sd <= bottom.mean && bottom.mean + bottom.sd >= v.mean,
                ),
            };
            match (high, low) {
                (true, false) => Scale::High,
                (false, true) => Scale::Low,
                _ => Scale::Moderate,
            }
        })
        .collect()
}

/// Archetype from the scales of the four engagement variables. Missing
/// variables count as not High; all-Low looks only at variables present.
pub fn archetype(reading: Option<Scale>, writing: Option<Scale>, videos: Option<Scale>, quizzes: Option<Scale>) -> Archetype {
    let present: Vec<Scale> = [reading, writing, videos, quizzes].into_iter().flatten().collect();
    let high = |s: Option<Scale>| s == Some(Scale::High);
    if !present.is_empty() && present.iter().all(|s| *s == Scale::Low) {
        Archetype::Dropout
    } else if high(reading) && high(videos) && high(quizzes) {
        Archetype::PerfectStudents
    } else if high(writing) {
        Archetype::Social
    } else if high(quizzes) && !high(videos) {
        Archetype::GamingTheSystem
    } else {
        Archetype::Unnamed
    }
}

/// Per-cluster statistics that labeling works from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub size: usize,
    /// One entry per variable.
    pub vars: Vec<MeanSd>,
    pub certification_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterLabel {
    pub cluster: usize,
    pub size: usize,
    pub share_pct: f64,
    pub vars: Vec<MeanSd>,
    pub scales: Vec<Scale>,
    pub archetype: Archetype,
    /// Percent of members certified, when certification is known.
    pub certification_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterLabeling {
    pub variables: Vec<String>,
    pub rule: ScaleRule,
    pub clusters: Vec<ClusterLabel>,
}

impl ClusterLabeling {
    pub fn scale_pattern(&self, cluster: usize) -> String {
        self.clusters[cluster].scales.iter().map(|s| s.letter()).collect()
    }
}

/// Labels clusters given per-variable means and SDs.
pub fn label_stats(variables: &[String], stats: &[ClusterStats], rule: ScaleRule) -> ClusterLabeling {
    let per_var: Vec<Vec<Scale>> = (0..variables.len())
        .map(|j| scale_variable(&stats.iter().map(|s| s.vars[j]).collect::<Vec<_>>(), rule))
        .collect();
    let total: usize = stats.iter().map(|s| s.size).sum();
    let idx = |name: &str| variables.iter().position(|v| v == name);
    let clusters = stats
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let scales: Vec<Scale> = per_var.iter().map(|v| v[c]).collect();
            let scale_of = |name| idx(name).map(|j| scales[j]);
            ClusterLabel {
                cluster: c,
                size: s.size,
                share_pct: if total == 0 { 0.0 } else { 100.0 * s.size as f64 / total as f64 },
                vars: s.vars.clone(),
                archetype: archetype(scale_of(READING), scale_of(WRITING), scale_of(VIDEOS), scale_of(QUIZZES)),
                scales,
                certification_ratio: s.certification_ratio,
            }
        })
        .collect();
    ClusterLabeling {
        variables: variables.to_vec(),
        rule,
        clusters,
    }
}

/// Cluster statistics from a fitted model, optionally joined with certification flags.
pub fn cluster_stats(model: &ClusterModel, m: &FeatureMatrix, certified: Option<&[bool]>) -> Vec<ClusterStats> {
    (0..model.k)
        .map(|c| {
            let members: Vec<usize> = model.members(c).collect();
            let vars = (0..m.dims())
                .map(|j| {
                    let col: Vec<f64> = members.iter().map(|&i| m.data[i][j]).collect();
                    if col.is_empty() {
                        MeanSd { mean: 0.0, sd: 0.0 }
                    } else {
                        MeanSd {
                            mean: stats::mean(&col),
                            sd: stats::std_dev(&col),
                        }
                    }
                })
                .collect();
            let certification_ratio = certified.and_then(|flags| {
                (!members.is_empty())
                    .then(|| 100.0 * members.iter().filter(|&&i| flags[i]).count() as f64 / members.len() as f64)
            });
            ClusterStats {
                size: members.len(),
                vars,
                certification_ratio,
            }
        })
        .collect()
}

pub fn label_clusters(model: &ClusterModel, m: &FeatureMatrix, certified: Option<&[bool]>, rule: ScaleRule) -> ClusterLabeling {
    label_stats(&m.columns, &cluster_stats(model, m, certified), rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    BottomLeft,
    TopLeft,
    BottomRight,
    TopRight,
}

impl Quadrant {
    /// Where each named archetype belongs on the intrinsic × extrinsic map.
    pub fn expected_for(a: Archetype) -> Option<Quadrant> {
        match a {
            Archetype::Dropout => Some(Quadrant::BottomLeft),
            Archetype::GamingTheSystem => Some(Quadrant::TopLeft),
            Archetype::Social => Some(Quadrant::BottomRight),
            Archetype::PerfectStudents => Some(Quadrant::TopRight),
            Archetype::Unnamed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CryerPlacement {
    pub cluster: usize,
    pub archetype: Archetype,
    pub intrinsic: f64,
    pub extrinsic: f64,
    /// `None` on an axis (score equal to the median) or with a single cluster.
    pub quadrant: Option<Quadrant>,
    /// Whether the quadrant matches the archetype's expected one.
    pub consistent: Option<bool>,
}

fn zscores(values: &[f64]) -> Vec<f64> {
    let (m, sd) = (stats::mean(values), stats::std_dev(values));
    values.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect()
}

/// Intrinsic axis: mean z-score of reading and video cluster means.
/// Extrinsic axis: z-score of quiz-attempt cluster means.
pub fn cryer_map(labeling: &ClusterLabeling) -> Vec<CryerPlacement> {
    let k = labeling.clusters.len();
    let z_of = |name: &str| -> Option<Vec<f64>> {
        let j = labeling.variables.iter().position(|v| v == name)?;
        Some(zscores(&labeling.clusters.iter().map(|c| c.vars[j].mean).collect::<Vec<_>>()))
    };
    let intrinsic_parts: Vec<Vec<f64>> = [READING, VIDEOS].iter().filter_map(|n| z_of(n)).collect();
    let intrinsic: Vec<f64> = (0..k)
        .map(|c| {
            if intrinsic_parts.is_empty() {
                0.0
            } else {
                intrinsic_parts.iter().map(|p| p[c]).sum::<f64>() / intrinsic_parts.len() as f64
            }
        })
        .collect();
    let extrinsic = z_of(QUIZZES).unwrap_or_else(|| vec![0.0; k]);
    let (mi, me) = (stats::median(&intrinsic), stats::median(&extrinsic));
    labeling
        .clusters
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let quadrant = if k < 2 {
                None
            } else {
                match (intrinsic[c].partial_cmp(&mi), extrinsic[c].partial_cmp(&me)) {
                    (Some(Ordering::Less), Some(Ordering::Less)) => Some(Quadrant::BottomLeft),
                    (Some(Ordering::Less), Some(Ordering::Greater)) => Some(Quadrant::TopLeft),
                    (Some(Ordering::Greater), Some(Ordering::Less)) => Some(Quadrant::BottomRight),
                    (Some(Ordering::Greater), Some(Ordering::Greater)) => Some(Quadrant::TopRight),
                    _ => None,
                }
            };
            let consistent = match (quadrant, Quadrant::expected_for(label.archetype)) {
                (Some(q), Some(e)) => Some(q == e),
                _ => None,
            };
            CryerPlacement {
                cluster: c,
                archetype: label.archetype,
                intrinsic: intrinsic[c],
                extrinsic: extrinsic[c],
                quadrant,
                consistent,
            }
        })
        .collect()
}

/// Coordinates on the first two principal components of the centered data.
pub fn project_2d(m: &FeatureMatrix) -> Vec<[f64; 2]> {
    let (n, d) = (m.rows(), m.dims());
    if n == 0 || d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let means: Vec<f64> = (0..d).map(|j| stats::mean(&m.column(j))).collect();
    let x = nalgebra::DMatrix::from_fn(n, d, |i, j| m.data[i][j] - means[j]);
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let project = |i: usize, comp: Option<&usize>| -> f64 {
        match comp {
            Some(&c) => (0..d).map(|j| x[(i, j)] * v_t[(c, j)]).sum(),
            None => 0.0,
        }
    };
    (0..n).map(|i| [project(i, order.first()), project(i, order.get(1))]).collect()
}

/// Assignment export: one row per student with its cluster and features.
pub fn assignments_table(model: &ClusterModel, m: &FeatureMatrix) -> Table {
    let mut header = vec!["user_id".to_string(), "cluster".to_string()];
    header.extend(m.columns.iter().cloned());
    let mut t = Table::new(header);
    for (i, row) in m.data.iter().enumerate() {
        let mut cells = vec![m.row_ids[i].clone(), model.assignments[i].to_string()];
        cells.extend(row.iter().map(|v| crate::store::fmt_num(*v)));
        t.push_row(cells);
    }
    t
}
