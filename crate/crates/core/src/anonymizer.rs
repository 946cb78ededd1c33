//! De-identification of tabular exports: hashing, suppression, masking,
//! swapping, noising, k-anonymity over generalization hierarchies, and
//! re-identification codes kept in a separate key store.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use hmac::{Hmac, Mac};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::table::{Table, TableError};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, thiserror::Error)]
pub enum AnonError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("cell `{value}` in row {row}, column `{column}` is not numeric")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("hierarchy line {line} has {found} levels, expected {expected}")]
    UnevenChains { line: usize, expected: usize, found: usize },
    #[error("hierarchy lists leaf `{0}` twice")]
    DuplicateLeaf(String),
    #[error("value `{value}` of column `{column}` is missing from its hierarchy")]
    MissingHierarchyValue { value: String, column: String },
    #[error("quasi-identifier `{0}` has no hierarchy")]
    MissingHierarchy(String),
    #[error("no generalization reaches k = {k} within {limit} suppressed rows")]
    Unsatisfiable { k: usize, limit: usize },
    #[error("key store maps code `{code}` to a different value")]
    KeyStoreCollision { code: String },
    #[error("key store path {0} equals the output path")]
    KeyStorePathConflict(PathBuf),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Separator placed between cells of a joint identifier before hashing.
pub const JOINT_SEPARATOR: char = '\u{1f}';
pub const NULL_TOKEN: &str = "null";
pub const DEFAULT_HASH_LENGTH: usize = 10;

fn hmac_hex(key: &[u8], data: &str, len: usize) -> String {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data.as_bytes());
    let mut hex = hex::encode(mac.finalize().into_bytes());
    hex.truncate(len);
    hex
}

fn indices(t: &Table, cols: &[String]) -> Result<Vec<usize>, AnonError> {
    Ok(t.column_indices(cols)?)
}

/// Replaces targeted cells by a keyed SHA-256 digest in hex, truncated to
/// `truncation` characters. With `joint`, the cells of a row are joined and
/// the shared digest is written to every targeted column.
pub fn apply_hashing(t: &Table, cols: &[String], key: &str, truncation: usize, joint: bool) -> Result<Table, AnonError> {
    if key.is_empty() {
        return Err(AnonError::InvalidParameter("hash key is empty".into()));
    }
    if !(1..=64).contains(&truncation) {
        return Err(AnonError::InvalidParameter(format!("truncation {truncation} outside 1..=64")));
    }
    let idx = indices(t, cols)?;
    let mut out = t.clone();
    for row in &mut out.rows {
        if joint {
            let joined = idx.iter().map(|&i| row[i].as_str()).collect::<Vec<_>>().join(&JOINT_SEPARATOR.to_string());
            let digest = hmac_hex(key.as_bytes(), &joined, truncation);
            for &i in &idx {
                row[i] = digest.clone();
            }
        } else {
            for &i in &idx {
                row[i] = hmac_hex(key.as_bytes(), &row[i], truncation);
            }
        }
    }
    Ok(out)
}

/// Replaces targeted cells by `null`, or by `0` in columns listed as numeric.
pub fn apply_suppression(t: &Table, cols: &[String], numeric: &[String]) -> Result<Table, AnonError> {
    let idx = indices(t, cols)?;
    let numeric_idx = indices(t, numeric)?;
    let mut out = t.clone();
    for row in &mut out.rows {
        for &i in &idx {
            row[i] = if numeric_idx.contains(&i) { "0" } else { NULL_TOKEN }.to_string();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "length")]
pub enum MaskMode {
    /// Same number of characters as the original cell.
    LengthPreserving,
    /// Always this many characters.
    Fixed(usize),
}

pub fn apply_masking(t: &Table, cols: &[String], mask_char: char, mode: MaskMode) -> Result<Table, AnonError> {
    let idx = indices(t, cols)?;
    let mut out = t.clone();
    for row in &mut out.rows {
        for &i in &idx {
            let n = match mode {
                MaskMode::LengthPreserving => row[i].chars().count(),
                MaskMode::Fixed(n) => n,
            };
            row[i] = std::iter::repeat_n(mask_char, n).collect();
        }
    }
    Ok(out)
}

/// Seeded cyclic permutation (Sattolo): no row keeps its own position when n ≥ 2.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Moves the targeted columns together to other rows. Tables with fewer
/// than two rows come back unchanged with a warning.
pub fn apply_swapping(t: &Table, cols: &[String], seed: u64) -> Result<(Table, Option<String>), AnonError> {
    let idx = indices(t, cols)?;
    if t.row_count() < 2 {
        return Ok((t.clone(), Some(format!("swapping needs two rows, table has {}", t.row_count()))));
    }
    let perm = derangement(t.row_count(), seed);
    let mut out = t.clone();
    for (dst, &src) in perm.iter().enumerate() {
        for &i in &idx {
            out.rows[dst][i] = t.rows[src][i].clone();
        }
    }
    Ok((out, None))
}

/// Adds `sign * delta` to a value and clamps it to the domain.
pub fn noise_value(v: f64, delta: f64, positive: bool, domain: (f64, f64)) -> f64 {
    let moved = if positive { v + delta } else { v - delta };
    moved.clamp(domain.0, domain.1)
}

fn parse_numeric(cell: &str) -> Option<(f64, bool)> {
    let trimmed = cell.trim();
    let (num, pct) = match trimmed.strip_suffix('%') {
        Some(n) => (n.trim_end(), true),
        None => (trimmed, false),
    };
    let v: f64 = num.parse().ok()?;
    v.is_finite().then_some((v, pct))
}

fn format_numeric(v: f64, pct: bool) -> String {
    let s = crate::store::fmt_num(v);
    if pct {
        format!("{s}%")
    } else {
        s
    }
}

pub const DEFAULT_NOISE_DOMAIN: (f64, f64) = (0.0, 100.0);

/// Moves every targeted number by exactly `delta` up or down (seeded sign),
/// then clamps to `domain`. A `%` suffix is kept.
pub fn apply_noising(t: &Table, cols: &[String], delta: f64, seed: u64, domain: (f64, f64)) -> Result<Table, AnonError> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(AnonError::InvalidParameter(format!("delta {delta} must be finite and >= 0")));
    }
    if domain.0 > domain.1 {
        return Err(AnonError::InvalidParameter(format!("empty domain {domain:?}")));
    }
    let idx = indices(t, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for (r, row) in out.rows.iter_mut().enumerate() {
        for &i in &idx {
            let (v, pct) = parse_numeric(&row[i]).ok_or_else(|| AnonError::NonNumericCell {
                row: r,
                column: t.header[i].clone(),
                value: row[i].clone(),
            })?;
            let positive = rng.random_bool(0.5);
            row[i] = format_numeric(noise_value(v, delta, positive, domain), pct);
        }
    }
    Ok(out)
}

/// Generalization chains keyed by leaf; level 0 is the leaf itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    chains: BTreeMap<String, Vec<String>>,
    levels: usize,
}

impl Hierarchy {
    /// One comma-separated chain per line, most specific first.
    pub fn parse(text: &str) -> Result<Self, AnonError> {
        let mut chains = BTreeMap::new();
        let mut width: Option<usize> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let chain: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            match width {
                None => width = Some(chain.len()),
                Some(w) if w != chain.len() => {
                    return Err(AnonError::UnevenChains {
                        line: n + 1,
                        expected: w,
                        found: chain.len(),
                    })
                }
                _ => {}
            }
            let leaf = chain[0].clone();
            if chains.insert(leaf.clone(), chain).is_some() {
                return Err(AnonError::DuplicateLeaf(leaf));
            }
        }
        Ok(Hierarchy {
            chains,
            levels: width.map_or(0, |w| w - 1),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnonError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Highest level; level 0 is the leaf.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn leaf_count(&self) -> usize {
        self.chains.len()
    }

    pub fn generalize(&self, value: &str, level: usize) -> Option<&str> {
        self.chains.get(value).and_then(|c| c.get(level)).map(String::as_str)
    }
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<Hierarchy, AnonError> {
    Hierarchy::load(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KViolation {
    pub tuple: Vec<String>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KReport {
    pub ok: bool,
    pub violations: Vec<KViolation>,
}

fn class_sizes<'a>(rows: impl Iterator<Item = Vec<&'a str>>) -> BTreeMap<Vec<&'a str>, usize> {
    let mut classes = BTreeMap::new();
    for key in rows {
        *classes.entry(key).or_insert(0) += 1;
    }
    classes
}

/// Equivalence classes over the QI columns that are smaller than k.
pub fn verify_k_anonymity(t: &Table, qis: &[String], k: usize) -> Result<KReport, AnonError> {
    let idx = indices(t, qis)?;
    let classes = class_sizes(t.rows.iter().map(|r| idx.iter().map(|&i| r[i].as_str()).collect()));
    let violations: Vec<KViolation> = classes
        .into_iter()
        .filter(|(_, size)| *size < k)
        .map(|(tuple, size)| KViolation {
            tuple: tuple.into_iter().map(str::to_string).collect(),
            size,
        })
        .collect();
    Ok(KReport {
        ok: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KAnonResult {
    pub table: Table,
    /// `(column, level)` for each quasi-identifier in table column order.
    pub levels: Vec<(String, usize)>,
    pub suppressed: usize,
    /// Sizes of the remaining equivalence classes, in tuple order.
    pub class_sizes: Vec<usize>,
}

/// Full-domain generalization with row suppression. Only declared columns
/// that have a hierarchy act as quasi-identifiers, unless `strict` demands
/// a hierarchy for each. The lattice is searched by increasing level sum,
/// lexicographically within a sum; the first node whose undersized classes
/// hold at most `suppression_limit` rows wins.
pub fn k_anonymize(
    t: &Table,
    qis: &[String],
    hierarchies: &BTreeMap<String, Hierarchy>,
    k: usize,
    suppression_limit: usize,
    strict: bool,
) -> Result<KAnonResult, AnonError> {
    if k == 0 {
        return Err(AnonError::InvalidParameter("k must be >= 1".into()));
    }
    t.column_indices(qis)?;
    if strict {
        if let Some(q) = qis.iter().find(|q| !hierarchies.contains_key(*q)) {
            return Err(AnonError::MissingHierarchy(q.clone()));
        }
    }
    let mut active: Vec<(usize, &Hierarchy)> = t
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| qis.contains(h))
        .filter_map(|(i, h)| hierarchies.get(h).map(|hier| (i, hier)))
        .collect();
    active.sort_by_key(|(i, _)| *i);
    for &(i, hier) in &active {
        if let Some(v) = t.column(i).find(|v| hier.generalize(v, 0).is_none()) {
            return Err(AnonError::MissingHierarchyValue {
                value: v.to_string(),
                column: t.header[i].clone(),
            });
        }
    }
    for node in lattice(&active.iter().map(|(_, h)| h.levels()).collect::<Vec<_>>()) {
        let generalized: Vec<Vec<&str>> = t
            .rows
            .iter()
            .map(|r| {
                active
                    .iter()
                    .zip(&node)
                    .map(|(&(i, hier), &lvl)| hier.generalize(&r[i], lvl).expect("checked above"))
                    .collect()
            })
            .collect();
        let classes = class_sizes(generalized.iter().cloned());
        let undersized: usize = classes.values().filter(|s| **s < k).sum();
        if undersized > suppression_limit {
            continue;
        }
        let mut table = Table::new(t.header.clone());
        table.delimiter = t.delimiter;
        for (row, key) in t.rows.iter().zip(&generalized) {
            if classes[key] < k {
                continue;
            }
            let mut row = row.clone();
            for (&(i, _), value) in active.iter().zip(key) {
                row[i] = value.to_string();
            }
            table.push_row(row);
        }
        return Ok(KAnonResult {
            table,
            levels: active
                .iter()
                .zip(&node)
                .map(|(&(i, _), &lvl)| (t.header[i].clone(), lvl))
                .collect(),
            suppressed: undersized,
            class_sizes: classes.values().copied().filter(|s| *s >= k).collect(),
        });
    }
    Err(AnonError::Unsatisfiable { k, limit: suppression_limit })
}

/// Every level vector, ordered by level sum and then lexicographically.
fn lattice(maxima: &[usize]) -> Vec<Vec<usize>> {
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new()];
    for &m in maxima {
        nodes = nodes
            .into_iter()
            .flat_map(|prefix| {
                (0..=m).map(move |l| {
                    let mut n = prefix.clone();
                    n.push(l);
                    n
                })
            })
            .collect();
    }
    nodes.sort_by(|a, b| a.iter().sum::<usize>().cmp(&b.iter().sum::<usize>()).then_with(|| a.cmp(b)));
    nodes
}

/// Salted code book for authorized re-identification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStore {
    pub salt: String,
    pub code_length: usize,
    /// code -> original value
    pub codes: BTreeMap<String, String>,
}

impl KeyStore {
    pub fn new(salt: impl Into<String>) -> Self {
        KeyStore {
            salt: salt.into(),
            code_length: 12,
            codes: BTreeMap::new(),
        }
    }

    /// A store with a fresh random salt.
    pub fn generate() -> Self {
        let salt: [u8; 16] = rand::rng().random();
        KeyStore::new(hex::encode(salt))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnonError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn load_or_generate(path: impl AsRef<Path>) -> Result<Self, AnonError> {
        if path.as_ref().exists() {
            Self::load(path)
        } else {
            Ok(Self::generate())
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnonError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Stable code for a value, recorded in the store.
    pub fn code_for(&mut self, value: &str) -> Result<String, AnonError> {
        let code = hmac_hex(self.salt.as_bytes(), value, self.code_length);
        match self.codes.get(&code) {
            Some(orig) if orig != value => Err(AnonError::KeyStoreCollision { code }),
            Some(_) => Ok(code),
            None => {
                self.codes.insert(code.clone(), value.to_string());
                Ok(code)
            }
        }
    }

    pub fn decode(&self, code: &str) -> Option<&str> {
        self.codes.get(code).map(String::as_str)
    }
}

/// Replaces identifier cells by key-store codes.
pub fn assign_codes(t: &Table, id_cols: &[String], store: &mut KeyStore) -> Result<Table, AnonError> {
    let idx = indices(t, id_cols)?;
    let mut out = t.clone();
    for row in &mut out.rows {
        for &i in &idx {
            row[i] = store.code_for(&row[i])?;
        }
    }
    Ok(out)
}

/// Rejects a key store that would overwrite (or be overwritten by) the output.
pub fn check_key_store_path(store: &Path, output: &Path) -> Result<(), AnonError> {
    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    if store == output || canon(store) == canon(output) {
        return Err(AnonError::KeyStorePathConflict(store.to_path_buf()));
    }
    Ok(())
}

/// One step of an anonymization recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "technique", rename_all = "snake_case")]
pub enum Step {
    Hash {
        columns: Vec<String>,
        key: String,
        #[serde(default = "default_hash_length")]
        truncation: usize,
        #[serde(default)]
        joint: bool,
    },
    Suppress {
        columns: Vec<String>,
        #[serde(default)]
        numeric: Vec<String>,
    },
    Mask {
        columns: Vec<String>,
        #[serde(default = "default_mask_char")]
        mask_char: char,
        #[serde(default = "default_mask_mode")]
        mode: MaskMode,
    },
    Swap {
        columns: Vec<String>,
        seed: u64,
    },
    Noise {
        columns: Vec<String>,
        delta: f64,
        seed: u64,
        #[serde(default = "default_domain")]
        domain: (f64, f64),
    },
    KAnonymity {
        quasi_identifiers: Vec<String>,
        k: usize,
        /// Column name -> hierarchy file path.
        hierarchies: BTreeMap<String, PathBuf>,
        #[serde(default)]
        suppression_limit: usize,
        #[serde(default)]
        strict: bool,
    },
    Code {
        columns: Vec<String>,
        key_store: PathBuf,
    },
}

fn default_hash_length() -> usize {
    DEFAULT_HASH_LENGTH
}

fn default_mask_char() -> char {
    '$'
}

fn default_mask_mode() -> MaskMode {
    MaskMode::LengthPreserving
}

fn default_domain() -> (f64, f64) {
    DEFAULT_NOISE_DOMAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub steps: Vec<Step>,
}

impl Recipe {
    pub fn from_json(json: &str) -> Result<Self, AnonError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnonError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecipeOutcome {
    pub table: Table,
    pub warnings: Vec<String>,
    pub k_anonymity: Option<KSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSummary {
    pub levels: Vec<(String, usize)>,
    pub suppressed: usize,
    pub class_sizes: Vec<usize>,
}

/// Applies the steps in order. Hierarchies and key stores are read from
/// disk; key stores are written back after coding. `output` guards the key
/// store against pointing at the output file.
pub fn apply_recipe(t: &Table, recipe: &Recipe, output: Option<&Path>) -> Result<RecipeOutcome, AnonError> {
    run_recipe(t, recipe, output, &|p: &Path| Hierarchy::load(p), true)
}

/// Like [`apply_recipe`] but for untrusted callers: hierarchy paths name
/// entries of `uploaded` instead of files, and code steps are refused since
/// key stores live on the host.
pub fn apply_recipe_uploaded(t: &Table, recipe: &Recipe, uploaded: &BTreeMap<String, Hierarchy>) -> Result<RecipeOutcome, AnonError> {
    let lookup = |p: &Path| {
        let name = p.to_string_lossy();
        uploaded
            .get(name.as_ref())
            .cloned()
            .ok_or_else(|| AnonError::InvalidParameter(format!("no uploaded hierarchy named `{name}`")))
    };
    run_recipe(t, recipe, None, &lookup, false)
}

type HierarchyLoader<'a> = &'a dyn Fn(&Path) -> Result<Hierarchy, AnonError>;

fn run_recipe(
    t: &Table,
    recipe: &Recipe,
    output: Option<&Path>,
    load: HierarchyLoader<'_>,
    allow_codes: bool,
) -> Result<RecipeOutcome, AnonError> {
    let mut table = t.clone();
    let mut warnings = Vec::new();
    let mut k_anonymity = None;
    for step in &recipe.steps {
        table = match step {
            Step::Hash {
                columns,
                key,
                truncation,
                joint,
            } => apply_hashing(&table, columns, key, *truncation, *joint)?,
            Step::Suppress { columns, numeric } => apply_suppression(&table, columns, numeric)?,
            Step::Mask { columns, mask_char, mode } => apply_masking(&table, columns, *mask_char, *mode)?,
            Step::Swap { columns, seed } => {
                let (out, warning) = apply_swapping(&table, columns, *seed)?;
                warnings.extend(warning);
                out
            }
            Step::Noise {
                columns,
                delta,
                seed,
                domain,
            } => apply_noising(&table, columns, *delta, *seed, *domain)?,
            Step::KAnonymity {
                quasi_identifiers,
                k,
                hierarchies,
                suppression_limit,
                strict,
            } => {
                let loaded = hierarchies
                    .iter()
                    .map(|(c, p)| Ok((c.clone(), load(p)?)))
                    .collect::<Result<BTreeMap<_, _>, AnonError>>()?;
                let r = k_anonymize(&table, quasi_identifiers, &loaded, *k, *suppression_limit, *strict)?;
                k_anonymity = Some(KSummary {
                    levels: r.levels,
                    suppressed: r.suppressed,
                    class_sizes: r.class_sizes,
                });
                r.table
            }
            Step::Code { columns, key_store } => {
                if !allow_codes {
                    return Err(AnonError::InvalidParameter("code steps need a local key store".into()));
                }
                if let Some(out) = output {
                    check_key_store_path(key_store, out)?;
                }
                let mut store = KeyStore::load_or_generate(key_store)?;
                let out = assign_codes(&table, columns, &mut store)?;
                store.save(key_store)?;
                out
            }
        };
    }
    Ok(RecipeOutcome {
        table,
        warnings,
        k_anonymity,
    })
}

/// Multiset of the values in a column, for permutation checks.
pub fn column_multiset(t: &Table, col: usize) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for v in t.column(col) {
        *m.entry(v).or_insert(0) += 1;
    }
    m
}
