//! Small descriptive statistics shared by the indicator and clustering code.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Product-moment correlation with an optional Fisher-z 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub n: usize,
    pub ci95: Option<(f64, f64)>,
}

const Z_95: f64 = 1.96;

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::DegenerateInput(format!(
            "length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::DegenerateInput(format!("need at least 3 pairs, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::DegenerateInput("non-finite value".into()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("constant series".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let ci95 = (n >= 4).then(|| fisher_interval(r, n));
    Ok(Correlation { r, n, ci95 })
}

fn fisher_interval(r: f64, n: usize) -> (f64, f64) {
    if r.abs() >= 1.0 {
        return (r, r);
    }
    let z = r.atanh();
    let half = Z_95 / ((n - 3) as f64).sqrt();
    ((z - half).tanh(), (z + half).tanh())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Five-number style summary using Tukey's hinges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Values outside `[q1 - 1.5 IQR, q3 + 1.5 IQR]`, ascending.
    pub outliers: Vec<f64>,
}

/// Quartiles as Tukey's hinges: the medians of the lower and upper halves,
/// where the middle value of an odd-sized sample belongs to both halves.
pub fn tukey_box(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let half = n.div_ceil(2);
    let q1 = median_sorted(&v[..half]);
    let q3 = median_sorted(&v[n - half..]);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Some(BoxStats {
        n,
        median: median_sorted(&v),
        q1,
        q3,
        outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
    })
}
