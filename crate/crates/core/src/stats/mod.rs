//! Hypothesis tests, correlation, and the relative-score statistics used by
//! the audit reports.

mod distributions;
mod fairness;

use serde::{Deserialize, Serialize};

pub use distributions::{ln_gamma, regularized_incomplete_beta, student_t_cdf};
pub use fairness::{
    detdat_delta, fairness_gap, relative_to_balanced, relative_to_sg_average, CellKey, DeltaRecord, GapRecord,
    ReplicateTable, ScoreTag,
};

use crate::error::{Error, Result};
use crate::numeric::mean_and_sample_std;

/// Significance level used for figure-style annotations.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Alternative: statistic below the null value.
    Lower,
    /// Alternative: statistic above the null value.
    Upper,
    TwoSided,
}

impl Side {
    pub fn p_value(self, t: f64, df: f64) -> f64 {
        let p = match self {
            Side::Lower => student_t_cdf(t, df),
            Side::Upper => student_t_cdf(-t, df),
            Side::TwoSided => 2.0 * student_t_cdf(-t.abs(), df),
        };
        p.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: f64,
    pub side: Side,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
}

impl StatResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::DataQuality(format!("{what} contains non-finite values")))
    }
}

fn is_degenerate(sd: f64, scale: f64) -> bool {
    sd == 0.0 || sd <= 1e-13 * scale.abs()
}

/// One-sample t-test of `mean(values) = mu0`.
pub fn t_one_sample(values: &[f64], mu0: f64, side: Side) -> Result<StatResult> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!("one-sample t-test needs n >= 2, got {}", values.len())));
    }
    check_finite(values, "sample")?;
    let (m, sd) = mean_and_sample_std(values);
    if is_degenerate(sd, m) {
        return Err(Error::Degenerate("zero sample variance in one-sample t-test".into()));
    }
    let n = values.len();
    let t = (m - mu0) / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(StatResult { statistic: t, p_value: side.p_value(t, df), df, side, n, n2: None })
}

/// Welch two-sample t-test with the chosen alternative.
pub fn welch_t(a: &[f64], b: &[f64], side: Side) -> Result<StatResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "two-sample t-test needs n >= 2 per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a, "first sample")?;
    check_finite(b, "second sample")?;
    let (ma, sa) = mean_and_sample_std(a);
    let (mb, sb) = mean_and_sample_std(b);
    if is_degenerate(sa, ma) || is_degenerate(sb, mb) {
        return Err(Error::Degenerate("zero sample variance in two-sample t-test".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sa * sa / na;
    let vb = sb * sb / nb;
    let t = (ma - mb) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(StatResult { statistic: t, p_value: side.p_value(t, df), df, side, n: a.len(), n2: Some(b.len()) })
}

/// Two-sided Welch t-test.
pub fn t_two_sample(a: &[f64], b: &[f64]) -> Result<StatResult> {
    welch_t(a, b, Side::TwoSided)
}

/// Pearson correlation with a two-sided t-based p-value.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<StatResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("pearson_r: lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("pearson_r needs n >= 3, got {}", x.len())));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (mx, sx) = mean_and_sample_std(x);
    let (my, sy) = mean_and_sample_std(y);
    if is_degenerate(sx, mx) || is_degenerate(sy, my) {
        return Err(Error::Degenerate("constant input to pearson_r".into()));
    }
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        Side::TwoSided.p_value(t, df)
    };
    Ok(StatResult { statistic: r, p_value: p, df, side: Side::TwoSided, n, n2: None })
}
