//! Descriptive statistics, the F distribution and one-way ANOVA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{0}` has fewer than 2 observations")]
    SmallGroup(String),
    #[error("observations must be finite")]
    NonFinite,
    #[error("degenerate data: within-group variance is zero")]
    DegenerateData,
    #[error("argument out of domain: {0}")]
    Domain(String),
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_std(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(values).unwrap();
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_MAX_ITER: usize = 300;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta, evaluated with the modified
/// Lentz method.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Uses the continued fraction directly when `x < (a + 1) / (a + b + 2)` and the
/// symmetry `I_x(a, b) = 1 - I_{1-x}(b, a)` otherwise.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(StatsError::Domain(format!("shape parameters a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("x={x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// CDF of the F distribution.
pub fn f_cdf(f: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    if f.is_nan() || f < 0.0 {
        return Err(StatsError::Domain(format!("F={f}")));
    }
    if f.is_infinite() {
        return Ok(1.0);
    }
    regularized_incomplete_beta(df1 * f / (df1 * f + df2), df1 / 2.0, df2 / 2.0)
}

/// Upper tail `P(X > f)` of the F distribution, evaluated directly to keep
/// precision for small p-values.
pub fn f_survival(f: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    if f.is_nan() || f < 0.0 {
        return Err(StatsError::Domain(format!("F={f}")));
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    regularized_incomplete_beta(df2 / (df2 + df1 * f), df2 / 2.0, df1 / 2.0)
}

/// Observations of one factor, grouped by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGroups {
    pub factor_name: String,
    pub groups: BTreeMap<String, Vec<f64>>,
}

impl FactorGroups {
    pub fn new(factor_name: &str) -> Self {
        Self {
            factor_name: factor_name.into(),
            groups: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, level: impl Into<String>, value: f64) {
        self.groups.entry(level.into()).or_default().push(value);
    }

    pub fn with_group(mut self, level: &str, values: &[f64]) -> Self {
        self.groups.insert(level.into(), values.to_vec());
        self
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.groups.len() < 2 {
            return Err(StatsError::TooFewGroups(self.groups.len()));
        }
        for (level, values) in &self.groups {
            if values.len() < 2 {
                return Err(StatsError::SmallGroup(level.clone()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factor_name: String,
    pub f_statistic: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub group_means: BTreeMap<String, f64>,
    pub grand_mean: f64,
}

/// One-way ANOVA; groups may have different sizes.
pub fn one_way_anova(data: &FactorGroups) -> Result<AnovaResult, StatsError> {
    data.validate()?;
    let n_total: usize = data.groups.values().map(Vec::len).sum();
    let k = data.groups.len();
    let grand_mean = data.groups.values().flatten().sum::<f64>() / n_total as f64;

    let mut group_means = BTreeMap::new();
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (level, values) in &data.groups {
        let m = mean(values).unwrap();
        ss_between += values.len() as f64 * (m - grand_mean).powi(2);
        ss_within += values.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        group_means.insert(level.clone(), m);
    }
    let ss_total: f64 = data
        .groups
        .values()
        .flatten()
        .map(|v| (v - grand_mean).powi(2))
        .sum();
    if ss_within <= 1e-14 * ss_total || ss_within == 0.0 {
        return Err(StatsError::DegenerateData);
    }

    let df_between = k - 1;
    let df_within = n_total - k;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let f_statistic = ms_between / ms_within;
    let p_value = f_survival(f_statistic, df_between as f64, df_within as f64)?;
    Ok(AnovaResult {
        factor_name: data.factor_name.clone(),
        f_statistic,
        p_value,
        df_between,
        df_within,
        ss_between,
        ss_within,
        group_means,
        grand_mean,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 2..8), 2..6)
    }

    fn factor(gs: &[Vec<f64>]) -> FactorGroups {
        let mut f = FactorGroups::new("x");
        for (i, g) in gs.iter().enumerate() {
            f.groups.insert(format!("{i}"), g.clone());
        }
        f
    }

    proptest! {
        #[test]
        fn anova_shift_and_scale_invariant(gs in groups(), shift in -100.0f64..100.0, scale in 0.1f64..10.0, neg in any::<bool>()) {
            let base = match one_way_anova(&factor(&gs)) { Ok(r) => r, Err(_) => return Ok(()) };
            let shifted: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|v| v + shift).collect()).collect();
            let s = if neg { -scale } else { scale };
            let scaled: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|v| v * s).collect()).collect();
            let fs = one_way_anova(&factor(&shifted)).unwrap().f_statistic;
            let fm = one_way_anova(&factor(&scaled)).unwrap().f_statistic;
            let tol = 1e-9 * base.f_statistic.max(1.0);
            prop_assert!((fs - base.f_statistic).abs() < tol, "{} vs {}", fs, base.f_statistic);
            prop_assert!((fm - base.f_statistic).abs() < tol, "{} vs {}", fm, base.f_statistic);
        }

        #[test]
        fn p_value_monotone_in_f(f1 in 0.0f64..50.0, f2 in 0.0f64..50.0, d1 in 1u32..20, d2 in 1u32..200) {
            let (lo, hi) = (f1.min(f2), f1.max(f2));
            let p_lo = f_survival(lo, d1 as f64, d2 as f64).unwrap();
            let p_hi = f_survival(hi, d1 as f64, d2 as f64).unwrap();
            prop_assert!(p_hi <= p_lo + 1e-15);
        }

        #[test]
        fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.05f64..60.0, b in 0.05f64..60.0) {
            let lhs = regularized_incomplete_beta(x, a, b).unwrap();
            let rhs = regularized_incomplete_beta(1.0 - x, b, a).unwrap();
            prop_assert!((lhs + rhs - 1.0).abs() < 1e-10);
        }
    }
}
