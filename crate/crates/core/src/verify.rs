//! Goodness-of-fit and convergence diagnostics over replicated samples.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::VerifyError;
use crate::special::normal_cdf;
use crate::walk::PathFunctionals;

pub const DEFAULT_LEVEL: f64 = 0.01;
pub const KS_MIN_SAMPLES: usize = 100;

/// Asymptotic one-sample KS critical value, `sqrt(-ln(level/2)/2) / sqrt(n)`
/// (1.6276 / sqrt(n) at level 0.01).
pub fn ks_critical(n: usize, level: f64) -> f64 {
    libm::sqrt(-0.5 * libm::log(0.5 * level)) / libm::sqrt(n as f64)
}

/// `sup_x |F_n(x) - F(x)|` evaluated at the order statistics.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, VerifyError> {
    if samples.is_empty() {
        return Err(VerifyError::TooFewSamples { needed: 1, got: 0 });
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(VerifyError::NonFinite { replication: i, column: 0 });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n;
        let lo = i as f64 / n;
        d = d.max((hi - f).abs()).max((lo - f).abs());
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    pub critical: f64,
    pub level: f64,
    pub pass: bool,
}

/// One-sample KS test; passes iff `statistic < critical`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, level: f64) -> Result<KsReport, VerifyError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(VerifyError::InvalidArgument("significance level must lie in (0, 1)"));
    }
    if samples.len() < KS_MIN_SAMPLES {
        return Err(VerifyError::TooFewSamples { needed: KS_MIN_SAMPLES, got: samples.len() });
    }
    let statistic = ks_statistic(samples, cdf)?;
    let critical = ks_critical(samples.len(), level);
    Ok(KsReport { n: samples.len(), statistic, critical, level, pass: statistic < critical })
}

/// Empirical CDF at the sorted sample points: `(x_(i), i / n)`.
pub fn ecdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Replications in rows, one column per grid point. Row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(cols: usize) -> Self {
        SampleMatrix { cols, data: Vec::new() }
    }

    pub fn with_capacity(cols: usize, rows: usize) -> Self {
        SampleMatrix { cols, data: Vec::with_capacity(cols * rows) }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), VerifyError> {
        if row.len() != self.cols {
            return Err(VerifyError::DimensionMismatch { expected: self.cols, got: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: &[R]) -> Result<Self, VerifyError> {
        let mut m = SampleMatrix::with_capacity(cols, rows.len());
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    /// First non-finite entry, as `(replication, column)`.
    pub fn check_finite(&self) -> Result<(), VerifyError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(k) => Err(VerifyError::NonFinite { replication: k / self.cols, column: k % self.cols }),
            None => Ok(()),
        }
    }

    /// Sample covariance matrix (divisor `n - 1`) and the delta-method
    /// standard error of each entry, `sqrt(Var[d_i d_j] / n)`.
    pub fn covariance_with_se(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.rows();
        let k = self.cols;
        let means: Vec<f64> = (0..k).map(|j| mean(&self.column(j))).collect();
        let mut cov = vec![vec![0.0; k]; k];
        let mut se = vec![vec![0.0; k]; k];
        let nf = n as f64;
        for a in 0..k {
            for b in a..k {
                let prods: Vec<f64> = (0..n).map(|i| (self.get(i, a) - means[a]) * (self.get(i, b) - means[b])).collect();
                let s = prods.iter().sum::<f64>();
                let c = s / (nf - 1.0);
                let m = s / nf;
                let v = prods.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (nf - 1.0);
                let e = libm::sqrt(v / nf);
                cov[a][b] = c;
                cov[b][a] = c;
                se[a][b] = e;
                se[b][a] = e;
            }
        }
        (cov, se)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum LlnMode {
    Weak,
    StrongProxy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LlnSettings {
    /// Tolerated relative deviation from the target.
    pub delta_fraction: f64,
    /// Largest fraction of replications allowed to deviate.
    pub max_fail_fraction: f64,
    pub min_replications: usize,
}

impl Default for LlnSettings {
    fn default() -> Self {
        LlnSettings { delta_fraction: 0.05, max_fail_fraction: 0.02, min_replications: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LlnReport {
    pub t_grid: Vec<f64>,
    pub ratio_mean: Vec<f64>,
    /// Per level: median, 90% and 99% quantiles of `|ratio - target|`.
    pub ratio_dev: Vec<[f64; 3]>,
    pub target: f64,
    pub mode: LlnMode,
    pub delta: f64,
    /// Fraction of replications outside the tolerance band.
    pub fail_fraction: f64,
    pub max_fail_fraction: f64,
    pub pass: bool,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = libm::floor(q * (sorted.len() - 1) as f64) as usize;
    sorted[idx]
}

/// LLN check of `functional(t) / t` against `target`.
///
/// `values` holds one replication per row and one column per level of
/// `t_grid`. Weak mode looks at the top level only. The strong proxy takes,
/// per replication, the largest deviation over the top decade
/// `[t_max / 10, t_max]` of the grid.
pub fn lln_diagnostic(
    values: &SampleMatrix,
    t_grid: &[f64],
    target: f64,
    mode: LlnMode,
    settings: &LlnSettings,
) -> Result<LlnReport, VerifyError> {
    if values.cols() != t_grid.len() {
        return Err(VerifyError::DimensionMismatch { expected: t_grid.len(), got: values.cols() });
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[0] < w[1])) || !(t_grid[0] > 0.0) {
        return Err(VerifyError::InvalidArgument("t grid must be positive and strictly increasing"));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(VerifyError::InvalidArgument("target must be finite and positive"));
    }
    let n = values.rows();
    if n < settings.min_replications.max(1) {
        return Err(VerifyError::TooFewSamples { needed: settings.min_replications.max(1), got: n });
    }
    values.check_finite()?;
    let t_max = t_grid[t_grid.len() - 1];
    let ratio = t_max / t_grid[0];
    if ratio < 100.0 * (1.0 - 1e-12) {
        return Err(VerifyError::GridTooShort { ratio });
    }
    let delta = settings.delta_fraction * target;

    let mut ratio_mean = Vec::with_capacity(t_grid.len());
    let mut ratio_dev = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let r: Vec<f64> = values.column(j).iter().map(|v| v / t).collect();
        ratio_mean.push(mean(&r));
        let mut dev: Vec<f64> = r.iter().map(|x| (x - target).abs()).collect();
        dev.sort_by(f64::total_cmp);
        ratio_dev.push([quantile_sorted(&dev, 0.5), quantile_sorted(&dev, 0.9), quantile_sorted(&dev, 0.99)]);
    }

    let cols: Vec<usize> = match mode {
        LlnMode::Weak => vec![t_grid.len() - 1],
        LlnMode::StrongProxy => {
            let lo = t_max / 10.0 * (1.0 - 1e-12);
            (0..t_grid.len()).filter(|&j| t_grid[j] >= lo).collect()
        }
    };
    let failures = (0..n)
        .filter(|&i| cols.iter().any(|&j| (values.get(i, j) / t_grid[j] - target).abs() > delta))
        .count();
    let fail_fraction = failures as f64 / n as f64;
    let pass = match mode {
        LlnMode::Weak => fail_fraction < settings.max_fail_fraction,
        LlnMode::StrongProxy => fail_fraction <= settings.max_fail_fraction,
    };
    Ok(LlnReport {
        t_grid: t_grid.to_vec(),
        ratio_mean,
        ratio_dev,
        target,
        mode,
        delta,
        fail_fraction,
        max_fail_fraction: settings.max_fail_fraction,
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FddSettings {
    pub level: f64,
    /// Covariance tolerance in standard errors.
    pub cov_se_multiplier: f64,
    pub min_replications: usize,
}

impl Default for FddSettings {
    fn default() -> Self {
        FddSettings { level: DEFAULT_LEVEL, cov_se_multiplier: 5.0, min_replications: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FddReport {
    pub u_grid: Vec<f64>,
    pub marginal_ks: Vec<KsReport>,
    pub cov_matrix: Vec<Vec<f64>>,
    pub cov_target: Vec<Vec<f64>>,
    pub cov_se: Vec<Vec<f64>>,
    /// Largest `|cov - target| / se` over all entries.
    pub cov_max_z: f64,
    pub cov_pass: bool,
    pub pass: bool,
}

/// Checks centred, scaled functionals at `u_grid` against Brownian motion:
/// each column against `N(0, u_i)` and the covariance against
/// `min(u_i, u_j)`.
pub fn fdd_gaussian_check(values: &SampleMatrix, u_grid: &[f64], settings: &FddSettings) -> Result<FddReport, VerifyError> {
    if values.cols() != u_grid.len() {
        return Err(VerifyError::DimensionMismatch { expected: u_grid.len(), got: values.cols() });
    }
    if u_grid.is_empty() || u_grid.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
        return Err(VerifyError::InvalidArgument("u grid must be finite and positive"));
    }
    let needed = settings.min_replications.max(KS_MIN_SAMPLES);
    if values.rows() < needed {
        return Err(VerifyError::TooFewSamples { needed, got: values.rows() });
    }
    values.check_finite()?;
    let mut marginal_ks = Vec::with_capacity(u_grid.len());
    for (j, &u) in u_grid.iter().enumerate() {
        let sd = libm::sqrt(u);
        marginal_ks.push(ks_one_sample(&values.column(j), |x| normal_cdf(x / sd), settings.level)?);
    }
    let (cov_matrix, cov_se) = values.covariance_with_se();
    let k = u_grid.len();
    let cov_target: Vec<Vec<f64>> = (0..k).map(|a| (0..k).map(|b| u_grid[a].min(u_grid[b])).collect()).collect();
    let mut cov_max_z: f64 = 0.0;
    let mut cov_pass = true;
    for a in 0..k {
        for b in 0..k {
            let diff = (cov_matrix[a][b] - cov_target[a][b]).abs();
            let tol = settings.cov_se_multiplier * cov_se[a][b];
            if !(diff <= tol) {
                cov_pass = false;
            }
            let z = if cov_se[a][b] > 0.0 { diff / cov_se[a][b] } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
            cov_max_z = cov_max_z.max(z);
        }
    }
    let pass = cov_pass && marginal_ks.iter().all(|r| r.pass);
    Ok(FddReport {
        u_grid: u_grid.to_vec(),
        marginal_ks,
        cov_matrix,
        cov_target,
        cov_se,
        cov_max_z,
        cov_pass,
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SandwichViolation {
    pub replication: usize,
    pub level_index: usize,
    pub tau: u64,
    pub n_visits: u64,
    pub rho: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SandwichAudit {
    pub replications: usize,
    pub violations: Vec<SandwichViolation>,
}

impl SandwichAudit {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `tau - 1 <= N <= rho` at every level of every record; the
/// replication index of a violation is its position in `records`.
pub fn sandwich_audit(records: &[PathFunctionals]) -> SandwichAudit {
    let mut violations = Vec::new();
    for (i, r) in records.iter().enumerate() {
        for (j, ((&tau, &n), &rho)) in r.tau.iter().zip(&r.n_visits).zip(&r.rho).enumerate() {
            if !(tau.saturating_sub(1) <= n && n <= rho) {
                violations.push(SandwichViolation { replication: i, level_index: j, tau, n_visits: n, rho });
            }
        }
    }
    SandwichAudit { replications: records.len(), violations }
}
