//! Monte Carlo estimators and analytic-versus-empirical verification.
//!
//! Ensembles are embarrassingly parallel: path `i` draws from stream `i` of
//! the top-level seed, results are stored by path index, and every reduction
//! is a deterministic pairwise sum, so reports are byte-identical across
//! thread counts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{limiting_laplace, SolverConfig};
use crate::model::ModelParams;
use crate::rng::{stream_rng, JITTER_STREAM_BASE};
use crate::simulate::{simulate_cluster_stream, simulate_thinning_stream, IntensityPath};
use crate::stationarity;

/// Which path generator an ensemble uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Thinning,
    /// Branching construction truncated at the given generation count.
    Cluster { generations: usize },
}

/// Sum with pairwise splitting: error grows like `log n` rather than `n`,
/// and the result does not depend on reduction order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Draw `(lambda1_T, lambda2_T)` at `T = horizon` across independent paths.
pub fn sample_intensity_ensemble(
    params: &ModelParams,
    algorithm: Algorithm,
    n_paths: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    params.check()?;
    (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let history = match algorithm {
                Algorithm::Thinning => {
                    simulate_thinning_stream(params, horizon, seed, path as u64)?
                }
                Algorithm::Cluster { generations } => {
                    simulate_cluster_stream(params, horizon, generations, seed, path as u64)?
                }
            };
            IntensityPath::new(&history, params).advance_to(horizon)
        })
        .collect()
}

/// `(estimate, stderr)` of the mean of `values` with batch-mean errors.
fn mean_with_stderr(values: &[f64], n_batches: usize) -> (f64, f64) {
    let est = pairwise_sum(values) / values.len() as f64;
    let batch_means = batched(values, n_batches, |chunk| {
        pairwise_sum(chunk) / chunk.len() as f64
    });
    (est, stderr_of(&batch_means))
}

/// Apply a statistic per batch and return the batch values.
fn batched(values: &[f64], n_batches: usize, stat: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let size = values.len() / n_batches;
    (0..n_batches).map(|b| stat(&values[b * size..(b + 1) * size])).collect()
}

fn stderr_of(batch_values: &[f64]) -> f64 {
    let b = batch_values.len() as f64;
    let mean = pairwise_sum(batch_values) / b;
    let dev: Vec<f64> = batch_values.iter().map(|x| (x - mean) * (x - mean)).collect();
    (pairwise_sum(&dev) / (b - 1.0) / b).sqrt()
}

fn batch_count(n_paths: usize) -> usize {
    if n_paths >= 1000 {
        100
    } else {
        (n_paths / 10).max(2)
    }
}

fn sample_variance(chunk: &[f64]) -> f64 {
    let n = chunk.len() as f64;
    let mean = pairwise_sum(chunk) / n;
    let dev: Vec<f64> = chunk.iter().map(|x| (x - mean) * (x - mean)).collect();
    pairwise_sum(&dev) / (n - 1.0)
}

/// Monte Carlo estimates of the stationary intensity moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    /// Per-component mean as `(estimate, stderr)`.
    pub mean: [(f64, f64); 2],
    pub variance: [(f64, f64); 2],
    pub cross_moment: (f64, f64),
    /// `None` when a component is deterministic in every batch.
    pub correlation: Option<(f64, f64)>,
    pub n_paths: usize,
    pub t_sample: f64,
    /// Set when the parameters violate the stability condition; the estimate
    /// is still produced so divergence can be observed.
    pub nonstationary: bool,
}

/// Estimate stationary moments by sampling the intensity pair at
/// `T = horizon` over independent burned-in paths.
pub fn estimate_moments(
    params: &ModelParams,
    n_paths: usize,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> Result<MomentEstimate> {
    if n_paths < 2 {
        return Err(Error::Domain(format!("need at least 2 paths, got {n_paths}")));
    }
    if !(horizon > burn_in) {
        return Err(Error::Domain(format!(
            "horizon {horizon} must exceed the burn-in {burn_in}"
        )));
    }
    let samples = sample_intensity_ensemble(params, Algorithm::Thinning, n_paths, horizon, seed)?;
    let (ok, _) = stationarity::check_c2(params);
    Ok(moment_estimate_from_samples(&samples, horizon, !ok))
}

fn moment_estimate_from_samples(
    samples: &[(f64, f64)],
    t_sample: f64,
    nonstationary: bool,
) -> MomentEstimate {
    let n = samples.len();
    let b = batch_count(n);
    let l1: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let l2: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let prod: Vec<f64> = samples.iter().map(|s| s.0 * s.1).collect();

    let var_batches_1 = batched(&l1, b, sample_variance);
    let var_batches_2 = batched(&l2, b, sample_variance);
    let var1 = (pairwise_sum(&var_batches_1) / b as f64, stderr_of(&var_batches_1));
    let var2 = (pairwise_sum(&var_batches_2) / b as f64, stderr_of(&var_batches_2));

    let size = n / b;
    let corr_batches: Option<Vec<f64>> = (0..b)
        .map(|i| {
            let a = &l1[i * size..(i + 1) * size];
            let c = &l2[i * size..(i + 1) * size];
            let (va, vc) = (sample_variance(a), sample_variance(c));
            if va <= 0.0 || vc <= 0.0 {
                return None;
            }
            let ma = pairwise_sum(a) / a.len() as f64;
            let mc = pairwise_sum(c) / c.len() as f64;
            let cov: Vec<f64> =
                a.iter().zip(c).map(|(x, y)| (x - ma) * (y - mc)).collect();
            Some(pairwise_sum(&cov) / (a.len() as f64 - 1.0) / (va * vc).sqrt())
        })
        .collect();

    MomentEstimate {
        mean: [mean_with_stderr(&l1, b), mean_with_stderr(&l2, b)],
        variance: [var1, var2],
        cross_moment: mean_with_stderr(&prod, b),
        correlation: corr_batches
            .map(|v| (pairwise_sum(&v) / b as f64, stderr_of(&v))),
        n_paths: n,
        t_sample,
        nonstationary,
    }
}

/// Sample mean and stderr of `exp(-v1 lambda1_T - v2 lambda2_T)`.
pub fn empirical_laplace(
    params: &ModelParams,
    v1: f64,
    v2: f64,
    n_paths: usize,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_paths < 2 {
        return Err(Error::Domain(format!("need at least 2 paths, got {n_paths}")));
    }
    if !(horizon > burn_in) {
        return Err(Error::Domain(format!(
            "horizon {horizon} must exceed the burn-in {burn_in}"
        )));
    }
    let samples = sample_intensity_ensemble(params, Algorithm::Thinning, n_paths, horizon, seed)?;
    let values: Vec<f64> =
        samples.iter().map(|&(a, b)| (-v1 * a - v2 * b).exp()).collect();
    Ok(mean_with_stderr(&values, batch_count(n_paths)))
}

/// Burn-in heuristic: the excitation contracts geometrically under the
/// stability condition, so `20 / (1 - radius)` relaxation times of the
/// slower component forgets the initial state to well under Monte Carlo
/// resolution. Infinite (no finite burn-in exists) when the condition fails.
pub fn default_burn_in(params: &ModelParams) -> f64 {
    let (ok, radius) = stationarity::check_c2(params);
    if !ok {
        return f64::INFINITY;
    }
    let slowest = (1.0 / params.delta1).max(1.0 / params.delta2);
    20.0 / (1.0 - radius) * slowest
}

/// One analytic-versus-empirical comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rows: Vec<VerificationRow>,
    pub overall_pass: bool,
    pub spectral_radius: f64,
    pub nonstationary: bool,
    pub n_paths: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub z_band: f64,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    /// Plain-text rendering, one line per row.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        if self.nonstationary {
            out.push_str(&format!(
                "NON-STATIONARY: spectral radius {} >= 1, no comparisons were run\n",
                self.spectral_radius
            ));
            return out;
        }
        out.push_str(&format!(
            "{:<22} {:>13} {:>13} {:>11} {:>8}  result\n",
            "quantity", "analytic", "empirical", "stderr", "z"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:>13.6} {:>13.6} {:>11.2e} {:>8.2}  {}\n",
                r.name,
                r.analytic,
                r.empirical,
                r.stderr,
                r.z_score,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "overall: {} ({} paths, horizon {}, burn-in {})\n",
            if self.overall_pass { "pass" } else { "FAIL" },
            self.n_paths,
            self.horizon,
            self.burn_in
        ));
        out
    }
}

/// Settings for [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n_paths: usize,
    /// Sampling time; 0 means derive from the burn-in heuristic.
    pub horizon: f64,
    /// 0 means use [`default_burn_in`].
    pub burn_in: f64,
    /// Transform arguments compared against the limiting transform.
    pub v_panel: Vec<(f64, f64)>,
    pub z_band: f64,
    pub seed: u64,
    pub laplace_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_paths: 100_000,
            horizon: 0.0,
            burn_in: 0.0,
            v_panel: vec![(0.5, 0.5), (1.0, 1.0)],
            z_band: 4.0,
            seed: 1,
            laplace_tol: 1e-9,
        }
    }
}

fn row(name: &str, analytic: f64, empirical: f64, stderr: f64, z_band: f64) -> VerificationRow {
    let z_score = if stderr > 0.0 {
        (empirical - analytic) / stderr
    } else if empirical == analytic {
        0.0
    } else {
        f64::INFINITY
    };
    VerificationRow { name: name.into(), analytic, empirical, stderr, z_score, pass: z_score.abs() <= z_band }
}

/// Compare Monte Carlo moment and transform estimates against the closed
/// forms. With unstable parameters no comparison is possible and the report
/// only carries the divergence marker.
pub fn verify(params: &ModelParams, cfg: &VerifyConfig) -> Result<VerificationReport> {
    params.check()?;
    let (ok, radius) = stationarity::check_c2(params);
    let mut warnings = Vec::new();
    if !ok {
        return Ok(VerificationReport {
            rows: vec![],
            overall_pass: false,
            spectral_radius: radius,
            nonstationary: true,
            n_paths: 0,
            horizon: 0.0,
            burn_in: 0.0,
            z_band: cfg.z_band,
            warnings,
        });
    }
    let mut burn_in = if cfg.burn_in > 0.0 { cfg.burn_in } else { default_burn_in(params) };
    if radius > 0.8 {
        burn_in *= 2.0;
        warnings.push(format!(
            "spectral radius {radius} is close to 1; mixing may be slow, burn-in doubled to {burn_in}"
        ));
    }
    let horizon = if cfg.horizon > burn_in {
        cfg.horizon
    } else {
        if cfg.horizon > 0.0 {
            warnings.push(format!(
                "requested horizon {} does not exceed the burn-in {burn_in}; using {}",
                cfg.horizon,
                1.25 * burn_in
            ));
        }
        1.25 * burn_in
    };

    let report = stationarity::moment_report(params)?;
    let samples =
        sample_intensity_ensemble(params, Algorithm::Thinning, cfg.n_paths, horizon, cfg.seed)?;
    let est = moment_estimate_from_samples(&samples, horizon, false);

    let mut rows = vec![
        row("mean_1", report.mean.0, est.mean[0].0, est.mean[0].1, cfg.z_band),
        row("mean_2", report.mean.1, est.mean[1].0, est.mean[1].1, cfg.z_band),
        row("variance_1", report.variance.0, est.variance[0].0, est.variance[0].1, cfg.z_band),
        row("variance_2", report.variance.1, est.variance[1].0, est.variance[1].1, cfg.z_band),
        row("cross_moment", report.second.2, est.cross_moment.0, est.cross_moment.1, cfg.z_band),
    ];
    if let (Some(analytic), Some((emp, se))) = (report.correlation, est.correlation) {
        rows.push(row("correlation", analytic, emp, se, cfg.z_band));
    }

    let solver = SolverConfig::default();
    for &(v1, v2) in &cfg.v_panel {
        let analytic = limiting_laplace(params, v1, v2, cfg.laplace_tol, &solver)?;
        let values: Vec<f64> =
            samples.iter().map(|&(a, b)| (-v1 * a - v2 * b).exp()).collect();
        let (emp, se) = mean_with_stderr(&values, batch_count(cfg.n_paths));
        rows.push(row(&format!("laplace({v1},{v2})"), analytic.value, emp, se, cfg.z_band));
    }

    let overall_pass = rows.iter().all(|r| r.pass);
    Ok(VerificationReport {
        rows,
        overall_pass,
        spectral_radius: radius,
        nonstationary: false,
        n_paths: cfg.n_paths,
        horizon,
        burn_in,
        z_band: cfg.z_band,
        warnings,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic (inputs need not be sorted).
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // step past ties in both samples before measuring
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic two-sample critical value at level `alpha`.
pub fn ks_two_sample_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
pub fn one_sample_ks(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

pub fn ks_one_sample_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementTestRow {
    pub component: u8,
    pub lag: f64,
    pub window_a: f64,
    pub window_b: f64,
    pub ks_statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementTestReport {
    pub rows: Vec<IncrementTestRow>,
    pub overall_pass: bool,
    pub alpha: f64,
    /// Per-comparison level after Bonferroni correction.
    pub corrected_alpha: f64,
    pub n_paths: usize,
    pub spectral_radius: f64,
}

/// Test whether event-count increments are stationary: for every lag `h`,
/// compare the distribution of counts in `(t, t+h]` at the first window
/// start against every later start with a two-sample Kolmogorov-Smirnov test
/// at level `alpha` (Bonferroni-corrected across comparisons).
///
/// Counts are integers, so each sample gets an independent uniform jitter on
/// `[0, 1)` before the comparison; under the null the jittered samples are
/// equal in distribution and continuous, making the test exact. The test is
/// deliberately not gated on the stability condition: running it on an
/// unstable model is how the lack of stationarity is demonstrated.
pub fn increment_stationarity_test(
    params: &ModelParams,
    windows: &[f64],
    lags: &[f64],
    n_paths: usize,
    alpha: f64,
    seed: u64,
) -> Result<IncrementTestReport> {
    params.check()?;
    if windows.len() < 2 {
        return Err(Error::Domain("need at least two window starts".into()));
    }
    if lags.is_empty() || lags.iter().any(|h| *h <= 0.0) {
        return Err(Error::Domain("lags must be positive".into()));
    }
    if n_paths < 8 {
        return Err(Error::Domain(format!("need at least 8 paths, got {n_paths}")));
    }
    let max_window = windows.iter().cloned().fold(f64::NAN, f64::max);
    let max_lag = lags.iter().cloned().fold(f64::NAN, f64::max);
    let horizon = max_window + max_lag;

    // counts[path][window][lag][component]
    let counts: Vec<Vec<Vec<[usize; 2]>>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let history = simulate_thinning_stream(params, horizon, seed, path as u64)?;
            Ok(windows
                .iter()
                .map(|&t| {
                    lags.iter()
                        .map(|&h| {
                            [history.count_in(1, t, t + h), history.count_in(2, t, t + h)]
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let n_tests = (windows.len() - 1) * lags.len() * 2;
    let corrected_alpha = alpha / n_tests as f64;
    let mut rows = Vec::with_capacity(n_tests);
    let mut jitter_stream = 0u64;
    for (li, &h) in lags.iter().enumerate() {
        for comp in 0..2usize {
            let jittered = |wi: usize, stream: u64| -> Vec<f64> {
                let mut rng = stream_rng(seed, JITTER_STREAM_BASE + stream);
                (0..n_paths)
                    .map(|p| counts[p][wi][li][comp] as f64 + rng.gen::<f64>())
                    .collect()
            };
            let reference = jittered(0, jitter_stream);
            jitter_stream += 1;
            for wi in 1..windows.len() {
                let other = jittered(wi, jitter_stream);
                jitter_stream += 1;
                let d = two_sample_ks(&reference, &other);
                let threshold = ks_two_sample_critical(corrected_alpha, n_paths, n_paths);
                rows.push(IncrementTestRow {
                    component: comp as u8 + 1,
                    lag: h,
                    window_a: windows[0],
                    window_b: windows[wi],
                    ks_statistic: d,
                    threshold,
                    pass: d <= threshold,
                });
            }
        }
    }
    let (_, radius) = stationarity::check_c2(params);
    Ok(IncrementTestReport {
        overall_pass: rows.iter().all(|r| r.pass),
        rows,
        alpha,
        corrected_alpha,
        n_paths,
        spectral_radius: radius,
    })
}
