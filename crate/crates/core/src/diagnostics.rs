//! Chain-quality diagnostics.
//!
//! The multivariate effective sample size follows the low-rank form
//! `ESS = N [pdet(S_s) / pdet(L_s)]^(1/r)`, where `S` is the sample
//! covariance of the draws, `L` a Bartlett-window spectral estimate of the
//! long-run covariance, and `_s` denotes projection onto the span of the `r`
//! eigenvectors of `S` whose eigenvalues exceed `threshold * max`. Draws
//! confined to the sum-to-zero subspace have `r = M - 1`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mcmc::ChainSamples;

/// Default relative eigenvalue threshold for the rank estimate.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;

/// ESS estimates above this multiple of `N` are capped.
pub const ESS_CAP_FACTOR: f64 = 1.5;

/// `floor(N^(1/3))`, at least 1.
pub fn default_bandwidth(n: usize) -> usize {
    // Guard against cbrt rounding just below an exact cube.
    let mut b = (n as f64).cbrt().floor() as usize;
    while (b + 1).pow(3) <= n {
        b += 1;
    }
    b.max(1)
}

fn centered(draws: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = draws.row_mean();
    let mut y = draws.clone();
    for mut row in y.row_iter_mut() {
        row -= &mean;
    }
    y
}

/// Sample covariance with divisor `N - 1`.
pub fn sample_covariance(draws: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = draws.nrows();
    if n < 2 {
        return Err(invalid!("need at least 2 draws for a covariance, have {n}"));
    }
    let y = centered(draws);
    Ok(y.tr_mul(&y) / (n - 1) as f64)
}

fn lagged_product(y: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let n = y.nrows();
    y.rows(0, n - lag).tr_mul(&y.rows(lag, n - lag))
}

/// Lag-`lag` autocovariance `(1/N) sum_t (x_t - m)(x_{t+lag} - m)'`.
pub fn autocovariance(draws: &DMatrix<f64>, lag: usize) -> Result<DMatrix<f64>> {
    let n = draws.nrows();
    if lag >= n {
        return Err(invalid!("lag {lag} must be below the number of draws {n}"));
    }
    Ok(lagged_product(&centered(draws), lag) / n as f64)
}

/// Spectral long-run covariance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRunCovariance {
    pub matrix: DMatrix<f64>,
    /// Whether negative eigenvalues had to be set to zero.
    pub floored: bool,
}

/// `S + sum_{k=1}^{b-1} (1 - k/b)(L_k + L_k')` with `S` the sample
/// covariance. Negative eigenvalues of the result are floored at zero.
pub fn spectral_longrun(draws: &DMatrix<f64>, bandwidth: usize) -> Result<LongRunCovariance> {
    let n = draws.nrows();
    if bandwidth < 1 || bandwidth > n {
        return Err(invalid!("bandwidth must lie in [1, {n}], got {bandwidth}"));
    }
    let sigma = sample_covariance(draws)?;
    if bandwidth == 1 {
        return Ok(LongRunCovariance {
            matrix: sigma,
            floored: false,
        });
    }
    let y = centered(draws);
    let m = y.ncols();
    let b = bandwidth as f64;
    let window_sum = (1..bandwidth)
        .into_par_iter()
        .map(|k| lagged_product(&y, k) * ((1.0 - k as f64 / b) / n as f64))
        .reduce(|| DMatrix::zeros(m, m), |a, b| a + b);
    let mut l = sigma + &window_sum + window_sum.transpose();
    l = (&l + l.transpose()) * 0.5;

    let eig = SymmetricEigen::new(l.clone());
    let lambda_max = eig.eigenvalues.amax();
    let floored = eig.eigenvalues.iter().any(|&v| v < -1e-12 * lambda_max);
    if floored {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        l = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    }
    Ok(LongRunCovariance { matrix: l, floored })
}

/// Multivariate ESS on the thresholded eigen-subspace of the sample
/// covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub rank_est: usize,
    pub bandwidth: usize,
    pub floored: bool,
}

pub fn multivariate_ess(draws: &DMatrix<f64>, threshold: f64) -> Result<EssEstimate> {
    multivariate_ess_with_bandwidth(draws, threshold, default_bandwidth(draws.nrows()))
}

pub fn multivariate_ess_with_bandwidth(
    draws: &DMatrix<f64>,
    threshold: f64,
    bandwidth: usize,
) -> Result<EssEstimate> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid!("eigenvalue threshold must lie in (0, 1), got {threshold}"));
    }
    let n = draws.nrows();
    let sigma = sample_covariance(draws)?;
    let eig = SymmetricEigen::new(sigma);
    let lambda_max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| lambda_max > 0.0 && eig.eigenvalues[k] > threshold * lambda_max)
        .collect();
    let r = keep.len();
    if r == 0 {
        return Err(Error::Numeric(
            "sample covariance has no eigenvalue above the threshold (constant chain?)".into(),
        ));
    }
    let basis = DMatrix::from_fn(draws.ncols(), r, |i, c| eig.eigenvectors[(i, keep[c])]);
    let log_pdet_sigma: f64 = keep.iter().map(|&k| eig.eigenvalues[k].ln()).sum();

    let long_run = spectral_longrun(draws, bandwidth)?;
    let projected = basis.tr_mul(&long_run.matrix) * &basis;
    let projected = (&projected + projected.transpose()) * 0.5;
    let chol = projected.cholesky().ok_or_else(|| {
        Error::Numeric(
            "projected long-run covariance is singular; use more draws or a larger bandwidth".into(),
        )
    })?;
    let log_pdet_l: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ess = n as f64 * ((log_pdet_sigma - log_pdet_l) / r as f64).exp();
    Ok(EssEstimate {
        ess,
        rank_est: r,
        bandwidth,
        floored: long_run.floored,
    })
}

/// Normalised autocorrelation of a scalar series at lags `0..=max_lag`,
/// computed by FFT with divisor `N`. `None` for a constant series.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    forward.process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    inverse.process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 0.0) {
        return None;
    }
    Some(buf.iter().take(max_lag.min(n - 1) + 1).map(|v| v.re / c0).collect())
}

/// Univariate ESS with Geyer's initial monotone sequence estimator.
pub fn univariate_ess(series: &[f64]) -> Option<f64> {
    let n = series.len();
    let rho = autocorrelation(series, n - 1)?;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    Some(n as f64 / tau.max(1.0 / n as f64))
}

pub fn acceptance_rate(samples: &ChainSamples) -> Result<f64> {
    samples
        .acceptance_rate()
        .ok_or_else(|| invalid!("chain recorded no proposals"))
}

fn check_ranks(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid!("rankings have different sizes ({} vs {})", a.len(), b.len()));
    }
    for r in [a, b] {
        let mut sorted = r.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!("ranking contains repeated positions"));
        }
    }
    Ok(())
}

/// Counts inversions of `seq` by merge sort.
fn count_inversions(seq: &mut [usize], scratch: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut seq[..mid], &mut scratch[..mid])
        + count_inversions(&mut seq[mid..], &mut scratch[mid..]);
    let (mut i, mut j, mut out) = (0, mid, 0);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            scratch[out] = seq[i];
            i += 1;
        } else {
            scratch[out] = seq[j];
            count += (mid - i) as u64;
            j += 1;
        }
        out += 1;
    }
    scratch[out..out + mid - i].copy_from_slice(&seq[i..mid]);
    out += mid - i;
    scratch[out..n].copy_from_slice(&seq[j..n]);
    seq.copy_from_slice(&scratch[..n]);
    count
}

/// Number of item pairs ordered differently by two rank vectors
/// (`rank[i]` is the position of item `i`).
pub fn kendall_tau_distance(rank_a: &[usize], rank_b: &[usize]) -> Result<u64> {
    check_ranks(rank_a, rank_b)?;
    let mut order: Vec<usize> = (0..rank_a.len()).collect();
    order.sort_by_key(|&i| rank_a[i]);
    let mut seq: Vec<usize> = order.iter().map(|&i| rank_b[i]).collect();
    let mut scratch = vec![0; seq.len()];
    Ok(count_inversions(&mut seq, &mut scratch))
}

/// The discordant pairs themselves, as `(i, j)` with `i < j`.
pub fn discordant_pairs(rank_a: &[usize], rank_b: &[usize]) -> Result<Vec<(usize, usize)>> {
    check_ranks(rank_a, rank_b)?;
    let m = rank_a.len();
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if (rank_a[i] < rank_a[j]) != (rank_b[i] < rank_b[j]) {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// 1-based ranks by descending value, ties broken by name.
pub fn rank_descending(values: &[f64], names: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| names[a].cmp(&names[b]))
    });
    let mut rank = vec![0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    rank
}

/// Kendall distance between the ranking implied by the running posterior
/// mean (every `window` kept draws, plus the last draw) and the final
/// ranking. Pairs are `(iteration, distance)`.
pub fn rank_stability_series(samples: &ChainSamples, window: usize) -> Result<Vec<(usize, u64)>> {
    if window == 0 {
        return Err(invalid!("window must be at least 1"));
    }
    let n = samples.n_kept();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = samples.n_entities();
    let names = &samples.entities;
    let final_mean: Vec<f64> = samples.mu_draws.row_mean().iter().copied().collect();
    let final_rank = rank_descending(&final_mean, names);
    let mut running = DVector::<f64>::zeros(m);
    let mut out = Vec::new();
    for k in 0..n {
        running += samples.mu_draws.row(k).transpose();
        if (k + 1) % window == 0 || k + 1 == n {
            let mean: Vec<f64> = running.iter().map(|s| s / (k + 1) as f64).collect();
            let rank = if k + 1 == n {
                final_rank.clone()
            } else {
                rank_descending(&mean, names)
            };
            out.push((samples.config.kept_iteration(k), kendall_tau_distance(&rank, &final_rank)?));
        }
    }
    Ok(out)
}

/// A scalar trace that can be exported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceParam {
    Mu(usize),
    Alpha2,
    QuadForm,
    LogLik,
}

impl TraceParam {
    /// Accepts `alpha2`, `quad_form`, `loglik`, `mu:<entity>` or a bare
    /// entity name; `mu:*` expands to every merit.
    pub fn parse(name: &str, entities: &[String]) -> Result<Vec<TraceParam>> {
        let name = name.trim();
        Ok(match name {
            "alpha2" => vec![TraceParam::Alpha2],
            "quad_form" => vec![TraceParam::QuadForm],
            "loglik" => vec![TraceParam::LogLik],
            "mu:*" | "all_mu" => (0..entities.len()).map(TraceParam::Mu).collect(),
            other => {
                let entity = other.strip_prefix("mu:").unwrap_or(other);
                let i = entities
                    .iter()
                    .position(|e| e == entity)
                    .ok_or_else(|| invalid!("unknown trace parameter `{other}`"))?;
                vec![TraceParam::Mu(i)]
            }
        })
    }

    pub fn label(&self, entities: &[String]) -> String {
        match self {
            TraceParam::Mu(i) => format!("mu:{}", entities[*i]),
            TraceParam::Alpha2 => "alpha2".into(),
            TraceParam::QuadForm => "quad_form".into(),
            TraceParam::LogLik => "loglik".into(),
        }
    }

    fn series(&self, samples: &ChainSamples) -> Vec<f64> {
        match self {
            TraceParam::Mu(i) => samples.mu_draws.column(*i).iter().copied().collect(),
            TraceParam::Alpha2 => samples.alpha2_draws.clone(),
            TraceParam::QuadForm => samples.quad_draws.clone(),
            TraceParam::LogLik => samples.loglik_draws.clone(),
        }
    }
}

/// Default trace selection: every merit plus the scalar chains.
pub fn all_trace_params(m: usize) -> Vec<TraceParam> {
    (0..m)
        .map(TraceParam::Mu)
        .chain([TraceParam::Alpha2, TraceParam::QuadForm, TraceParam::LogLik])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfRow {
    pub parameter: String,
    pub lag: usize,
    pub acf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceExport {
    pub traces: Vec<TraceRow>,
    pub acf: Vec<AcfRow>,
}

/// Long-format traces for `params` and their autocorrelations up to
/// `max_lag`.
pub fn trace_export(samples: &ChainSamples, params: &[TraceParam], max_lag: usize) -> TraceExport {
    let iterations = samples.iterations();
    let mut out = TraceExport::default();
    for p in params {
        let label = p.label(&samples.entities);
        let series = p.series(samples);
        out.traces.extend(iterations.iter().zip(&series).map(|(&iteration, &value)| TraceRow {
            iteration,
            parameter: label.clone(),
            value,
        }));
        let acf = autocorrelation(&series, max_lag);
        let lags = max_lag.min(series.len().saturating_sub(1));
        out.acf.extend((0..=lags).map(|lag| AcfRow {
            parameter: label.clone(),
            lag,
            acf: acf.as_ref().map(|a| a[lag]),
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    pub bandwidth: Option<usize>,
    pub threshold: f64,
    pub window: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            bandwidth: None,
            threshold: DEFAULT_THRESHOLD,
            window: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFlags {
    pub jitter_applied: bool,
    pub eigen_floor_hit: bool,
    pub ess_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_kept: usize,
    pub ess: f64,
    pub rank_est: usize,
    pub acceptance_rate: f64,
    pub bandwidth: usize,
    pub threshold: f64,
    pub entities: Vec<String>,
    pub per_param_ess: Vec<Option<f64>>,
    pub kendall_series: Vec<(usize, u64)>,
    pub flags: DiagnosticsFlags,
}

/// Runs every chain diagnostic with the given options.
pub fn diagnose(samples: &ChainSamples, opts: &DiagnosticsOptions) -> Result<DiagnosticsReport> {
    let n = samples.n_kept();
    if n < 2 {
        return Err(invalid!("need at least 2 kept draws for diagnostics, have {n}"));
    }
    let bandwidth = opts.bandwidth.unwrap_or_else(|| default_bandwidth(n));
    let est = multivariate_ess_with_bandwidth(&samples.mu_draws, opts.threshold, bandwidth)?;
    let cap = ESS_CAP_FACTOR * n as f64;
    let ess_capped = est.ess > cap;
    let per_param_ess = (0..samples.n_entities())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = samples.mu_draws.column(j).iter().copied().collect();
            univariate_ess(&col)
        })
        .collect();
    Ok(DiagnosticsReport {
        n_kept: n,
        ess: est.ess.min(cap),
        rank_est: est.rank_est,
        acceptance_rate: acceptance_rate(samples)?,
        bandwidth,
        threshold: opts.threshold,
        entities: samples.entities.clone(),
        per_param_ess,
        kendall_series: rank_stability_series(samples, opts.window)?,
        flags: DiagnosticsFlags {
            jitter_applied: samples.jitter_applied,
            eigen_floor_hit: est.floored,
            ess_capped,
        },
    })
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialise")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_kendall_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,distance\n");
        for (it, d) in &self.kendall_series {
            out.push_str(&format!("{it},{d}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl TraceExport {
    pub fn write_csv(&self, traces: &Path, acf: &Path) -> Result<()> {
        let write = |path: &Path, f: &dyn Fn(&mut csv::Writer<std::io::BufWriter<std::fs::File>>) -> csv::Result<()>| {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            f(&mut w).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            w.flush().map_err(|e| Error::io(path, e))
        };
        write(traces, &|w| self.traces.iter().try_for_each(|r| w.serialize(r)))?;
        write(acf, &|w| self.acf.iter().try_for_each(|r| w.serialize(r)))?;
        Ok(())
    }
}

/// Writes nothing but a header when `rows` is empty; used for tables that
/// may legitimately be empty.
pub fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{header}").map_err(io)?;
    for row in rows {
        writeln!(out, "{row}").map_err(io)?;
    }
    out.flush().map_err(io)
}
