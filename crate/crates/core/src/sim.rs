//! Synthetic recovery study: draw true merits from the prior, simulate
//! paired comparisons, refit, and score how well each estimator recovers
//! the truth.

use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bt_model::{mle_newman, win_probability, MeritVector, NewmanOptions};
use crate::diagnostics::{kendall_tau_distance, rank_descending, write_lines};
use crate::error::{invalid, Result};
use crate::mcmc::{chain_rng, posterior_mean, run_chain_from, SamplerConfig};
use crate::prior_cov::{constrain, kernel_matrix, log_distance, sample_constrained, KernelSpec, DEFAULT_JITTER};
use crate::report::fmt_f64;
use crate::win_matrix::WinMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStudySpec {
    pub m: usize,
    pub k_comparisons: u64,
    /// Kernel family and mixture; the length scale comes from the sweep.
    pub kernel: KernelSpec,
    pub length_scales: Vec<f64>,
    pub alpha2_true: f64,
    pub replications: usize,
    pub seed: u64,
    /// Synthetic incomes are log-evenly spaced over this range.
    pub income_low: f64,
    pub income_high: f64,
    /// When set, the MLE is also refit on a second win matrix with this
    /// many comparisons per pair (method `mle_large_k`).
    pub k_large: Option<u64>,
}

impl Default for SimStudySpec {
    fn default() -> Self {
        SimStudySpec {
            m: 10,
            k_comparisons: 100,
            kernel: KernelSpec::default(),
            length_scales: vec![0.09],
            alpha2_true: 1.0,
            replications: 20,
            seed: 20_240_601,
            income_low: 40_000.0,
            income_high: 400_000.0,
            k_large: Some(10_000),
        }
    }
}

impl SimStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(invalid!("m must be at least 2, got {}", self.m));
        }
        if self.k_comparisons < 1 || self.k_large == Some(0) {
            return Err(invalid!("comparisons per pair must be at least 1"));
        }
        if self.replications < 1 {
            return Err(invalid!("replications must be at least 1"));
        }
        if self.length_scales.is_empty() {
            return Err(invalid!("length_scales must not be empty"));
        }
        for &l in &self.length_scales {
            KernelSpec { length_scale: l, ..self.kernel }.validate()?;
        }
        if !(self.alpha2_true > 0.0 && self.alpha2_true.is_finite()) {
            return Err(invalid!("alpha2_true must be positive, got {}", self.alpha2_true));
        }
        if !(self.income_low > 0.0 && self.income_high > self.income_low) {
            return Err(invalid!("income range must satisfy 0 < income_low < income_high"));
        }
        Ok(())
    }

    pub fn entities(&self) -> Vec<String> {
        let width = self.m.to_string().len();
        (1..=self.m).map(|i| format!("S{i:0width$}")).collect()
    }

    pub fn incomes(&self) -> Vec<f64> {
        let (a, b) = (self.income_low.ln(), self.income_high.ln());
        (0..self.m)
            .map(|i| (a + (b - a) * i as f64 / (self.m - 1) as f64).exp())
            .collect()
    }
}

/// `x_ij ~ Binomial(k, pi_ij)` for each pair `i < j`, `x_ji = k - x_ij`.
pub fn simulate_win_matrix<R: Rng + ?Sized>(
    entities: &[String],
    mu_true: &MeritVector,
    k: u64,
    rng: &mut R,
) -> Result<WinMatrix> {
    let m = mu_true.len();
    if k < 1 {
        return Err(invalid!("comparisons per pair must be at least 1"));
    }
    if entities.len() != m {
        return Err(invalid!("{} names for {m} merits", entities.len()));
    }
    let mu = mu_true.as_slice();
    let mut wins = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let p = win_probability(mu[i], mu[j]);
            let x = Binomial::new(k, p)
                .map_err(|e| invalid!("win probability {p}: {e}"))?
                .sample(rng) as f64;
            wins[(i, j)] = x;
            wins[(j, i)] = k as f64 - x;
        }
    }
    WinMatrix::from_wins(entities.to_vec(), wins)
}

/// Ranks with ties averaged, 1-based.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replication: usize,
    pub length_scale: f64,
    pub method: String,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub rmse: Option<f64>,
    pub kendall: Option<u64>,
    /// `ok`, or the reason the fit failed.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub replication: usize,
    pub length_scale: f64,
    pub method: String,
    pub entity: String,
    pub truth: f64,
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyResults {
    pub rows: Vec<StudyRow>,
    pub estimates: Vec<EstimateRow>,
}

impl StudyResults {
    /// Metric rows of one method, in table order.
    pub fn method(&self, name: &str) -> Vec<&StudyRow> {
        self.rows.iter().filter(|r| r.method == name).collect()
    }

    pub fn write_csv(&self, study: &Path, estimates: &Path) -> Result<()> {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        write_lines(
            study,
            "replication,length_scale,method,spearman,pearson,rmse,kendall,status",
            self.rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    r.replication,
                    fmt_f64(r.length_scale),
                    r.method,
                    opt(r.spearman),
                    opt(r.pearson),
                    opt(r.rmse),
                    r.kendall.map(|k| k.to_string()).unwrap_or_default(),
                    crate::report::csv_field(&r.status)
                )
            }),
        )?;
        write_lines(
            estimates,
            "replication,length_scale,method,entity,truth,estimate",
            self.estimates.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.replication,
                    fmt_f64(r.length_scale),
                    r.method,
                    r.entity,
                    fmt_f64(r.truth),
                    opt(r.estimate)
                )
            }),
        )
    }
}

/// Posterior mean from one chain, started at the MLE when it exists.
pub fn fit_posterior_mean<R: Rng + ?Sized>(
    w: &WinMatrix,
    cov: &crate::prior_cov::ConstrainedCovariance,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<MeritVector> {
    let init = mle_newman(w, NewmanOptions::default())
        .map(|e| e.merits)
        .unwrap_or_else(|_| MeritVector::zeros(w.n_entities()));
    posterior_mean(&run_chain_from(w, cov, config, &init, rng)?)
}

fn score(
    replication: usize,
    length_scale: f64,
    method: &str,
    entities: &[String],
    truth: &MeritVector,
    fit: Result<MeritVector>,
    out: &mut StudyResults,
) {
    let t = truth.as_slice();
    let (row, est) = match fit {
        Ok(est) => {
            let e = est.as_slice();
            let kendall = kendall_tau_distance(&rank_descending(t, entities), &rank_descending(e, entities))
                .expect("rankings of equal size");
            (
                StudyRow {
                    replication,
                    length_scale,
                    method: method.into(),
                    spearman: Some(spearman(t, e)),
                    pearson: Some(pearson(t, e)),
                    rmse: Some(rmse(t, e)),
                    kendall: Some(kendall),
                    status: "ok".into(),
                },
                Some(est),
            )
        }
        Err(err) => (
            StudyRow {
                replication,
                length_scale,
                method: method.into(),
                spearman: None,
                pearson: None,
                rmse: None,
                kendall: None,
                status: err.to_string(),
            },
            None,
        ),
    };
    out.rows.push(row);
    for (i, name) in entities.iter().enumerate() {
        out.estimates.push(EstimateRow {
            replication,
            length_scale,
            method: method.into(),
            entity: name.clone(),
            truth: t[i],
            estimate: est.as_ref().map(|e| e.as_slice()[i]),
        });
    }
}

fn replicate(spec: &SimStudySpec, sampler: &SamplerConfig, replication: usize) -> Result<StudyResults> {
    let mut rng = chain_rng(spec.seed, replication as u64);
    let entities = spec.entities();
    let d = log_distance(&spec.incomes());
    let mut out = StudyResults::default();
    for &l in &spec.length_scales {
        let kernel = KernelSpec { length_scale: l, ..spec.kernel };
        let cov = constrain(&kernel_matrix(&d, &kernel), DEFAULT_JITTER)?;
        let truth = sample_constrained(&cov, spec.alpha2_true, &mut rng);
        let w = simulate_win_matrix(&entities, &truth, spec.k_comparisons, &mut rng)?;
        let config = SamplerConfig { kernel, ..sampler.clone() };
        let bayes = fit_posterior_mean(&w, &cov, &config, &mut rng);
        score(replication, l, "bayes", &entities, &truth, bayes, &mut out);
        let mle = mle_newman(&w, NewmanOptions::default()).map(|e| e.merits);
        score(replication, l, "mle", &entities, &truth, mle, &mut out);
        if let Some(k_large) = spec.k_large {
            let w_large = simulate_win_matrix(&entities, &truth, k_large, &mut rng)?;
            let mle = mle_newman(&w_large, NewmanOptions::default()).map(|e| e.merits);
            score(replication, l, "mle_large_k", &entities, &truth, mle, &mut out);
        }
    }
    Ok(out)
}

/// Runs every replication (in parallel, one random stream each) and merges
/// results in replication order.
pub fn run_recovery_study(spec: &SimStudySpec, sampler: &SamplerConfig) -> Result<StudyResults> {
    spec.validate()?;
    sampler.validate()?;
    let parts: Vec<StudyResults> = (0..spec.replications)
        .into_par_iter()
        .map(|r| replicate(spec, sampler, r))
        .collect::<Result<_>>()?;
    let mut out = StudyResults::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.estimates.extend(p.estimates);
    }
    Ok(out)
}
