//! Kernel covariance over log-income distances and its projection onto the
//! sum-to-zero subspace.
//!
//! The prior on merits is `N(0, alpha2 * C)` with
//! `C = S - S 1 (1' S 1)^-1 1' S` for a unit-variance kernel matrix `S`.
//! `C` is singular (its rows sum to zero), so a thresholded eigendecomposition
//! provides both the sampling factor and the Moore-Penrose pseudo-inverse.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bt_model::MeritVector;
use crate::data_ingest::IncomeTable;
use crate::error::{invalid, Error, Result};

/// Relative eigenvalue cut-off used when forming the factor and
/// pseudo-inverse of `C`.
pub const RANK_EPS: f64 = 1e-10;

/// Default diagonal jitter added to the kernel matrix when it is not
/// comfortably positive definite.
pub const DEFAULT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    RationalQuadratic,
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "squared_exponential" | "se" => Ok(KernelKind::SquaredExponential),
            "rational_quadratic" | "rq" => Ok(KernelKind::RationalQuadratic),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub length_scale: f64,
    /// Scale-mixture parameter; only read by the rational-quadratic kernel.
    pub mixture: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::squared_exponential(0.09)
    }
}

impl KernelSpec {
    pub fn squared_exponential(length_scale: f64) -> Self {
        KernelSpec {
            kind: KernelKind::SquaredExponential,
            length_scale,
            mixture: 1.0,
        }
    }

    pub fn rational_quadratic(length_scale: f64, mixture: f64) -> Self {
        KernelSpec {
            kind: KernelKind::RationalQuadratic,
            length_scale,
            mixture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(invalid!("kernel length scale must be positive, got {}", self.length_scale));
        }
        if self.kind == KernelKind::RationalQuadratic && !(self.mixture > 0.0 && self.mixture.is_finite()) {
            return Err(invalid!("rational-quadratic mixture must be positive, got {}", self.mixture));
        }
        Ok(())
    }

    /// Unit-variance covariance at distance `d`.
    pub fn eval(&self, d: f64) -> f64 {
        let l = self.length_scale;
        match self.kind {
            KernelKind::SquaredExponential => (-(d * d) / (l * l)).exp(),
            KernelKind::RationalQuadratic => {
                let s = self.mixture;
                (1.0 + d * d / (2.0 * s * s * l * l)).powf(-s)
            }
        }
    }
}

/// `|log p_i - log p_j|` for every pair of incomes.
pub fn log_distance(incomes: &[f64]) -> DMatrix<f64> {
    let logs: Vec<f64> = incomes.iter().map(|p| p.ln()).collect();
    let m = logs.len();
    DMatrix::from_fn(m, m, |i, j| (logs[i] - logs[j]).abs())
}

pub fn log_income_distance(inc: &IncomeTable) -> DMatrix<f64> {
    log_distance(&inc.income)
}

pub fn kernel_matrix(d: &DMatrix<f64>, spec: &KernelSpec) -> DMatrix<f64> {
    let m = d.nrows();
    DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { spec.eval(d[(i, j)]) })
}

/// The constrained prior covariance (at unit `alpha2`) together with its
/// low-rank factor and pseudo-inverse.
#[derive(Debug, Clone)]
pub struct ConstrainedCovariance {
    pub sigma: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `M x rank`; `factor * factor' = c`.
    pub factor: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    pub jitter_applied: bool,
    /// Retained eigenvectors of `c` (columns) and their eigenvalues.
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

fn symmetric_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(a.clone())
}

/// Projects `sigma` onto the sum-to-zero subspace and decomposes the result.
pub fn constrain(sigma: &DMatrix<f64>, jitter: f64) -> Result<ConstrainedCovariance> {
    let m = sigma.nrows();
    if m < 2 || sigma.ncols() != m {
        return Err(invalid!("covariance must be square with at least 2 rows"));
    }
    if !(jitter >= 0.0) {
        return Err(invalid!("jitter must be non-negative, got {jitter}"));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("covariance has non-finite entries"));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    for i in 0..m {
        for j in (i + 1)..m {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(invalid!("covariance is not symmetric at ({i}, {j})"));
            }
        }
    }

    let mut sigma = sigma.clone();
    let min_eig = symmetric_eigen(&sigma).eigenvalues.min();
    let jitter_applied = min_eig < 10.0 * jitter;
    if jitter_applied {
        for i in 0..m {
            sigma[(i, i)] += jitter;
        }
    }

    let s1: DVector<f64> = sigma.column_sum();
    let total = s1.sum();
    if !(total > 0.0) {
        return Err(Error::Numeric(format!(
            "1'S1 = {total} is not positive; the kernel matrix is unusable"
        )));
    }
    let mut c = &sigma - (&s1 * s1.transpose()) / total;
    c = (&c + c.transpose()) * 0.5;

    let eig = symmetric_eigen(&c);
    let lambda_max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..m)
        .filter(|&k| lambda_max > 0.0 && eig.eigenvalues[k] > RANK_EPS * lambda_max)
        .collect();
    if keep.is_empty() {
        return Err(Error::Numeric("constrained covariance has no positive eigenvalue".into()));
    }
    let rank = keep.len();
    let basis = DMatrix::from_fn(m, rank, |i, r| eig.eigenvectors[(i, keep[r])]);
    let eigenvalues = DVector::from_iterator(rank, keep.iter().map(|&k| eig.eigenvalues[k]));
    let factor = DMatrix::from_fn(m, rank, |i, r| basis[(i, r)] * eigenvalues[r].sqrt());
    let inv_scaled = DMatrix::from_fn(m, rank, |i, r| basis[(i, r)] / eigenvalues[r]);
    let pinv = &inv_scaled * basis.transpose();

    Ok(ConstrainedCovariance {
        sigma,
        c,
        factor,
        pinv,
        rank,
        jitter_applied,
        basis,
        eigenvalues,
    })
}

impl ConstrainedCovariance {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `mu' C^+ mu`, computed through the retained eigenbasis.
    pub fn quadratic_form(&self, mu: &DVector<f64>) -> f64 {
        let z = self.basis.tr_mul(mu);
        z.iter()
            .zip(self.eigenvalues.iter())
            .map(|(zk, lk)| zk * zk / lk)
            .sum()
    }

    /// Writes `row,col,sigma,c` for audit.
    pub fn write_csv(&self, path: &Path, entities: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        out.write_record(["entity_i", "entity_j", "sigma", "c"]).map_err(io)?;
        let m = self.dim();
        for i in 0..m {
            for j in 0..m {
                out.write_record([
                    entities[i].as_str(),
                    entities[j].as_str(),
                    &format!("{:e}", self.sigma[(i, j)]),
                    &format!("{:e}", self.c[(i, j)]),
                ])
                .map_err(io)?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Draws `sqrt(scale) * F z` with `z` standard normal.
pub fn sample_constrained<R: Rng + ?Sized>(
    cov: &ConstrainedCovariance,
    scale: f64,
    rng: &mut R,
) -> MeritVector {
    let z = DVector::from_iterator(cov.rank, (0..cov.rank).map(|_| rng.sample::<f64, _>(StandardNormal)));
    MeritVector::new(&cov.factor * z * scale.sqrt())
}
