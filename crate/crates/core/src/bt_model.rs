//! Bradley-Terry win probabilities, likelihood and the classical
//! maximum-likelihood fit.
//!
//! The log-likelihood omits the binomial coefficients: they do not depend on
//! the merits, so they cancel in Metropolis-Hastings ratios and in the MLE.
//! Values reported here are therefore only comparable with each other.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::win_matrix::WinMatrix;

/// Tolerance on `|sum(mu)|` for a merit vector to count as centered.
pub const CENTERED_TOL: f64 = 1e-9;

/// Merit parameters (log-strengths), one per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct MeritVector {
    pub mu: DVector<f64>,
}

impl MeritVector {
    pub fn new(mu: DVector<f64>) -> Self {
        MeritVector { mu }
    }

    pub fn zeros(m: usize) -> Self {
        MeritVector {
            mu: DVector::zeros(m),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.mu.sum()
    }

    pub fn is_centered(&self) -> bool {
        self.sum().abs() <= CENTERED_TOL
    }

    /// Subtracts the mean so that the entries sum to zero.
    pub fn centered(&self) -> MeritVector {
        let mean = self.mu.mean();
        MeritVector {
            mu: self.mu.add_scalar(-mean),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        self.mu.as_slice()
    }
}

impl From<Vec<f64>> for MeritVector {
    fn from(v: Vec<f64>) -> Self {
        MeritVector {
            mu: DVector::from_vec(v),
        }
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that an entity with merit `mu_i` beats one with merit `mu_j`.
#[inline]
pub fn win_probability(mu_i: f64, mu_j: f64) -> f64 {
    1.0 / (1.0 + (mu_j - mu_i).exp())
}

/// `log P(i beats j)`, stable for large merit gaps.
#[inline]
pub fn log_win_probability(mu_i: f64, mu_j: f64) -> f64 {
    -softplus(mu_j - mu_i)
}

/// Sum over unordered pairs of `x_ij log p_ij + x_ji log p_ji`.
pub fn log_likelihood(mu: &MeritVector, w: &WinMatrix) -> f64 {
    let m = w.n_entities();
    debug_assert_eq!(mu.len(), m);
    let mu = mu.as_slice();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            if w.comparisons[(i, j)] == 0 {
                continue;
            }
            let d = mu[i] - mu[j];
            let (xij, xji) = (w.wins[(i, j)], w.wins[(j, i)]);
            if xij > 0.0 {
                total -= xij * softplus(-d);
            }
            if xji > 0.0 {
                total -= xji * softplus(d);
            }
        }
    }
    total
}

/// Result of [`mle_newman`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleEstimate {
    pub merits: MeritVector,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewmanOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewmanOptions {
    fn default() -> Self {
        NewmanOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Checks that every entity both wins and loses somewhere and that the
/// "beats" graph is strongly connected, i.e. that a finite MLE exists.
pub fn check_mle_exists(w: &WinMatrix) -> Result<()> {
    let m = w.n_entities();
    if m < 2 {
        return Err(invalid!("need at least 2 entities"));
    }
    for i in 0..m {
        let wins: f64 = (0..m).map(|j| w.wins[(i, j)]).sum();
        let losses: f64 = (0..m).map(|j| w.wins[(j, i)]).sum();
        if wins <= 0.0 {
            return Err(Error::MleDoesNotExist {
                entity: w.entities[i].clone(),
                reason: "never wins a comparison".into(),
            });
        }
        if losses <= 0.0 {
            return Err(Error::MleDoesNotExist {
                entity: w.entities[i].clone(),
                reason: "never loses a comparison".into(),
            });
        }
    }
    // Every entity must be reachable from entity 0 along "beats" edges and
    // must reach entity 0 as well.
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let edge = if forward { w.wins[(i, j)] } else { w.wins[(j, i)] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let down = reach(true);
    let up = reach(false);
    if let Some(i) = (0..m).find(|&i| !down[i] || !up[i]) {
        let reason = if !down[i] {
            format!("belongs to a group that never loses to `{}`'s group", w.entities[0])
        } else {
            format!("belongs to a group that never beats `{}`'s group", w.entities[0])
        };
        return Err(Error::MleDoesNotExist {
            entity: w.entities[i].clone(),
            reason,
        });
    }
    Ok(())
}

/// Newman's fixed-point iteration for the Bradley-Terry MLE.
///
/// Strengths are updated in place entity by entity and rescaled to unit
/// geometric mean after each sweep. Returns centered log-strengths.
pub fn mle_newman(w: &WinMatrix, opts: NewmanOptions) -> Result<MleEstimate> {
    w.validate()?;
    check_mle_exists(w)?;
    let m = w.n_entities();
    let mut strength = vec![1.0f64; m];
    let mut last_change = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        let previous = strength.clone();
        for i in 0..m {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..m {
                if i == j || w.comparisons[(i, j)] == 0 {
                    continue;
                }
                let s = strength[i] + strength[j];
                num += w.wins[(i, j)] * strength[j] / s;
                den += w.wins[(j, i)] / s;
            }
            strength[i] = num / den;
        }
        let log_mean = strength.iter().map(|s| s.ln()).sum::<f64>() / m as f64;
        let scale = (-log_mean).exp();
        for s in strength.iter_mut() {
            *s *= scale;
        }
        if strength.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numeric(format!(
                "Newman iteration produced a non-positive strength at sweep {sweep}"
            )));
        }
        last_change = strength
            .iter()
            .zip(&previous)
            .map(|(new, old)| ((new - old) / old).abs())
            .fold(0.0, f64::max);
        if last_change < opts.tol {
            let merits = MeritVector::from(strength.iter().map(|s| s.ln()).collect::<Vec<_>>());
            return Ok(MleEstimate {
                merits: merits.centered(),
                sweeps: sweep,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}
