//! Gibbs / preconditioned Crank-Nicolson sampler for `(mu, alpha2)`.
//!
//! Each iteration draws `alpha2` from its inverse-gamma full conditional,
//! proposes `mu* = sqrt(1 - beta^2) mu + beta xi` with
//! `xi ~ N(0, alpha2 C)`, and accepts with probability
//! `min(1, exp(loglik(mu*) - loglik(mu)))`. The pCN proposal is reversible
//! with respect to the Gaussian prior, so only the likelihood enters the
//! acceptance ratio.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bt_model::{log_likelihood, MeritVector};
use crate::error::{invalid, Error, Result};
use crate::prior_cov::{sample_constrained, ConstrainedCovariance, KernelSpec};
use crate::win_matrix::WinMatrix;

/// Tolerance on `|sum(mu)|` for stored draws.
pub const DRAW_CENTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub beta: f64,
    pub chi: f64,
    pub omega: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    /// Use `chi + rank/2` instead of `chi + M/2` as the inverse-gamma shape.
    pub rank_adjusted_shape: bool,
    /// Use `omega + q/2` instead of `omega + q` as the inverse-gamma scale.
    /// Together with `rank_adjusted_shape` this is the exact conjugate
    /// conditional of `N(0, alpha2 C) x Inv-Gamma(chi, omega)`.
    pub half_quadratic_scale: bool,
    /// Hold `alpha2` at this value and skip the Gibbs step.
    pub fixed_alpha2: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            beta: 0.009,
            chi: 2.0,
            omega: 1.0,
            iterations: 3_000_000,
            burn_in: 1_000_000,
            thin: 1,
            seed: 20_240_601,
            kernel: KernelSpec::default(),
            rank_adjusted_shape: false,
            half_quadratic_scale: false,
            fixed_alpha2: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.chi > 0.0 && self.omega > 0.0) {
            return Err(invalid!("chi and omega must be positive"));
        }
        if self.iterations == 0 {
            return Err(invalid!("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(invalid!(
                "burn-in ({}) must be below the iteration count ({})",
                self.burn_in,
                self.iterations
            ));
        }
        if self.thin == 0 {
            return Err(invalid!("thin must be positive"));
        }
        if let Some(a) = self.fixed_alpha2 {
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid!("fixed alpha2 must be positive, got {a}"));
            }
        }
        self.kernel.validate()
    }

    /// `ceil((iterations - burn_in) / thin)`.
    pub fn n_kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    /// Default burn-in: a third of the run.
    pub fn default_burn_in(iterations: usize) -> usize {
        iterations / 3
    }

    /// 1-based iteration number of the `k`-th kept draw.
    pub fn kept_iteration(&self, k: usize) -> usize {
        self.burn_in + 1 + k * self.thin
    }

    pub fn alpha_conditional(&self) -> AlphaConditional {
        AlphaConditional {
            chi: self.chi,
            omega: self.omega,
            rank_adjusted_shape: self.rank_adjusted_shape,
            half_quadratic_scale: self.half_quadratic_scale,
        }
    }
}

/// Inverse-gamma full conditional of `alpha2` given `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaConditional {
    pub chi: f64,
    pub omega: f64,
    pub rank_adjusted_shape: bool,
    pub half_quadratic_scale: bool,
}

impl AlphaConditional {
    /// Shape `chi + M/2` and scale `omega + mu' C^+ mu`, unless adjusted.
    pub fn new(chi: f64, omega: f64) -> Self {
        AlphaConditional {
            chi,
            omega,
            rank_adjusted_shape: false,
            half_quadratic_scale: false,
        }
    }

    /// `(shape, scale)` for a given quadratic form `q = mu' C^+ mu`.
    pub fn parameters(&self, q: f64, dim: usize, rank: usize) -> (f64, f64) {
        let n = if self.rank_adjusted_shape { rank } else { dim };
        let shape = self.chi + n as f64 / 2.0;
        let scale = if self.half_quadratic_scale {
            self.omega + q / 2.0
        } else {
            self.omega + q
        };
        (shape, scale)
    }

    pub fn sample<R: Rng + ?Sized>(&self, mu: &MeritVector, cov: &ConstrainedCovariance, rng: &mut R) -> f64 {
        let q = cov.quadratic_form(&mu.mu);
        let (shape, scale) = self.parameters(q, cov.dim(), cov.rank);
        sample_inv_gamma(shape, scale, rng)
    }
}

/// One draw from `Inv-Gamma(shape, scale)`, i.e. `scale / Gamma(shape, 1)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(shape, 1.0).expect("inverse-gamma shape must be positive");
    scale / gamma.sample(rng)
}

/// Gibbs draw of `alpha2` from `Inv-Gamma(chi + M/2, omega + mu' C^+ mu)`.
pub fn gibbs_alpha2<R: Rng + ?Sized>(
    mu: &MeritVector,
    cov: &ConstrainedCovariance,
    chi: f64,
    omega: f64,
    rng: &mut R,
) -> f64 {
    AlphaConditional::new(chi, omega).sample(mu, cov, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub mu: MeritVector,
    pub alpha2: f64,
    pub loglik: f64,
}

/// pCN proposal around `state.mu` with noise scaled by `state.alpha2`.
pub fn pcn_propose<R: Rng + ?Sized>(
    state: &ChainState,
    cov: &ConstrainedCovariance,
    beta: f64,
    rng: &mut R,
) -> MeritVector {
    let xi = sample_constrained(cov, state.alpha2, rng);
    let keep = (1.0 - beta * beta).sqrt();
    MeritVector::new(&state.mu.mu * keep + xi.mu * beta)
}

/// Metropolis-Hastings decision on the log-likelihood difference.
pub fn mh_accept<R: Rng + ?Sized>(loglik_new: f64, loglik_old: f64, rng: &mut R) -> bool {
    let diff = loglik_new - loglik_old;
    if diff >= 0.0 {
        return true;
    }
    if diff == f64::NEG_INFINITY || diff.is_nan() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < diff
}

/// Stored output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub entities: Vec<String>,
    /// `n_kept x M`.
    pub mu_draws: DMatrix<f64>,
    pub alpha2_draws: Vec<f64>,
    pub loglik_draws: Vec<f64>,
    /// `mu' C^+ mu` at each kept draw.
    pub quad_draws: Vec<f64>,
    /// One flag per post-burn-in iteration.
    pub accept_flags: Vec<bool>,
    pub accepted: usize,
    pub proposed: usize,
    pub config: SamplerConfig,
    pub jitter_applied: bool,
}

impl ChainSamples {
    pub fn n_kept(&self) -> usize {
        self.mu_draws.nrows()
    }

    pub fn n_entities(&self) -> usize {
        self.mu_draws.ncols()
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    /// Iteration number of every kept draw.
    pub fn iterations(&self) -> Vec<usize> {
        (0..self.n_kept()).map(|k| self.config.kept_iteration(k)).collect()
    }

    /// Stacks the draws of several chains (same entities and config shape).
    pub fn pooled(chains: &[ChainSamples]) -> Result<ChainSamples> {
        let first = chains.first().ok_or_else(|| invalid!("no chains to pool"))?;
        if chains.iter().any(|c| c.entities != first.entities) {
            return Err(invalid!("chains disagree on entities"));
        }
        let m = first.n_entities();
        let total: usize = chains.iter().map(ChainSamples::n_kept).sum();
        let mut mu_draws = DMatrix::zeros(total, m);
        let mut row = 0;
        for c in chains {
            mu_draws.rows_mut(row, c.n_kept()).copy_from(&c.mu_draws);
            row += c.n_kept();
        }
        let cat = |f: fn(&ChainSamples) -> &Vec<f64>| chains.iter().flat_map(|c| f(c).iter().copied()).collect();
        Ok(ChainSamples {
            entities: first.entities.clone(),
            mu_draws,
            alpha2_draws: cat(|c| &c.alpha2_draws),
            loglik_draws: cat(|c| &c.loglik_draws),
            quad_draws: cat(|c| &c.quad_draws),
            accept_flags: chains.iter().flat_map(|c| c.accept_flags.iter().copied()).collect(),
            accepted: chains.iter().map(|c| c.accepted).sum(),
            proposed: chains.iter().map(|c| c.proposed).sum(),
            config: first.config.clone(),
            jitter_applied: first.jitter_applied,
        })
    }
}

/// Random stream for chain `index` under `seed`.
pub fn chain_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs the sampler from `mu = 0`, `alpha2 = 1`.
pub fn run_chain(w: &WinMatrix, cov: &ConstrainedCovariance, config: &SamplerConfig) -> Result<ChainSamples> {
    run_chain_with_rng(w, cov, config, &mut chain_rng(config.seed, 0))
}

/// Runs `n_chains` independent chains in parallel, chain `c` on stream `c`
/// of the configured seed.
pub fn run_chains(
    w: &WinMatrix,
    cov: &ConstrainedCovariance,
    config: &SamplerConfig,
    n_chains: usize,
) -> Result<Vec<ChainSamples>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain_with_rng(w, cov, config, &mut chain_rng(config.seed, c)))
        .collect()
}

pub fn run_chain_with_rng<R: Rng + ?Sized>(
    w: &WinMatrix,
    cov: &ConstrainedCovariance,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ChainSamples> {
    run_chain_from(w, cov, config, &MeritVector::zeros(w.n_entities()), rng)
}

/// Runs the sampler from `init` (centred first) and `alpha2 = 1`.
pub fn run_chain_from<R: Rng + ?Sized>(
    w: &WinMatrix,
    cov: &ConstrainedCovariance,
    config: &SamplerConfig,
    init: &MeritVector,
    rng: &mut R,
) -> Result<ChainSamples> {
    config.validate()?;
    w.validate()?;
    let m = w.n_entities();
    if cov.dim() != m {
        return Err(invalid!(
            "prior covariance is {} x {} but there are {m} entities",
            cov.dim(),
            cov.dim()
        ));
    }
    let conditional = config.alpha_conditional();
    let n_kept = config.n_kept();
    let mut mu_draws = DMatrix::zeros(n_kept, m);
    let mut alpha2_draws = Vec::with_capacity(n_kept);
    let mut loglik_draws = Vec::with_capacity(n_kept);
    let mut quad_draws = Vec::with_capacity(n_kept);
    let mut accept_flags = Vec::with_capacity(config.iterations - config.burn_in);
    let (mut accepted, mut proposed) = (0usize, 0usize);

    if init.len() != m {
        return Err(invalid!("initial state has {} merits for {m} entities", init.len()));
    }
    let mu0 = init.centered();
    let loglik0 = log_likelihood(&mu0, w);
    let mut state = ChainState {
        mu: mu0,
        alpha2: config.fixed_alpha2.unwrap_or(1.0),
        loglik: loglik0,
    };

    for t in 1..=config.iterations {
        if config.fixed_alpha2.is_none() {
            state.alpha2 = conditional.sample(&state.mu, cov, rng);
        }
        let proposal = pcn_propose(&state, cov, config.beta, rng);
        let loglik_new = log_likelihood(&proposal, w);
        if !loglik_new.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration: t });
        }
        let accept = mh_accept(loglik_new, state.loglik, rng);
        if accept {
            state.mu = proposal;
            state.loglik = loglik_new;
        }
        if t > config.burn_in {
            proposed += 1;
            accepted += accept as usize;
            accept_flags.push(accept);
            let offset = t - config.burn_in - 1;
            if offset % config.thin == 0 {
                let k = offset / config.thin;
                mu_draws.row_mut(k).copy_from(&state.mu.mu.transpose());
                alpha2_draws.push(state.alpha2);
                loglik_draws.push(state.loglik);
                quad_draws.push(cov.quadratic_form(&state.mu.mu));
            }
        }
    }

    Ok(ChainSamples {
        entities: w.entities.clone(),
        mu_draws,
        alpha2_draws,
        loglik_draws,
        quad_draws,
        accept_flags,
        accepted,
        proposed,
        config: config.clone(),
        jitter_applied: cov.jitter_applied,
    })
}

/// Column means of the kept draws.
pub fn posterior_mean(samples: &ChainSamples) -> Result<MeritVector> {
    let n = samples.n_kept();
    if n == 0 {
        return Err(invalid!("chain has no kept draws"));
    }
    let mean: DVector<f64> = samples.mu_draws.row_mean().transpose();
    Ok(MeritVector::new(mean))
}
