//! Bregman projection of a market state onto the marginal polytope `M_σ` by
//! fully-corrective Frank-Wolfe over a contracted polytope.
//!
//! The objective is `F(μ) = D_σ̂(μ‖θ)`. Each iteration minimizes `F` over the
//! hull of the active vertices pulled towards the interior point `u` by a
//! factor `ε`, asks the oracle for the descent vertex of `∇F = θ_t − θ` and
//! shrinks `ε` when the interior point starts to dominate the gap. The
//! iterate with the largest `F − g` is the one a trade is made to, because
//! moving to `θ_t` earns at least `F(μ_t) − g(μ_t)` in every outcome.

mod init;
mod inner;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

pub use init::{init_fw, InitOutcome};

use crate::cost::{PartialOutcome, SumLmsr};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleStatus};
use inner::{inner_solve, Entropic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwOptions {
    /// Fraction of the available arbitrage profit to lock in before stopping.
    pub alpha: f64,
    /// Initial contraction towards the interior point.
    pub eps0: f64,
    /// Divergence below which the state counts as coherent.
    pub eps_d: f64,
    /// Iterations after which the run stops as if interrupted.
    pub max_iterations: usize,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            eps0: 0.5,
            eps_d: 1e-6,
            max_iterations: 2000,
        }
    }
}

impl FwOptions {
    fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.alpha) || !open_unit(self.eps0) || !(self.eps_d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < alpha < 1, 0 < eps0 < 1 and eps_d > 0, got {}, {}, {}",
                self.alpha, self.eps0, self.eps_d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// Stopped with `g ≤ (1 − α)F`; the trade earns at least `α·F`.
    ProfitGuaranteed,
    /// `F ≤ ε_D`: the state is left alone.
    AlreadyCoherent,
    /// Stopped early on an iterate with `F ≥ g`, so the trade cannot lose.
    Interrupted,
    /// Stopped early with nothing safe to trade to; the state is unchanged.
    NoUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub status: ProjectionStatus,
    pub theta: Vec<f64>,
    /// The input partial outcome plus logically forced settlements.
    pub sigma: PartialOutcome,
    pub iterations: usize,
    /// `F` and `g` at the iterate traded to (or the last one computed).
    pub divergence: f64,
    pub gap: f64,
    /// Lower bound on the trade's profit in every outcome (0 without a trade).
    pub guaranteed_profit: f64,
    pub oracle_calls: usize,
    pub active_vertices: usize,
    pub epsilon: f64,
}

/// `(∇R(μ) − θ)·(μ − z)`, the Frank-Wolfe gap at `μ` when `z` is the oracle's
/// descent vertex.
pub fn fw_gap(cost: &SumLmsr, mu: &[f64], theta: &[f64], vertex: &[bool], sigma: &PartialOutcome) -> Result<f64> {
    let grad = cost.conjugate_gradient(mu, sigma)?;
    if theta.len() != mu.len() || vertex.len() != mu.len() {
        return Err(Error::InvalidInput("gap inputs differ in length".into()));
    }
    Ok(grad
        .iter()
        .zip(theta)
        .zip(mu.iter().zip(vertex))
        .map(|((g, t), (m, &z))| (g - t) * (m - z as u8 as f64))
        .sum())
}

/// One iterate worth remembering.
#[derive(Debug, Clone)]
struct Iterate {
    mu: Vec<f64>,
    f: f64,
    g: f64,
}

impl Iterate {
    fn margin(&self) -> f64 {
        self.f - self.g
    }
}

fn keep_better(slot: &mut Option<Iterate>, candidate: &Iterate) {
    if slot.as_ref().is_none_or(|b| candidate.margin() > b.margin()) {
        *slot = Some(candidate.clone());
    }
}

/// Projects `theta` onto `M_σ` (approximately, per `options`) and returns the
/// state to trade to. `deadline` bounds every oracle call; `cancel` is polled
/// between iterations.
pub fn project_fw(
    cost: &SumLmsr,
    theta: &[f64],
    sigma: &PartialOutcome,
    oracle: &Oracle,
    options: &FwOptions,
    deadline: Option<Instant>,
    cancel: Option<&AtomicBool>,
) -> Result<ProjectionResult> {
    options.validate()?;
    let n = cost.len();
    if theta.len() != n || oracle.n_securities() != n {
        return Err(Error::InvalidInput(format!(
            "state has {} entries, market {n}, oracle {}",
            theta.len(),
            oracle.n_securities()
        )));
    }
    // surfaces an inconsistent σ before any work
    cost.cost(theta, sigma)?;
    let stop_requested =
        || cancel.is_some_and(|c| c.load(Ordering::Relaxed)) || deadline.is_some_and(|d| Instant::now() >= d);
    let mut result = ProjectionResult {
        status: ProjectionStatus::NoUpdate,
        theta: theta.to_vec(),
        sigma: sigma.clone(),
        iterations: 0,
        divergence: f64::NAN,
        gap: f64::NAN,
        guaranteed_profit: 0.0,
        oracle_calls: 0,
        active_vertices: 0,
        epsilon: options.eps0,
    };
    if stop_requested() {
        return Ok(result);
    }
    let init = init_fw(oracle, sigma, deadline)?;
    result.sigma = init.sigma.clone();
    result.oracle_calls = init.oracle_calls;
    result.active_vertices = init.vertices.len();
    if !init.complete {
        return Ok(result);
    }
    let sigma = init.sigma;
    let open: Vec<usize> = (0..n).filter(|&i| !sigma.is_settled(i)).collect();
    if open.is_empty() {
        result.status = ProjectionStatus::AlreadyCoherent;
        result.divergence = 0.0;
        result.gap = 0.0;
        return Ok(result);
    }
    let theta_open: Vec<f64> = open.iter().map(|&i| theta[i]).collect();
    let objective = Entropic {
        b: cost.liquidity(),
        theta: &theta_open,
    };
    let u = &init.interior;
    let inner_tol = (options.eps_d / 10.0).min(1e-8);
    let mut vertices = init.vertices;
    let mut warm: Option<Vec<f64>> = None;
    let mut eps = options.eps0;
    let mut best: Option<Iterate> = None;
    let mut best_qualified: Option<Iterate> = None;
    let mut previous_gap = f64::INFINITY;
    let mut mu = vec![0.0; n];
    for i in 0..n {
        if let Some(bit) = sigma.get(i) {
            mu[i] = bit as u8 as f64;
        }
    }

    let outcome = loop {
        if result.iterations >= options.max_iterations || stop_requested() {
            break None;
        }
        result.iterations += 1;
        let points: Vec<Vec<f64>> = vertices
            .iter()
            .map(|z| {
                open.iter()
                    .map(|&i| (1.0 - eps) * (z[i] as u8 as f64) + eps * u[i])
                    .collect()
            })
            .collect();
        let solved = inner_solve(&objective, &points, warm.as_deref(), inner_tol);
        for (&i, &x) in open.iter().zip(&solved.x) {
            mu[i] = x;
        }
        let theta_t = cost.conjugate_gradient(&mu, &sigma)?;
        let c: Vec<f64> = theta_t.iter().zip(theta).map(|(a, b)| a - b).collect();
        result.oracle_calls += 1;
        let answer = oracle.minimize(&c, &sigma, deadline)?;
        let z = match answer.status {
            OracleStatus::Optimal => answer.vertex.expect("optimal vertex"),
            OracleStatus::TimedOut => break None,
            OracleStatus::Infeasible => {
                return Err(Error::Consistency(
                    "no valid payoff vector matches the settled securities".into(),
                ))
            }
        };
        let g: f64 = c
            .iter()
            .zip(mu.iter().zip(&z))
            .map(|(ci, (m, &zi))| ci * (m - zi as u8 as f64))
            .sum();
        let f = cost
            .divergence(&mu, theta, &sigma)?
            .finite()
            .ok_or_else(|| Error::InvalidInput("iterate left the price simplex".into()))?;
        let current = Iterate { mu: mu.clone(), f, g };
        keep_better(&mut best, &current);
        let qualified = g <= (1.0 - options.alpha) * f;
        if qualified {
            keep_better(&mut best_qualified, &current);
        }
        result.divergence = f;
        result.gap = g;
        log::trace!(
            "fw iteration {}: F {f:.6e} gap {g:.6e} eps {eps:.3e} inner steps {} inner gap {:.2e}",
            result.iterations,
            solved.steps,
            solved.gap
        );
        if f <= options.eps_d {
            break Some(ProjectionStatus::AlreadyCoherent);
        }
        if qualified {
            break Some(ProjectionStatus::ProfitGuaranteed);
        }

        let g_u: f64 = c
            .iter()
            .zip(mu.iter().zip(u))
            .map(|(ci, (m, ui))| ci * (m - ui))
            .sum();
        let previous_eps = eps;
        if g_u < 0.0 && g / (-4.0 * g_u) < eps {
            eps = (g / (-4.0 * g_u)).min(eps / 2.0);
        }
        if vertices.contains(&z) {
            if g >= previous_gap {
                eps = eps.min(previous_eps / 2.0);
            }
            warm = Some(solved.weights);
        } else {
            vertices.push(z);
            let mut w = solved.weights;
            w.push(0.0);
            warm = Some(w);
        }
        previous_gap = g;
        result.epsilon = eps;
    };
    result.active_vertices = vertices.len();

    let chosen = match outcome {
        Some(ProjectionStatus::AlreadyCoherent) => {
            result.status = ProjectionStatus::AlreadyCoherent;
            return Ok(result);
        }
        Some(status) => best_qualified.map(|it| (status, it)),
        None => best
            .filter(|it| it.margin() >= 0.0)
            .map(|it| (ProjectionStatus::Interrupted, it)),
    };
    if let Some((status, it)) = chosen {
        result.status = status;
        result.theta = cost.conjugate_gradient(&it.mu, &sigma)?;
        result.divergence = it.f;
        result.gap = it.g;
        result.guaranteed_profit = it.margin();
    }
    Ok(result)
}
