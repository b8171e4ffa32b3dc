//! Sum-of-LMSR cost function and its conjugate machinery.
//!
//! The market runs one LMSR per variable group:
//!
//! ```text
//! C(θ) = b Σ_groups ln Σ_{x ∈ group} exp(θ_x / b)
//! ```
//!
//! Every function here is also defined relative to a [`PartialOutcome`] σ.
//! Settled securities have their prices pinned to the settled bit; within a
//! group, a security settled to 1 makes the group contribute `θ_{x*}` to the
//! cost, and securities settled to 0 simply drop out of the log-sum-exp.
//! With σ = ∅ everything reduces to the plain sum of LMSRs.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};

/// Tolerance on per-group mass when testing simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Entries down to this negative value are clamped to zero.
pub const NEGATIVE_TOL: f64 = 1e-12;

/// A real number or the `+∞` sentinel. Variant order makes comparisons total
/// for finite payloads: every finite value sorts below `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Maps the sentinel to `f64::INFINITY`, for callers that only compare.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

/// Set of securities whose payoff is already known, keyed by security index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PartialOutcome {
    settled: BTreeMap<usize, bool>,
}

impl PartialOutcome {
    pub fn new() -> Self {
        Self::default()
    }

    /// Settles `index` to `bit`. Re-settling to the same bit is a no-op;
    /// flipping a settled bit is a consistency violation.
    pub fn settle(&mut self, index: usize, bit: bool) -> Result<bool> {
        match self.settled.get(&index) {
            Some(&existing) if existing == bit => Ok(false),
            Some(_) => Err(Error::Consistency(format!(
                "security {index} already settled to {}",
                !bit as u8
            ))),
            None => {
                self.settled.insert(index, bit);
                Ok(true)
            }
        }
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        self.settled.get(&index).copied()
    }

    pub fn is_settled(&self, index: usize) -> bool {
        self.settled.contains_key(&index)
    }

    pub fn len(&self) -> usize {
        self.settled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settled.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.settled.iter().map(|(&i, &b)| (i, b))
    }

    /// Dense view over `n` securities.
    pub fn mask(&self, n: usize) -> Vec<Option<bool>> {
        let mut mask = vec![None; n];
        for (i, b) in self.iter() {
            if i < n {
                mask[i] = Some(b);
            }
        }
        mask
    }

    /// True if every settled bit of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &PartialOutcome) -> bool {
        self.iter().all(|(i, b)| other.get(i) == Some(b))
    }

    /// True if `vertex` agrees with every settled bit.
    pub fn matches(&self, vertex: &[bool]) -> bool {
        self.iter().all(|(i, b)| vertex.get(i) == Some(&b))
    }
}

impl FromIterator<(usize, bool)> for PartialOutcome {
    fn from_iter<T: IntoIterator<Item = (usize, bool)>>(iter: T) -> Self {
        Self {
            settled: iter.into_iter().collect(),
        }
    }
}

/// Numerically stable `ln Σ exp(x)`; returns `-∞` for an empty iterator.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// How a group looks under a partial outcome.
enum GroupView {
    /// One security is settled to 1.
    Won(usize),
    /// No security settled to 1; the listed ones are still open.
    Open(Vec<usize>),
}

/// The sum-of-LMSR cost function over a fixed partition of securities into
/// variable groups, with a single global liquidity `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumLmsr {
    groups: Vec<Range<usize>>,
    liquidity: f64,
}

impl SumLmsr {
    /// `groups` must be nonempty, contiguous and cover `0..n` in order.
    pub fn new(groups: Vec<Range<usize>>, liquidity: f64) -> Result<Self> {
        if !(liquidity.is_finite() && liquidity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "liquidity must be positive, got {liquidity}"
            )));
        }
        let mut next = 0;
        for g in &groups {
            if g.start != next || g.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "variable groups must be nonempty and contiguous, found {g:?} after {next}"
                )));
            }
            next = g.end;
        }
        Ok(Self { groups, liquidity })
    }

    pub fn liquidity(&self) -> f64 {
        self.liquidity
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    /// Number of securities.
    pub fn len(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{what} has {} entries, market has {} securities",
                v.len(),
                self.len()
            )));
        }
        Ok(())
    }

    fn view(&self, g: &Range<usize>, mask: &[Option<bool>]) -> Result<GroupView> {
        let mut won = None;
        let mut open = Vec::with_capacity(g.len());
        for i in g.clone() {
            match mask[i] {
                Some(true) => {
                    if let Some(prev) = won {
                        return Err(Error::Consistency(format!(
                            "securities {prev} and {i} of one group are both settled to 1"
                        )));
                    }
                    won = Some(i);
                }
                Some(false) => {}
                None => open.push(i),
            }
        }
        match won {
            Some(i) => Ok(GroupView::Won(i)),
            None if open.is_empty() => Err(Error::Consistency(format!(
                "every security of group {}..{} is settled to 0",
                g.start, g.end
            ))),
            None => Ok(GroupView::Open(open)),
        }
    }

    fn group_cost(&self, g: &Range<usize>, theta: &[f64], mask: &[Option<bool>]) -> Result<f64> {
        let b = self.liquidity;
        Ok(match self.view(g, mask)? {
            GroupView::Won(i) => theta[i],
            GroupView::Open(open) => b * log_sum_exp(open.iter().map(|&i| theta[i] / b)),
        })
    }

    /// Restricted cost `C_σ(θ)`.
    pub fn cost(&self, theta: &[f64], sigma: &PartialOutcome) -> Result<f64> {
        self.check_len("theta", theta)?;
        let mask = sigma.mask(self.len());
        self.groups
            .iter()
            .map(|g| self.group_cost(g, theta, &mask))
            .sum()
    }

    /// Restricted price map `p_σ(θ) = ∇C_σ(θ)`.
    pub fn prices(&self, theta: &[f64], sigma: &PartialOutcome) -> Result<Vec<f64>> {
        self.check_len("theta", theta)?;
        let mask = sigma.mask(self.len());
        let mut mu = vec![0.0; self.len()];
        for g in &self.groups {
            match self.view(g, &mask)? {
                GroupView::Won(i) => mu[i] = 1.0,
                GroupView::Open(open) => {
                    let b = self.liquidity;
                    let max = open
                        .iter()
                        .map(|&i| theta[i] / b)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for &i in &open {
                        let w = (theta[i] / b - max).exp();
                        mu[i] = w;
                        total += w;
                    }
                    for &i in &open {
                        mu[i] /= total;
                    }
                }
            }
        }
        Ok(mu)
    }

    /// `C_σ(θ + δ) − C_σ(θ)`, accumulated group by group over the groups the
    /// bundle touches.
    pub fn trade_cost(&self, theta: &[f64], sigma: &PartialOutcome, delta: &[f64]) -> Result<f64> {
        self.check_len("theta", theta)?;
        self.check_len("bundle", delta)?;
        let mask = sigma.mask(self.len());
        let moved: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + d).collect();
        let mut total = 0.0;
        for g in &self.groups {
            if delta[g.clone()].iter().all(|&d| d == 0.0) {
                // still validates the group
                self.view(g, &mask)?;
                continue;
            }
            total += self.group_cost(g, &moved, &mask)? - self.group_cost(g, theta, &mask)?;
        }
        Ok(total)
    }

    /// Conjugate `R_σ(μ) = b Σ μ ln μ` when every group of `μ` lies on its
    /// simplex and agrees with σ; the `+∞` sentinel otherwise.
    pub fn conjugate(&self, mu: &[f64], sigma: &PartialOutcome) -> Extended {
        if mu.len() != self.len() || mu.iter().any(|v| !v.is_finite()) {
            return Extended::Infinite;
        }
        let mask = sigma.mask(self.len());
        let mut total = 0.0;
        for g in &self.groups {
            let mut mass = 0.0;
            for i in g.clone() {
                let v = mu[i];
                if v < -NEGATIVE_TOL {
                    return Extended::Infinite;
                }
                if let Some(bit) = mask[i] {
                    if (v - bit as u8 as f64).abs() > SIMPLEX_TOL {
                        return Extended::Infinite;
                    }
                }
                mass += v.max(0.0);
                total += xlogx(v);
            }
            if (mass - 1.0).abs() > SIMPLEX_TOL {
                return Extended::Infinite;
            }
        }
        Extended::Finite(self.liquidity * total)
    }

    /// Mixed Bregman divergence `D_σ(μ‖θ) = R_σ(μ) + C_σ(θ) − θ·μ`.
    ///
    /// Evaluated per group with the log-sum-exp shift folded in, so that large
    /// `θ/b` does not cancel catastrophically.
    pub fn divergence(&self, mu: &[f64], theta: &[f64], sigma: &PartialOutcome) -> Result<Extended> {
        self.check_len("theta", theta)?;
        if !self.conjugate(mu, sigma).is_finite() {
            // still surface inconsistent σ as an error
            self.cost(theta, sigma)?;
            return Ok(Extended::Infinite);
        }
        let b = self.liquidity;
        let mask = sigma.mask(self.len());
        let mut total = 0.0;
        for g in &self.groups {
            let entropy: f64 = g.clone().map(|i| xlogx(mu[i])).sum();
            match self.view(g, &mask)? {
                GroupView::Won(w) => {
                    let dot: f64 = g.clone().map(|i| theta[i] * mu[i].max(0.0)).sum();
                    total += b * entropy + theta[w] - dot;
                }
                GroupView::Open(open) => {
                    let max = open
                        .iter()
                        .map(|&i| theta[i] / b)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let lse = log_sum_exp(open.iter().map(|&i| theta[i] / b - max));
                    let mut open_mass = 0.0;
                    let mut shifted_dot = 0.0;
                    for &i in &open {
                        let m = mu[i].max(0.0);
                        open_mass += m;
                        shifted_dot += m * (theta[i] / b - max);
                    }
                    let settled_dot: f64 = g
                        .clone()
                        .filter(|&i| mask[i].is_some())
                        .map(|i| theta[i] * mu[i].max(0.0))
                        .sum();
                    total += b * (entropy - shifted_dot + lse + max * (1.0 - open_mass))
                        - settled_dot;
                }
            }
        }
        Ok(Extended::Finite(total))
    }

    /// Gradient of the differentiable extension of `R_σ`: `b(1 + ln μ_i)` on
    /// unsettled coordinates, zero on settled ones.
    pub fn conjugate_gradient(&self, mu: &[f64], sigma: &PartialOutcome) -> Result<Vec<f64>> {
        self.check_len("mu", mu)?;
        let b = self.liquidity;
        let mask = sigma.mask(self.len());
        mu.iter()
            .enumerate()
            .map(|(i, &m)| {
                if mask[i].is_some() {
                    Ok(0.0)
                } else if m > 0.0 && m < 1.0 {
                    Ok(b * (1.0 + m.ln()))
                } else {
                    Err(Error::Boundary { index: i, value: m })
                }
            })
            .collect()
    }
}
