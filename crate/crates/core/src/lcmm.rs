//! Partial arbitrage removal along linear rows.
//!
//! Each violated row `a·μ ≥ rhs` is repaired by the market maker buying the
//! bundle `a·η` from itself. Every valid payoff satisfies the row, so the
//! bundle pays at least `(rhs − settled part)·η`; choosing `η` at or below the
//! root of `a·p(θ + aη) = rhs` keeps the concave guaranteed profit
//! `η·rhs − ΔC(η)` non-negative.

use crate::cost::{log_sum_exp, PartialOutcome, SumLmsr};
use crate::error::{Error, Result};
use crate::model::LinearRow;

/// Upper end of the doubling search for a row's trade size.
const ETA_CAP: f64 = (1u64 << 40) as f64;
const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcmmOptions {
    /// Rows violated by at most this much are left alone.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for LcmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_passes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcmmOutcome {
    pub theta: Vec<f64>,
    pub trades: usize,
    pub passes: usize,
    /// Largest row violation at the returned prices.
    pub max_violation: f64,
    pub converged: bool,
    /// Sum over trades of `η·(rhs − settled part) − ΔC`, a lower bound on the
    /// market maker's profit in every outcome.
    pub guaranteed_profit: f64,
}

/// A `≥` row restricted to the groups it can move.
struct Prepared {
    /// `(group, coefficients aligned with the group's open members)`.
    touched: Vec<(usize, Vec<f64>)>,
    /// `rhs` minus the contribution of securities whose price is fixed.
    rhs: f64,
}

struct Market<'a> {
    cost: &'a SumLmsr,
    /// Securities of each group that can still move; empty once a member is
    /// settled to 1.
    open: Vec<Vec<usize>>,
}

impl Market<'_> {
    /// `(a·p, C)` restricted to the row's groups at `θ + aη`.
    fn eval(&self, row: &Prepared, theta: &[f64], eta: f64) -> (f64, f64) {
        let b = self.cost.liquidity();
        let mut lhs = 0.0;
        let mut cost = 0.0;
        let mut scaled = Vec::new();
        for (g, coeffs) in &row.touched {
            scaled.clear();
            scaled.extend(
                self.open[*g]
                    .iter()
                    .zip(coeffs)
                    .map(|(&i, a)| (theta[i] + a * eta) / b),
            );
            let lse = log_sum_exp(scaled.iter().copied());
            cost += b * lse;
            lhs += scaled
                .iter()
                .zip(coeffs)
                .map(|(s, a)| a * (s - lse).exp())
                .sum::<f64>();
        }
        (lhs, cost)
    }

    /// Trade size for a row violated by more than `tol`, or `None` when no
    /// finite trade brings it within `tol / 4` (the row's bundle barely moves
    /// its prices).
    fn trade_size(&self, row: &Prepared, theta: &[f64], tol: f64) -> Option<f64> {
        let target = row.rhs - tol / 4.0;
        let gap = |eta: f64| self.eval(row, theta, eta).0 - target;
        let mut lo = 0.0;
        let mut hi = 1.0;
        loop {
            let g = gap(hi);
            if g >= 0.0 {
                if row.rhs >= self.eval(row, theta, hi).0 {
                    return Some(hi);
                }
                break;
            }
            lo = hi;
            if hi >= ETA_CAP {
                return None;
            }
            hi *= 2.0;
        }
        // gap(lo) < 0 ≤ gap(hi); stop on the first point inside the band
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let lhs = self.eval(row, theta, mid).0;
            if lhs < target {
                lo = mid;
            } else if lhs > row.rhs {
                hi = mid;
            } else {
                return Some(mid);
            }
        }
        Some(lo)
    }
}

/// Trades along violated `rows` until every row holds within `tol` at the
/// current prices or `max_passes` sweeps are done. Rows must be valid for
/// every outcome consistent with `sigma`.
pub fn remove_arbitrage(
    cost: &SumLmsr,
    theta: &[f64],
    sigma: &PartialOutcome,
    rows: &[LinearRow],
    options: &LcmmOptions,
) -> Result<LcmmOutcome> {
    if !(options.tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {}",
            options.tol
        )));
    }
    let start = cost.prices(theta, sigma)?;
    let n = cost.len();
    let mask = sigma.mask(n);
    let mut group_of = vec![0; n];
    let mut open = Vec::with_capacity(cost.groups().len());
    for (g, range) in cost.groups().iter().enumerate() {
        group_of[range.clone()].iter_mut().for_each(|x| *x = g);
        let won = range.clone().any(|i| mask[i] == Some(true));
        open.push(if won {
            Vec::new()
        } else {
            range.clone().filter(|&i| mask[i].is_none()).collect()
        });
    }
    let market = Market { cost, open };

    let mut prepared = Vec::new();
    for row in rows.iter().flat_map(|r| r.as_ge_rows()) {
        if let Some(&(i, _)) = row.coeffs.iter().find(|&&(i, _)| i >= n) {
            return Err(Error::InvalidInput(format!(
                "row mentions security {i}, market has {n}"
            )));
        }
        let mut rhs = row.rhs as f64;
        let mut touched: Vec<(usize, Vec<f64>)> = Vec::new();
        for &(i, a) in &row.coeffs {
            let g = group_of[i];
            match market.open[g].iter().position(|&j| j == i) {
                Some(k) => {
                    let slot = match touched.iter().position(|(h, _)| *h == g) {
                        Some(s) => s,
                        None => {
                            touched.push((g, vec![0.0; market.open[g].len()]));
                            touched.len() - 1
                        }
                    };
                    touched[slot].1[k] = a as f64;
                }
                None => rhs -= a as f64 * start[i],
            }
        }
        prepared.push(Prepared { touched, rhs });
    }

    let mut theta = theta.to_vec();
    let mut trades = 0;
    let mut passes = 0;
    let mut profit = 0.0;
    let violation = |row: &Prepared, theta: &[f64]| row.rhs - market.eval(row, theta, 0.0).0;
    while passes < options.max_passes {
        let mut order: Vec<(f64, usize)> = prepared
            .iter()
            .enumerate()
            .map(|(k, row)| (violation(row, &theta), k))
            .filter(|&(v, _)| v > options.tol)
            .collect();
        if order.is_empty() {
            break;
        }
        passes += 1;
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut moved = false;
        for (_, k) in order {
            let row = &prepared[k];
            let (lhs, before) = market.eval(row, &theta, 0.0);
            if row.rhs - lhs <= options.tol || row.touched.is_empty() {
                continue;
            }
            let Some(eta) = market.trade_size(row, &theta, options.tol) else {
                log::debug!("row {k} cannot be repaired by a finite trade");
                continue;
            };
            let after = market.eval(row, &theta, eta).1;
            profit += eta * row.rhs - (after - before);
            for (g, coeffs) in &row.touched {
                for (&i, a) in market.open[*g].iter().zip(coeffs) {
                    theta[i] += a * eta;
                }
            }
            trades += 1;
            moved = true;
        }
        if !moved {
            break;
        }
    }
    let max_violation = prepared
        .iter()
        .map(|row| violation(row, &theta))
        .fold(0.0, f64::max);
    let converged = max_violation <= options.tol;
    if !converged {
        log::debug!("arbitrage removal stopped after {passes} passes, max violation {max_violation:.3e}");
    }
    Ok(LcmmOutcome {
        theta,
        trades,
        passes,
        max_violation,
        converged,
        guaranteed_profit: profit,
    })
}
