//! Initial price construction.

use super::{LinearRow, MarketModel, Sense, Value, VariableId};
use crate::error::{Error, Result};

/// Smallest initial price; keeps `θ₀ = b ln μ₀` finite.
pub const PRICE_FLOOR: f64 = 1e-6;

const VARIANCE_FLOOR: f64 = 0.25;
const PROJECTION_PASSES: usize = 200;
const PROJECTION_TOL: f64 = 1e-8;

/// Clamps negatives, renormalizes (uniform if nothing is left), then floors
/// every entry at [`PRICE_FLOOR`] and renormalizes again.
pub(crate) fn normalize_with_floor(mut prices: Vec<f64>) -> Vec<f64> {
    for p in prices.iter_mut() {
        if !p.is_finite() || *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = prices.iter().sum();
    if total <= 0.0 {
        let n = prices.len() as f64;
        prices.iter_mut().for_each(|p| *p = 1.0 / n);
    } else {
        prices.iter_mut().for_each(|p| *p /= total);
    }
    if prices.len() > 1 && prices.iter().any(|&p| p < PRICE_FLOOR) {
        prices.iter_mut().for_each(|p| *p = p.max(PRICE_FLOOR));
        let total: f64 = prices.iter().sum();
        prices.iter_mut().for_each(|p| *p /= total);
    }
    prices
}

/// Normal density evaluated at the integer `support` points and renormalized.
/// The variance is floored at 0.25 so degenerate inputs do not collapse to a
/// point mass.
pub fn discretized_gaussian(support: &[i64], mean: f64, variance: f64) -> Vec<f64> {
    let variance = variance.max(VARIANCE_FLOOR);
    let logs: Vec<f64> = support
        .iter()
        .map(|&x| -((x as f64 - mean).powi(2)) / (2.0 * variance))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Euclidean projection of `point` onto `{x ∈ [0,1]^n : rows}` by Dykstra's
/// alternating projections. Stops after a pass that moves no coordinate by
/// more than 1e-8, or after 200 passes.
pub fn euclidean_projection(point: &[f64], rows: &[LinearRow]) -> Vec<f64> {
    let n = point.len();
    let mut x = point.to_vec();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.coeffs.iter().map(|&(_, c)| (c * c) as f64).sum())
        .collect();
    // Dykstra increments: rows keep a scalar multiple of their normal.
    let mut row_inc = vec![0.0; rows.len()];
    let mut box_inc = vec![0.0; n];
    for _ in 0..PROJECTION_PASSES {
        let mut moved: f64 = 0.0;
        for (k, row) in rows.iter().enumerate() {
            if norms[k] == 0.0 {
                continue;
            }
            let c_old = row_inc[k];
            let dot: f64 = row
                .coeffs
                .iter()
                .map(|&(i, c)| c as f64 * (x[i] + c_old * c as f64))
                .sum();
            let mut t = (row.rhs as f64 - dot) / norms[k];
            if row.sense == Sense::Ge {
                t = t.max(0.0);
            }
            // x_new = y + t a,  y = x + c_old a,  increment = y − x_new = −t a
            let step = c_old + t;
            for &(i, c) in &row.coeffs {
                let d = step * c as f64;
                x[i] += d;
                moved = moved.max(d.abs());
            }
            row_inc[k] = -t;
        }
        for i in 0..n {
            let y = x[i] + box_inc[i];
            let proj = y.clamp(0.0, 1.0);
            moved = moved.max((proj - x[i]).abs());
            box_inc[i] = y - proj;
            x[i] = proj;
        }
        if moved < PROJECTION_TOL {
            break;
        }
    }
    x
}

impl MarketModel {
    /// Recomputes the tournament's initial prices from champion prices and an
    /// observed price window (`(security index, last traded price)` pairs):
    ///
    /// * `μ{G_{r,t}=t} = μ'{X_t=k} / Σ_{t'∈T} μ'{X_{t'}=k}` over the teams `T`
    ///   that can reach the game, uniform when the denominator is zero;
    /// * `μ{X_t=x}` is the observed price if any, otherwise
    ///   `μ'{G_{x,t}=t} − μ'{G_{x+1,t}=t}` with computed game prices filling
    ///   gaps, clamped at zero and renormalized per team;
    /// * the result is projected onto the tournament's LCMM rows.
    ///
    /// Returns the full initial price vector.
    pub fn init_prices(&mut self, window: &[(usize, f64)]) -> Result<Vec<f64>> {
        let t = self
            .tournament
            .clone()
            .ok_or_else(|| Error::InvalidModel("price initialization needs a tournament".into()))?;
        let n = self.n_securities();
        let mut observed: Vec<Option<f64>> = vec![None; n];
        for &(i, p) in window {
            if i >= n || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("bad window entry ({i}, {p})")));
            }
            observed[i] = Some(p);
        }
        let k = t.rounds;
        let teams = t.teams();
        let champ: Vec<f64> = (1..=teams)
            .map(|team| {
                let x = self.variable(t.team_wins[(team - 1) as usize]);
                let idx = x.security(&Value::Int(k as i64)).expect("k wins");
                observed[idx]
                    .or_else(|| t.champion_prices.get((team - 1) as usize).copied())
                    .unwrap_or(0.0)
            })
            .collect();

        let mut mu = self.initial_prices.clone();
        for game in t.game_order() {
            let var = self.variable(game).clone();
            let members: Vec<u32> = var
                .domain
                .iter()
                .map(|v| match v {
                    Value::Team(team) => *team,
                    _ => unreachable!("game domains hold teams"),
                })
                .collect();
            let denom: f64 = members.iter().map(|&m| champ[(m - 1) as usize]).sum();
            for (k, &m) in members.iter().enumerate() {
                mu[var.securities.start + k] = if denom > 0.0 {
                    champ[(m - 1) as usize] / denom
                } else {
                    1.0 / members.len() as f64
                };
            }
        }

        let reach = |mu: &[f64], round: u32, team: u32| -> f64 {
            if round == 0 {
                return 1.0;
            }
            if round > k {
                return 0.0;
            }
            let g = self.variable(t.game_of(round, team));
            let idx = g.security(&Value::Team(team)).expect("team in game");
            observed[idx].unwrap_or(mu[idx])
        };
        for team in 1..=teams {
            let x = self.variable(t.team_wins[(team - 1) as usize]).clone();
            let raw: Vec<f64> = (0..=k)
                .map(|wins| {
                    let idx = x.securities.start + wins as usize;
                    observed[idx]
                        .unwrap_or_else(|| reach(&mu, wins, team) - reach(&mu, wins + 1, team))
                        .max(0.0)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            for (w, p) in raw.iter().enumerate() {
                mu[x.securities.start + w] = if total > 0.0 {
                    p / total
                } else {
                    1.0 / raw.len() as f64
                };
            }
        }

        let ids: Vec<VariableId> = t.team_wins.iter().copied().chain(t.game_order()).collect();
        let lo = ids.iter().map(|&id| self.variable(id).securities.start).min().unwrap_or(0);
        let hi = ids.iter().map(|&id| self.variable(id).securities.end).max().unwrap_or(0);
        let rows: Vec<LinearRow> = self
            .lcmm_rows
            .iter()
            .filter(|r| r.coeffs.iter().all(|&(i, _)| (lo..hi).contains(&i)))
            .map(|r| LinearRow {
                coeffs: r.coeffs.iter().map(|&(i, c)| (i - lo, c)).collect(),
                sense: r.sense,
                rhs: r.rhs,
            })
            .collect();
        let projected = euclidean_projection(&mu[lo..hi], &rows);
        mu[lo..hi].copy_from_slice(&projected);

        for id in ids {
            let range = self.variable(id).securities.clone();
            let normalized = normalize_with_floor(mu[range.clone()].to_vec());
            mu[range].copy_from_slice(&normalized);
        }
        self.initial_prices = mu.clone();
        Ok(mu)
    }
}
