//! Log-likelihood accuracy of market prices against the realized outcome.

use crate::model::MarketModel;

/// Prices are floored here before taking logs, so a confidently wrong forecast
/// costs about `ln 1e-9` instead of `−∞`.
pub const LL_FLOOR: f64 = 1e-9;

fn floored_ln(p: f64) -> f64 {
    p.max(LL_FLOOR).ln()
}

/// Mean of `ln μ{X = x*}` over all variables.
pub fn variable_log_likelihood(model: &MarketModel, prices: &[f64], payoff: &[bool]) -> f64 {
    let vars = model.variables();
    if vars.is_empty() {
        return 0.0;
    }
    let total: f64 = vars
        .iter()
        .map(|v| {
            let p = v.securities.clone().filter(|&i| payoff[i]).map(|i| prices[i]).sum();
            floored_ln(p)
        })
        .sum();
    total / vars.len() as f64
}

/// `ln μ{X ∈ E}` if the event happened, `ln μ{X ∉ E}` otherwise.
pub fn bundle_log_likelihood(event: &[usize], prices: &[f64], payoff: &[bool]) -> f64 {
    let p: f64 = event.iter().map(|&i| prices[i]).sum();
    if event.iter().any(|&i| payoff[i]) {
        floored_ln(p)
    } else {
        floored_ln(1.0 - p)
    }
}

/// Mean bundle log likelihood over `events`; NaN when there are none.
pub fn mean_bundle_log_likelihood(events: &[Vec<usize>], prices: &[f64], payoff: &[bool]) -> f64 {
    if events.is_empty() {
        return f64::NAN;
    }
    let total: f64 = events
        .iter()
        .map(|e| bundle_log_likelihood(e, prices, payoff))
        .sum();
    total / events.len() as f64
}
