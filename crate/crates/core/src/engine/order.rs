//! Limit orders against the restricted cost function.

use crate::cost::{log_sum_exp, PartialOutcome, SumLmsr};
use crate::error::{Error, Result};
use crate::model::{MarketModel, Value, VariableId};

/// Buy shares of the event `variable ∈ event` until the event's price reaches
/// `limit_price` or the trader has spent `budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeOrder {
    /// Simulated seconds.
    pub timestamp: f64,
    pub variable: VariableId,
    pub event: Vec<Value>,
    pub limit_price: f64,
    pub budget: f64,
}

impl TradeOrder {
    /// Security indices of the event, after checking the order is well formed.
    pub fn securities(&self, model: &MarketModel) -> Result<Vec<usize>> {
        let var = model
            .variables()
            .get(self.variable.0)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variable {}", self.variable.0)))?;
        if self.event.is_empty() || self.event.len() >= var.domain.len() {
            return Err(Error::InvalidInput(format!(
                "event on {} must be a nonempty proper subset of its {} values",
                var.name,
                var.domain.len()
            )));
        }
        let mut out = Vec::with_capacity(self.event.len());
        for v in &self.event {
            let i = var
                .security(v)
                .ok_or_else(|| Error::InvalidInput(format!("{} has no value {v}", var.name)))?;
            if out.contains(&i) {
                return Err(Error::InvalidInput(format!("event on {} repeats {v}", var.name)));
            }
            out.push(i);
        }
        out.sort_unstable();
        if !(0.0..=1.0).contains(&self.limit_price) {
            return Err(Error::InvalidInput(format!(
                "limit price {} is outside [0, 1]",
                self.limit_price
            )));
        }
        if !(self.budget >= 0.0) {
            return Err(Error::InvalidInput(format!("budget {} is negative", self.budget)));
        }
        Ok(out)
    }

    /// The same trade seen from the other side: selling `event` at price `p`
    /// is buying its complement at `1 − p`.
    pub fn complement(&self, model: &MarketModel) -> Result<TradeOrder> {
        self.securities(model)?;
        let var = model.variable(self.variable);
        Ok(TradeOrder {
            timestamp: self.timestamp,
            variable: self.variable,
            event: var
                .domain
                .iter()
                .filter(|v| !self.event.contains(v))
                .cloned()
                .collect(),
            limit_price: 1.0 - self.limit_price,
            budget: self.budget,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fill {
    /// `(security, shares)` for the event's unsettled securities.
    pub bundle: Vec<(usize, f64)>,
    pub shares: f64,
    pub cost: f64,
}

impl Fill {
    fn empty() -> Self {
        Fill {
            bundle: Vec::new(),
            shares: 0.0,
            cost: 0.0,
        }
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut delta = vec![0.0; n];
        for &(i, q) in &self.bundle {
            delta[i] += q;
        }
        delta
    }
}

/// Largest purchase the order allows at state `theta`. `budget` overrides the
/// order's own budget when given.
pub fn execute_limit_order(
    cost: &SumLmsr,
    model: &MarketModel,
    theta: &[f64],
    sigma: &PartialOutcome,
    order: &TradeOrder,
    budget: Option<f64>,
) -> Result<Fill> {
    let event = order.securities(model)?;
    let budget = budget.unwrap_or(order.budget);
    if !(budget >= 0.0) {
        return Err(Error::InvalidInput(format!("budget {budget} is negative")));
    }
    let range = model.variable(order.variable).securities.clone();
    if range.clone().any(|i| sigma.get(i) == Some(true)) {
        return Ok(Fill::empty());
    }
    let b = cost.liquidity();
    let open: Vec<usize> = range.filter(|&i| !sigma.is_settled(i)).collect();
    let (inside, outside): (Vec<usize>, Vec<usize>) = open.iter().partition(|i| event.contains(i));
    if inside.is_empty() || outside.is_empty() || budget == 0.0 {
        // the bundle is worthless, or its price is pinned at 1
        return Ok(Fill::empty());
    }
    let a = log_sum_exp(inside.iter().map(|&i| theta[i] / b));
    let r = log_sum_exp(outside.iter().map(|&i| theta[i] / b));
    let limit = order.limit_price;
    // price(q) = 1 / (1 + e^{r − a − q/b})
    let by_price = if limit >= 1.0 {
        f64::INFINITY
    } else if limit <= 0.0 {
        0.0
    } else {
        (limit / (1.0 - limit)).ln() + r - a
    };
    // cost(q) = b·(lse(a + q/b, r) − lse(a, r))
    let top = log_sum_exp([a, r].into_iter()) + budget / b;
    let by_budget = top + (-(r - top).exp()).ln_1p() - a;
    let steps = by_price.min(by_budget);
    if !(steps > 0.0) {
        return Ok(Fill::empty());
    }
    let shares = b * steps;
    let bundle: Vec<(usize, f64)> = inside.iter().map(|&i| (i, shares)).collect();
    let mut fill = Fill {
        bundle,
        shares,
        cost: 0.0,
    };
    fill.cost = cost.trade_cost(theta, sigma, &fill.dense(theta.len()))?;
    Ok(fill)
}
