//! The trading loop: limit orders, settlements, arbitrage removal per
//! treatment, payouts, loss accounting and accuracy snapshots.
//!
//! The loop is single-threaded and deterministic given its inputs, except
//! that a projection hitting its wall-clock deadline stops early.

mod ledger;
mod metrics;
mod order;
mod settle;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

pub use ledger::{ArbitrageSource, Bundle, Ledger, LedgerEntry};
pub use metrics::{
    bundle_log_likelihood, mean_bundle_log_likelihood, variable_log_likelihood, LL_FLOOR,
};
pub use order::{execute_limit_order, Fill, TradeOrder};
pub use settle::{apply_settlement, final_outcome, SettlementEvent};

use crate::cost::{PartialOutcome, SumLmsr};
use crate::error::{Error, Result};
use crate::lcmm::{remove_arbitrage, LcmmOptions};
use crate::model::{MarketModel, Outcome};
use crate::oracle::{Backend, Oracle, OracleStatus};
use crate::projection::{project_fw, FwOptions, ProjectionStatus};

/// Snapshot cadence in simulated seconds.
pub const SNAPSHOT_SECONDS: f64 = 3600.0;
/// Snapshot cadence in processed orders.
pub const SNAPSHOT_TRADES: usize = 100;
/// Slack on the worst-case loss check.
pub const LOSS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Treatment {
    /// Independent markets: orders and direct settlement only.
    Ind,
    /// Trades along violated linear rows after every order.
    Lcmm,
    /// LCMM plus periodic Frank-Wolfe projection.
    Fwmm,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::Ind, Treatment::Lcmm, Treatment::Fwmm];
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Treatment::Ind => "ind",
            Treatment::Lcmm => "lcmm",
            Treatment::Fwmm => "fwmm",
        })
    }
}

impl FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" => Ok(Treatment::Ind),
            "lcmm" => Ok(Treatment::Lcmm),
            "fwmm" => Ok(Treatment::Fwmm),
            other => Err(Error::InvalidInput(format!(
                "unknown treatment {other}, expected ind, lcmm or fwmm"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub treatment: Treatment,
    pub liquidity: f64,
    /// Replaces every order's own budget when set.
    pub budget: Option<f64>,
    pub fw: FwOptions,
    pub lcmm: LcmmOptions,
    /// Orders between projection attempts.
    pub cadence: usize,
    /// Wall-clock budget of one projection.
    pub deadline: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            treatment: Treatment::Fwmm,
            liquidity: 150.0,
            budget: None,
            fw: FwOptions::default(),
            lcmm: LcmmOptions::default(),
            cadence: 100,
            deadline: Duration::from_secs(10),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.liquidity.is_finite() && self.liquidity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "liquidity must be positive, got {}",
                self.liquidity
            )));
        }
        if self.budget.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "budget must be positive, got {}",
                self.budget.unwrap()
            )));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidInput("projection cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics at one point of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub timestamp: f64,
    /// Orders processed so far, filled or not.
    pub n_trades: usize,
    pub avg_variable_ll: f64,
    /// NaN until some order has been filled.
    pub avg_bundle_ll: f64,
    /// Cash collected from traders so far.
    pub mm_cash: f64,
    /// Most recent projection, if any.
    pub projection_status: Option<ProjectionStatus>,
}

pub fn status_label(status: Option<ProjectionStatus>) -> &'static str {
    match status {
        None => "none",
        Some(ProjectionStatus::ProfitGuaranteed) => "profit_guaranteed",
        Some(ProjectionStatus::AlreadyCoherent) => "already_coherent",
        Some(ProjectionStatus::Interrupted) => "interrupted",
        Some(ProjectionStatus::NoUpdate) => "no_update",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRecord {
    pub timestamp: f64,
    pub n_trades: usize,
    pub status: ProjectionStatus,
    pub iterations: usize,
    pub divergence: f64,
    pub guaranteed_profit: f64,
    /// Securities the oracle proved settled beyond the direct rules.
    pub extended: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub ledger: Ledger,
    pub snapshots: Vec<Snapshot>,
    pub projections: Vec<ProjectionRecord>,
    /// Orders that bought a positive quantity.
    pub filled: usize,
    /// `max_z D(z‖θ₀)`, the worst-case loss of the market maker.
    pub loss_bound: f64,
    /// Largest recorded-versus-replayed cost difference.
    pub replay_error: f64,
    pub theta: Vec<f64>,
    pub sigma: PartialOutcome,
}

impl RunReport {
    pub fn loss(&self) -> f64 {
        self.ledger.loss()
    }

    pub fn within_bound(&self) -> bool {
        self.loss() <= self.loss_bound + LOSS_TOLERANCE
    }
}

/// `max_z D(z‖θ) = C(θ) − min_z θ·z` over all valid payoffs.
pub fn worst_case_loss(cost: &SumLmsr, oracle: &Oracle, theta: &[f64]) -> Result<f64> {
    let sigma = PartialOutcome::new();
    let answer = oracle.minimize(theta, &sigma, None)?;
    match answer.status {
        OracleStatus::Optimal => Ok(cost.cost(theta, &sigma)? - answer.value.expect("optimal value")),
        _ => Err(Error::Consistency("the model has no valid payoff".into())),
    }
}

enum Event<'a> {
    Order(usize, &'a TradeOrder),
    Settlement(&'a SettlementEvent),
}

impl Event<'_> {
    fn timestamp(&self) -> f64 {
        match self {
            Event::Order(_, o) => o.timestamp,
            Event::Settlement(s) => s.timestamp,
        }
    }
}

fn check_sorted<'a>(what: &str, times: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (k, &t) in times.enumerate() {
        if !t.is_finite() || t < last {
            return Err(Error::InvalidInput(format!(
                "{what} {} has timestamp {t} out of order",
                k + 1
            )));
        }
        last = t;
    }
    Ok(())
}

/// Nonzero entries of `to − from`, skipping settled coordinates.
fn difference(from: &[f64], to: &[f64], sigma: &PartialOutcome) -> Bundle {
    from.iter()
        .zip(to)
        .enumerate()
        .filter(|(i, (a, b))| a != b && !sigma.is_settled(*i))
        .map(|(i, (a, b))| (i, b - a))
        .collect()
}

struct Market<'a> {
    config: &'a RunConfig,
    model: &'a MarketModel,
    cost: SumLmsr,
    oracle: Option<Oracle>,
    payoff: Vec<bool>,
    theta: Vec<f64>,
    sigma: PartialOutcome,
    ledger: Ledger,
    snapshots: Vec<Snapshot>,
    projections: Vec<ProjectionRecord>,
    purchased: Vec<Vec<usize>>,
    trades: usize,
    filled: usize,
    since_projection: usize,
    last_status: Option<ProjectionStatus>,
}

impl Market<'_> {
    fn snapshot(&mut self, timestamp: f64) -> Result<()> {
        let prices = self.cost.prices(&self.theta, &self.sigma)?;
        self.snapshots.push(Snapshot {
            timestamp,
            n_trades: self.trades,
            avg_variable_ll: variable_log_likelihood(self.model, &prices, &self.payoff),
            avg_bundle_ll: mean_bundle_log_likelihood(&self.purchased, &prices, &self.payoff),
            mm_cash: self.ledger.revenue,
            projection_status: self.last_status,
        });
        Ok(())
    }

    fn record_settlements(&mut self, next: PartialOutcome) {
        let securities: Vec<(usize, bool)> = next
            .iter()
            .filter(|&(i, _)| !self.sigma.is_settled(i))
            .collect();
        if !securities.is_empty() {
            self.ledger.entries.push(LedgerEntry::Settle { securities });
        }
        self.sigma = next;
    }

    /// Moves to `target` as a market-maker trade.
    fn self_trade(&mut self, target: &[f64], source: ArbitrageSource, guaranteed_profit: f64) -> Result<()> {
        let bundle = difference(&self.theta, target, &self.sigma);
        if bundle.is_empty() {
            return Ok(());
        }
        let mut delta = vec![0.0; self.theta.len()];
        for &(i, q) in &bundle {
            delta[i] = q;
        }
        let cost = self.cost.trade_cost(&self.theta, &self.sigma, &delta)?;
        for &(i, q) in &bundle {
            self.theta[i] += q;
        }
        self.ledger.entries.push(LedgerEntry::Arbitrage {
            source,
            bundle,
            cost,
            guaranteed_profit,
        });
        Ok(())
    }

    fn order(&mut self, index: usize, order: &TradeOrder) -> Result<()> {
        let fill = execute_limit_order(
            &self.cost,
            self.model,
            &self.theta,
            &self.sigma,
            order,
            self.config.budget,
        )?;
        self.trades += 1;
        self.since_projection += 1;
        if fill.shares > 0.0 {
            for &(i, q) in &fill.bundle {
                self.theta[i] += q;
            }
            self.ledger.revenue += fill.cost;
            self.ledger.entries.push(LedgerEntry::Trade {
                order: index,
                bundle: fill.bundle,
                cost: fill.cost,
            });
            self.purchased.push(order.securities(self.model)?);
            self.filled += 1;
        }
        if self.config.treatment != Treatment::Ind {
            let out = remove_arbitrage(
                &self.cost,
                &self.theta,
                &self.sigma,
                self.model.lcmm_rows(),
                &self.config.lcmm,
            )?;
            if out.trades > 0 {
                self.self_trade(&out.theta, ArbitrageSource::Lcmm, out.guaranteed_profit)?;
            }
        }
        Ok(())
    }

    fn project(&mut self, timestamp: f64) -> Result<()> {
        let Some(oracle) = &self.oracle else {
            return Ok(());
        };
        self.since_projection = 0;
        let deadline = Instant::now() + self.config.deadline;
        let result = project_fw(
            &self.cost,
            &self.theta,
            &self.sigma,
            oracle,
            &self.config.fw,
            Some(deadline),
            None,
        )?;
        let extended = result.sigma.len() - self.sigma.len();
        self.record_settlements(result.sigma.clone());
        if matches!(
            result.status,
            ProjectionStatus::ProfitGuaranteed | ProjectionStatus::Interrupted
        ) {
            self.self_trade(&result.theta, ArbitrageSource::Projection, result.guaranteed_profit)?;
        }
        log::debug!(
            "projection at {timestamp}: {:?} after {} iterations, F {:.3e}, {extended} new settlements",
            result.status,
            result.iterations,
            result.divergence
        );
        self.last_status = Some(result.status);
        self.projections.push(ProjectionRecord {
            timestamp,
            n_trades: self.trades,
            status: result.status,
            iterations: result.iterations,
            divergence: result.divergence,
            guaranteed_profit: result.guaranteed_profit,
            extended,
        });
        Ok(())
    }
}

/// Replays `orders` and `settlements` (each sorted by timestamp; settlements
/// go first on ties) under `config.treatment`, then pays out at `outcome`.
pub fn run_market(
    config: &RunConfig,
    model: &MarketModel,
    orders: &[TradeOrder],
    settlements: &[SettlementEvent],
    outcome: &Outcome,
) -> Result<RunReport> {
    config.validate()?;
    check_sorted("order", orders.iter().map(|o| &o.timestamp))?;
    check_sorted("settlement", settlements.iter().map(|s| &s.timestamp))?;
    let payoff = model.payoff(outcome)?;
    if let Some(t) = model.tournament() {
        for s in settlements {
            let played = t.game_order().position(|g| g == s.game);
            if played.is_some_and(|k| outcome.winners[k] != s.winner) {
                return Err(Error::Consistency(format!(
                    "settlement of {} at {} disagrees with the final outcome",
                    model.variable(s.game).name,
                    s.timestamp
                )));
            }
        }
    }
    for o in orders {
        o.securities(model)?;
    }

    let cost = model.cost_function(config.liquidity)?;
    let theta0 = model.initial_theta(config.liquidity);
    let oracle = Oracle::new(model, Backend::Auto)?;
    let loss_bound = worst_case_loss(&cost, &oracle, &theta0)?;
    let mut market = Market {
        config,
        model,
        cost,
        oracle: (config.treatment == Treatment::Fwmm).then_some(oracle),
        payoff,
        theta: theta0.clone(),
        sigma: PartialOutcome::new(),
        ledger: Ledger::default(),
        snapshots: Vec::new(),
        projections: Vec::new(),
        purchased: Vec::new(),
        trades: 0,
        filled: 0,
        since_projection: 0,
        last_status: None,
    };

    let mut events: Vec<Event> = Vec::with_capacity(orders.len() + settlements.len());
    let (mut i, mut j) = (0, 0);
    while i < orders.len() || j < settlements.len() {
        let take_settlement = j < settlements.len()
            && (i == orders.len() || settlements[j].timestamp <= orders[i].timestamp);
        if take_settlement {
            events.push(Event::Settlement(&settlements[j]));
            j += 1;
        } else {
            events.push(Event::Order(i, &orders[i]));
            i += 1;
        }
    }

    let mut next_hour = events
        .first()
        .map_or(0.0, |e| ((e.timestamp() / SNAPSHOT_SECONDS).floor() + 1.0) * SNAPSHOT_SECONDS);
    for (k, event) in events.iter().enumerate() {
        let now = event.timestamp();
        while next_hour <= now {
            market.snapshot(next_hour)?;
            next_hour += SNAPSHOT_SECONDS;
        }
        match event {
            Event::Settlement(s) => {
                let next = apply_settlement(model, &market.sigma, s)?;
                market.record_settlements(next);
                let batch_ends = !matches!(events.get(k + 1), Some(Event::Settlement(_)));
                if batch_ends {
                    market.project(now)?;
                }
            }
            Event::Order(index, order) => {
                market.order(*index, order)?;
                if market.since_projection >= config.cadence {
                    market.project(now)?;
                }
                if market.trades.is_multiple_of(SNAPSHOT_TRADES) {
                    market.snapshot(now)?;
                }
            }
        }
    }
    let end = events.last().map_or(0.0, |e| e.timestamp());
    market.snapshot(end)?;

    let mut ledger = market.ledger;
    ledger.close(&market.payoff);
    let (replay_error, _) = ledger.replay(&market.cost, &theta0)?;
    let report = RunReport {
        ledger,
        snapshots: market.snapshots,
        projections: market.projections,
        filled: market.filled,
        loss_bound,
        replay_error,
        theta: market.theta,
        sigma: market.sigma,
    };
    if !report.within_bound() {
        log::error!(
            "loss {} exceeds the worst-case bound {}",
            report.loss(),
            report.loss_bound
        );
    }
    Ok(report)
}
