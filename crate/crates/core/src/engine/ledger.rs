//! Append-only record of everything that moved the market state.

use crate::cost::{PartialOutcome, SumLmsr};
use crate::error::{Error, Result};

/// Sparse bundle: `(security, shares)`.
pub type Bundle = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArbitrageSource {
    Lcmm,
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEntry {
    /// A trader bought `bundle` for `cost`.
    Trade { order: usize, bundle: Bundle, cost: f64 },
    /// The market maker traded with itself to remove arbitrage.
    Arbitrage {
        source: ArbitrageSource,
        bundle: Bundle,
        cost: f64,
        guaranteed_profit: f64,
    },
    /// Securities settled at this point, in index order.
    Settle { securities: Vec<(usize, bool)> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
    /// Cash received from traders.
    pub revenue: f64,
    /// Paid to traders at the close; zero until then.
    pub payout_total: f64,
    /// `Σ (δ·φ(ω) − cost)` over market-maker trades; zero until the close.
    pub arbitrage_profit: f64,
    pub closed: bool,
}

fn apply(theta: &mut [f64], bundle: &Bundle) {
    for &(i, q) in bundle {
        theta[i] += q;
    }
}

fn dense(bundle: &Bundle, n: usize) -> Vec<f64> {
    let mut delta = vec![0.0; n];
    apply(&mut delta, bundle);
    delta
}

impl Ledger {
    pub fn trader_trades(&self) -> impl Iterator<Item = (&Bundle, f64)> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Trade { bundle, cost, .. } => Some((bundle, *cost)),
            _ => None,
        })
    }

    pub fn market_maker_trades(&self) -> impl Iterator<Item = (&Bundle, f64)> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Arbitrage { bundle, cost, .. } => Some((bundle, *cost)),
            _ => None,
        })
    }

    /// `payout − revenue`; meaningful once closed.
    pub fn loss(&self) -> f64 {
        self.payout_total - self.revenue
    }

    /// Pays every trader bundle and the market maker's own bundles at the
    /// payoff vector `payoff`.
    pub fn close(&mut self, payoff: &[bool]) {
        let pays = |bundle: &Bundle| -> f64 {
            bundle
                .iter()
                .filter(|&&(i, _)| payoff[i])
                .map(|&(_, q)| q)
                .sum()
        };
        self.payout_total = self.trader_trades().map(|(b, _)| pays(b)).sum();
        self.arbitrage_profit = self.market_maker_trades().map(|(b, c)| pays(b) - c).sum();
        self.closed = true;
    }

    /// Realized profit of each market-maker trade at `payoff`.
    pub fn arbitrage_profits(&self, payoff: &[bool]) -> Vec<f64> {
        self.market_maker_trades()
            .map(|(b, c)| b.iter().filter(|&&(i, _)| payoff[i]).map(|&(_, q)| q).sum::<f64>() - c)
            .collect()
    }

    /// Replays the entries from `theta0` and returns the largest difference
    /// between a recorded cost and the cost recomputed at the replayed state.
    /// Also returns the final state.
    pub fn replay(&self, cost: &SumLmsr, theta0: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = cost.len();
        if theta0.len() != n {
            return Err(Error::InvalidInput("initial state has the wrong length".into()));
        }
        let mut theta = theta0.to_vec();
        let mut sigma = PartialOutcome::new();
        let mut worst: f64 = 0.0;
        for entry in &self.entries {
            match entry {
                LedgerEntry::Trade { bundle, cost: paid, .. }
                | LedgerEntry::Arbitrage { bundle, cost: paid, .. } => {
                    let again = cost.trade_cost(&theta, &sigma, &dense(bundle, n))?;
                    worst = worst.max((again - paid).abs());
                    apply(&mut theta, bundle);
                }
                LedgerEntry::Settle { securities } => {
                    for &(i, bit) in securities {
                        sigma.settle(i, bit)?;
                    }
                }
            }
        }
        Ok((worst, theta))
    }
}
