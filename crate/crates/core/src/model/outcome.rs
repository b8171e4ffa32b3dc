//! The outcome space Ω and the payoff map φ.
//!
//! An outcome fixes every root variable: the winner of each game and the value
//! of each free variable. Team wins, sums and comparisons are functions of
//! those. Tournament outcomes are enumerated as bracket bitstrings (one bit per
//! game: did the right-hand subtree's team win?), so `2^games` of them.

use std::collections::BTreeMap;

use super::{MarketModel, Value, VariableId, VariableKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outcome {
    /// Winning team per game, in `Tournament::game_order`.
    pub winners: Vec<u32>,
    /// Value index per free variable, in declaration order.
    pub free: Vec<usize>,
}

impl MarketModel {
    pub fn free_variables(&self) -> Vec<VariableId> {
        self.variables
            .iter()
            .filter(|v| v.kind == VariableKind::Free)
            .map(|v| v.id)
            .collect()
    }

    /// `|Ω|`, or `None` if it does not fit in a `u64`.
    pub fn outcome_count(&self) -> Option<u64> {
        let games = self.tournament.as_ref().map_or(0, |t| t.game_count());
        let mut count = 1u64.checked_shl(games as u32).filter(|_| games < 64)?;
        for id in self.free_variables() {
            count = count.checked_mul(self.variable(id).domain.len() as u64)?;
        }
        Some(count)
    }

    /// Decodes outcome number `index` (bracket bits low, free values high).
    pub fn outcome_at(&self, index: u64) -> Outcome {
        let mut winners = Vec::new();
        let mut rest = index;
        if let Some(t) = &self.tournament {
            let games = t.game_count();
            let bits = index & ((1u64 << games) - 1);
            rest = index >> games;
            let mut prev: Vec<u32> = Vec::new();
            let mut bit = 0;
            for (r, round) in t.games.iter().enumerate() {
                let mut current = Vec::with_capacity(round.len());
                for g in 0..round.len() {
                    let right = (bits >> bit) & 1 == 1;
                    bit += 1;
                    let w = if r == 0 {
                        2 * g as u32 + 1 + right as u32
                    } else if right {
                        prev[2 * g + 1]
                    } else {
                        prev[2 * g]
                    };
                    current.push(w);
                }
                winners.extend(&current);
                prev = current;
            }
        }
        let mut free = Vec::new();
        for id in self.free_variables() {
            let size = self.variable(id).domain.len() as u64;
            free.push((rest % size) as usize);
            rest /= size;
        }
        Outcome { winners, free }
    }

    /// Builds an outcome from per-game winners and per-free-variable values.
    pub fn outcome_from(
        &self,
        winners: &BTreeMap<VariableId, u32>,
        free: &BTreeMap<VariableId, usize>,
    ) -> Result<Outcome> {
        let winners = match &self.tournament {
            Some(t) => t
                .game_order()
                .map(|g| {
                    winners.get(&g).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("no winner for game {}", self.variable(g).name))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let free = self
            .free_variables()
            .into_iter()
            .map(|id| {
                free.get(&id).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("no value for {}", self.variable(id).name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let outcome = Outcome { winners, free };
        self.evaluate(&outcome)?;
        Ok(outcome)
    }

    /// Value index of every variable under `outcome`.
    pub fn evaluate(&self, outcome: &Outcome) -> Result<Vec<usize>> {
        let mut game_winner: BTreeMap<VariableId, u32> = BTreeMap::new();
        if let Some(t) = &self.tournament {
            if outcome.winners.len() != t.game_count() {
                return Err(Error::InvalidInput("outcome has the wrong number of games".into()));
            }
            for (g, &w) in t.game_order().zip(&outcome.winners) {
                game_winner.insert(g, w);
            }
            for g in t.game_order() {
                let VariableKind::Game { round, .. } = self.variable(g).kind else {
                    unreachable!()
                };
                let w = game_winner[&g];
                if self.variable(g).value_index(&Value::Team(w)).is_none() {
                    return Err(Error::Consistency(format!(
                        "team {w} cannot play in {}",
                        self.variable(g).name
                    )));
                }
                if round > 1 && game_winner[&t.game_of(round - 1, w)] != w {
                    return Err(Error::Consistency(format!(
                        "team {w} wins {} without winning its previous game",
                        self.variable(g).name
                    )));
                }
            }
        }
        let free_ids = self.free_variables();
        if outcome.free.len() != free_ids.len() {
            return Err(Error::InvalidInput("outcome has the wrong number of free values".into()));
        }
        let free: BTreeMap<VariableId, usize> =
            free_ids.into_iter().zip(outcome.free.iter().copied()).collect();

        let mut values: Vec<usize> = Vec::with_capacity(self.variables.len());
        for var in &self.variables {
            let idx = match &var.kind {
                VariableKind::Game { first_team, .. } => (game_winner[&var.id] - first_team) as usize,
                VariableKind::TeamWins { team } => {
                    let t = self.tournament.as_ref().expect("team variables need a tournament");
                    (1..=t.rounds)
                        .take_while(|&r| game_winner[&t.game_of(r, *team)] == *team)
                        .count()
                }
                VariableKind::Sum { children } => {
                    let total: i64 = children
                        .iter()
                        .map(|c| self.variable(*c).domain[values[c.0]].as_int().unwrap_or(0))
                        .sum();
                    var.value_index(&Value::Int(total)).expect("sum within domain")
                }
                VariableKind::Comparison { left, right } => {
                    let l = self.variable(*left).domain[values[left.0]].as_int().unwrap_or(0);
                    let r = self.variable(*right).domain[values[right.0]].as_int().unwrap_or(0);
                    match l.cmp(&r) {
                        std::cmp::Ordering::Less => 0,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Greater => 2,
                    }
                }
                VariableKind::Free => {
                    let k = free[&var.id];
                    if k >= var.domain.len() {
                        return Err(Error::InvalidInput(format!("value {k} out of range for {}", var.name)));
                    }
                    k
                }
            };
            values.push(idx);
        }
        Ok(values)
    }

    /// Payoff vector `φ(ω)`.
    pub fn payoff(&self, outcome: &Outcome) -> Result<Vec<bool>> {
        let values = self.evaluate(outcome)?;
        let mut z = vec![false; self.n_securities()];
        for (var, k) in self.variables.iter().zip(values) {
            z[var.securities.start + k] = true;
        }
        Ok(z)
    }

    /// True if `z` satisfies every IP row.
    pub fn is_feasible(&self, z: &[bool]) -> bool {
        self.ip_rows.iter().all(|r| r.satisfied_by(z))
    }

    /// `{φ(ω) : ω ∈ Ω}` restricted to payoffs satisfying the IP rows, sorted
    /// and deduplicated. Errors if `|Ω|` exceeds `limit`.
    pub fn enumerate_payoffs(&self, limit: u64) -> Result<Vec<Vec<bool>>> {
        let count = self
            .outcome_count()
            .filter(|&c| c <= limit)
            .ok_or_else(|| Error::InvalidInput(format!("outcome space exceeds {limit} outcomes")))?;
        let mut out = Vec::new();
        for index in 0..count {
            let z = self.payoff(&self.outcome_at(index))?;
            if self.is_feasible(&z) {
                out.push(z);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}
