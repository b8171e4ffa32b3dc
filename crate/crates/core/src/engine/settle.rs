//! Settlement of game results by direct bracket rules.

use std::collections::BTreeMap;

use crate::cost::PartialOutcome;
use crate::error::{Error, Result};
use crate::model::{MarketModel, Outcome, Value, VariableId, VariableKind};

/// A game's result becoming known.
#[derive(Debug, Clone, PartialEq)]
pub struct SettlementEvent {
    /// Simulated seconds.
    pub timestamp: f64,
    pub game: VariableId,
    pub winner: u32,
}

/// Settles `event.game` and everything that follows from the known game
/// results without search: earlier games on the winner's path, eliminated
/// teams' later games, team win counts once pinned down, and sums and
/// comparisons whose inputs are all resolved. Returns the extended partial
/// outcome.
pub fn apply_settlement(
    model: &MarketModel,
    sigma: &PartialOutcome,
    event: &SettlementEvent,
) -> Result<PartialOutcome> {
    let tournament = model
        .tournament()
        .ok_or_else(|| Error::InvalidInput("the model has no games to settle".into()))?;
    let game = model
        .variables()
        .get(event.game.0)
        .filter(|v| matches!(v.kind, VariableKind::Game { .. }))
        .ok_or_else(|| Error::InvalidInput(format!("variable {} is not a game", event.game.0)))?;
    let won = game.security(&Value::Team(event.winner)).ok_or_else(|| {
        Error::InvalidInput(format!("team {} does not play in {}", event.winner, game.name))
    })?;
    let mut sigma = sigma.clone();
    sigma.settle(won, true).map_err(|_| {
        Error::Consistency(format!(
            "team {} cannot win {}: it is already out",
            event.winner, game.name
        ))
    })?;
    let mut mask = sigma.mask(model.n_securities());
    let mut fixed: Vec<(usize, bool)> = Vec::new();

    let rounds = tournament.rounds;
    let teams = tournament.teams();
    // winner of every game that is known outright
    let mut winner: BTreeMap<VariableId, u32> = BTreeMap::new();
    for g in tournament.game_order() {
        let var = model.variable(g);
        for (v, i) in var.domain.iter().zip(var.securities.clone()) {
            if let (Value::Team(t), Some(true)) = (v, mask[i]) {
                winner.insert(g, *t);
            }
        }
    }
    // a game's winner won every earlier game on its path
    for r in (2..=rounds).rev() {
        for &g in &tournament.games[(r - 1) as usize] {
            if let Some(&w) = winner.get(&g) {
                let earlier = tournament.game_of(r - 1, w);
                match winner.insert(earlier, w) {
                    Some(other) if other != w => {
                        return Err(Error::Consistency(format!(
                            "{} was won by {other}, but {w} won a later game",
                            model.variable(earlier).name
                        )))
                    }
                    _ => {}
                }
            }
        }
    }

    // rounds each team is known to have won, and the first round it cannot win
    let mut lower = vec![0u32; teams as usize];
    let mut upper = vec![rounds + 1; teams as usize];
    for t in 1..=teams {
        let slot = (t - 1) as usize;
        let x = model.variable(tournament.team_wins[slot]);
        if let Some(k) = x.securities.clone().position(|i| mask[i] == Some(true)) {
            lower[slot] = k as u32;
            upper[slot] = k as u32 + 1;
        }
        for r in 1..=rounds {
            let g = tournament.game_of(r, t);
            let own = model
                .variable(g)
                .security(&Value::Team(t))
                .expect("team in its own game");
            let lost = match winner.get(&g) {
                Some(&w) => w != t,
                None => mask[own] == Some(false),
            };
            if winner.get(&g) == Some(&t) {
                lower[slot] = lower[slot].max(r);
            }
            if lost {
                upper[slot] = upper[slot].min(r);
            }
        }
        if lower[slot] >= upper[slot] {
            return Err(Error::Consistency(format!(
                "team {t} has won {} games but lost in round {}",
                lower[slot], upper[slot]
            )));
        }
        for (k, i) in x.securities.clone().enumerate() {
            let k = k as u32;
            if k < lower[slot] || k >= upper[slot] {
                fixed.push((i, false));
            } else if lower[slot] + 1 == upper[slot] {
                fixed.push((i, true));
            }
        }
    }
    for g in tournament.game_order() {
        let var = model.variable(g);
        let VariableKind::Game { round, .. } = var.kind else {
            unreachable!("tournament games are games")
        };
        for (v, i) in var.domain.iter().zip(var.securities.clone()) {
            let Value::Team(t) = v else { continue };
            match winner.get(&g) {
                Some(w) => fixed.push((i, w == t)),
                None if upper[(*t - 1) as usize] <= round => fixed.push((i, false)),
                None => {}
            }
        }
    }
    for &(i, bit) in &fixed {
        if mask[i].is_some_and(|b| b != bit) {
            return Err(Error::Consistency(format!(
                "settling {} contradicts {} = {}",
                game.name,
                model.security_label(i),
                mask[i].unwrap() as u8
            )));
        }
        mask[i] = Some(bit);
    }

    // derived variables come after their inputs, so one pass suffices
    for var in model.variables() {
        let value_of = |id: VariableId, mask: &[Option<bool>]| -> Option<i64> {
            let child = model.variable(id);
            let k = child.securities.clone().position(|i| mask[i] == Some(true))?;
            child.domain[k].as_int()
        };
        let value = match &var.kind {
            VariableKind::Sum { children } => children
                .iter()
                .map(|&c| value_of(c, &mask))
                .sum::<Option<i64>>()
                .map(Value::Int),
            VariableKind::Comparison { left, right } => {
                match (value_of(*left, &mask), value_of(*right, &mask)) {
                    (Some(l), Some(r)) => Some(match l.cmp(&r) {
                        std::cmp::Ordering::Less => Value::Lt,
                        std::cmp::Ordering::Equal => Value::Eq,
                        std::cmp::Ordering::Greater => Value::Gt,
                    }),
                    _ => None,
                }
            }
            _ => None,
        };
        let Some(value) = value else { continue };
        let Some(hit) = var.security(&value) else {
            return Err(Error::Consistency(format!("{} cannot take the value {value}", var.name)));
        };
        for i in var.securities.clone() {
            let bit = i == hit;
            if mask[i].is_some_and(|b| b != bit) {
                return Err(Error::Consistency(format!(
                    "{} = {value} contradicts {}",
                    var.name,
                    model.security_label(i)
                )));
            }
            mask[i] = Some(bit);
            fixed.push((i, bit));
        }
    }
    for (i, bit) in fixed {
        sigma.settle(i, bit)?;
    }
    Ok(sigma)
}

/// The outcome fixed by a complete set of game results. Models with free
/// variables have no such outcome.
pub fn final_outcome(model: &MarketModel, settlements: &[SettlementEvent]) -> Result<Outcome> {
    if let Some(free) = model.free_variables().first() {
        return Err(Error::InvalidInput(format!(
            "{} is not decided by any game",
            model.variable(*free).name
        )));
    }
    let mut winners = BTreeMap::new();
    for s in settlements {
        if let Some(previous) = winners.insert(s.game, s.winner) {
            if previous != s.winner {
                return Err(Error::Consistency(format!(
                    "{} is settled twice with different winners",
                    model.variable(s.game).name
                )));
            }
        }
    }
    model.outcome_from(&winners, &BTreeMap::new())
}
