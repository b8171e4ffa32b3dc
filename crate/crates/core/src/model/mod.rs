//! Declarative market construction.
//!
//! A [`MarketModel`] is built variable by variable. Each variable owns a
//! contiguous block of securities (one per domain element) and contributes:
//!
//! * an exclusivity/exhaustivity row `Σ_x z{X=x} = 1`,
//! * IP rows tying it to earlier variables (these define the valid payoff set Z),
//! * LCMM rows over prices (a relaxation of the marginal polytope),
//! * initial prices.
//!
//! Rows are stored with integer coefficients; every row the builder emits has
//! small integer coefficients, which keeps IP witness checks exact.

mod config;
mod init;
mod outcome;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use crate::cost::SumLmsr;
use crate::error::{Error, Result};

pub use config::{
    ModelConfig, RowConfig, SenseConfig, TargetConfig, TermConfig, ValueConfig, VariableConfig,
};
pub use init::{discretized_gaussian, euclidean_projection, PRICE_FLOOR};
pub use outcome::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableId(pub usize);

/// Domain element of a variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Team(u32),
    Lt,
    Eq,
    Gt,
    Label(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Team(t) => write!(f, "{t}"),
            Value::Lt => f.write_str("lt"),
            Value::Eq => f.write_str("eq"),
            Value::Gt => f.write_str("gt"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

/// Security `(variable, value)`; the event `X_j = x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SecurityId {
    pub variable: VariableId,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariableKind {
    /// Number of wins of `team`.
    TeamWins { team: u32 },
    /// Winner of the physical game in `round` whose bracket subtree starts at
    /// `first_team`.
    Game { round: u32, first_team: u32 },
    Sum { children: Vec<VariableId> },
    Comparison { left: VariableId, right: VariableId },
    /// Root variable with an explicit domain and no implied structure.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub id: VariableId,
    pub name: String,
    pub kind: VariableKind,
    pub domain: Vec<Value>,
    pub securities: Range<usize>,
}

impl Variable {
    pub fn is_integer(&self) -> bool {
        self.domain.iter().all(|v| v.as_int().is_some())
    }

    pub fn int_bounds(&self) -> Option<(i64, i64)> {
        let ints: Option<Vec<i64>> = self.domain.iter().map(Value::as_int).collect();
        let ints = ints?;
        Some((*ints.iter().min()?, *ints.iter().max()?))
    }

    pub fn value_index(&self, value: &Value) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }

    /// Security index of `value`.
    pub fn security(&self, value: &Value) -> Option<usize> {
        self.value_index(value).map(|k| self.securities.start + k)
    }

    /// Parses a domain element from its display form.
    pub fn parse_value(&self, text: &str) -> Option<Value> {
        let text = text.trim();
        self.domain.iter().find(|v| v.to_string() == text).cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Ge,
    Eq,
}

/// `Σ coeff_i · x_i (≥ | =) rhs` over security indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, i64)>,
    pub sense: Sense,
    pub rhs: i64,
}

impl LinearRow {
    /// Builds a row, merging duplicate indices and dropping zero coefficients.
    pub fn new(terms: impl IntoIterator<Item = (usize, i64)>, sense: Sense, rhs: i64) -> Self {
        let mut merged: BTreeMap<usize, i64> = BTreeMap::new();
        for (i, c) in terms {
            *merged.entry(i).or_default() += c;
        }
        Self {
            coeffs: merged.into_iter().filter(|&(_, c)| c != 0).collect(),
            sense,
            rhs,
        }
    }

    pub fn eval_bits(&self, z: &[bool]) -> i64 {
        self.coeffs.iter().filter(|&&(i, _)| z[i]).map(|&(_, c)| c).sum()
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c as f64 * mu[i]).sum()
    }

    pub fn satisfied_by(&self, z: &[bool]) -> bool {
        let lhs = self.eval_bits(z);
        match self.sense {
            Sense::Ge => lhs >= self.rhs,
            Sense::Eq => lhs == self.rhs,
        }
    }

    /// Signed shortfall of `mu`: positive means violated. For equality rows
    /// this is `|lhs − rhs|`.
    pub fn violation(&self, mu: &[f64]) -> f64 {
        let lhs = self.eval(mu);
        match self.sense {
            Sense::Ge => self.rhs as f64 - lhs,
            Sense::Eq => (lhs - self.rhs as f64).abs(),
        }
    }

    /// Expands the row into `≥` rows.
    pub fn as_ge_rows(&self) -> Vec<LinearRow> {
        match self.sense {
            Sense::Ge => vec![self.clone()],
            Sense::Eq => vec![
                LinearRow {
                    coeffs: self.coeffs.clone(),
                    sense: Sense::Ge,
                    rhs: self.rhs,
                },
                LinearRow {
                    coeffs: self.coeffs.iter().map(|&(i, c)| (i, -c)).collect(),
                    sense: Sense::Ge,
                    rhs: -self.rhs,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTarget {
    Ip,
    Lcmm,
    Both,
}

/// Single-elimination bracket bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Tournament {
    pub rounds: u32,
    /// `TeamWins` variable of team `t` at index `t - 1`.
    pub team_wins: Vec<VariableId>,
    /// Game variables, `games[r - 1][g]` for game `g` of round `r`.
    pub games: Vec<Vec<VariableId>>,
    pub champion_prices: Vec<f64>,
}

impl Tournament {
    pub fn teams(&self) -> u32 {
        1 << self.rounds
    }

    /// Canonical game `G_{r,t}`: the game team `t` plays in round `r` if it
    /// gets there.
    pub fn game_of(&self, round: u32, team: u32) -> VariableId {
        self.games[(round - 1) as usize][((team - 1) >> round) as usize]
    }

    /// Games in round-major order; the order of `Outcome::winners`.
    pub fn game_order(&self) -> impl Iterator<Item = VariableId> + '_ {
        self.games.iter().flatten().copied()
    }

    pub fn game_count(&self) -> usize {
        self.games.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketModel {
    variables: Vec<Variable>,
    securities: Vec<SecurityId>,
    ip_rows: Vec<LinearRow>,
    lcmm_rows: Vec<LinearRow>,
    initial_prices: Vec<f64>,
    tournament: Option<Tournament>,
    names: HashMap<String, VariableId>,
}

impl MarketModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VariableId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn variable_by_name(&self, name: &str) -> Option<&Variable> {
        self.names.get(name).map(|&id| self.variable(id))
    }

    pub fn securities(&self) -> &[SecurityId] {
        &self.securities
    }

    pub fn n_securities(&self) -> usize {
        self.securities.len()
    }

    pub fn security_index(&self, variable: VariableId, value: &Value) -> Option<usize> {
        self.variable(variable).security(value)
    }

    /// Variable owning security `index`.
    pub fn variable_of(&self, index: usize) -> &Variable {
        self.variable(self.securities[index].variable)
    }

    /// Human-readable `name=value` label of a security.
    pub fn security_label(&self, index: usize) -> String {
        let s = &self.securities[index];
        format!("{}={}", self.variable(s.variable).name, s.value)
    }

    pub fn groups(&self) -> Vec<Range<usize>> {
        self.variables.iter().map(|v| v.securities.clone()).collect()
    }

    pub fn ip_rows(&self) -> &[LinearRow] {
        &self.ip_rows
    }

    pub fn lcmm_rows(&self) -> &[LinearRow] {
        &self.lcmm_rows
    }

    pub fn tournament(&self) -> Option<&Tournament> {
        self.tournament.as_ref()
    }

    pub fn initial_prices(&self) -> &[f64] {
        &self.initial_prices
    }

    pub fn cost_function(&self, liquidity: f64) -> Result<SumLmsr> {
        if self.variables.is_empty() {
            return Err(Error::InvalidModel("market has no variables".into()));
        }
        SumLmsr::new(self.groups(), liquidity)
    }

    /// Initial state `θ₀ = b ln μ₀`, whose prices are exactly the initial prices.
    pub fn initial_theta(&self, liquidity: f64) -> Vec<f64> {
        self.initial_prices
            .iter()
            .map(|&p| liquidity * p.max(PRICE_FLOOR).ln())
            .collect()
    }

    /// Mean and variance of an integer variable under `prices`.
    pub fn moments(&self, id: VariableId, prices: &[f64]) -> Result<(f64, f64)> {
        let var = self.variable(id);
        let mut mean = 0.0;
        let mut second = 0.0;
        for (k, value) in var.domain.iter().enumerate() {
            let x = value.as_int().ok_or_else(|| {
                Error::InvalidModel(format!("variable {} has a non-integer domain", var.name))
            })? as f64;
            let p = prices[var.securities.start + k];
            mean += p * x;
            second += p * x * x;
        }
        Ok((mean, (second - mean * mean).max(0.0)))
    }

    fn push_variable(
        &mut self,
        name: String,
        kind: VariableKind,
        domain: Vec<Value>,
        prices: Vec<f64>,
    ) -> Result<VariableId> {
        if domain.is_empty() {
            return Err(Error::InvalidModel(format!("variable {name} has an empty domain")));
        }
        if self.names.contains_key(&name) {
            return Err(Error::InvalidModel(format!("duplicate variable name {name}")));
        }
        let id = VariableId(self.variables.len());
        let start = self.securities.len();
        for value in &domain {
            self.securities.push(SecurityId {
                variable: id,
                value: value.clone(),
            });
        }
        let securities = start..self.securities.len();
        let row = LinearRow::new(securities.clone().map(|i| (i, 1)), Sense::Eq, 1);
        self.ip_rows.push(row.clone());
        self.lcmm_rows.push(row);
        self.initial_prices.extend(init::normalize_with_floor(prices));
        self.names.insert(name.clone(), id);
        self.variables.push(Variable {
            id,
            name,
            kind,
            domain,
            securities,
        });
        Ok(id)
    }

    fn lookup(&self, id: VariableId) -> Result<&Variable> {
        self.variables
            .get(id.0)
            .ok_or_else(|| Error::InvalidModel(format!("unknown variable id {}", id.0)))
    }

    fn integer_child(&self, id: VariableId) -> Result<(&Variable, i64, i64)> {
        let var = self.lookup(id)?;
        let (lo, hi) = var.int_bounds().ok_or_else(|| {
            Error::InvalidModel(format!("variable {} does not have an integer domain", var.name))
        })?;
        Ok((var, lo, hi))
    }

    /// `Σ_x x·z{X=x}` as row terms scaled by `sign`.
    fn expectation_terms(var: &Variable, sign: i64) -> Vec<(usize, i64)> {
        var.domain
            .iter()
            .zip(var.securities.clone())
            .map(|(v, i)| (i, sign * v.as_int().unwrap_or(0)))
            .collect()
    }

    /// Adds a `2^rounds`-team single-elimination tournament: one `TeamWins`
    /// variable per team and one `Game` variable per physical game, coupled by
    ///
    /// ```text
    /// z{X_t=r} = z{G_{r,t}=t} − z{G_{r+1,t}=t}   (1 ≤ r < k)
    /// z{X_t=k} = z{G_{k,t}=t}
    /// z{X_t=0} = 1 − z{G_{1,t}=t}
    /// ```
    ///
    /// `champion_prices[t-1]` seeds the initial prices; an empty slice means
    /// uniform games.
    pub fn add_tournament(&mut self, rounds: u32, champion_prices: &[f64]) -> Result<()> {
        if self.tournament.is_some() {
            return Err(Error::InvalidModel("model already has a tournament".into()));
        }
        if !(1..=16).contains(&rounds) {
            return Err(Error::InvalidModel(format!(
                "a tournament needs between 1 and 16 rounds, got {rounds}"
            )));
        }
        let teams = 1u32 << rounds;
        if !champion_prices.is_empty() && champion_prices.len() != teams as usize {
            return Err(Error::InvalidModel(format!(
                "team count {} is not 2^{rounds}",
                champion_prices.len()
            )));
        }
        if champion_prices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidModel("champion prices must be nonnegative".into()));
        }

        let mut team_wins = Vec::with_capacity(teams as usize);
        for t in 1..=teams {
            let domain: Vec<Value> = (0..=rounds as i64).map(Value::Int).collect();
            let n = domain.len();
            let id = self.push_variable(
                format!("X{t}"),
                VariableKind::TeamWins { team: t },
                domain,
                vec![1.0; n],
            )?;
            team_wins.push(id);
        }
        let mut games = Vec::with_capacity(rounds as usize);
        for r in 1..=rounds {
            let size = 1u32 << r;
            let mut round = Vec::new();
            for g in 0..(teams / size) {
                let first = g * size + 1;
                let domain: Vec<Value> = (first..first + size).map(Value::Team).collect();
                let id = self.push_variable(
                    format!("G{r}_{first}"),
                    VariableKind::Game {
                        round: r,
                        first_team: first,
                    },
                    domain,
                    vec![1.0; size as usize],
                )?;
                round.push(id);
            }
            games.push(round);
        }
        let tournament = Tournament {
            rounds,
            team_wins,
            games,
            champion_prices: champion_prices.to_vec(),
        };

        for t in 1..=teams {
            let x = self.variable(tournament.team_wins[(t - 1) as usize]).clone();
            let wins = |r: u32| x.securities.start + r as usize;
            let won = |round: u32| {
                let g = self.variable(tournament.game_of(round, t));
                g.security(&Value::Team(t)).expect("team in its own game")
            };
            let mut rows = vec![LinearRow::new([(wins(0), 1), (won(1), 1)], Sense::Eq, 1)];
            for r in 1..rounds {
                rows.push(LinearRow::new(
                    [(wins(r), 1), (won(r), -1), (won(r + 1), 1)],
                    Sense::Eq,
                    0,
                ));
            }
            rows.push(LinearRow::new([(wins(rounds), 1), (won(rounds), -1)], Sense::Eq, 0));
            for row in rows {
                self.ip_rows.push(row.clone());
                self.lcmm_rows.push(row);
            }
        }
        self.tournament = Some(tournament);
        self.init_prices(&[])?;
        Ok(())
    }

    /// Adds `X = Σ children`, linked by `Σ_x x·z{X=x} = Σ_j Σ_x x·z{X_j=x}`.
    pub fn add_sum(&mut self, name: impl Into<String>, children: &[VariableId]) -> Result<VariableId> {
        let name = name.into();
        if children.is_empty() {
            return Err(Error::InvalidModel(format!("sum {name} has no children")));
        }
        let mut lo = 0;
        let mut hi = 0;
        let mut mean = 0.0;
        let mut var = 0.0;
        for &c in children {
            let (_, m, mx) = self.integer_child(c)?;
            lo += m;
            hi += mx;
            let (cm, cv) = self.moments(c, &self.initial_prices)?;
            mean += cm;
            var += cv;
        }
        let domain: Vec<Value> = (lo..=hi).map(Value::Int).collect();
        let support: Vec<i64> = (lo..=hi).collect();
        let prices = discretized_gaussian(&support, mean, var);
        let id = self.push_variable(
            name,
            VariableKind::Sum {
                children: children.to_vec(),
            },
            domain,
            prices,
        )?;

        let mut terms = Self::expectation_terms(self.variable(id), 1);
        for &c in children {
            terms.extend(Self::expectation_terms(self.variable(c), -1));
        }
        let row = LinearRow::new(terms, Sense::Eq, 0);
        self.ip_rows.push(row.clone());
        self.lcmm_rows.push(row);
        Ok(id)
    }

    /// Adds the comparison `X ∈ {lt, eq, gt}` of `left` against `right`.
    ///
    /// IP rows are the four big-M identities; LCMM rows are the union-bound
    /// rows, which are tighter than the LP relaxation of the big-M rows.
    pub fn add_comparison(
        &mut self,
        name: impl Into<String>,
        left: VariableId,
        right: VariableId,
    ) -> Result<VariableId> {
        let name = name.into();
        let (_, m1, big1) = self.integer_child(left)?;
        let (_, m2, big2) = self.integer_child(right)?;
        let (mean1, var1) = self.moments(left, &self.initial_prices)?;
        let (mean2, var2) = self.moments(right, &self.initial_prices)?;

        // Y = X2 − X1; X1 < X2 ⇔ Y > 0.
        let support: Vec<i64> = ((m2 - big1)..=(big2 - m1)).collect();
        let weights = discretized_gaussian(&support, mean2 - mean1, var1 + var2);
        let mut prices = vec![0.0; 3];
        for (y, w) in support.iter().zip(weights) {
            let slot = match y.cmp(&0) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 2,
            };
            prices[slot] += w;
        }

        let id = self.push_variable(
            name,
            VariableKind::Comparison { left, right },
            vec![Value::Lt, Value::Eq, Value::Gt],
            prices,
        )?;
        let cmp = self.variable(id).securities.start;
        let (lt, eq, gt) = (cmp, cmp + 1, cmp + 2);
        let x1 = self.variable(left).clone();
        let x2 = self.variable(right).clone();

        let diff = |sign: i64| {
            let mut t = Self::expectation_terms(&x1, sign);
            t.extend(Self::expectation_terms(&x2, -sign));
            t
        };
        let mut big_m = Vec::new();
        // X1 − X2 ≥ (m1 − M2)·1{X1 < X2}
        let mut t = diff(1);
        t.push((lt, -(m1 - big2)));
        big_m.push(LinearRow::new(t, Sense::Ge, 0));
        // X1 − X2 − 1 ≥ (m1 − M2 − 1)·1{X1 ≤ X2}
        let mut t = diff(1);
        t.push((lt, -(m1 - big2 - 1)));
        t.push((eq, -(m1 - big2 - 1)));
        big_m.push(LinearRow::new(t, Sense::Ge, 1));
        // X1 − X2 ≤ (M1 − m2)·1{X1 > X2}
        let mut t = diff(-1);
        t.push((gt, big1 - m2));
        big_m.push(LinearRow::new(t, Sense::Ge, 0));
        // X1 − X2 + 1 ≤ (M1 − m2 + 1)·1{X1 ≥ X2}
        let mut t = diff(-1);
        t.push((gt, big1 - m2 + 1));
        t.push((eq, big1 - m2 + 1));
        big_m.push(LinearRow::new(t, Sense::Ge, 1));
        self.ip_rows.extend(big_m);

        let at_most = |var: &Variable, x: i64, strict: bool| -> Vec<(usize, i64)> {
            var.domain
                .iter()
                .zip(var.securities.clone())
                .filter(|(v, _)| {
                    let v = v.as_int().unwrap_or(i64::MAX);
                    if strict {
                        v < x
                    } else {
                        v <= x
                    }
                })
                .map(|(_, i)| (i, 1))
                .collect()
        };
        let neg = |terms: Vec<(usize, i64)>| terms.into_iter().map(|(i, c)| (i, -c));
        let mut union_rows = Vec::new();
        for (a, b, m_a, big_b, win) in [(&x1, &x2, m1, big2, lt), (&x2, &x1, m2, big1, gt)] {
            for x in m_a..=big_b {
                // μ{A ≤ x} ≤ μ{win} + μ{B ≤ x}
                let mut t = vec![(win, 1)];
                t.extend(at_most(b, x, false));
                t.extend(neg(at_most(a, x, false)));
                union_rows.push(LinearRow::new(t, Sense::Ge, 0));
                // μ{A ≤ x} ≤ μ{win} + μ{eq} + μ{B < x}
                let mut t = vec![(win, 1), (eq, 1)];
                t.extend(at_most(b, x, true));
                t.extend(neg(at_most(a, x, false)));
                union_rows.push(LinearRow::new(t, Sense::Ge, 0));
            }
        }
        self.lcmm_rows
            .extend(union_rows.into_iter().filter(|r| !r.coeffs.is_empty()));
        Ok(id)
    }

    /// Adds a root variable with an explicit domain and initial prices
    /// (uniform when `prices` is empty).
    pub fn add_free(
        &mut self,
        name: impl Into<String>,
        domain: Vec<Value>,
        prices: &[f64],
    ) -> Result<VariableId> {
        let name = name.into();
        let prices = if prices.is_empty() {
            vec![1.0; domain.len()]
        } else if prices.len() == domain.len() {
            prices.to_vec()
        } else {
            return Err(Error::InvalidModel(format!(
                "variable {name}: {} prices for {} values",
                prices.len(),
                domain.len()
            )));
        };
        let mut seen = std::collections::HashSet::new();
        if !domain.iter().all(|v| seen.insert(v.clone())) {
            return Err(Error::InvalidModel(format!("variable {name} repeats a value")));
        }
        self.push_variable(name, VariableKind::Free, domain, prices)
    }

    /// Adds an extra row to the IP model, the LCMM model, or both.
    pub fn add_row(&mut self, row: LinearRow, target: RowTarget) -> Result<()> {
        if let Some(&(i, _)) = row.coeffs.iter().find(|&&(i, _)| i >= self.n_securities()) {
            return Err(Error::InvalidModel(format!("row references unknown security {i}")));
        }
        if matches!(target, RowTarget::Ip | RowTarget::Both) {
            self.ip_rows.push(row.clone());
        }
        if matches!(target, RowTarget::Lcmm | RowTarget::Both) {
            self.lcmm_rows.push(row);
        }
        Ok(())
    }

    /// Overrides the initial prices of one variable (renormalized, floored).
    pub fn set_initial_prices(&mut self, id: VariableId, prices: &[f64]) -> Result<()> {
        let range = self.lookup(id)?.securities.clone();
        if prices.len() != range.len() {
            return Err(Error::InvalidModel(format!(
                "variable {}: {} prices for {} values",
                self.variable(id).name,
                prices.len(),
                range.len()
            )));
        }
        let normalized = init::normalize_with_floor(prices.to_vec());
        self.initial_prices[range].copy_from_slice(&normalized);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
