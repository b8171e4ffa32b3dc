//! Linear minimization over the valid payoff vectors `Z_σ`.
//!
//! Two exact backends share one interface:
//!
//! * [`Backend::Enumeration`] lists `φ(ω)` for every outcome once and scans it;
//! * [`Backend::BranchAndBound`] searches the 0/1 program directly with bound
//!   propagation on every row.
//!
//! Enumeration returns the lexicographically smallest optimal vertex
//! (`false < true`, security order). Branch and bound returns the first
//! optimal vertex its search meets and ignores improvements below
//! `1e-12·(1 + Σ|c|)`, which keeps ties (common for sparse objectives) from
//! forcing a full search. Values are always summed in security order, so the
//! same vertex gets the same value from both.

mod bracket;
mod search;

use std::time::Instant;

use crate::cost::PartialOutcome;
use crate::error::{Error, Result};
use crate::model::{LinearRow, MarketModel};

use bracket::BracketBound;
use search::{Mode, Search};

/// Outcome-space size up to which [`Backend::Auto`] caches the vertex list.
pub const AUTO_ENUMERATION_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Enumeration,
    BranchAndBound,
    /// Enumeration when `|Ω| ≤ AUTO_ENUMERATION_LIMIT`, otherwise branch and bound.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    /// The deadline passed; the result carries the best vertex found, if any.
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub status: OracleStatus,
    pub vertex: Option<Vec<bool>>,
    pub value: Option<f64>,
    /// Search nodes (branch and bound) or vertices scanned (enumeration).
    pub nodes: u64,
}

impl OracleResult {
    fn infeasible(nodes: u64) -> Self {
        Self {
            status: OracleStatus::Infeasible,
            vertex: None,
            value: None,
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SettleAnswer {
    /// A valid vertex with the queried bit.
    Attainable(Vec<bool>),
    /// No valid vertex has the queried bit; the security settles to its complement.
    Forced,
    TimedOut,
}

/// `Σ c_i z_i`, summed in index order.
pub fn objective_value(c: &[f64], z: &[bool]) -> f64 {
    c.iter().zip(z).filter(|(_, &b)| b).map(|(c, _)| c).sum()
}

fn deadline_passed(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

/// A block of securities treated as one decision: an exclusive group holds
/// exactly one 1; an ungrouped security is a free bit.
#[derive(Debug, Clone)]
struct Unit {
    members: std::ops::Range<usize>,
    exclusive: bool,
}

/// A unit touched by a row, with the row's `(security, coeff)` terms inside it.
type RowUnit = (usize, Vec<(usize, i64)>);

pub struct Oracle {
    n: usize,
    rows: Vec<LinearRow>,
    /// Rows containing each security.
    occurrences: Vec<Vec<usize>>,
    units: Vec<Unit>,
    unit_of: Vec<usize>,
    /// Per row: the units it touches with their in-row `(security, coeff)`.
    row_units: Vec<Vec<RowUnit>>,
    bracket: Option<BracketBound>,
    /// Units whose bound comes from `bracket`.
    in_bracket: Vec<bool>,
    /// Rows moved into the objective with multipliers when bounding.
    relaxed: Vec<usize>,
    /// Sorted, deduplicated vertex list for the enumeration backend.
    vertices: Option<Vec<Vec<bool>>>,
}

impl Oracle {
    pub fn new(model: &MarketModel, backend: Backend) -> Result<Self> {
        let n = model.n_securities();
        if n == 0 {
            return Err(Error::InvalidModel("market has no securities".into()));
        }
        let enumerate = match backend {
            Backend::Enumeration => true,
            Backend::BranchAndBound => false,
            Backend::Auto => model
                .outcome_count()
                .is_some_and(|c| c <= AUTO_ENUMERATION_LIMIT),
        };
        let vertices = if enumerate {
            Some(model.enumerate_payoffs(u64::MAX)?)
        } else {
            None
        };
        // each variable's exclusivity row is part of the IP rows
        let mut oracle = Self::from_rows(n, model.ip_rows().to_vec(), model.groups());
        oracle.vertices = vertices;
        if let Some(bracket) = BracketBound::new(model) {
            for &g in &bracket.groups {
                oracle.in_bracket[g] = true;
            }
            oracle.bracket = Some(bracket);
        }
        Ok(oracle)
    }

    /// Branch-and-bound oracle over arbitrary rows. Each of `groups` (disjoint
    /// ranges) must be forced by `rows` to hold exactly one 1; securities
    /// outside every group are unconstrained bits.
    pub fn from_rows(n: usize, rows: Vec<LinearRow>, groups: Vec<std::ops::Range<usize>>) -> Self {
        let mut occurrences = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &(i, _) in &row.coeffs {
                occurrences[i].push(r);
            }
        }
        let mut units: Vec<Unit> = groups
            .into_iter()
            .map(|members| Unit {
                members,
                exclusive: true,
            })
            .collect();
        let mut unit_of = vec![usize::MAX; n];
        for (u, unit) in units.iter().enumerate() {
            for i in unit.members.clone() {
                unit_of[i] = u;
            }
        }
        for i in 0..n {
            if unit_of[i] == usize::MAX {
                unit_of[i] = units.len();
                units.push(Unit {
                    members: i..i + 1,
                    exclusive: false,
                });
            }
        }
        let row_units = rows
            .iter()
            .map(|row| {
                let mut by_unit: std::collections::BTreeMap<usize, Vec<(usize, i64)>> =
                    std::collections::BTreeMap::new();
                for &(i, a) in &row.coeffs {
                    by_unit.entry(unit_of[i]).or_default().push((i, a));
                }
                by_unit.into_iter().collect()
            })
            .collect();
        let in_bracket = vec![false; units.len()];
        let mut oracle = Self {
            n,
            rows,
            occurrences,
            units,
            unit_of,
            row_units,
            bracket: None,
            in_bracket,
            relaxed: Vec::new(),
            vertices: None,
        };
        oracle.relaxed = oracle.relaxable_rows();
        oracle
    }

    /// Every row except the units' own exclusivity rows. Rows the bracket
    /// already satisfies keep a zero multiplier.
    fn relaxable_rows(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&r| {
                let units = &self.row_units[r];
                let row = &self.rows[r];
                let exclusivity = units.len() == 1
                    && self.units[units[0].0].exclusive
                    && row.sense == crate::model::Sense::Eq
                    && row.rhs == 1
                    && row.coeffs.len() == self.units[units[0].0].members.len()
                    && row.coeffs.iter().all(|&(_, a)| a == 1);
                !exclusivity
            })
            .collect()
    }

    pub fn backend(&self) -> Backend {
        if self.vertices.is_some() {
            Backend::Enumeration
        } else {
            Backend::BranchAndBound
        }
    }

    pub fn n_securities(&self) -> usize {
        self.n
    }

    /// The cached vertex list, when the enumeration backend is active.
    pub fn vertices(&self) -> Option<&[Vec<bool>]> {
        self.vertices.as_deref()
    }

    /// `argmin_{z ∈ Z_σ} c·z`.
    pub fn minimize(
        &self,
        c: &[f64],
        sigma: &PartialOutcome,
        deadline: Option<Instant>,
    ) -> Result<OracleResult> {
        if c.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "objective has {} entries for {} securities",
                c.len(),
                self.n
            )));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("objective entry {i} is not finite")));
        }
        if let Some((i, _)) = sigma.iter().find(|&(i, _)| i >= self.n) {
            return Err(Error::InvalidInput(format!("settled security {i} does not exist")));
        }
        match &self.vertices {
            Some(vertices) => Ok(Self::scan(vertices, c, sigma, deadline)),
            None => {
                let mut search = Search::new(self, c, Mode::Minimize, deadline);
                Ok(search.run(sigma))
            }
        }
    }

    fn scan(
        vertices: &[Vec<bool>],
        c: &[f64],
        sigma: &PartialOutcome,
        deadline: Option<Instant>,
    ) -> OracleResult {
        let mut best: Option<(f64, &Vec<bool>)> = None;
        let mut nodes = 0;
        // vertices are sorted, so keeping the first minimum gives the lex tie-break
        for z in vertices {
            if nodes % 1024 == 0 && deadline_passed(deadline) {
                return OracleResult {
                    status: OracleStatus::TimedOut,
                    value: best.map(|b| b.0),
                    vertex: best.map(|b| b.1.clone()),
                    nodes,
                };
            }
            nodes += 1;
            if !sigma.matches(z) {
                continue;
            }
            let v = objective_value(c, z);
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, z));
            }
        }
        match best {
            Some((v, z)) => OracleResult {
                status: OracleStatus::Optimal,
                vertex: Some(z.clone()),
                value: Some(v),
                nodes,
            },
            None => OracleResult::infeasible(nodes),
        }
    }

    /// Is there a vertex of `Z_σ` with `z_i = bit`? Answered by maximizing
    /// `(2·bit − 1)·z_i` over `Z_σ`.
    pub fn settle_query(
        &self,
        sigma: &PartialOutcome,
        index: usize,
        bit: bool,
        deadline: Option<Instant>,
    ) -> Result<SettleAnswer> {
        if index >= self.n {
            return Err(Error::InvalidInput(format!("security {index} does not exist")));
        }
        let mut c = vec![0.0; self.n];
        c[index] = if bit { -1.0 } else { 1.0 };
        let result = self.minimize(&c, sigma, deadline)?;
        match result.status {
            OracleStatus::Infeasible => Err(Error::Consistency(
                "no valid payoff vector matches the settled securities".into(),
            )),
            OracleStatus::TimedOut => Ok(match result.vertex {
                Some(z) if z[index] == bit => SettleAnswer::Attainable(z),
                _ => SettleAnswer::TimedOut,
            }),
            OracleStatus::Optimal => {
                let z = result.vertex.expect("optimal result has a vertex");
                Ok(if z[index] == bit {
                    SettleAnswer::Attainable(z)
                } else {
                    SettleAnswer::Forced
                })
            }
        }
    }

    /// Every 0/1 vector satisfying the IP rows and `σ`, in lexicographic order,
    /// found by search over the rows alone (independent of outcome
    /// enumeration). Errors once more than `limit` solutions turn up.
    pub fn solutions(
        &self,
        sigma: &PartialOutcome,
        limit: usize,
        deadline: Option<Instant>,
    ) -> Result<Vec<Vec<bool>>> {
        let zero = vec![0.0; self.n];
        let mut search = Search::new(self, &zero, Mode::All { limit }, deadline);
        let result = search.run(sigma);
        if search.overflowed {
            return Err(Error::InvalidInput(format!("more than {limit} solutions")));
        }
        if result.status == OracleStatus::TimedOut {
            return Err(Error::InvalidInput("solution enumeration timed out".into()));
        }
        Ok(search.found)
    }

    /// True if `σ` admits at least one vertex.
    pub fn is_consistent(&self, sigma: &PartialOutcome, deadline: Option<Instant>) -> Result<bool> {
        let zero = vec![0.0; self.n];
        Ok(self.minimize(&zero, sigma, deadline)?.status != OracleStatus::Infeasible)
    }
}

/// Indices of a minimal set of rows that is infeasible on its own (deletion
/// filter), or `None` if `rows` are feasible over `n` binaries.
pub fn infeasible_subset(n: usize, rows: &[LinearRow]) -> Option<Vec<usize>> {
    let feasible = |keep: &[usize]| -> bool {
        let subset: Vec<LinearRow> = keep.iter().map(|&r| rows[r].clone()).collect();
        Oracle::from_rows(n, subset, Vec::new())
            .is_consistent(&PartialOutcome::new(), None)
            .expect("well-formed rows")
    };
    let mut keep: Vec<usize> = (0..rows.len()).collect();
    if feasible(&keep) {
        return None;
    }
    let mut k = 0;
    while k < keep.len() {
        let mut trial = keep.clone();
        trial.remove(k);
        if feasible(&trial) {
            k += 1;
        } else {
            keep = trial;
        }
    }
    Some(keep)
}
