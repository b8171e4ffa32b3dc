//! Depth-first branch and bound over 0/1 securities.
//!
//! Propagation works on rows with group-aware bounds: an exclusive group
//! contributes exactly one of its still-possible members' coefficients to a
//! row (0 for members outside the row), so sum and comparison rows get exact
//! interval reasoning instead of the loose per-security bound.

use std::cmp::Ordering;
use std::time::Instant;

use super::{deadline_passed, objective_value, Oracle, OracleResult, OracleStatus};
use crate::cost::PartialOutcome;
use crate::model::Sense;

const FREE: i8 = -1;
const DUAL_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Mode {
    Minimize,
    /// Collect every solution, in lexicographic order.
    All { limit: usize },
}

pub(super) struct Search<'a> {
    oracle: &'a Oracle,
    c: &'a [f64],
    mode: Mode,
    deadline: Option<Instant>,
    tol: f64,
    assign: Vec<i8>,
    trail: Vec<usize>,
    /// Members of each unit not fixed to 0.
    alive: Vec<usize>,
    /// Member fixed to 1, per unit.
    one: Vec<Option<usize>>,
    row_queued: Vec<bool>,
    row_queue: Vec<usize>,
    unit_queue: Vec<usize>,
    /// Lagrangian objective and constant from the root's dual ascent.
    dual: Option<(Vec<f64>, f64)>,
    incumbent: Option<(f64, Vec<bool>)>,
    nodes: u64,
    timed_out: bool,
    pub(super) found: Vec<Vec<bool>>,
    pub(super) overflowed: bool,
}

impl<'a> Search<'a> {
    pub(super) fn new(oracle: &'a Oracle, c: &'a [f64], mode: Mode, deadline: Option<Instant>) -> Self {
        let scale: f64 = c.iter().map(|v| v.abs()).sum();
        Self {
            oracle,
            c,
            mode,
            deadline,
            tol: 1e-12 * (1.0 + scale),
            assign: vec![FREE; oracle.n],
            trail: Vec::new(),
            alive: oracle.units.iter().map(|u| u.members.len()).collect(),
            one: vec![None; oracle.units.len()],
            row_queued: vec![false; oracle.rows.len()],
            row_queue: Vec::new(),
            unit_queue: Vec::new(),
            dual: None,
            incumbent: None,
            nodes: 0,
            timed_out: false,
            found: Vec::new(),
            overflowed: false,
        }
    }

    pub(super) fn run(&mut self, sigma: &PartialOutcome) -> OracleResult {
        let mut ok = true;
        for (i, bit) in sigma.iter() {
            let u = self.oracle.unit_of[i];
            if bit && self.oracle.units[u].exclusive && self.one[u].is_some() {
                // two settled winners in one group
                ok = false;
            }
            self.set(i, bit);
        }
        for r in 0..self.oracle.rows.len() {
            self.enqueue_row(r);
        }
        self.unit_queue.extend(0..self.oracle.units.len());
        if ok && self.propagate() {
            if self.mode == Mode::Minimize {
                self.dual_ascent();
            }
            self.dfs();
        }
        let status = if self.timed_out {
            OracleStatus::TimedOut
        } else if self.incumbent.is_some() || !self.found.is_empty() {
            OracleStatus::Optimal
        } else {
            OracleStatus::Infeasible
        };
        let (value, vertex) = match self.incumbent.take() {
            Some((v, z)) => (Some(v), Some(z)),
            None => (None, self.found.first().cloned()),
        };
        OracleResult {
            status,
            vertex,
            value,
            nodes: self.nodes,
        }
    }

    fn set(&mut self, i: usize, bit: bool) {
        debug_assert_eq!(self.assign[i], FREE);
        self.assign[i] = bit as i8;
        self.trail.push(i);
        let u = self.oracle.unit_of[i];
        if bit {
            if self.one[u].is_none() {
                self.one[u] = Some(i);
            }
        } else {
            self.alive[u] -= 1;
        }
        self.unit_queue.push(u);
        for k in 0..self.oracle.occurrences[i].len() {
            let r = self.oracle.occurrences[i][k];
            self.enqueue_row(r);
        }
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let i = self.trail.pop().expect("trail above mark");
            let u = self.oracle.unit_of[i];
            if self.assign[i] == 1 {
                if self.one[u] == Some(i) {
                    self.one[u] = None;
                }
            } else {
                self.alive[u] += 1;
            }
            self.assign[i] = FREE;
        }
        self.clear_queues();
    }

    fn clear_queues(&mut self) {
        for r in self.row_queue.drain(..) {
            self.row_queued[r] = false;
        }
        self.unit_queue.clear();
    }

    fn enqueue_row(&mut self, r: usize) {
        if !self.row_queued[r] {
            self.row_queued[r] = true;
            self.row_queue.push(r);
        }
    }

    /// Propagation to a fixpoint. Returns false on a conflict.
    fn propagate(&mut self) -> bool {
        let ok = self.propagate_inner();
        if !ok {
            self.clear_queues();
        }
        ok
    }

    fn propagate_inner(&mut self) -> bool {
        loop {
            if let Some(u) = self.unit_queue.pop() {
                if !self.check_unit(u) {
                    return false;
                }
            } else if let Some(r) = self.row_queue.pop() {
                self.row_queued[r] = false;
                if !self.check_row(r) {
                    return false;
                }
            } else {
                return true;
            }
        }
    }

    fn check_unit(&mut self, u: usize) -> bool {
        let unit = &self.oracle.units[u];
        if !unit.exclusive {
            return true;
        }
        let members = unit.members.clone();
        match self.one[u] {
            Some(s) => {
                for i in members {
                    if i != s {
                        match self.assign[i] {
                            1 => return false,
                            FREE => self.set(i, false),
                            _ => {}
                        }
                    }
                }
                true
            }
            None => match self.alive[u] {
                0 => false,
                1 => {
                    let last = members
                        .into_iter()
                        .find(|&i| self.assign[i] == FREE)
                        .expect("one member alive");
                    self.set(last, true);
                    true
                }
                _ => true,
            },
        }
    }

    /// Range of a unit's contribution to a row given its in-row members;
    /// `None` if the unit has no possible value.
    fn unit_range(&self, u: usize, terms: &[(usize, i64)]) -> Option<(i64, i64)> {
        let unit = &self.oracle.units[u];
        if !unit.exclusive {
            let (i, a) = terms[0];
            return Some(match self.assign[i] {
                1 => (a, a),
                0 => (0, 0),
                _ => (a.min(0), a.max(0)),
            });
        }
        if let Some(s) = self.one[u] {
            let a = terms.iter().find(|&&(i, _)| i == s).map_or(0, |&(_, a)| a);
            return Some((a, a));
        }
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        let mut in_row_alive = 0;
        for &(i, a) in terms {
            if self.assign[i] != 0 {
                in_row_alive += 1;
                lo = lo.min(a);
                hi = hi.max(a);
            }
        }
        if self.alive[u] > in_row_alive {
            lo = lo.min(0);
            hi = hi.max(0);
        }
        (lo <= hi).then_some((lo, hi))
    }

    fn check_row(&mut self, r: usize) -> bool {
        let oracle = self.oracle;
        let row = &oracle.rows[r];
        let units = &oracle.row_units[r];
        let mut ranges = Vec::with_capacity(units.len());
        let (mut min_lhs, mut max_lhs) = (0i64, 0i64);
        for (u, terms) in units {
            let Some((lo, hi)) = self.unit_range(*u, terms) else {
                return false;
            };
            min_lhs += lo;
            max_lhs += hi;
            ranges.push((lo, hi));
        }
        let eq = row.sense == Sense::Eq;
        if max_lhs < row.rhs || (eq && min_lhs > row.rhs) {
            return false;
        }
        // can the unit contribute `v` with every other unit at its extremes?
        let feasible = |v: i64, (lo, hi): (i64, i64)| {
            max_lhs - hi + v >= row.rhs && (!eq || min_lhs - lo + v <= row.rhs)
        };
        for ((u, terms), &range) in units.iter().zip(&ranges) {
            if range.0 == range.1 {
                continue;
            }
            let unit = &oracle.units[*u];
            if !unit.exclusive {
                let (i, a) = terms[0];
                if !feasible(a, range) {
                    self.set(i, false);
                } else if !feasible(0, range) {
                    self.set(i, true);
                }
                continue;
            }
            for &(i, a) in terms {
                if self.assign[i] == FREE && !feasible(a, range) {
                    self.set(i, false);
                }
            }
            if !feasible(0, range) {
                // members outside the row are ruled out
                for i in unit.members.clone() {
                    if self.assign[i] == FREE && !terms.iter().any(|&(j, _)| j == i) {
                        self.set(i, false);
                    }
                }
            }
        }
        true
    }

    /// Lower bound on `cost·z` over completions of the current fixings,
    /// ignoring every row but the unit and bracket structure: the exact
    /// bracket minimum for tournament securities, the cheapest possible member
    /// of every other group, and `min(0, cost)` for free bits. Fills `z` with
    /// the minimizer when given.
    fn decomposed(&self, cost: &[f64], mut z: Option<&mut Vec<bool>>) -> f64 {
        let mut total = match (&self.oracle.bracket, z.as_deref_mut()) {
            (Some(b), Some(z)) => b.argmin(cost, &self.assign, z),
            (Some(b), None) => b.minimum(cost, &self.assign),
            (None, _) => 0.0,
        };
        for (u, unit) in self.oracle.units.iter().enumerate() {
            if self.oracle.in_bracket[u] {
                continue;
            }
            let pick = if let Some(s) = self.one[u] {
                Some(s)
            } else if unit.exclusive {
                let mut best: Option<usize> = None;
                for i in unit.members.clone() {
                    if self.assign[i] != 0 && best.is_none_or(|b| cost[i] < cost[b]) {
                        best = Some(i);
                    }
                }
                if best.is_none() {
                    return f64::INFINITY;
                }
                best
            } else {
                let i = unit.members.start;
                (self.assign[i] == FREE && cost[i] < 0.0).then_some(i)
            };
            if let Some(i) = pick {
                total += cost[i];
            }
            if let Some(z) = z.as_deref_mut() {
                for i in unit.members.clone() {
                    z[i] = Some(i) == pick;
                }
            }
        }
        total
    }

    /// The better of the plain and Lagrangian bounds, with `z` set to the
    /// relaxed minimizer (of the Lagrangian objective when there is one).
    fn bound(&self, z: &mut Vec<bool>) -> f64 {
        match &self.dual {
            Some((cost, constant)) => {
                let lagrangian = self.decomposed(cost, Some(z)) + constant;
                lagrangian.max(self.decomposed(self.c, None))
            }
            None => self.decomposed(self.c, Some(z)),
        }
    }

    /// Subgradient ascent on the multipliers of the relaxed rows at the root.
    /// Keeps the best multipliers found if they beat the plain bound.
    fn dual_ascent(&mut self) {
        let oracle = self.oracle;
        if oracle.relaxed.is_empty() {
            return;
        }
        let plain = self.decomposed(self.c, None);
        if !plain.is_finite() {
            return;
        }
        let mut lambda = vec![0.0; oracle.relaxed.len()];
        let mut z = vec![false; oracle.n];
        let mut best = (plain, None);
        let mut delta = 0.1 * (1.0 + plain.abs());
        let mut stale = 0;
        for _ in 0..DUAL_ITERATIONS {
            let (cost, constant) = self.lagrangian_cost(&lambda);
            let value = self.decomposed(&cost, Some(&mut z)) + constant;
            if value > best.0 + 1e-12 {
                best = (value, Some((cost, constant)));
                stale = 0;
            } else {
                stale += 1;
                if stale >= 5 {
                    delta /= 2.0;
                    stale = 0;
                }
            }
            let g: Vec<f64> = oracle
                .relaxed
                .iter()
                .map(|&r| {
                    let row = &oracle.rows[r];
                    (row.rhs - row.eval_bits(&z)) as f64
                })
                .collect();
            let norm: f64 = g.iter().map(|v| v * v).sum();
            if norm == 0.0 {
                // the relaxed minimizer is feasible, so the bound is tight
                break;
            }
            let step = (best.0 + delta - value) / norm;
            for (k, &r) in oracle.relaxed.iter().enumerate() {
                lambda[k] += step * g[k];
                if oracle.rows[r].sense == Sense::Ge {
                    lambda[k] = lambda[k].max(0.0);
                }
            }
        }
        self.dual = best.1;
    }

    /// `c − Σ λ_r a_r` and `Σ λ_r rhs_r`.
    fn lagrangian_cost(&self, lambda: &[f64]) -> (Vec<f64>, f64) {
        let mut cost = self.c.to_vec();
        let mut constant = 0.0;
        for (&r, &l) in self.oracle.relaxed.iter().zip(lambda) {
            if l == 0.0 {
                continue;
            }
            let row = &self.oracle.rows[r];
            constant += l * row.rhs as f64;
            for &(i, a) in &row.coeffs {
                cost[i] -= l * a as f64;
            }
        }
        (cost, constant)
    }

    /// In minimize mode, a free security the relaxed minimizer sets to 1,
    /// tried at 1 first. Tournament securities go first since every bracket
    /// outcome extends to the derived variables, then larger `|c|`. Otherwise
    /// the first free security, tried at 0 first.
    fn branch(&self, z: &[bool]) -> Option<(usize, bool)> {
        let key = |i: usize| (self.oracle.in_bracket[self.oracle.unit_of[i]], self.c[i].abs());
        let mut best: Option<usize> = None;
        for i in 0..self.oracle.n {
            if self.assign[i] != FREE {
                continue;
            }
            if self.mode != Mode::Minimize {
                return Some((i, false));
            }
            if z[i] && best.is_none_or(|b| key(i).partial_cmp(&key(b)) == Some(Ordering::Greater)) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => Some((i, true)),
            None => self.assign.iter().position(|&a| a == FREE).map(|i| (i, false)),
        }
    }

    fn dfs(&mut self) {
        if self.timed_out || self.overflowed {
            return;
        }
        self.nodes += 1;
        if deadline_passed(self.deadline) {
            self.timed_out = true;
            return;
        }
        let mut z = vec![false; self.oracle.n];
        if self.mode == Mode::Minimize {
            let bound = self.bound(&mut z);
            if bound == f64::INFINITY {
                return;
            }
            if self.oracle.rows.iter().all(|r| r.satisfied_by(&z)) {
                self.offer(z.clone());
            }
            // nothing here beats the incumbent by more than rounding
            if self.incumbent.as_ref().is_some_and(|(inc, _)| bound >= inc - self.tol) {
                return;
            }
        }
        let Some((i, first)) = self.branch(&z) else {
            self.leaf();
            return;
        };
        for bit in [first, !first] {
            let mark = self.trail.len();
            self.set(i, bit);
            if self.propagate() {
                self.dfs();
            }
            self.undo(mark);
            if self.timed_out || self.overflowed {
                return;
            }
        }
    }

    /// Keeps the feasible `z` if it beats the incumbent.
    fn offer(&mut self, z: Vec<bool>) {
        let v = objective_value(self.c, &z);
        let better = self.incumbent.as_ref().is_none_or(|(inc, _)| v < *inc);
        if better {
            self.incumbent = Some((v, z));
        }
    }

    fn leaf(&mut self) {
        let z: Vec<bool> = self.assign.iter().map(|&a| a == 1).collect();
        if !self.oracle.rows.iter().all(|r| r.satisfied_by(&z)) {
            return;
        }
        match self.mode {
            Mode::Minimize => self.offer(z),
            Mode::All { limit } => {
                if self.found.len() >= limit {
                    self.overflowed = true;
                } else {
                    self.found.push(z);
                }
            }
        }
    }
}
