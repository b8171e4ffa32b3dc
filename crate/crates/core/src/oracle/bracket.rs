//! Exact minimization over the tournament's own securities by dynamic
//! programming on the bracket, used as the tournament part of the search
//! bound. Securities fixed to 0 are excluded; everything else is priced at its
//! objective coefficient.

use crate::model::{MarketModel, Value};

#[derive(Debug, Clone)]
pub(super) struct BracketBound {
    rounds: usize,
    /// First security of `X_t`, indexed by `t - 1`.
    wins: Vec<usize>,
    /// `games[r - 1][g]`: first security of the game (its domain is the
    /// contiguous team block starting at `g·2^r + 1`).
    games: Vec<Vec<usize>>,
    /// Group indices covered by this bound.
    pub(super) groups: Vec<usize>,
}

impl BracketBound {
    pub(super) fn new(model: &MarketModel) -> Option<Self> {
        let t = model.tournament()?;
        let wins = t
            .team_wins
            .iter()
            .map(|&id| model.variable(id).securities.start)
            .collect();
        let games = t
            .games
            .iter()
            .map(|round| round.iter().map(|&g| model.variable(g).securities.start).collect())
            .collect();
        let groups = t.team_wins.iter().copied().chain(t.game_order()).map(|id| id.0).collect();
        debug_assert!(t.team_wins.iter().all(|&id| {
            let x = model.variable(id);
            x.security(&Value::Int(0)) == Some(x.securities.start)
        }));
        Some(Self {
            rounds: t.rounds as usize,
            wins,
            games,
            groups,
        })
    }

    /// Minimum of `c·z` over bracket outcomes avoiding securities fixed to 0
    /// (`assign[i] == 0`); `+∞` if none remains.
    pub(super) fn minimum(&self, c: &[f64], assign: &[i8]) -> f64 {
        self.solve(c, assign, None)
    }

    /// As [`minimum`](Self::minimum), also setting `z` to a minimizer's bits
    /// on the bracket securities (when the minimum is finite).
    pub(super) fn argmin(&self, c: &[f64], assign: &[i8], z: &mut [bool]) -> f64 {
        self.solve(c, assign, Some(z))
    }

    fn solve(&self, c: &[f64], assign: &[i8], z: Option<&mut [bool]>) -> f64 {
        let cost = |i: usize| if assign[i] == 0 { f64::INFINITY } else { c[i] };
        let teams = self.wins.len();
        // values[r][t]: cheapest cost of t+1's round-r subtree given t+1 wins it
        let mut values = vec![vec![0.0; teams]];
        // best_loser[r-1][t]: cheapest loser of the half opposite to t in round r
        let mut best_loser: Vec<Vec<usize>> = Vec::with_capacity(self.rounds);
        for r in 1..=self.rounds {
            let size = 1usize << r;
            let half = size / 2;
            let value = &values[r - 1];
            let mut next = vec![f64::INFINITY; teams];
            let mut losers = vec![0; teams];
            for (g, &start) in self.games[r - 1].iter().enumerate() {
                let first = g * size;
                // the loser leaves with r - 1 wins
                let loser = |lo: usize| {
                    let mut best = (f64::INFINITY, lo);
                    for t in lo..lo + half {
                        let v = value[t] + cost(self.wins[t] + r - 1);
                        if v < best.0 {
                            best = (v, t);
                        }
                    }
                    best
                };
                let left = loser(first);
                let right = loser(first + half);
                for t in first..first + size {
                    let other = if t < first + half { right } else { left };
                    next[t] = cost(start + (t - first)) + value[t] + other.0;
                    losers[t] = other.1;
                }
            }
            values.push(next);
            best_loser.push(losers);
        }
        let mut best = (f64::INFINITY, 0);
        for t in 0..teams {
            let v = values[self.rounds][t] + cost(self.wins[t] + self.rounds);
            if v < best.0 {
                best = (v, t);
            }
        }
        if let Some(z) = z {
            if best.0.is_finite() {
                for &w in &self.wins {
                    z[w..=w + self.rounds].iter_mut().for_each(|b| *b = false);
                }
                for (r, round) in self.games.iter().enumerate() {
                    let size = 2usize << r;
                    for &start in round {
                        z[start..start + size].iter_mut().for_each(|b| *b = false);
                    }
                }
                z[self.wins[best.1] + self.rounds] = true;
                // (round, winner) subtrees still to expand
                let mut stack = vec![(self.rounds, best.1)];
                while let Some((r, w)) = stack.pop() {
                    if r == 0 {
                        continue;
                    }
                    let size = 1usize << r;
                    let g = w / size;
                    z[self.games[r - 1][g] + (w - g * size)] = true;
                    let o = best_loser[r - 1][w];
                    z[self.wins[o] + r - 1] = true;
                    stack.push((r - 1, w));
                    stack.push((r - 1, o));
                }
            }
        }
        best.0
    }
}
