//! Interior point, starting vertices and logically forced settlements.

use std::time::Instant;

use crate::cost::PartialOutcome;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleStatus, SettleAnswer};

#[derive(Debug, Clone, PartialEq)]
pub struct InitOutcome {
    /// Mean of `vertices`; strictly inside `(0, 1)` on coordinates `sigma`
    /// leaves open.
    pub interior: Vec<f64>,
    pub vertices: Vec<Vec<bool>>,
    /// The input partial outcome plus every coordinate no vertex can flip.
    pub sigma: PartialOutcome,
    /// False if an oracle call ran out of time; `sigma` then holds only the
    /// settlements proven so far.
    pub complete: bool,
    pub oracle_calls: usize,
}

/// For every open coordinate and bit, finds a vertex taking that bit unless a
/// vertex found earlier already does; coordinates that cannot take a bit are
/// settled to the other one.
pub fn init_fw(oracle: &Oracle, sigma: &PartialOutcome, deadline: Option<Instant>) -> Result<InitOutcome> {
    let n = oracle.n_securities();
    let mut covered = vec![[false; 2]; n];
    let mut vertices: Vec<Vec<bool>> = Vec::new();
    let mut extended = sigma.clone();
    let mut calls = 0;
    let mut complete = true;
    'scan: for i in 0..n {
        if sigma.is_settled(i) {
            continue;
        }
        for bit in [false, true] {
            if covered[i][bit as usize] {
                continue;
            }
            calls += 1;
            match oracle.settle_query(sigma, i, bit, deadline)? {
                SettleAnswer::Attainable(z) => {
                    for (j, &zj) in z.iter().enumerate() {
                        covered[j][zj as usize] = true;
                    }
                    vertices.push(z);
                }
                SettleAnswer::Forced => {
                    extended.settle(i, !bit)?;
                }
                SettleAnswer::TimedOut => {
                    complete = false;
                    break 'scan;
                }
            }
        }
    }
    if vertices.is_empty() && complete {
        // everything is settled; the compatible point must still exist
        calls += 1;
        let result = oracle.minimize(&vec![0.0; n], &extended, deadline)?;
        match result.status {
            OracleStatus::Optimal => vertices.push(result.vertex.expect("optimal vertex")),
            OracleStatus::Infeasible => {
                return Err(Error::Consistency(
                    "no valid payoff vector matches the settled securities".into(),
                ))
            }
            OracleStatus::TimedOut => complete = false,
        }
    }
    let mut interior = vec![0.0; n];
    for z in &vertices {
        for (u, &bit) in interior.iter_mut().zip(z) {
            if bit {
                *u += 1.0;
            }
        }
    }
    let count = vertices.len().max(1) as f64;
    interior.iter_mut().for_each(|u| *u /= count);
    Ok(InitOutcome {
        interior,
        vertices,
        sigma: extended,
        complete,
        oracle_calls: calls,
    })
}
