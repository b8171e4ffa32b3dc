//! Acceptance gate. Each test writes one `PASS`/`FAIL` line straight to
//! standard error, so the lines show up even when libtest captures output.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use fwmm::cost::{PartialOutcome, SumLmsr};
use fwmm::engine::{apply_settlement, run_market, RunConfig, SettlementEvent, Snapshot, Treatment};
use fwmm::fixtures::{aliased_pair, composite, id, tournament, wide_comparison};
use fwmm::io::write_snapshots;
use fwmm::lcmm::{remove_arbitrage, LcmmOptions};
use fwmm::model::{MarketModel, Sense, Value};
use fwmm::oracle::{objective_value, Backend, Oracle};
use fwmm::projection::{project_fw, FwOptions, ProjectionStatus};
use fwmm::synth::{generate, GeneratorConfig};

fn criterion(number: u32, name: &str, limit: Option<Duration>, body: impl FnOnce() -> String) {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = started.elapsed();
    let (ok, detail) = match &result {
        Ok(detail) => match limit {
            Some(l) if elapsed > l => (false, format!("{detail}; took {elapsed:.1?}, limit {l:?}")),
            _ => (true, detail.clone()),
        },
        Err(panic) => (
            false,
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default(),
        ),
    };
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "[{verdict}] {number:>2} {name} ({elapsed:.2?}): {detail}").unwrap();
    drop(err);
    assert!(ok, "criterion {number} failed: {detail}");
}

fn random_theta(m: &MarketModel, b: f64, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    m.initial_theta(b)
        .iter()
        .map(|t| t + b * rng.random_range(-spread..spread))
        .collect()
}

/// Market maker's net on moving from `before` to `after` when `z` happens.
fn realized(cost: &SumLmsr, before: &[f64], after: &[f64], sigma: &PartialOutcome, z: &[bool]) -> f64 {
    let delta: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let paid = cost.trade_cost(before, sigma, &delta).unwrap();
    let payout: f64 = delta.iter().zip(z).filter(|(_, &bit)| bit).map(|(d, _)| d).sum();
    payout - paid
}

/// Divergence written out group by group, without the library's cost code.
fn divergence(cost: &SumLmsr, mu: &[f64], theta: &[f64], sigma: &PartialOutcome) -> f64 {
    let b = cost.liquidity();
    let mut total = 0.0;
    for g in cost.groups() {
        if g.clone().any(|i| sigma.get(i) == Some(true)) {
            continue;
        }
        let open: Vec<usize> = g.clone().filter(|&i| !sigma.is_settled(i)).collect();
        let top = open.iter().map(|&i| theta[i] / b).fold(f64::NEG_INFINITY, f64::max);
        let lse = top + open.iter().map(|&i| (theta[i] / b - top).exp()).sum::<f64>().ln();
        total += b * lse;
        for &i in &open {
            if mu[i] > 0.0 {
                total += b * mu[i] * mu[i].ln();
            }
            total -= theta[i] * mu[i];
        }
    }
    total
}

/// `min F` over the hull of the outcomes consistent with `sigma`, found by
/// exponentiated gradient on the vertex weights. The Frank-Wolfe gap in
/// weight space certifies the answer to within `1e-6`.
fn hull_optimum(m: &MarketModel, cost: &SumLmsr, theta: &[f64], sigma: &PartialOutcome) -> f64 {
    let b = cost.liquidity();
    let vertices: Vec<Vec<f64>> = m
        .enumerate_payoffs(1 << 12)
        .unwrap()
        .into_iter()
        .filter(|z| sigma.matches(z))
        .map(|z| z.iter().map(|&bit| bit as u8 as f64).collect())
        .collect();
    let n = theta.len();
    let k = vertices.len();
    let point = |w: &[f64]| -> Vec<f64> {
        let mut mu = vec![0.0; n];
        for (wj, z) in w.iter().zip(&vertices) {
            for (m, x) in mu.iter_mut().zip(z) {
                *m += wj * x;
            }
        }
        mu
    };
    let weight_gradient = |mu: &[f64]| -> Vec<f64> {
        let g: Vec<f64> = (0..n)
            .map(|i| {
                if sigma.is_settled(i) {
                    0.0
                } else {
                    b * (mu[i].max(1e-300).ln() + 1.0) - theta[i]
                }
            })
            .collect();
        vertices.iter().map(|z| z.iter().zip(&g).map(|(a, c)| a * c).sum()).collect()
    };
    let mut w = vec![1.0 / k as f64; k];
    let mut mu = point(&w);
    let mut f = divergence(cost, &mu, theta, sigma);
    let mut step = 1.0 / b;
    for _ in 0..200_000 {
        let grad = weight_gradient(&mu);
        let inner: f64 = grad.iter().zip(&w).map(|(g, x)| g * x).sum();
        let low = grad.iter().copied().fold(f64::INFINITY, f64::min);
        if inner - low <= 1e-6 {
            return f;
        }
        step *= 2.0;
        loop {
            let mut next: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x * (-step * (g - low)).exp()).collect();
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= s);
            let candidate = point(&next);
            let fc = divergence(cost, &candidate, theta, sigma);
            let decrease: f64 = grad.iter().zip(w.iter().zip(&next)).map(|(g, (a, c))| g * (c - a)).sum();
            if fc <= f + 0.5 * decrease || step < 1e-14 {
                w = next;
                mu = candidate;
                f = fc;
                break;
            }
            step *= 0.5;
        }
    }
    panic!("hull optimum did not converge");
}

fn settle(m: &MarketModel, sigma: &PartialOutcome, game: &str, winner: u32) -> PartialOutcome {
    let event = SettlementEvent {
        timestamp: 0.0,
        game: id(m, game),
        winner,
    };
    apply_settlement(m, sigma, &event).unwrap()
}

#[test]
fn c01_oracle_equivalence() {
    criterion(1, "oracle equivalence", Some(Duration::from_secs(60)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nodes = 0;
        for k in [2, 3] {
            let m = composite(k);
            let bb = Oracle::new(&m, Backend::BranchAndBound).unwrap();
            let en = Oracle::new(&m, Backend::Enumeration).unwrap();
            for _ in 0..500 {
                let c: Vec<f64> = (0..m.n_securities()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let sigma = PartialOutcome::new();
                let a = bb.minimize(&c, &sigma, None).unwrap();
                let e = en.minimize(&c, &sigma, None).unwrap();
                assert_eq!(a.value, e.value, "k = {k}, c = {c:?}");
                let z = a.vertex.expect("feasible");
                assert!(m.is_feasible(&z));
                assert_eq!(Some(objective_value(&c, &z)), a.value);
                nodes += a.nodes;
            }
        }
        format!("1000 objectives, B&B equals enumeration exactly, {nodes} B&B nodes")
    });
}

#[test]
fn c02_ip_model_exactness() {
    criterion(2, "IP model exactness", Some(Duration::from_secs(10)), || {
        let mut sizes = Vec::new();
        for (k, expected) in [(1, 2), (2, 8), (3, 128)] {
            let m = tournament(k);
            let count = m.outcome_count().unwrap();
            let mut simulated: Vec<Vec<bool>> = (0..count).map(|i| m.payoff(&m.outcome_at(i)).unwrap()).collect();
            simulated.sort();
            let distinct = {
                let mut d = simulated.clone();
                d.dedup();
                d.len()
            };
            assert_eq!(distinct, simulated.len(), "two game outcomes share a payoff vector");
            let oracle = Oracle::new(&m, Backend::BranchAndBound).unwrap();
            let mut solutions = oracle.solutions(&PartialOutcome::new(), 1 << 12, None).unwrap();
            solutions.sort();
            assert_eq!(solutions, simulated, "k = {k}");
            assert_eq!(solutions.len(), expected);
            sizes.push(solutions.len());
        }
        format!("|Z| = {sizes:?}, IP solutions and bracket outcomes match one to one")
    });
}

#[test]
fn c03_projection_correctness() {
    criterion(3, "projection correctness", Some(Duration::from_secs(60)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // stopping needs g <= (1 - alpha)F, and g bounds F - F*
        let strict = FwOptions {
            alpha: 1.0 - 1e-5,
            ..FwOptions::default()
        };
        let mut worst: f64 = 0.0;
        let mut states = 0;
        for (m, b) in [(tournament(2), 1.0), (composite(2), 1.0), (composite(2), 10.0)] {
            let cost = m.cost_function(b).unwrap();
            let oracle = Oracle::new(&m, Backend::BranchAndBound).unwrap();
            for round in 0..8 {
                let theta = random_theta(&m, b, 2.0, &mut rng);
                let sigma = match round % 4 {
                    3 => settle(&m, &PartialOutcome::new(), "G1_3", 3 + rng.random_range(0..2)),
                    _ => PartialOutcome::new(),
                };
                let r = project_fw(&cost, &theta, &sigma, &oracle, &strict, None, None).unwrap();
                let best = hull_optimum(&m, &cost, &theta, &r.sigma);
                assert!(best > 1e-3, "state is nearly coherent: {best}");
                assert_eq!(r.status, ProjectionStatus::ProfitGuaranteed);
                let mu = cost.prices(&r.theta, &r.sigma).unwrap();
                let f = divergence(&cost, &mu, &theta, &r.sigma);
                assert!((f - r.divergence).abs() <= 1e-6, "{f} vs reported {}", r.divergence);
                worst = worst.max((f - best).abs());
                assert!((f - best).abs() <= 1e-3, "F = {f}, hull optimum {best}");
                states += 1;
            }
        }

        let m = aliased_pair();
        let cost = m.cost_function(1.0).unwrap();
        let theta = m.initial_theta(1.0);
        let sigma = PartialOutcome::new();
        let oracle = Oracle::new(&m, Backend::Auto).unwrap();
        let converged = project_fw(&cost, &theta, &sigma, &oracle, &strict, None, None).unwrap();
        let mu = cost.prices(&converged.theta, &converged.sigma).unwrap();
        for (p, q) in mu.iter().zip([0.75, 0.25, 0.75, 0.25]) {
            assert!((p - q).abs() <= 1e-3, "aliased prices {mu:?}");
        }
        let half = project_fw(&cost, &theta, &sigma, &oracle, &FwOptions::default(), None, None).unwrap();
        assert_eq!(half.status, ProjectionStatus::ProfitGuaranteed);
        let floor = 0.5 * 1.25f64.ln();
        assert!(half.guaranteed_profit >= floor, "{} < {floor}", half.guaranteed_profit);
        format!(
            "{states} states, worst |F - F*| = {worst:.2e}; aliased prices {:.4}/{:.4}, profit at alpha 0.5 = {:.4} >= {floor:.4}",
            mu[0], mu[1], half.guaranteed_profit
        )
    });
}

#[test]
fn c04_profit_guarantees() {
    criterion(4, "profit guarantees", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let options = FwOptions::default();
        let fixtures: Vec<(&str, MarketModel)> = vec![
            ("tournament(1)", tournament(1)),
            ("tournament(2)", tournament(2)),
            ("tournament(3)", tournament(3)),
            ("composite(2)", composite(2)),
            ("composite(3)", composite(3)),
            ("aliased_pair", aliased_pair()),
            ("wide_comparison", wide_comparison()),
        ];
        let (mut lcmm_trades, mut fw_trades, mut checks) = (0, 0, 0);
        for (name, m) in &fixtures {
            let payoffs = m.enumerate_payoffs(1 << 12).unwrap();
            let oracle = Oracle::new(m, Backend::Auto).unwrap();
            for b in [1.0, 20.0] {
                let cost = m.cost_function(b).unwrap();
                for round in 0..6 {
                    let theta = random_theta(m, b, 1.5, &mut rng);
                    let sigma = if round % 3 == 2 && m.tournament().is_some() {
                        settle(m, &PartialOutcome::new(), "G1_1", 1 + rng.random_range(0..2))
                    } else {
                        PartialOutcome::new()
                    };
                    let consistent: Vec<&Vec<bool>> = payoffs.iter().filter(|z| sigma.matches(z)).collect();

                    let lc = remove_arbitrage(&cost, &theta, &sigma, m.lcmm_rows(), &LcmmOptions::default()).unwrap();
                    assert!(lc.guaranteed_profit >= -1e-9);
                    if lc.trades > 0 {
                        lcmm_trades += 1;
                    }
                    for z in &consistent {
                        let r = realized(&cost, &theta, &lc.theta, &sigma, z);
                        assert!(r >= -1e-9, "{name}: LCMM trade loses {r}");
                        checks += 1;
                    }

                    let p = project_fw(&cost, &theta, &sigma, &oracle, &options, None, None).unwrap();
                    if p.status != ProjectionStatus::ProfitGuaranteed {
                        continue;
                    }
                    fw_trades += 1;
                    let floor = options.alpha * p.divergence;
                    assert!(p.guaranteed_profit >= floor - 1e-6, "{name}");
                    for z in payoffs.iter().filter(|z| p.sigma.matches(z)) {
                        let r = realized(&cost, &theta, &p.theta, &p.sigma, z);
                        assert!(r >= -1e-9, "{name}: projection trade loses {r}");
                        assert!(r >= floor - 1e-6, "{name}: projection earns {r} < {floor}");
                        checks += 1;
                    }
                }
            }
        }
        assert!(lcmm_trades > 0 && fw_trades > 0);
        format!(
            "{} fixtures, {lcmm_trades} LCMM and {fw_trades} projection trades, {checks} outcome checks",
            fixtures.len()
        )
    });
}

#[test]
fn c05_bounded_loss() {
    criterion(5, "bounded loss", Some(Duration::from_secs(300)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut runs = 0;
        let mut closest = f64::INFINITY;
        for seed in 0..200u64 {
            let rounds = 2 + (seed % 2) as u32;
            let market = generate(&GeneratorConfig {
                rounds,
                n_orders: rng.random_range(20..120),
                seed,
                budget: [1.0, 10.0, 100.0][rng.random_range(0..3)],
                samples: 200,
                ..GeneratorConfig::default()
            })
            .unwrap();
            let m = &market.model;
            let b = [5.0, 30.0, 150.0][rng.random_range(0..3)];
            let treatment = Treatment::ALL[(seed % 3) as usize];
            let config = RunConfig {
                treatment,
                liquidity: b,
                cadence: rng.random_range(10..60),
                ..RunConfig::default()
            };
            let report = run_market(&config, m, &market.orders, &market.settlements, &market.outcome).unwrap();
            let cost = m.cost_function(b).unwrap();
            let theta0 = m.initial_theta(b);
            let c0 = cost.cost(&theta0, &PartialOutcome::new()).unwrap();
            let bound = m
                .enumerate_payoffs(1 << 12)
                .unwrap()
                .iter()
                .map(|z| c0 - objective_value(&theta0, z))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((bound - report.loss_bound).abs() <= 1e-9 * bound.max(1.0));
            let loss = report.loss();
            assert!(loss <= bound + 1e-6, "seed {seed} {treatment}: loss {loss} > {bound}");
            assert!(report.replay_error <= 1e-9);
            closest = closest.min(bound - loss);
            runs += 1;
        }
        format!("{runs} runs over all treatments, smallest slack {closest:.4}")
    });
}

#[test]
fn c06_conditioning() {
    criterion(6, "conditioning", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = composite(3);
        let mut worst: f64 = 0.0;
        for b in [1.0, 150.0] {
            let cost = m.cost_function(b).unwrap();
            for _ in 0..20 {
                let theta = random_theta(&m, b, 2.0, &mut rng);
                let free = cost.prices(&theta, &PartialOutcome::new()).unwrap();
                let mut sigma = settle(&m, &PartialOutcome::new(), "G1_1", 1 + rng.random_range(0..2));
                sigma = settle(&m, &sigma, "G1_5", 5 + rng.random_range(0..2));
                let cond = cost.prices(&theta, &sigma).unwrap();
                for g in cost.groups() {
                    if let Some(won) = g.clone().find(|&i| sigma.get(i) == Some(true)) {
                        for i in g.clone() {
                            assert_eq!(cond[i], (i == won) as u8 as f64);
                        }
                        continue;
                    }
                    let mass: f64 = g.clone().filter(|&i| !sigma.is_settled(i)).map(|i| free[i]).sum();
                    for i in g.clone() {
                        let expected = if sigma.is_settled(i) { 0.0 } else { free[i] / mass };
                        worst = worst.max((cond[i] - expected).abs());
                    }
                }
            }
        }
        assert!(worst <= 1e-9, "{worst}");
        format!("largest deviation from the conditional {worst:.1e}")
    });
}

#[test]
fn c07_controlled_growth() {
    criterion(7, "controlled growth", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = composite(3);
        let sigma = PartialOutcome::new();
        let mut ratios = Vec::new();
        let mut fd_worst: f64 = 0.0;
        for b in [1.0, 150.0] {
            let cost = m.cost_function(b).unwrap();
            for eps in [0.1, 0.01] {
                let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    let mut mu = vec![0.0; m.n_securities()];
                    for g in cost.groups() {
                        let k = g.len();
                        // a Dirichlet(0.3) draw, which often lands near a face
                        let gamma = Gamma::new(0.3, 1.0).unwrap();
                        let d: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
                        let total: f64 = d.iter().sum();
                        for (i, x) in g.clone().zip(d) {
                            mu[i] = eps + (1.0 - k as f64 * eps) * x / total;
                        }
                    }
                    mu
                };
                let mut largest: f64 = 0.0;
                for _ in 0..400 {
                    let a = sample(&mut rng);
                    let near = rng.random_bool(0.5);
                    let c = if near {
                        // a nearby point: mix towards another sample
                        let o = sample(&mut rng);
                        let t = 1e-3;
                        a.iter().zip(&o).map(|(x, y)| (1.0 - t) * x + t * y).collect()
                    } else {
                        sample(&mut rng)
                    };
                    let ga = cost.conjugate_gradient(&a, &sigma).unwrap();
                    let gc = cost.conjugate_gradient(&c, &sigma).unwrap();
                    let num: f64 = ga.iter().zip(&gc).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    let den: f64 = a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    if den > 0.0 {
                        largest = largest.max(num / den);
                    }
                }
                assert!(largest <= b / eps * (1.0 + 1e-9), "b = {b}, eps = {eps}: {largest}");
                ratios.push(largest / (b / eps));

                // finite differences of the conjugate along directions inside each group
                let h = 1e-6;
                for _ in 0..20 {
                    let mu = sample(&mut rng);
                    let grad = cost.conjugate_gradient(&mu, &sigma).unwrap();
                    let mut dir = vec![0.0; mu.len()];
                    for g in cost.groups() {
                        let raw: Vec<f64> = g.clone().map(|_| rng.random_range(-1.0..1.0)).collect();
                        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
                        for (i, r) in g.clone().zip(raw) {
                            dir[i] = r - mean;
                        }
                    }
                    let shifted = |s: f64| -> f64 {
                        let p: Vec<f64> = mu.iter().zip(&dir).map(|(x, d)| x + s * d).collect();
                        cost.conjugate(&p, &sigma).finite().unwrap()
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let exact: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                    fd_worst = fd_worst.max((fd - exact).abs() / b);
                }
            }
            // prices against finite differences of the cost
            let h = 1e-6;
            for _ in 0..10 {
                let theta = random_theta(&m, b, 1.0, &mut rng);
                let p = cost.prices(&theta, &sigma).unwrap();
                for i in 0..theta.len() {
                    let mut up = theta.clone();
                    let mut down = theta.clone();
                    up[i] += h * b;
                    down[i] -= h * b;
                    let fd = (cost.cost(&up, &sigma).unwrap() - cost.cost(&down, &sigma).unwrap()) / (2.0 * h * b);
                    fd_worst = fd_worst.max((fd - p[i]).abs());
                }
            }
        }
        assert!(fd_worst <= 1e-5, "{fd_worst}");
        let tightest = ratios.iter().copied().fold(0.0, f64::max);
        format!("sampled L_eps reaches {:.1}% of b/eps at most; finite differences agree to {fd_worst:.1e}", 100.0 * tightest)
    });
}

#[test]
fn c08_lcmm_tightness() {
    criterion(8, "LCMM tightness", None, || {
        let m = wide_comparison();
        let n = m.n_securities();
        let label = |i: usize| m.security_label(i);
        let sec = |var: &str, v: Value| m.variable_by_name(var).unwrap().security(&v).unwrap();
        let mut mu = vec![0.0; n];
        mu[sec("x1", Value::Int(0))] = 0.9;
        mu[sec("x1", Value::Int(10))] = 0.1;
        mu[sec("x2", Value::Int(0))] = 0.3;
        mu[sec("x2", Value::Int(1))] = 0.7;
        mu[sec("c", Value::Lt)] = 0.1;
        mu[sec("c", Value::Eq)] = 0.45;
        mu[sec("c", Value::Gt)] = 0.45;
        // the LP relaxation of the big-M rows: bounds, one unit per group, every IP row
        assert!(mu.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for g in m.groups() {
            assert!((g.clone().map(|i| mu[i]).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for row in m.ip_rows() {
            let lhs = row.eval(&mu);
            let ok = match row.sense {
                Sense::Ge => lhs >= row.rhs as f64 - 1e-12,
                Sense::Eq => (lhs - row.rhs as f64).abs() <= 1e-12,
            };
            assert!(ok, "big-M row broken at the probe point");
        }
        let (worst_row, violation) = m
            .lcmm_rows()
            .iter()
            .enumerate()
            .map(|(k, r)| (k, r.violation(&mu)))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!(violation > 0.1, "no LCMM row cuts the point");
        let touched: Vec<String> = m.lcmm_rows()[worst_row].coeffs.iter().map(|&(i, _)| label(i)).collect();

        let b = 1.0;
        let cost = m.cost_function(b).unwrap();
        let theta: Vec<f64> = mu.iter().map(|p| b * p.max(1e-9).ln()).collect();
        let sigma = PartialOutcome::new();
        let out = remove_arbitrage(&cost, &theta, &sigma, m.lcmm_rows(), &LcmmOptions::default()).unwrap();
        assert!(out.trades > 0);
        assert!(out.converged);
        assert!(out.guaranteed_profit > 0.0);
        for z in m.enumerate_payoffs(1 << 10).unwrap() {
            assert!(realized(&cost, &theta, &out.theta, &sigma, &z) >= out.guaranteed_profit - 1e-9);
        }
        format!(
            "LP-feasible point violates the row over {} by {violation:.2}; {} trades, guaranteed profit {:.4}",
            touched.join(", "),
            out.trades,
            out.guaranteed_profit
        )
    });
}

/// Last snapshot taken before the final game is settled.
fn final_snapshot(snapshots: &[Snapshot], last_settlement: f64) -> &Snapshot {
    snapshots
        .iter()
        .rev()
        .find(|s| s.timestamp < last_settlement)
        .expect("a snapshot before the final settlement")
}

#[test]
fn c09_directional_replication() {
    criterion(9, "directional replication", Some(Duration::from_secs(600)), || {
        let seeds = 5;
        let mut finals = [0.0; 3];
        let mut improvement = 0.0;
        for seed in 0..seeds {
            let market = generate(&GeneratorConfig {
                rounds: 3,
                seed,
                budget: 10.0,
                ..GeneratorConfig::default()
            })
            .unwrap();
            let last = market.settlements.last().unwrap().timestamp;
            let mut snaps = Vec::new();
            for (k, treatment) in Treatment::ALL.into_iter().enumerate() {
                let config = RunConfig {
                    treatment,
                    ..RunConfig::default()
                };
                let report =
                    run_market(&config, &market.model, &market.orders, &market.settlements, &market.outcome).unwrap();
                finals[k] += final_snapshot(&report.snapshots, last).avg_variable_ll / seeds as f64;
                snaps.push(report.snapshots);
            }
            let (lc, fw) = (&snaps[1], &snaps[2]);
            assert_eq!(lc.len(), fw.len());
            let first = fw
                .iter()
                .position(|s| s.projection_status == Some(ProjectionStatus::ProfitGuaranteed))
                .expect("a successful projection");
            let after: Vec<f64> = lc[first..]
                .iter()
                .zip(&fw[first..])
                .filter(|(_, f)| f.timestamp < last)
                .map(|(l, f)| {
                    assert_eq!(l.timestamp, f.timestamp);
                    f.avg_variable_ll - l.avg_variable_ll
                })
                .collect();
            improvement += after.iter().sum::<f64>() / after.len() as f64 / seeds as f64;
        }
        let [ind, lcmm, fwmm] = finals;
        assert!(fwmm >= lcmm && lcmm >= ind, "final LL: IND {ind}, LCMM {lcmm}, FWMM {fwmm}");
        assert!(improvement > 0.0, "FWMM - LCMM after the first projection: {improvement}");
        format!("final avg LL IND {ind:.4} <= LCMM {lcmm:.4} <= FWMM {fwmm:.4}; FWMM - LCMM after first projection {improvement:+.4}")
    });
}

#[test]
fn c10_determinism() {
    criterion(10, "determinism", None, || {
        let mut bytes = 0;
        for seed in [0, 9] {
            let render = || -> Vec<Vec<u8>> {
                let market = generate(&GeneratorConfig {
                    rounds: 3,
                    n_orders: 400,
                    seed,
                    ..GeneratorConfig::default()
                })
                .unwrap();
                Treatment::ALL
                    .into_iter()
                    .map(|treatment| {
                        let config = RunConfig {
                            treatment,
                            ..RunConfig::default()
                        };
                        let report = run_market(&config, &market.model, &market.orders, &market.settlements, &market.outcome)
                            .unwrap();
                        let mut out = Vec::new();
                        write_snapshots(&mut out, &report.snapshots).unwrap();
                        out
                    })
                    .collect()
            };
            let a = render();
            let b = render();
            assert_eq!(a, b, "seed {seed}");
            bytes += a.iter().map(Vec::len).sum::<usize>();
        }
        format!("two seeds, three treatments, {bytes} bytes of snapshot CSV identical across runs")
    });
}
