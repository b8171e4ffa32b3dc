//! Synthetic tournament data: a model, an order stream and game results.
//!
//! Randomness comes from one seed through `ChaCha8Rng`, a counter-based
//! generator whose independent streams are selected with `set_stream`:
//!
//! | stream | used for                              |
//! |--------|---------------------------------------|
//! | 0      | which teams the sum and comparisons use |
//! | 1      | latent team strengths                 |
//! | 2      | game results                          |
//! | 3      | Monte Carlo conditional probabilities |
//! | 4      | orders                                |
//!
//! Team `i` beats team `j` with probability `1 / (1 + e^{s_j − s_i})`. Orders
//! arrive over `rounds` simulated days and each round's games are settled in
//! the last hour of its day. A trader's belief about an event is its
//! conditional probability given the games settled so far, perturbed on the
//! log-odds scale. Traders whose belief is above the event's initial price buy
//! it with a limit drawn uniformly from `[belief, 1]`; the others sell it,
//! which is recorded as buying the complement.
//!
//! The files are reproducible for a seed on this implementation only; the
//! streams are not meant to match other generators bit for bit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{SettlementEvent, TradeOrder};
use crate::error::{Error, Result};
use crate::model::{MarketModel, ModelConfig, Outcome, Value, VariableConfig, VariableId, VariableKind};

pub const DAY_SECONDS: f64 = 86_400.0;
const SETTLEMENT_WINDOW: f64 = 3_600.0;
const PROBABILITY_CLAMP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub rounds: u32,
    pub n_orders: usize,
    /// Share of orders on comparison variables, rounded to a whole count.
    pub comparison_fraction: f64,
    pub seed: u64,
    /// Budget written on every order.
    pub budget: f64,
    /// Standard deviation of the belief noise on the log-odds scale.
    pub belief_noise: f64,
    /// Simulated brackets per conditional-probability estimate.
    pub samples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            n_orders: 1000,
            comparison_fraction: 0.17,
            seed: 0,
            budget: 10.0,
            belief_noise: 0.5,
            samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub config: ModelConfig,
    pub model: MarketModel,
    pub strengths: Vec<f64>,
    pub outcome: Outcome,
    pub orders: Vec<TradeOrder>,
    pub settlements: Vec<SettlementEvent>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Comparisons over `teams / 2` distinct random pairs (at least one) and one
/// sum over a random pair.
fn model_config(rounds: u32, rng: &mut ChaCha8Rng) -> ModelConfig {
    let teams = 1u32 << rounds;
    let mut pairs: Vec<(u32, u32)> = (1..=teams)
        .flat_map(|i| (i + 1..=teams).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    let mut variables = vec![VariableConfig::Tournament {
        rounds,
        champion_prices: Vec::new(),
    }];
    let (a, b) = pairs[pairs.len() - 1];
    variables.push(VariableConfig::Sum {
        name: format!("s{a}_{b}"),
        children: vec![format!("X{a}"), format!("X{b}")],
        prices: Vec::new(),
    });
    let mut chosen: Vec<(u32, u32)> = pairs.iter().copied().take((teams / 2).max(1) as usize).collect();
    chosen.sort_unstable();
    for (i, j) in chosen {
        variables.push(VariableConfig::Comparison {
            name: format!("c{i}_{j}"),
            left: format!("X{i}"),
            right: format!("X{j}"),
            prices: Vec::new(),
        });
    }
    ModelConfig {
        variables,
        rows: Vec::new(),
    }
}

fn beats(strengths: &[f64], i: u32, j: u32) -> f64 {
    1.0 / (1.0 + (strengths[(j - 1) as usize] - strengths[(i - 1) as usize]).exp())
}

/// Plays the bracket, keeping the first `fixed.len()` winners as given.
fn play(model: &MarketModel, strengths: &[f64], fixed: &[u32], rng: &mut impl Rng) -> Vec<u32> {
    let t = model.tournament().expect("generated models have a tournament");
    let mut winners: Vec<u32> = Vec::with_capacity(t.game_count());
    let mut previous: Vec<u32> = (1..=t.teams()).collect();
    for round in &t.games {
        let mut current = Vec::with_capacity(round.len());
        for g in 0..round.len() {
            let (a, b) = (previous[2 * g], previous[2 * g + 1]);
            let w = match fixed.get(winners.len() + current.len()) {
                Some(&w) => w,
                None if rng.random::<f64>() < beats(strengths, a, b) => a,
                None => b,
            };
            current.push(w);
        }
        winners.extend(&current);
        previous = current;
    }
    winners
}

/// Monte Carlo distribution of every variable given the first `fixed.len()`
/// game results.
fn marginals(
    model: &MarketModel,
    strengths: &[f64],
    fixed: &[u32],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut counts: Vec<Vec<f64>> = model.variables().iter().map(|v| vec![0.0; v.domain.len()]).collect();
    for _ in 0..samples {
        let outcome = Outcome {
            winners: play(model, strengths, fixed, rng),
            free: Vec::new(),
        };
        for (c, k) in counts.iter_mut().zip(model.evaluate(&outcome)?) {
            c[k] += 1.0;
        }
    }
    for c in &mut counts {
        c.iter_mut().for_each(|x| *x /= samples as f64);
    }
    Ok(counts)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A random nonempty proper subset: a single value, or for ordered domains
/// sometimes every value from some point up.
fn random_event(var: &crate::model::Variable, rng: &mut impl Rng) -> Vec<Value> {
    let n = var.domain.len();
    let ordered = !matches!(var.kind, VariableKind::Game { .. });
    if ordered && n > 2 && rng.random_bool(0.5) {
        let from = rng.random_range(1..n);
        var.domain[from..].to_vec()
    } else {
        vec![var.domain[rng.random_range(0..n)].clone()]
    }
}

pub fn generate(config: &GeneratorConfig) -> Result<SyntheticMarket> {
    if !(1..=6).contains(&config.rounds) {
        return Err(Error::InvalidInput(format!(
            "rounds must be between 1 and 6, got {}",
            config.rounds
        )));
    }
    if !(0.0..=1.0).contains(&config.comparison_fraction) {
        return Err(Error::InvalidInput("comparison fraction must lie in [0, 1]".into()));
    }
    if !(config.budget > 0.0) || !(config.belief_noise >= 0.0) || config.samples == 0 {
        return Err(Error::InvalidInput(
            "budget must be positive, noise nonnegative and samples positive".into(),
        ));
    }
    let model_cfg = model_config(config.rounds, &mut stream(config.seed, 0));
    let model = model_cfg.build()?;
    let t = model.tournament().expect("tournament").clone();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream(config.seed, 1);
    let strengths: Vec<f64> = (0..t.teams()).map(|_| normal.sample(&mut rng)).collect();
    let winners = play(&model, &strengths, &[], &mut stream(config.seed, 2));
    let outcome = Outcome {
        winners: winners.clone(),
        free: Vec::new(),
    };

    let mut settlements = Vec::new();
    let mut played = 0;
    for (r, round) in t.games.iter().enumerate() {
        let end = (r + 1) as f64 * DAY_SECONDS;
        for (g, &game) in round.iter().enumerate() {
            settlements.push(SettlementEvent {
                timestamp: end - SETTLEMENT_WINDOW + g as f64,
                game,
                winner: winners[played + g],
            });
        }
        played += round.len();
    }

    let comparisons: Vec<VariableId> = model
        .variables()
        .iter()
        .filter(|v| matches!(v.kind, VariableKind::Comparison { .. }))
        .map(|v| v.id)
        .collect();
    let others: Vec<VariableId> = model
        .variables()
        .iter()
        .filter(|v| !matches!(v.kind, VariableKind::Comparison { .. }))
        .map(|v| v.id)
        .collect();
    let n = config.n_orders;
    let n_comparison = (n as f64 * config.comparison_fraction).round() as usize;
    let mut rng = stream(config.seed, 4);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let is_comparison: BTreeMap<usize, bool> =
        slots.iter().enumerate().map(|(rank, &k)| (k, rank < n_comparison)).collect();

    let noise = Normal::new(0.0, config.belief_noise.max(f64::MIN_POSITIVE)).expect("noise scale");
    let mut sampler = stream(config.seed, 3);
    let rounds = config.rounds as usize;
    let mut orders = Vec::with_capacity(n);
    let mut known = 0;
    for phase in 0..rounds {
        let (lo, hi) = (phase * n / rounds, (phase + 1) * n / rounds);
        let marg = marginals(&model, &strengths, &winners[..known], config.samples, &mut sampler)?;
        let open = |ids: &[VariableId]| -> Vec<VariableId> {
            let live: Vec<VariableId> = ids
                .iter()
                .copied()
                .filter(|v| marg[v.0].iter().filter(|&&p| p > 0.0).count() > 1)
                .collect();
            if live.is_empty() {
                ids.to_vec()
            } else {
                live
            }
        };
        let (open_cmp, open_other) = (open(&comparisons), open(&others));
        let span = DAY_SECONDS - SETTLEMENT_WINDOW;
        for k in lo..hi {
            let pool = if is_comparison[&k] { &open_cmp } else { &open_other };
            let var = model.variable(pool[rng.random_range(0..pool.len())]);
            let event = random_event(var, &mut rng);
            let p: f64 = event
                .iter()
                .map(|v| marg[var.id.0][var.value_index(v).expect("domain value")])
                .sum();
            let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            let belief = 1.0 / (1.0 + (-(logit(p) + noise.sample(&mut rng))).exp());
            let reference: f64 = event
                .iter()
                .map(|v| model.initial_prices()[var.security(v).expect("domain value")])
                .sum();
            let timestamp = (phase as f64 * DAY_SECONDS + span * (k - lo) as f64 / (hi - lo) as f64).floor();
            let order = if belief >= reference {
                TradeOrder {
                    timestamp,
                    variable: var.id,
                    event,
                    limit_price: rng.random_range(belief..=1.0),
                    budget: config.budget,
                }
            } else {
                TradeOrder {
                    timestamp,
                    variable: var.id,
                    event,
                    limit_price: rng.random_range(0.0..=belief),
                    budget: config.budget,
                }
                .complement(&model)?
            };
            orders.push(order);
        }
        known += t.games[phase].len();
    }

    Ok(SyntheticMarket {
        config: model_cfg,
        model,
        strengths,
        outcome,
        orders,
        settlements,
    })
}
