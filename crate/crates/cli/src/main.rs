//! `fwmm`: generate synthetic markets, replay them under a treatment, debug a
//! single projection, and validate model files.
//!
//! Diagnostics go to standard error at the level named by `FWMM_LOG`
//! (`off`, `info` or `debug`).

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as Json};

use fwmm::cost::PartialOutcome;
use fwmm::engine::{
    apply_settlement, execute_limit_order, final_outcome, run_market, RunConfig, RunReport, SettlementEvent,
    Treatment,
};
use fwmm::io::{load_orders, load_settlements, write_orders, write_settlements, write_snapshots};
use fwmm::lcmm::LcmmOptions;
use fwmm::model::{MarketModel, ModelConfig};
use fwmm::oracle::{infeasible_subset, Backend, Oracle, SettleAnswer};
use fwmm::projection::{project_fw, FwOptions};
use fwmm::synth::{generate, GeneratorConfig};

/// Largest outcome space `validate` enumerates.
const VALIDATE_ENUMERATION_LIMIT: u64 = 1 << 20;
/// Allowed mismatch between a recorded trade cost and its replay.
const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "fwmm", version, about = "Combinatorial prediction market engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic tournament model, order stream and settlements.
    Generate(GenerateArgs),
    /// Replay orders and settlements under one treatment.
    Run(RunArgs),
    /// Replay some orders independently, then run one projection.
    Project(ProjectArgs),
    /// Check a model file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Tournament rounds (2^k teams).
    #[arg(short = 'k', long, default_value_t = 3)]
    rounds: u32,
    #[arg(long = "orders", default_value_t = 1000)]
    n_orders: usize,
    #[arg(long, default_value_t = 0.17)]
    comparison_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Budget written on every order.
    #[arg(long, default_value_t = 10.0)]
    budget: f64,
    /// Belief noise on the log-odds scale.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Simulated brackets per probability estimate.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Directory for model.toml, orders.csv and settlements.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MarketArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    orders: PathBuf,
    #[arg(long)]
    settlements: PathBuf,
    #[arg(long, default_value_t = 150.0)]
    liquidity: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    eps0: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsd: f64,
    /// Wall-clock limit of one projection.
    #[arg(long, default_value_t = 10.0)]
    deadline_secs: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value = "fwmm")]
    treatment: Treatment,
    /// Budget for every order, overriding the file; a comma-separated list
    /// runs once per level.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<f64>,
    /// Orders between projections.
    #[arg(long, default_value_t = 100)]
    cadence: usize,
    /// Recorded in the report; the replay itself uses no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snapshot CSV; with several budgets, `-b<budget>` is added to the
    /// file stem. Standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ledger report (JSON); defaults to standard output, or standard error
    /// when snapshots go there.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Orders replayed before projecting; all of them when absent.
    #[arg(long)]
    trades: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    model: PathBuf,
    /// Per-query limit for the settle-query smoke test.
    #[arg(long, default_value_t = 10.0)]
    deadline_secs: f64,
}

/// The model file parsed into a consistent market.
fn load_model(path: &Path) -> Result<MarketModel> {
    let config = ModelConfig::load(path)?;
    Ok(config.build()?)
}

fn fw_options(m: &MarketArgs) -> FwOptions {
    FwOptions {
        alpha: m.alpha,
        eps0: m.eps0,
        eps_d: m.epsd,
        ..FwOptions::default()
    }
}

fn deadline(secs: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(secs).with_context(|| format!("bad deadline {secs}"))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let market = generate(&GeneratorConfig {
        rounds: args.rounds,
        n_orders: args.n_orders,
        comparison_fraction: args.comparison_fraction,
        seed: args.seed,
        budget: args.budget,
        belief_noise: args.noise,
        samples: args.samples,
    })?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let model_path = args.out_dir.join("model.toml");
    fs::write(&model_path, market.config.to_toml()).with_context(|| format!("writing {}", model_path.display()))?;
    let orders_path = args.out_dir.join("orders.csv");
    let file = File::create(&orders_path).with_context(|| format!("writing {}", orders_path.display()))?;
    write_orders(BufWriter::new(file), &market.model, &market.orders)?;
    let settlements_path = args.out_dir.join("settlements.csv");
    let file = File::create(&settlements_path).with_context(|| format!("writing {}", settlements_path.display()))?;
    write_settlements(BufWriter::new(file), &market.model, &market.settlements)?;
    let summary = json!({
        "model": model_path,
        "orders": orders_path,
        "settlements": settlements_path,
        "n_orders": market.orders.len(),
        "n_settlements": market.settlements.len(),
        "champion": market.outcome.winners.last(),
        "strengths": market.strengths,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report_json(report: &RunReport, treatment: Treatment, budget: Option<f64>, seed: u64) -> Json {
    let statuses: Vec<&str> = report
        .projections
        .iter()
        .map(|p| fwmm::engine::status_label(Some(p.status)))
        .collect();
    json!({
        "treatment": treatment.to_string(),
        "budget": budget,
        "seed": seed,
        "trades": report.snapshots.last().map_or(0, |s| s.n_trades),
        "filled": report.filled,
        "revenue": report.ledger.revenue,
        "payout": report.ledger.payout_total,
        "loss": report.loss(),
        "loss_bound": report.loss_bound,
        "within_bound": report.within_bound(),
        "market_maker_trades": report.ledger.market_maker_trades().count(),
        "arbitrage_profit": report.ledger.arbitrage_profit,
        "replay_error": report.replay_error,
        "projections": statuses,
        "final_avg_variable_ll": report.snapshots.last().map(|s| s.avg_variable_ll),
    })
}

fn with_budget_suffix(path: &Path, budget: f64) -> PathBuf {
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let name = match path.extension() {
        Some(ext) => format!("{stem}-b{budget}.{}", ext.to_string_lossy()),
        None => format!("{stem}-b{budget}"),
    };
    path.with_file_name(name)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let model = load_model(&args.market.model)?;
    let orders = load_orders(&args.market.orders, &model)?;
    let settlements = load_settlements(&args.market.settlements, &model)?;
    let outcome = final_outcome(&model, &settlements)?;
    let budgets: Vec<Option<f64>> = if args.budget.is_empty() {
        vec![None]
    } else {
        args.budget.iter().copied().map(Some).collect()
    };
    if budgets.len() > 1 && args.out.is_none() {
        bail!("several budgets need --out to name the snapshot files");
    }
    let mut reports = Vec::new();
    for budget in &budgets {
        let config = RunConfig {
            treatment: args.treatment,
            liquidity: args.market.liquidity,
            budget: *budget,
            fw: fw_options(&args.market),
            lcmm: LcmmOptions::default(),
            cadence: args.cadence,
            deadline: deadline(args.market.deadline_secs)?,
        };
        let started = Instant::now();
        let report = run_market(&config, &model, &orders, &settlements, &outcome)?;
        log::info!(
            "{} run with budget {budget:?} took {:.2?}, loss {:.6}",
            args.treatment,
            started.elapsed(),
            report.loss()
        );
        if report.replay_error > REPLAY_TOLERANCE {
            bail!("ledger replay differs by {:e}", report.replay_error);
        }
        match (&args.out, budget) {
            (Some(path), Some(b)) if budgets.len() > 1 => {
                let path = with_budget_suffix(path, *b);
                let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                write_snapshots(BufWriter::new(file), &report.snapshots)?;
            }
            (Some(path), _) => {
                let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
                write_snapshots(BufWriter::new(file), &report.snapshots)?;
            }
            (None, _) => write_snapshots(io::stdout().lock(), &report.snapshots)?,
        }
        reports.push(report_json(&report, args.treatment, *budget, args.seed));
    }
    let text = serde_json::to_string_pretty(&if reports.len() == 1 {
        reports.pop().expect("one report")
    } else {
        Json::Array(reports)
    })?;
    match (&args.report, &args.out) {
        (Some(path), _) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        (None, Some(_)) => println!("{text}"),
        (None, None) => eprintln!("{text}"),
    }
    Ok(())
}

fn cmd_project(args: &ProjectArgs) -> Result<()> {
    let m = &args.market;
    let model = load_model(&m.model)?;
    let orders = load_orders(&m.orders, &model)?;
    let settlements = load_settlements(&m.settlements, &model)?;
    let cost = model.cost_function(m.liquidity)?;
    let mut theta = model.initial_theta(m.liquidity);
    let mut sigma = PartialOutcome::new();
    let take = args.trades.unwrap_or(orders.len()).min(orders.len());
    let mut pending = settlements.iter().peekable();
    let mut settle_until = |t: f64, sigma: &mut PartialOutcome| -> Result<()> {
        while let Some(s) = pending.next_if(|s: &&SettlementEvent| s.timestamp <= t) {
            *sigma = apply_settlement(&model, sigma, s)?;
        }
        Ok(())
    };
    for order in &orders[..take] {
        settle_until(order.timestamp, &mut sigma)?;
        let fill = execute_limit_order(&cost, &model, &theta, &sigma, order, None)?;
        for (i, q) in fill.bundle {
            theta[i] += q;
        }
    }
    let oracle = Oracle::new(&model, Backend::Auto)?;
    let before = cost.prices(&theta, &sigma)?;
    let started = Instant::now();
    let result = project_fw(
        &cost,
        &theta,
        &sigma,
        &oracle,
        &fw_options(m),
        Some(Instant::now() + deadline(m.deadline_secs)?),
        None,
    )?;
    let elapsed = started.elapsed();
    let after = cost.prices(&result.theta, &result.sigma)?;
    let moved: Vec<Json> = (0..model.n_securities())
        .filter(|&i| (after[i] - before[i]).abs() > 1e-9)
        .map(|i| json!({ "security": model.security_label(i), "before": before[i], "after": after[i] }))
        .collect();
    let summary = json!({
        "orders_replayed": take,
        "status": fwmm::engine::status_label(Some(result.status)),
        "iterations": result.iterations,
        "divergence": result.divergence,
        "gap": result.gap,
        "guaranteed_profit": result.guaranteed_profit,
        "oracle_calls": result.oracle_calls,
        "active_vertices": result.active_vertices,
        "epsilon": result.epsilon,
        "newly_settled": result.sigma.len() - sigma.len(),
        "seconds": elapsed.as_secs_f64(),
        "moved_prices": moved,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Outcome of `validate`; `false` means the model is infeasible.
fn cmd_validate(args: &ValidateArgs) -> Result<bool> {
    let model = load_model(&args.model)?;
    let n = model.n_securities();
    let mut out = io::stdout().lock();
    writeln!(out, "variables: {}", model.variables().len())?;
    writeln!(out, "securities: {n}")?;
    writeln!(out, "ip rows: {}", model.ip_rows().len())?;
    writeln!(out, "lcmm rows: {}", model.lcmm_rows().len())?;
    let witness = |out: &mut dyn Write| -> Result<bool> {
        let rows = model.ip_rows();
        let Some(subset) = infeasible_subset(n, rows) else {
            return Ok(true);
        };
        writeln!(out, "infeasible: no 0/1 vector satisfies these {} rows", subset.len())?;
        for r in subset {
            let row = &rows[r];
            let terms: Vec<String> = row
                .coeffs
                .iter()
                .map(|&(i, c)| format!("{c:+}·[{}]", model.security_label(i)))
                .collect();
            let sense = match row.sense {
                fwmm::model::Sense::Ge => ">=",
                fwmm::model::Sense::Eq => "=",
            };
            writeln!(out, "  row {r}: {} {sense} {}", terms.join(" "), row.rhs)?;
        }
        Ok(false)
    };

    match model.outcome_count().filter(|&c| c <= VALIDATE_ENUMERATION_LIMIT) {
        Some(outcomes) => {
            writeln!(out, "outcomes: {outcomes}")?;
            let payoffs = model.enumerate_payoffs(VALIDATE_ENUMERATION_LIMIT)?;
            writeln!(out, "|Z| = {}", payoffs.len())?;
            if payoffs.is_empty() {
                return witness(&mut out);
            }
            let oracle = Oracle::new(&model, Backend::BranchAndBound)?;
            let solutions = oracle.solutions(&PartialOutcome::new(), payoffs.len() + 1, None)?;
            let exact = solutions == payoffs;
            writeln!(
                out,
                "ip solutions: {} ({})",
                solutions.len(),
                if exact { "match the outcomes one to one" } else { "DIFFER from the outcomes" }
            )?;
            let unsound: Vec<usize> = model
                .lcmm_rows()
                .iter()
                .enumerate()
                .filter(|(_, r)| payoffs.iter().any(|z| !r.satisfied_by(z)))
                .map(|(k, _)| k)
                .collect();
            if unsound.is_empty() {
                writeln!(out, "lcmm rows: sound")?;
            } else {
                writeln!(out, "lcmm rows violated by some outcome: {unsound:?}")?;
            }
            if !exact || !unsound.is_empty() {
                bail!("model validation failed");
            }
        }
        None => {
            writeln!(out, "outcomes: more than {VALIDATE_ENUMERATION_LIMIT}, skipping enumeration")?;
            if let Some((k, _)) = model
                .ip_rows()
                .iter()
                .chain(model.lcmm_rows())
                .enumerate()
                .find(|(_, r)| r.coeffs.is_empty() || r.coeffs.iter().any(|&(i, _)| i >= n))
            {
                bail!("row {k} is empty or names a missing security");
            }
            writeln!(out, "row shapes: ok")?;
            let oracle = Oracle::new(&model, Backend::BranchAndBound)?;
            let limit = deadline(args.deadline_secs)?;
            let probes = [0, n / 3, n / 2, n - 1];
            for i in probes {
                for bit in [false, true] {
                    let answer = oracle.settle_query(&PartialOutcome::new(), i, bit, Some(Instant::now() + limit))?;
                    let text = match answer {
                        SettleAnswer::Attainable(_) => "attainable",
                        SettleAnswer::Forced => "forced to the other bit",
                        SettleAnswer::TimedOut => "timed out",
                    };
                    writeln!(out, "settle query [{}] = {}: {text}", model.security_label(i), bit as u8)?;
                }
            }
        }
    }
    Ok(true)
}

fn consistency_failure(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<fwmm::Error>().is_some_and(fwmm::Error::is_consistency))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FWMM_LOG", "off")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Project(a) => cmd_project(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if consistency_failure(&e) { 2 } else { 1 })
        }
    }
}
