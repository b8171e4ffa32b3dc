use fwmm::engine::{final_outcome, run_market, RunConfig, Treatment};
use fwmm::io::{read_orders, read_settlements, write_orders, write_settlements, write_snapshots};
use fwmm::model::ModelConfig;
use fwmm::synth::{generate, GeneratorConfig};

fn market(seed: u64) -> fwmm::synth::SyntheticMarket {
    generate(&GeneratorConfig {
        rounds: 2,
        n_orders: 150,
        seed,
        samples: 300,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn files_reproduce_the_generated_market() {
    let m = market(8);
    let model = ModelConfig::from_toml(&m.config.to_toml(), "model.toml")
        .unwrap()
        .build()
        .unwrap();
    assert_eq!(model.n_securities(), m.model.n_securities());

    let mut orders = Vec::new();
    write_orders(&mut orders, &m.model, &m.orders).unwrap();
    let mut settlements = Vec::new();
    write_settlements(&mut settlements, &m.model, &m.settlements).unwrap();
    let orders = read_orders(orders.as_slice(), "orders.csv", &model).unwrap();
    let settlements = read_settlements(settlements.as_slice(), "settlements.csv", &model).unwrap();
    assert_eq!(orders.len(), m.orders.len());
    assert_eq!(settlements, m.settlements);
    let outcome = final_outcome(&model, &settlements).unwrap();
    assert_eq!(outcome, m.outcome);

    // decimal text keeps enough digits that the replays agree on every snapshot
    for treatment in Treatment::ALL {
        let config = RunConfig {
            treatment,
            ..RunConfig::default()
        };
        let direct = run_market(&config, &m.model, &m.orders, &m.settlements, &m.outcome).unwrap();
        let reread = run_market(&config, &model, &orders, &settlements, &outcome).unwrap();
        assert_eq!(direct.snapshots.len(), reread.snapshots.len());
        for (a, b) in direct.snapshots.iter().zip(&reread.snapshots) {
            assert_eq!(a.n_trades, b.n_trades);
            assert!((a.avg_variable_ll - b.avg_variable_ll).abs() < 1e-9, "{treatment}");
            assert!((a.mm_cash - b.mm_cash).abs() < 1e-6, "{treatment}");
        }
        assert!((direct.loss() - reread.loss()).abs() < 1e-6);
    }
}

#[test]
fn treatments_share_trader_snapshot_times() {
    let m = market(3);
    let reports: Vec<_> = Treatment::ALL
        .into_iter()
        .map(|treatment| {
            let config = RunConfig {
                treatment,
                ..RunConfig::default()
            };
            run_market(&config, &m.model, &m.orders, &m.settlements, &m.outcome).unwrap()
        })
        .collect();
    let times = |r: &fwmm::engine::RunReport| r.snapshots.iter().map(|s| (s.timestamp, s.n_trades)).collect::<Vec<_>>();
    assert_eq!(times(&reports[0]), times(&reports[1]));
    assert_eq!(times(&reports[0]), times(&reports[2]));
    // only the independent market leaves its own arbitrage alone
    assert_eq!(reports[0].ledger.market_maker_trades().count(), 0);
    for r in &reports {
        assert!(r.within_bound());
        assert!(r.replay_error <= 1e-9);
        let mut csv = Vec::new();
        write_snapshots(&mut csv, &r.snapshots).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.snapshots.len() + 1);
    }
}
