use super::*;
use crate::cost::PartialOutcome;

fn tournament(k: u32) -> MarketModel {
    let mut m = MarketModel::new();
    m.add_tournament(k, &[]).unwrap();
    m
}

fn id(m: &MarketModel, name: &str) -> VariableId {
    m.variable_by_name(name).unwrap().id
}

fn teams_of(m: &MarketModel, name: &str) -> Vec<u32> {
    m.variable_by_name(name)
        .unwrap()
        .domain
        .iter()
        .map(|v| match v {
            Value::Team(t) => *t,
            _ => panic!("not a game"),
        })
        .collect()
}

/// Every 0/1 vector over the securities satisfying the IP rows.
fn brute_force_solutions(m: &MarketModel) -> Vec<Vec<bool>> {
    let n = m.n_securities();
    assert!(n <= 22);
    let mut out = Vec::new();
    for mask in 0u64..(1 << n) {
        let z: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if m.is_feasible(&z) {
            out.push(z);
        }
    }
    out.sort();
    out
}

#[test]
fn two_round_domains() {
    let m = tournament(2);
    for t in 1..=4 {
        let x = m.variable_by_name(&format!("X{t}")).unwrap();
        assert_eq!(x.domain, vec![Value::Int(0), Value::Int(1), Value::Int(2)]);
    }
    assert_eq!(teams_of(&m, "G1_1"), vec![1, 2]);
    assert_eq!(teams_of(&m, "G1_3"), vec![3, 4]);
    assert_eq!(teams_of(&m, "G2_1"), vec![1, 2, 3, 4]);
    assert_eq!(m.variables().len(), 7);
    let t = m.tournament().unwrap();
    assert_eq!(t.game_of(1, 2), id(&m, "G1_1"));
    assert_eq!(t.game_of(1, 4), id(&m, "G1_3"));
    assert_eq!(t.game_of(2, 3), id(&m, "G2_1"));
}

#[test]
fn one_round_has_two_solutions_by_brute_force() {
    let m = tournament(1);
    let sols = brute_force_solutions(&m);
    assert_eq!(sols.len(), 2);
    assert_eq!(sols, m.enumerate_payoffs(1 << 20).unwrap());
}

#[test]
fn outcome_counts() {
    assert_eq!(tournament(1).outcome_count(), Some(2));
    assert_eq!(tournament(2).outcome_count(), Some(8));
    assert_eq!(tournament(3).outcome_count(), Some(128));
    assert_eq!(tournament(3).enumerate_payoffs(1 << 20).unwrap().len(), 128);
}

#[test]
fn payoffs_satisfy_ip_and_lcmm_rows() {
    let mut m = tournament(2);
    let xs: Vec<VariableId> = (1..=4).map(|t| id(&m, &format!("X{t}"))).collect();
    let total = m.add_sum("total", &xs).unwrap();
    m.add_comparison("c12", xs[0], xs[1]).unwrap();
    m.add_comparison("c13", xs[0], xs[2]).unwrap();
    for index in 0..m.outcome_count().unwrap() {
        let outcome = m.outcome_at(index);
        let z = m.payoff(&outcome).unwrap();
        for row in m.ip_rows() {
            assert!(row.satisfied_by(&z), "{row:?}");
        }
        let mu: Vec<f64> = z.iter().map(|&b| b as u8 as f64).collect();
        for row in m.lcmm_rows() {
            match row.sense {
                Sense::Ge => assert!(row.eval(&mu) >= row.rhs as f64 - 1e-12),
                Sense::Eq => assert_eq!(row.eval(&mu), row.rhs as f64),
            }
        }
        // total wins always equals the number of games played
        let values = m.evaluate(&outcome).unwrap();
        assert_eq!(m.variable(total).domain[values[total.0]], Value::Int(3));
    }
}

#[test]
fn first_round_opponents_never_tie_at_one_win() {
    let mut m = tournament(2);
    let c = m.add_comparison("c", id(&m, "X1"), id(&m, "X2")).unwrap();
    let eq = m.security_index(c, &Value::Eq).unwrap();
    let one = |t: &str| m.security_index(id(&m, t), &Value::Int(1)).unwrap();
    for z in m.enumerate_payoffs(1 << 20).unwrap() {
        assert!(!(z[eq] && z[one("X1")] && z[one("X2")]));
        assert!(!z[eq] || (z[m.security_index(id(&m, "X1"), &Value::Int(0)).unwrap()]));
    }
}

#[test]
fn self_comparison_is_always_eq() {
    let mut m = tournament(1);
    let x = id(&m, "X1");
    let c = m.add_comparison("self", x, x).unwrap();
    let eq = m.security_index(c, &Value::Eq).unwrap();
    let sols = m.enumerate_payoffs(1 << 20).unwrap();
    assert_eq!(sols.len(), 2);
    assert!(sols.iter().all(|z| z[eq]));
    // the rows alone force it too
    assert_eq!(brute_force_solutions(&m), sols);
}

#[test]
fn sum_of_point_masses_concentrates() {
    let mut m = MarketModel::new();
    let a = m.add_free("a", vec![Value::Int(0), Value::Int(1)], &[1.0, 0.0]).unwrap();
    let b = m.add_free("b", vec![Value::Int(0), Value::Int(1)], &[1.0, 0.0]).unwrap();
    let s = m.add_sum("s", &[a, b]).unwrap();
    let range = m.variable(s).securities.clone();
    let prices = &m.initial_prices()[range];
    assert!(prices[0] > 0.85, "{prices:?}");
    assert!(prices[0] > prices[1] && prices[1] > prices[2]);
}

#[test]
fn sum_moments_add() {
    let mut m = MarketModel::new();
    // mean 1.5, variance 0.25
    let a = m
        .add_free("a", vec![Value::Int(1), Value::Int(2)], &[0.5, 0.5])
        .unwrap();
    // mean 0.5, variance 0.25
    let b = m
        .add_free("b", vec![Value::Int(0), Value::Int(1)], &[0.5, 0.5])
        .unwrap();
    let (ma, va) = m.moments(a, m.initial_prices()).unwrap();
    let (mb, vb) = m.moments(b, m.initial_prices()).unwrap();
    assert!((ma - 1.5).abs() < 1e-12 && (va - 0.25).abs() < 1e-12);
    assert!((mb - 0.5).abs() < 1e-12 && (vb - 0.25).abs() < 1e-12);
    let s = m.add_sum("s", &[a, b]).unwrap();
    assert_eq!(
        m.variable(s).domain,
        vec![Value::Int(1), Value::Int(2), Value::Int(3)]
    );
    let expected = discretized_gaussian(&[1, 2, 3], 2.0, 0.5);
    let range = m.variable(s).securities.clone();
    for (p, e) in m.initial_prices()[range].iter().zip(&expected) {
        assert!((p - e).abs() < 1e-12);
    }
    // symmetric around the mean 2.0
    assert!((expected[0] - expected[2]).abs() < 1e-15);
    let w = (-1.0f64 / (2.0 * 0.5)).exp();
    assert!((expected[1] - 1.0 / (1.0 + 2.0 * w)).abs() < 1e-12);
}

#[test]
fn gaussian_variance_floor() {
    let p = discretized_gaussian(&[0, 1, 2], 1.0, 0.0);
    let q = discretized_gaussian(&[0, 1, 2], 1.0, 0.25);
    assert_eq!(p, q);
    assert!(p[0] > 0.0);
}

#[test]
fn empty_sum_is_rejected() {
    let mut m = tournament(1);
    assert!(m.add_sum("s", &[]).is_err());
}

#[test]
fn comparison_rejects_labels() {
    let mut m = MarketModel::new();
    let a = m
        .add_free("a", vec![Value::Label("x".into()), Value::Label("y".into())], &[])
        .unwrap();
    let b = m.add_free("b", vec![Value::Int(0), Value::Int(1)], &[]).unwrap();
    assert!(m.add_comparison("c", a, b).is_err());
}

#[test]
fn uniform_initial_prices() {
    let m = tournament(2);
    for name in ["G1_1", "G1_3"] {
        let r = m.variable_by_name(name).unwrap().securities.clone();
        for p in &m.initial_prices()[r] {
            assert!((p - 0.5).abs() < 1e-9);
        }
    }
    let r = m.variable_by_name("G2_1").unwrap().securities.clone();
    for p in &m.initial_prices()[r] {
        assert!((p - 0.25).abs() < 1e-9);
    }
    // X_t = (1/2, 1/4, 1/4) is already coherent with uniform games
    let r = m.variable_by_name("X1").unwrap().securities.clone();
    let x = &m.initial_prices()[r];
    assert!((x[0] - 0.5).abs() < 1e-6 && (x[1] - 0.25).abs() < 1e-6 && (x[2] - 0.25).abs() < 1e-6);
}

#[test]
fn champion_prices_seed_games() {
    let mut m = MarketModel::new();
    m.add_tournament(2, &[0.4, 0.4, 0.1, 0.1]).unwrap();
    let final_game = m.variable_by_name("G2_1").unwrap().securities.clone();
    let p = &m.initial_prices()[final_game];
    for (a, b) in p.iter().zip([0.4, 0.4, 0.1, 0.1]) {
        assert!((a - b).abs() < 1e-6, "{p:?}");
    }
    let g11 = m.security_index(id(&m, "G1_1"), &Value::Team(1)).unwrap();
    assert!((m.initial_prices()[g11] - 0.5).abs() < 1e-6);
    let g13 = m.security_index(id(&m, "G1_3"), &Value::Team(3)).unwrap();
    assert!((m.initial_prices()[g13] - 0.5).abs() < 1e-6);
    // the coupled rows hold for the projected prices
    for row in m.lcmm_rows() {
        assert!(row.violation(m.initial_prices()) < 1e-5, "{row:?}");
    }
}

#[test]
fn negative_difference_is_clamped() {
    let mut m = tournament(2);
    let g11 = m.security_index(id(&m, "G1_1"), &Value::Team(1)).unwrap();
    let g21 = m.security_index(id(&m, "G2_1"), &Value::Team(1)).unwrap();
    // reaching round 2 less likely than winning it: X1=1 raw value negative
    let mu = m.init_prices(&[(g11, 0.2), (g21, 0.6)]).unwrap();
    let r = m.variable_by_name("X1").unwrap().securities.clone();
    assert!(mu[r.clone()].iter().all(|&p| p >= PRICE_FLOOR * 0.999));
    let total: f64 = mu[r].iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn bad_window_entry() {
    let mut m = tournament(1);
    assert!(m.init_prices(&[(0, 1.5)]).is_err());
    assert!(m.init_prices(&[(999, 0.5)]).is_err());
}

#[test]
fn dykstra_projects_onto_halfspace() {
    // x0 + x1 ≥ 1 from (0.2, 0.2) lands at (0.5, 0.5)
    let row = LinearRow::new([(0, 1), (1, 1)], Sense::Ge, 1);
    let x = euclidean_projection(&[0.2, 0.2], std::slice::from_ref(&row));
    assert!((x[0] - 0.5).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9);
    // already feasible: unchanged
    let y = euclidean_projection(&[0.9, 0.3], &[row]);
    assert_eq!(y, vec![0.9, 0.3]);
    // with the box active: x0 − x1 = 1.5 clips to (1, 0)... nearest feasible is (1,0) with x0 − x1 = 1
    let eq = LinearRow::new([(0, 1), (1, -1)], Sense::Eq, 1);
    let z = euclidean_projection(&[0.9, 0.3], &[eq]);
    assert!((z[0] - 1.0).abs() < 1e-6 && z[1].abs() < 1e-6, "{z:?}");
}

#[test]
fn union_row_is_tighter_than_big_m() {
    let mut m = MarketModel::new();
    let x1 = m
        .add_free("x1", (0..=10).map(Value::Int).collect(), &[])
        .unwrap();
    let x2 = m.add_free("x2", vec![Value::Int(0), Value::Int(1)], &[]).unwrap();
    let c = m.add_comparison("c", x1, x2).unwrap();
    let mut mu = vec![0.0; m.n_securities()];
    let r1 = m.variable(x1).securities.clone();
    mu[r1.start] = 0.9;
    mu[r1.end - 1] = 0.1;
    let r2 = m.variable(x2).securities.clone();
    mu[r2.start] = 0.3;
    mu[r2.start + 1] = 0.7;
    let rc = m.variable(c).securities.clone();
    mu[rc.start] = 0.1;
    mu[rc.start + 1] = 0.45;
    mu[rc.start + 2] = 0.45;
    for row in m.ip_rows() {
        assert!(row.violation(&mu) <= 1e-12, "big-M relaxation violated: {row:?}");
    }
    let worst = m
        .lcmm_rows()
        .iter()
        .map(|r| r.violation(&mu))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((worst - 0.5).abs() < 1e-12, "{worst}");
}

#[test]
fn adding_variables_keeps_existing_prices() {
    let mut m = tournament(2);
    let b = 150.0;
    let theta = m.initial_theta(b);
    let before = m.cost_function(b).unwrap().prices(&theta, &PartialOutcome::new()).unwrap();
    let x1 = id(&m, "X1");
    let x3 = id(&m, "X3");
    m.add_sum("s", &[x1, x3]).unwrap();
    m.add_comparison("c", x1, x3).unwrap();
    let mut extended = theta.clone();
    extended.extend(m.initial_theta(b)[theta.len()..].iter().copied());
    let after = m.cost_function(b).unwrap().prices(&extended, &PartialOutcome::new()).unwrap();
    assert_eq!(&after[..before.len()], &before[..]);
}

#[test]
fn config_round_trip() {
    let text = r#"
[[variable]]
kind = "tournament"
rounds = 2
champion_prices = [0.4, 0.4, 0.1, 0.1]

[[variable]]
kind = "sum"
name = "east"
children = ["X1", "X2"]

[[variable]]
kind = "comparison"
name = "c"
left = "X1"
right = "X3"

[[variable]]
kind = "free"
name = "w"
values = ["rain", "sun"]
prices = [0.3, 0.7]

[[row]]
target = "lcmm"
sense = "ge"
rhs = 0
terms = [{ variable = "w", value = "sun", coeff = 1 }, { variable = "X1", value = 2, coeff = -1 }]
"#;
    let cfg = ModelConfig::from_toml(text, "model.toml").unwrap();
    let m = cfg.build().unwrap();
    assert_eq!(m.variables().len(), 7 + 3);
    let w = m.variable_by_name("w").unwrap();
    assert_eq!(w.domain[1], Value::Label("sun".into()));
    assert!((m.initial_prices()[w.securities.start + 1] - 0.7).abs() < 1e-12);
    let extra = m.lcmm_rows().last().unwrap();
    assert_eq!(extra.coeffs.len(), 2);
    assert!(!m.ip_rows().contains(extra));
    let again = ModelConfig::from_toml(&cfg.to_toml(), "again").unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.build().unwrap(), m);
}

#[test]
fn config_errors_carry_lines() {
    // errors inside a record point at the record header
    let text = "[[variable]]\nkind = \"tournament\"\nrounds = 2\n\n[[variable]]\nkind = \"sum\"\nname = 3\n";
    match ModelConfig::from_toml(text, "bad.toml") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("{other:?}"),
    }
    let unknown = "[[variable]]\nkind = \"sum\"\nname = \"s\"\nchildren = [\"nope\"]\n";
    assert!(ModelConfig::from_toml(unknown, "x").unwrap().build().is_err());
}

#[test]
fn bracket_inconsistent_outcome_is_rejected() {
    let m = tournament(2);
    let mut o = m.outcome_at(0);
    assert_eq!(o.winners, vec![1, 3, 1]);
    o.winners[2] = 2;
    assert!(m.evaluate(&o).unwrap_err().is_consistency());
}
