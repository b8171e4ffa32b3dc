//! Small reference models shared by tests, benchmarks and the generator.

use crate::model::{LinearRow, MarketModel, RowTarget, Sense, Value, VariableId};

/// A `2^rounds`-team tournament with uniform games.
pub fn tournament(rounds: u32) -> MarketModel {
    let mut m = MarketModel::new();
    m.add_tournament(rounds, &[]).expect("valid round count");
    m
}

/// Id of a named variable; panics if absent.
pub fn id(m: &MarketModel, name: &str) -> VariableId {
    m.variable_by_name(name)
        .unwrap_or_else(|| panic!("no variable {name}"))
        .id
}

/// Tournament plus a sum `s = X1 + X_last` and comparisons `X1` vs `X2` and
/// `X3` vs `X_last`.
pub fn composite(rounds: u32) -> MarketModel {
    let mut m = tournament(rounds);
    let x = |m: &MarketModel, t: u32| id(m, &format!("X{t}"));
    let (x1, x2) = (x(&m, 1), x(&m, 2));
    let x3 = x(&m, 3.min(1 << rounds));
    let last = x(&m, 1 << rounds);
    m.add_sum("s", &[x1, last]).expect("sum of team wins");
    m.add_comparison("c12", x1, x2).expect("comparison");
    m.add_comparison("c3n", x3, last).expect("comparison");
    m
}

/// Two binary variables that must agree, priced (0.9, 0.1) and (0.5, 0.5).
/// With `b = 1` the projection sits at (0.75, 0.25) for both.
pub fn aliased_pair() -> MarketModel {
    let mut m = MarketModel::new();
    let values = || vec![Value::Label("a".into()), Value::Label("b".into())];
    m.add_free("v1", values(), &[0.9, 0.1]).expect("free variable");
    m.add_free("v2", values(), &[0.5, 0.5]).expect("free variable");
    m.add_row(LinearRow::new([(0, 1), (2, -1)], Sense::Ge, 0), RowTarget::Both)
        .expect("row");
    m.add_row(LinearRow::new([(2, 1), (0, -1)], Sense::Ge, 0), RowTarget::Both)
        .expect("row");
    m
}

/// `x1 ∈ 0..=10`, `x2 ∈ {0, 1}` and their comparison: a model where the
/// union-bound rows cut off points the big-M relaxation accepts.
pub fn wide_comparison() -> MarketModel {
    let mut m = MarketModel::new();
    let x1 = m
        .add_free("x1", (0..=10).map(Value::Int).collect(), &[])
        .expect("free variable");
    let x2 = m
        .add_free("x2", vec![Value::Int(0), Value::Int(1)], &[])
        .expect("free variable");
    m.add_comparison("c", x1, x2).expect("comparison");
    m
}
