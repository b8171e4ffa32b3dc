//! TOML model description.
//!
//! ```toml
//! [[variable]]
//! kind = "tournament"
//! rounds = 2
//! champion_prices = [0.4, 0.4, 0.1, 0.1]
//!
//! [[variable]]
//! kind = "sum"
//! name = "east"
//! children = ["X1", "X2"]
//!
//! [[variable]]
//! kind = "comparison"
//! name = "X1_vs_X3"
//! left = "X1"
//! right = "X3"
//!
//! [[variable]]
//! kind = "free"
//! name = "weather"
//! values = ["rain", "sun"]
//! prices = [0.3, 0.7]
//!
//! [[row]]
//! target = "both"
//! sense = "ge"
//! rhs = 0
//! terms = [{ variable = "weather", value = "sun", coeff = 1 }]
//! ```
//!
//! Tournament variables are named `X{t}` (wins of team `t`) and `G{r}_{t}`
//! (round `r` game whose bracket slot starts at team `t`). `prices` on sums
//! and comparisons overrides the computed initial prices.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinearRow, MarketModel, RowTarget, Sense, Value, VariableId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "variable", default)]
    pub variables: Vec<VariableConfig>,
    #[serde(rename = "row", default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<RowConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum VariableConfig {
    Tournament {
        rounds: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        champion_prices: Vec<f64>,
    },
    Sum {
        name: String,
        children: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        prices: Vec<f64>,
    },
    Comparison {
        name: String,
        left: String,
        right: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        prices: Vec<f64>,
    },
    Free {
        name: String,
        values: Vec<ValueConfig>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        prices: Vec<f64>,
    },
}

/// A domain element as written in the file: an integer or a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueConfig {
    Int(i64),
    Text(String),
}

impl fmt::Display for ValueConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueConfig::Int(v) => write!(f, "{v}"),
            ValueConfig::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    #[serde(default = "default_target")]
    pub target: TargetConfig,
    pub sense: SenseConfig,
    pub rhs: i64,
    pub terms: Vec<TermConfig>,
}

fn default_target() -> TargetConfig {
    TargetConfig::Both
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetConfig {
    Ip,
    Lcmm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseConfig {
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub variable: String,
    pub value: ValueConfig,
    pub coeff: i64,
}

impl ModelConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self> {
        let parse_error = |line: u64, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let line_of = |offset: usize| text[..offset.min(text.len())].matches('\n').count() as u64 + 1;
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            parse_error(e.span().map_or(0, |s| line_of(s.start)), e.message().to_string())
        })?;
        let err = match Self::deserialize(table.clone()) {
            Ok(cfg) => return Ok(cfg),
            Err(e) => e,
        };
        // Locate the offending record by deserializing records one at a time.
        for (key, header) in [("variable", "[[variable]]"), ("row", "[[row]]")] {
            let Some(toml::Value::Array(items)) = table.get(key) else {
                continue;
            };
            for (n, item) in items.iter().enumerate() {
                let failed = if key == "variable" {
                    VariableConfig::deserialize(item.clone()).is_err()
                } else {
                    RowConfig::deserialize(item.clone()).is_err()
                };
                if failed {
                    let line = text
                        .lines()
                        .enumerate()
                        .filter(|(_, l)| l.trim_start().starts_with(header))
                        .nth(n)
                        .map_or(0, |(i, _)| i as u64 + 1);
                    return Err(parse_error(line, format!("{key} #{}: {}", n + 1, err.message())));
                }
            }
        }
        Err(parse_error(0, err.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn build(&self) -> Result<MarketModel> {
        let mut model = MarketModel::new();
        let lookup = |model: &MarketModel, name: &str| -> Result<VariableId> {
            model
                .variable_by_name(name)
                .map(|v| v.id)
                .ok_or_else(|| Error::InvalidModel(format!("unknown variable {name}")))
        };
        for var in &self.variables {
            match var {
                VariableConfig::Tournament {
                    rounds,
                    champion_prices,
                } => model.add_tournament(*rounds, champion_prices)?,
                VariableConfig::Sum {
                    name,
                    children,
                    prices,
                } => {
                    let ids = children
                        .iter()
                        .map(|c| lookup(&model, c))
                        .collect::<Result<Vec<_>>>()?;
                    let id = model.add_sum(name.clone(), &ids)?;
                    if !prices.is_empty() {
                        model.set_initial_prices(id, prices)?;
                    }
                }
                VariableConfig::Comparison {
                    name,
                    left,
                    right,
                    prices,
                } => {
                    let l = lookup(&model, left)?;
                    let r = lookup(&model, right)?;
                    let id = model.add_comparison(name.clone(), l, r)?;
                    if !prices.is_empty() {
                        model.set_initial_prices(id, prices)?;
                    }
                }
                VariableConfig::Free {
                    name,
                    values,
                    prices,
                } => {
                    let domain = values
                        .iter()
                        .map(|v| match v {
                            ValueConfig::Int(i) => Value::Int(*i),
                            ValueConfig::Text(s) => Value::Label(s.clone()),
                        })
                        .collect();
                    model.add_free(name.clone(), domain, prices)?;
                }
            }
        }
        for row in &self.rows {
            let mut terms = Vec::with_capacity(row.terms.len());
            for term in &row.terms {
                let var = model
                    .variable_by_name(&term.variable)
                    .ok_or_else(|| Error::InvalidModel(format!("unknown variable {}", term.variable)))?;
                let value = var.parse_value(&term.value.to_string()).ok_or_else(|| {
                    Error::InvalidModel(format!("{} has no value {}", var.name, term.value))
                })?;
                terms.push((var.security(&value).expect("parsed value"), term.coeff));
            }
            let sense = match row.sense {
                SenseConfig::Ge => Sense::Ge,
                SenseConfig::Eq => Sense::Eq,
            };
            let target = match row.target {
                TargetConfig::Ip => RowTarget::Ip,
                TargetConfig::Lcmm => RowTarget::Lcmm,
                TargetConfig::Both => RowTarget::Both,
            };
            model.add_row(LinearRow::new(terms, sense, row.rhs), target)?;
        }
        if model.variables().is_empty() {
            return Err(Error::InvalidModel("model declares no variables".into()));
        }
        Ok(model)
    }
}
