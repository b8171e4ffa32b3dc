//! CSV files for orders, settlements and snapshots.
//!
//! ```text
//! orders:      timestamp,variable_id,event_values,limit_price,budget
//! settlements: timestamp,game_id,winner
//! snapshots:   timestamp,n_trades,avg_variable_ll,avg_bundle_ll,mm_cash,projection_status
//! ```
//!
//! Variables and games are referred to by name, event values are separated by
//! `;`, and numbers are written with 15 significant digits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::engine::{status_label, SettlementEvent, Snapshot, TradeOrder};
use crate::error::{Error, Result};
use crate::model::{MarketModel, Value, VariableKind};

pub const ORDER_HEADER: [&str; 5] = ["timestamp", "variable_id", "event_values", "limit_price", "budget"];
pub const SETTLEMENT_HEADER: [&str; 3] = ["timestamp", "game_id", "winner"];
pub const SNAPSHOT_HEADER: [&str; 6] = [
    "timestamp",
    "n_trades",
    "avg_variable_ll",
    "avg_bundle_ll",
    "mm_cash",
    "projection_status",
];

const SIGNIFICANT: i32 = 15;
const EVENT_SEPARATOR: char = ';';

/// Plain decimal with 15 significant digits.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (SIGNIFICANT - 1 - magnitude).clamp(0, 340) as usize;
    format!("{x:.decimals$}")
}

fn csv_error(path: &str, line: u64, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line());
    Error::Parse {
        path: path.to_string(),
        line,
        message: e.to_string(),
    }
}

/// Rows of a headed CSV file with their line numbers, after checking the
/// header.
fn records(reader: impl Read, path: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let found = csv.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| csv_error(path, 0, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        out.push((line, record));
    }
    Ok(out)
}

fn number(path: &str, line: u64, field: &str, text: &str) -> Result<f64> {
    text.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        message: format!("{field} `{text}` is not a number"),
    })
}

pub fn read_orders(reader: impl Read, path: &str, model: &MarketModel) -> Result<Vec<TradeOrder>> {
    let mut orders = Vec::new();
    for (line, r) in records(reader, path, &ORDER_HEADER)? {
        let bad = |message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let var = model
            .variable_by_name(&r[1])
            .ok_or_else(|| bad(format!("unknown variable `{}`", &r[1])))?;
        let event = r[2]
            .split(EVENT_SEPARATOR)
            .map(|v| {
                var.parse_value(v)
                    .ok_or_else(|| bad(format!("{} has no value `{}`", var.name, v.trim())))
            })
            .collect::<Result<Vec<Value>>>()?;
        let order = TradeOrder {
            timestamp: number(path, line, "timestamp", &r[0])?,
            variable: var.id,
            event,
            limit_price: number(path, line, "limit_price", &r[3])?,
            budget: number(path, line, "budget", &r[4])?,
        };
        order.securities(model).map_err(|e| bad(e.to_string()))?;
        orders.push(order);
    }
    Ok(orders)
}

pub fn read_settlements(reader: impl Read, path: &str, model: &MarketModel) -> Result<Vec<SettlementEvent>> {
    let mut out = Vec::new();
    for (line, r) in records(reader, path, &SETTLEMENT_HEADER)? {
        let bad = |message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let game = model
            .variable_by_name(&r[1])
            .filter(|v| matches!(v.kind, VariableKind::Game { .. }))
            .ok_or_else(|| bad(format!("`{}` is not a game", &r[1])))?;
        let winner = r[2]
            .parse::<u32>()
            .ok()
            .filter(|&t| game.security(&Value::Team(t)).is_some())
            .ok_or_else(|| bad(format!("`{}` does not play in {}", &r[2], game.name)))?;
        out.push(SettlementEvent {
            timestamp: number(path, line, "timestamp", &r[0])?,
            game: game.id,
            winner,
        });
    }
    Ok(out)
}

fn writer(out: impl Write) -> csv::Writer<impl Write> {
    csv::WriterBuilder::new().from_writer(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn io_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_orders(out: impl Write, model: &MarketModel, orders: &[TradeOrder]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ORDER_HEADER).map_err(io_error)?;
    for o in orders {
        let event: Vec<String> = o.event.iter().map(Value::to_string).collect();
        w.write_record([
            format_number(o.timestamp),
            model.variable(o.variable).name.clone(),
            event.join(&EVENT_SEPARATOR.to_string()),
            format_number(o.limit_price),
            format_number(o.budget),
        ])
        .map_err(io_error)?;
    }
    finish(w)
}

pub fn write_settlements(out: impl Write, model: &MarketModel, events: &[SettlementEvent]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SETTLEMENT_HEADER).map_err(io_error)?;
    for s in events {
        w.write_record([
            format_number(s.timestamp),
            model.variable(s.game).name.clone(),
            s.winner.to_string(),
        ])
        .map_err(io_error)?;
    }
    finish(w)
}

pub fn write_snapshots(out: impl Write, snapshots: &[Snapshot]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SNAPSHOT_HEADER).map_err(io_error)?;
    for s in snapshots {
        w.write_record([
            format_number(s.timestamp),
            s.n_trades.to_string(),
            format_number(s.avg_variable_ll),
            format_number(s.avg_bundle_ll),
            format_number(s.mm_cash),
            status_label(s.projection_status).to_string(),
        ])
        .map_err(io_error)?;
    }
    finish(w)
}

pub fn load_orders(path: &Path, model: &MarketModel) -> Result<Vec<TradeOrder>> {
    read_orders(File::open(path)?, &path.display().to_string(), model)
}

pub fn load_settlements(path: &Path, model: &MarketModel) -> Result<Vec<SettlementEvent>> {
    read_settlements(File::open(path)?, &path.display().to_string(), model)
}
