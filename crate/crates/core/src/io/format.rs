//! Text output formats: the ledger CSV and field snapshots.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! reading a file back reproduces every value bit for bit.

use std::fmt::Write as _;

use thiserror::Error;

use crate::diagnostics::{Ledger, LedgerRow};
use crate::grid::{Field, Grid};
use crate::state::State;

pub const LEDGER_HEADER: &str = "t,mass,enthalpy,energy,lagrangian,dissipation,identity_residual,theta_min,theta_max,grad_mu,grad_theta,newton_iters";

const SNAPSHOT_MAGIC: &str = "# pfsim snapshot v1";

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("bad grid: {0}")]
    Grid(String),
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        message: message.into(),
    }
}

pub fn ledger_row_csv(r: &LedgerRow) -> String {
    format!(
        "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
        r.t,
        r.mass,
        r.enthalpy,
        r.energy,
        r.lagrangian,
        r.dissipation,
        r.identity_residual,
        r.theta_min,
        r.theta_max,
        r.grad_mu,
        r.grad_theta,
        r.newton_iters
    )
}

pub fn ledger_csv(ledger: &Ledger) -> String {
    let mut out = String::with_capacity(256 * (ledger.rows().len() + 1));
    out.push_str(LEDGER_HEADER);
    out.push('\n');
    for r in ledger.rows() {
        out.push_str(&ledger_row_csv(r));
        out.push('\n');
    }
    out
}

/// Parses a ledger CSV. The μ spread is not stored and comes back as NaN.
pub fn parse_ledger_csv(text: &str) -> Result<Vec<LedgerRow>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LEDGER_HEADER => {}
        _ => return Err(syntax(1, "missing ledger header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(syntax(
                i + 1,
                format!("expected 12 columns, found {}", cols.len()),
            ));
        }
        let mut v = [0.0; 11];
        for (slot, c) in v.iter_mut().zip(&cols) {
            *slot = c
                .parse()
                .map_err(|_| syntax(i + 1, format!("bad number {c:?}")))?;
        }
        let newton_iters = cols[11]
            .parse()
            .map_err(|_| syntax(i + 1, format!("bad count {:?}", cols[11])))?;
        rows.push(LedgerRow {
            t: v[0],
            mass: v[1],
            enthalpy: v[2],
            energy: v[3],
            lagrangian: v[4],
            dissipation: v[5],
            identity_residual: v[6],
            theta_min: v[7],
            theta_max: v[8],
            grad_mu: v[9],
            grad_theta: v[10],
            newton_iters,
            mu_spread: f64::NAN,
        });
    }
    Ok(rows)
}

/// A state on its grid at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub time: f64,
    pub psi: Field,
    pub theta: Field,
}

impl Snapshot {
    pub fn new(grid: &Grid, time: f64, s: &State) -> Self {
        Self {
            grid: grid.clone(),
            time,
            psi: s.psi.clone(),
            theta: s.theta.clone(),
        }
    }

    pub fn state(&self) -> State {
        State {
            psi: self.psi.clone(),
            theta: self.theta.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(48 * (2 * self.psi.len() + 8));
        let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
        out.push_str(SNAPSHOT_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "dim {}", self.grid.dim());
        let _ = writeln!(
            out,
            "cells {}",
            join(&mut self.grid.cells_per_axis().iter().map(|c| c.to_string()))
        );
        let _ = writeln!(
            out,
            "lengths {}",
            join(&mut self.grid.lengths().iter().map(|l| format!("{l:?}")))
        );
        let _ = writeln!(out, "time {:?}", self.time);
        for (name, f) in [("psi", &self.psi), ("theta", &self.theta)] {
            out.push_str(name);
            out.push('\n');
            for v in f.iter() {
                let _ = writeln!(out, "{v:?}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| syntax(0, format!("unexpected end of file, expected {what}")))
        };
        let (n, magic) = next("header")?;
        if magic != SNAPSHOT_MAGIC {
            return Err(syntax(n, "not a snapshot file"));
        }
        let keyed = |(n, l): (usize, &str), key: &str| -> Result<Vec<String>, FormatError> {
            let mut parts = l.split_whitespace();
            if parts.next() != Some(key) {
                return Err(syntax(n, format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |n: usize, s: &str| -> Result<f64, FormatError> {
            s.parse()
                .map_err(|_| syntax(n, format!("bad number {s:?}")))
        };
        let line = next("dim")?;
        let dim: usize = keyed(line, "dim")?
            .first()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| syntax(line.0, "bad dim"))?;
        let line = next("cells")?;
        let cells = keyed(line, "cells")?
            .iter()
            .map(|c| {
                c.parse::<usize>()
                    .map_err(|_| syntax(line.0, "bad cell count"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let line = next("lengths")?;
        let lengths = keyed(line, "lengths")?
            .iter()
            .map(|c| num(line.0, c))
            .collect::<Result<Vec<_>, _>>()?;
        if cells.len() != dim || lengths.len() != dim {
            return Err(syntax(line.0, "cells/lengths do not match dim"));
        }
        let grid = Grid::new(&cells, &lengths).map_err(|e| FormatError::Grid(e.to_string()))?;
        let line = next("time")?;
        let time = match keyed(line, "time")?.as_slice() {
            [t] => num(line.0, t)?,
            _ => return Err(syntax(line.0, "bad time")),
        };
        let mut read_field = |name: &str| -> Result<Field, FormatError> {
            let (n, l) = next(name)?;
            if l != name {
                return Err(syntax(n, format!("expected `{name}`")));
            }
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                let (n, l) = next("value")?;
                values.push(num(n, l)?);
            }
            Field::new(&grid, values).map_err(|e| syntax(n, e.to_string()))
        };
        let psi = read_field("psi")?;
        let theta = read_field("theta")?;
        if let Some((n, _)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(syntax(n, "trailing data"));
        }
        Ok(Self {
            grid,
            time,
            psi,
            theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_exact() {
        let g = Grid::rectangle([3, 2], [1.0, 0.1]).unwrap();
        let s = State::new(
            &g,
            Field::from_fn(&g, |x| (x[0] * 7.1).sin() / 3.0),
            Field::from_fn(&g, |x| 1.0 + x[1] * 1e-17),
        )
        .unwrap();
        let text = Snapshot::new(&g, 0.1 + 0.2, &s).to_text();
        let back = Snapshot::parse(&text).unwrap();
        assert_eq!(back.state(), s);
        assert_eq!(back.time, 0.1 + 0.2);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let g = Grid::interval(3, 1.0).unwrap();
        let s = State::constant(&g, 0.0, 1.0).unwrap();
        let text = Snapshot::new(&g, 0.0, &s).to_text();
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(Snapshot::parse(&cut).is_err());
    }

    #[test]
    fn ledger_csv_round_trip() {
        let row = LedgerRow {
            t: 1e-3,
            mass: -0.0,
            enthalpy: -12.345678901234567,
            energy: 1e300,
            lagrangian: 5e-324,
            dissipation: 0.1,
            identity_residual: -1.5e-17,
            theta_min: 0.9,
            theta_max: 1.1,
            grad_mu: 3.0,
            grad_theta: 0.0,
            newton_iters: 4,
            mu_spread: 0.0,
        };
        let csv = ledger_csv(&Ledger::from_rows(vec![row.clone()]));
        assert!(csv.starts_with(LEDGER_HEADER));
        let back = parse_ledger_csv(&csv).unwrap();
        assert_eq!(ledger_row_csv(&back[0]), ledger_row_csv(&row));
        assert_eq!(back[0].enthalpy.to_bits(), row.enthalpy.to_bits());
        assert_eq!(back[0].mass.to_bits(), row.mass.to_bits());
    }
}
