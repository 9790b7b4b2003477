//! CSV and JSON export of solved shapes.
//!
//! The CSV has a single header line and one row per station. Values are
//! written with 17 significant digits so they parse back exactly. Per-tube
//! columns of tubes that are not present at a station hold `NaN`. The
//! scenario hash and solver report are only carried by the JSON document.

use serde::{Deserialize, Serialize};
use std::fmt::Write;

use super::Scenario;
use crate::shooting::Solution;

pub const SOLUTION_SCHEMA_VERSION: u32 = 1;

pub fn csv_header(tube_count: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["s", "px", "py", "pz"].iter().map(|c| c.to_string()).collect();
    for i in 1..=3 {
        for j in 1..=3 {
            cols.push(format!("R{i}{j}"));
        }
    }
    for c in ["ux", "uy", "uz", "vx", "vy", "vz", "reference"] {
        cols.push(c.to_string());
    }
    for k in 0..tube_count {
        for c in ["theta", "beta", "u_d3", "nx", "ny", "nz", "mx", "my", "mz"] {
            cols.push(format!("{c}_{k}"));
        }
    }
    cols
}

/// Station rows in the column order of [`csv_header`]. Frame columns are
/// row-major; per-tube wrenches are in each tube's own frame.
pub fn station_rows(solution: &Solution, tube_count: usize) -> Vec<Vec<f64>> {
    solution
        .stations
        .iter()
        .map(|st| {
            let x = &st.state;
            let mut row = vec![x.s, x.p.x, x.p.y, x.p.z];
            for i in 0..3 {
                for j in 0..3 {
                    row.push(x.r[(i, j)]);
                }
            }
            row.extend(x.u.iter().chain(x.v.iter()));
            row.push(x.reference as f64);
            for k in 0..tube_count {
                match st.tubes.iter().find(|t| t.tube == k) {
                    Some(t) => {
                        row.extend([t.theta, t.beta, t.u.z]);
                        row.extend(t.n.iter().chain(t.m.iter()));
                    }
                    None => row.extend([f64::NAN; 9]),
                }
            }
            row
        })
        .collect()
}

pub fn to_csv(solution: &Solution, tube_count: usize) -> String {
    let mut out = csv_header(tube_count).join(",");
    out.push('\n');
    for row in station_rows(solution, tube_count) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != columns.len() {
            return Err(format!("line {}: expected {} values, got {}", i + 2, columns.len(), row.len()));
        }
        rows.push(row);
    }
    Ok(CsvTable { columns, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub schema_version: u32,
    pub scenario_name: String,
    pub scenario_hash: String,
    /// Canonical TOML of the solved scenario.
    pub scenario: String,
    pub solution: Solution,
}

impl SolutionDocument {
    pub fn new(scenario: &Scenario, solution: &Solution) -> Self {
        SolutionDocument {
            schema_version: SOLUTION_SCHEMA_VERSION,
            scenario_name: scenario.name.clone(),
            scenario_hash: scenario.hash(),
            scenario: scenario.to_toml(),
            solution: solution.clone(),
        }
    }
}

pub fn to_json(scenario: &Scenario, solution: &Solution) -> String {
    serde_json::to_string_pretty(&SolutionDocument::new(scenario, solution)).expect("solutions serialize")
}
