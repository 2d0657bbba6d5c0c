//! Per-step trajectory dumps: `step,agent_id,x,y,action,reward,group_id`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub agent_id: usize,
    pub x: i32,
    pub y: i32,
    pub action: usize,
    pub reward: f64,
    /// `-1` when the agent has no group (e.g. no grouping in use).
    pub group_id: i64,
}

pub const HEADER: &str = "step,agent_id,x,y,action,reward,group_id";

pub fn write_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.agent_id, r.x, r.y, r.action, r.reward, r.group_id
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |i: usize| crate::BmfError::config(format!("bad trajectory field {i}: {:?}", field(i)));
        rows.push(TrajectoryRow {
            step: field(0).parse().map_err(|_| parse_err(0))?,
            agent_id: field(1).parse().map_err(|_| parse_err(1))?,
            x: field(2).parse().map_err(|_| parse_err(2))?,
            y: field(3).parse().map_err(|_| parse_err(3))?,
            action: field(4).parse().map_err(|_| parse_err(4))?,
            reward: field(5).parse().map_err(|_| parse_err(5))?,
            group_id: field(6).parse().map_err(|_| parse_err(6))?,
        });
    }
    Ok(rows)
}
