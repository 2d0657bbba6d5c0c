//! Per-episode metrics and timing CSVs.
//!
//! The metrics column order is frozen:
//!
//! ```text
//! episode,steps,return_team0,return_team1,return_total,critic_loss,
//! actor_objective,fm_loss,updates,groups,epsilon,kills_team0,kills_team1,
//! alive_team0,alive_team1
//! ```
//!
//! Wall-clock and memory go to a separate `timing.csv`
//! (`episode,wall_seconds,peak_rss_mib`) so the metrics file stays
//! bit-identical across reruns.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{BmfError, Result};

pub const METRICS_HEADER: &str = "episode,steps,return_team0,return_team1,return_total,critic_loss,actor_objective,fm_loss,updates,groups,epsilon,kills_team0,kills_team1,alive_team0,alive_team1";
pub const TIMING_HEADER: &str = "episode,wall_seconds,peak_rss_mib";
pub const GROUPS_HEADER: &str = "episode,step,agent_id,group_id";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub steps: usize,
    pub return_team: [f64; 2],
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub fm_loss: f64,
    pub updates: u64,
    /// Non-empty groups after the last reassignment of the episode.
    pub groups: usize,
    pub epsilon: f64,
    pub kills_team: [usize; 2],
    pub alive_team: [usize; 2],
}

impl MetricsRow {
    pub fn return_total(&self) -> f64 {
        self.return_team[0] + self.return_team[1]
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?},{},{},{},{}",
            self.episode,
            self.steps,
            self.return_team[0],
            self.return_team[1],
            self.return_total(),
            self.critic_loss,
            self.actor_objective,
            self.fm_loss,
            self.updates,
            self.groups,
            self.epsilon,
            self.kills_team[0],
            self.kills_team[1],
            self.alive_team[0],
            self.alive_team[1]
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 15 {
            return Err(BmfError::dims("metrics columns", 15, f.len()));
        }
        let bad = |i: usize| BmfError::config(format!("bad metrics field {i}: {:?}", f[i]));
        let fl = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
        let us = |i: usize| f[i].parse::<usize>().map_err(|_| bad(i));
        Ok(MetricsRow {
            episode: us(0)?,
            steps: us(1)?,
            return_team: [fl(2)?, fl(3)?],
            critic_loss: fl(5)?,
            actor_objective: fl(6)?,
            fm_loss: fl(7)?,
            updates: f[8].parse().map_err(|_| bad(8))?,
            groups: us(9)?,
            epsilon: fl(10)?,
            kills_team: [us(11)?, us(12)?],
            alive_team: [us(13)?, us(14)?],
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(BmfError::config(format!("{}: unexpected metrics header", path.display())));
            }
            continue;
        }
        if !line.trim().is_empty() {
            rows.push(MetricsRow::from_csv(&line)?);
        }
    }
    Ok(rows)
}

/// Appends rows to a CSV, writing the header if the file is new.
pub struct CsvAppender {
    out: BufWriter<File>,
}

impl CsvAppender {
    pub fn open(path: &Path, header: &str) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{header}")?;
        }
        Ok(CsvAppender { out })
    }

    pub fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Keeps the header and the data rows whose first field is below
/// `episode`. Used when resuming.
pub fn truncate_csv(path: &Path, episode: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < episode);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

/// Peak resident set size of this process in MiB, from `/proc` where
/// available.
pub fn peak_rss_mib() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kib: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib / 1024.0)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean of the last `window` values of a curve (all of it if shorter).
pub fn tail_mean(xs: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, xs.len().max(1));
    let tail = &xs[xs.len().saturating_sub(w)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Moving average with a trailing window.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len()).map(|i| tail_mean(&xs[..=i], window)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(e: usize) -> MetricsRow {
        MetricsRow {
            episode: e,
            steps: 20,
            return_team: [-1.5, 0.1 + 0.2],
            critic_loss: 0.25,
            updates: 3,
            groups: 4,
            epsilon: 0.9,
            kills_team: [1, 2],
            alive_team: [7, 6],
            ..Default::default()
        }
    }

    #[test]
    fn header_matches_fields() {
        assert_eq!(METRICS_HEADER.split(',').count(), row(0).to_csv().split(',').count());
    }

    #[test]
    fn roundtrip_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        {
            let mut w = CsvAppender::open(&p, METRICS_HEADER).unwrap();
            for e in 0..5 {
                w.line(&row(e).to_csv()).unwrap();
            }
            w.flush().unwrap();
        }
        let rows = read_metrics(&p).unwrap();
        assert_eq!(rows, (0..5).map(row).collect::<Vec<_>>());
        truncate_csv(&p, 3).unwrap();
        assert_eq!(read_metrics(&p).unwrap().len(), 3);
        let mut w = CsvAppender::open(&p, METRICS_HEADER).unwrap();
        w.line(&row(3).to_csv()).unwrap();
        w.flush().unwrap();
        assert_eq!(read_metrics(&p).unwrap().len(), 4);
    }

    #[test]
    fn stats() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(tail_mean(&[1.0, 2.0, 3.0], 2), 2.5);
        assert_eq!(tail_mean(&[1.0], 10), 1.0);
        assert_eq!(smooth(&[2.0, 4.0, 6.0], 2), vec![2.0, 3.0, 5.0]);
    }
}
