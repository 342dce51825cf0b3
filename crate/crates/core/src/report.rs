//! Accuracy-versus-size summaries of a finished (or running) run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::run::{CHECKPOINT_DIR, METRICS_FILE, METRICS_SCHEMA, METRICS_VERSION};
use crate::trainer::MetricsRecord;

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Parses a metrics log, checking its header line.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::CorruptData("metrics log is empty".into()))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| Error::CorruptData(format!("metrics header: {e}")))?;
    if header.schema != METRICS_SCHEMA {
        return Err(Error::CorruptData(format!("unexpected schema `{}`", header.schema)));
    }
    if header.version != METRICS_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: METRICS_VERSION,
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::CorruptData(format!("metrics record {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}

/// First epoch at which a validation-accuracy level was reached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Milestone {
    pub epoch: usize,
    pub param_count: usize,
    pub val_accuracy: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Milestones {
    pub at_70: Option<Milestone>,
    pub at_80: Option<Milestone>,
    pub best: Milestone,
}

fn to_milestone(r: &MetricsRecord) -> Milestone {
    Milestone {
        epoch: r.epoch,
        param_count: r.param_count,
        val_accuracy: r.val_accuracy,
    }
}

impl Milestones {
    pub fn from_history(history: &[MetricsRecord]) -> Result<Self> {
        let first_at = |level: f32| history.iter().find(|r| r.val_accuracy >= level).map(to_milestone);
        let mut best = history
            .first()
            .ok_or_else(|| Error::CorruptData("metrics log has no epochs".into()))?;
        for r in history {
            if r.val_accuracy > best.val_accuracy {
                best = r;
            }
        }
        Ok(Self {
            at_70: first_at(0.70),
            at_80: first_at(0.80),
            best: to_milestone(best),
        })
    }
}

/// One complexity level: a maximal run of epochs trained at the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub param_count: usize,
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub best_val_accuracy: f32,
}

pub fn levels(history: &[MetricsRecord]) -> Vec<Level> {
    let mut out: Vec<Level> = Vec::new();
    for r in history {
        match out.last_mut() {
            Some(l) if l.param_count == r.param_count => {
                l.last_epoch = r.epoch;
                l.best_val_accuracy = l.best_val_accuracy.max(r.val_accuracy);
            }
            _ => out.push(Level {
                param_count: r.param_count,
                first_epoch: r.epoch,
                last_epoch: r.epoch,
                best_val_accuracy: r.val_accuracy,
            }),
        }
    }
    out
}

fn pct(v: f32) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Renders the milestone table followed by the per-level table.
pub fn render(history: &[MetricsRecord]) -> Result<String> {
    let m = Milestones::from_history(history)?;
    let mut s = String::new();
    let reached = |x: &Option<Milestone>| match x {
        Some(x) => (x.param_count.to_string(), x.epoch.to_string()),
        None => ("not reached".into(), "-".into()),
    };
    let (p70, e70) = reached(&m.at_70);
    let (p80, e80) = reached(&m.at_80);
    let rows = [
        ("Val Accuracy (at 70%)", p70, e70),
        ("Val Accuracy (at 80%)", p80, e80),
        ("Highest Val Accuracy (%)", pct(m.best.val_accuracy), m.best.epoch.to_string()),
        ("Parameters at Highest Accuracy", m.best.param_count.to_string(), m.best.epoch.to_string()),
    ];
    writeln!(s, "{:<32} {:>12} {:>6}", "", "value", "epoch").unwrap();
    for (label, value, epoch) in rows {
        writeln!(s, "{label:<32} {value:>12} {epoch:>6}").unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "{:<6} {:>10} {:>8} {:>14}", "level", "params", "epochs", "best val acc %").unwrap();
    for (i, l) in levels(history).iter().enumerate() {
        let span = format!("{}-{}", l.first_epoch, l.last_epoch);
        writeln!(s, "{i:<6} {:>10} {span:>8} {:>14}", l.param_count, pct(l.best_val_accuracy)).unwrap();
    }
    let expansions = history.iter().filter(|r| r.expanded()).count();
    writeln!(s, "\n{} epochs, {expansions} expansions", history.len()).unwrap();
    Ok(s)
}

/// Number of `level-*` checkpoints in a run directory.
pub fn count_level_checkpoints(run_dir: &Path) -> Result<usize> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.exists() {
        return Ok(0);
    }
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut n = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        if entry.file_name().to_string_lossy().starts_with("level-") {
            n += 1;
        }
    }
    Ok(n)
}

/// Report for the run stored in `run_dir`.
pub fn report_run(run_dir: &Path) -> Result<String> {
    render(&read_metrics(&run_dir.join(METRICS_FILE))?)
}
