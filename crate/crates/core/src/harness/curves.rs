use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "method,trial,interactions,mean_reward";
pub const SUMMARY_HEADER: &str = "method,interactions,mean,stderr";

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub method: String,
    pub trial: usize,
    pub interactions: usize,
    pub mean_reward: f64,
}

/// Evaluation points of one or more methods and trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub interactions: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl LearningCurve {
    pub fn extend(&mut self, other: LearningCurve) {
        self.rows.extend(other.rows);
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.method, a.trial, a.interactions).cmp(&(&b.method, b.trial, b.interactions))
        });
    }

    /// Same rows with every method name replaced.
    pub fn relabel(mut self, method: &str) -> Self {
        for r in &mut self.rows {
            r.method = method.to_string();
        }
        self
    }

    pub fn trial_count(&self) -> usize {
        self.rows.iter().map(|r| r.trial + 1).max().unwrap_or(0)
    }

    /// Returns at the last evaluation point of each trial, in trial order.
    pub fn final_returns(&self) -> Vec<f64> {
        let mut last: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for r in &self.rows {
            let slot = last.entry(r.trial).or_insert((r.interactions, r.mean_reward));
            if r.interactions >= slot.0 {
                *slot = (r.interactions, r.mean_reward);
            }
        }
        last.into_values().map(|v| v.1).collect()
    }

    /// Per-trial returns at a given interaction count, in trial order.
    pub fn returns_at(&self, interactions: usize) -> Vec<f64> {
        let mut at: BTreeMap<usize, f64> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.interactions == interactions) {
            at.insert(r.trial, r.mean_reward);
        }
        at.into_values().collect()
    }

    /// Mean and standard error across trials for each (method, interactions).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.method.clone(), r.interactions))
                .or_default()
                .push(r.mean_reward);
        }
        groups
            .into_iter()
            .map(|((method, interactions), values)| {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let stderr = if values.len() > 1 {
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    method,
                    interactions,
                    mean,
                    stderr,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut sorted = self.clone();
        sorted.sort();
        let mut out = format!("{CURVE_HEADER}\n");
        for r in &sorted.rows {
            writeln!(out, "{},{},{},{:.6}", r.method, r.trial, r.interactions, r.mean_reward).unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for r in self.summary() {
            writeln!(out, "{},{},{:.6},{:.6}", r.method, r.interactions, r.mean, r.stderr).unwrap();
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CURVE_HEADER => {}
            _ => return Err(Error::parse(source_name, 1, format!("expected header '{CURVE_HEADER}'"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::parse(source_name, i + 1, msg);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            rows.push(CurveRow {
                method: fields[0].to_string(),
                trial: fields[1].parse().map_err(|_| bad("bad trial"))?,
                interactions: fields[2].parse().map_err(|_| bad("bad interaction count"))?,
                mean_reward: fields[3].parse().map_err(|_| bad("bad reward"))?,
            });
        }
        Ok(LearningCurve { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Where the summary for a curve file goes: `x.csv` -> `x_summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curves");
    path.with_file_name(format!("{stem}_summary.csv"))
}

/// Writes the per-trial curve CSV and its summary next to it.
pub fn write_curves(curve: &LearningCurve, path: &Path) -> Result<()> {
    fs::write(path, curve.to_csv()).map_err(|e| Error::io(path, e))?;
    let summary = summary_path(path);
    fs::write(&summary, curve.summary_csv()).map_err(|e| Error::io(&summary, e))
}
