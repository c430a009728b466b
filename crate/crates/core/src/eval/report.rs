//! Per-run results, per-method aggregates and their JSON/CSV forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::{accuracy_stats, mean, per_class_recall, sum_confusion};
use super::runner::ExperimentSpec;
use super::splits::{Protocol, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCount {
    pub session: u8,
    pub correct: u64,
    pub total: u64,
}

/// Outcome of one method on one split with one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub ws: usize,
    pub split: usize,
    pub run: usize,
    /// Test accuracy in percent.
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub sessions: Vec<SessionCount>,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: u8,
    pub accuracies: Vec<f64>,
    pub mean_acc: f64,
    pub se: Option<f64>,
}

/// Pooled accuracies of one method at one window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub protocol: String,
    pub ws: usize,
    pub n_runs: usize,
    pub accuracies: Vec<f64>,
    pub mean_acc: f64,
    /// Absent with fewer than two runs.
    pub se: Option<f64>,
    /// Summed over all runs; `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: ExperimentSpec,
    pub splits: Vec<Split>,
    pub methods: Vec<MethodReport>,
    pub runs: Vec<RunResult>,
}

fn summarize(acc: &[f64]) -> (f64, Option<f64>) {
    match accuracy_stats(acc) {
        Ok((m, se)) => (m, Some(se)),
        Err(_) => (mean(acc).unwrap_or(0.0), None),
    }
}

impl EvalReport {
    /// Groups runs by window size and method, in the order `spec.methods` lists
    /// them; within a group runs are ordered by split then seed.
    pub fn from_runs(
        spec: ExperimentSpec,
        splits: Vec<Split>,
        mut runs: Vec<RunResult>,
    ) -> Result<EvalReport> {
        let classes = spec.class_mode.num_classes();
        runs.sort_by(|a, b| (a.ws, a.split, a.run).cmp(&(b.ws, b.split, b.run)));
        let ws_list = spec.protocol.window_sizes(spec.features.ws);
        let mut methods = Vec::new();
        for &ws in &ws_list {
            for m in &spec.methods {
                let name = m.to_string();
                let group: Vec<&RunResult> = runs
                    .iter()
                    .filter(|r| r.ws == ws && r.method == name)
                    .collect();
                if group.is_empty() {
                    return Err(Error::Empty(format!("no runs for {name} at ws {ws}")));
                }
                let accuracies: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
                let (mean_acc, se) = summarize(&accuracies);
                let confusion = sum_confusion(group.iter().map(|r| &r.confusion), classes);
                let mut ids: Vec<u8> = group
                    .iter()
                    .flat_map(|r| r.sessions.iter().map(|s| s.session))
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                let sessions = ids
                    .into_iter()
                    .map(|session| {
                        let accuracies: Vec<f64> = group
                            .iter()
                            .filter_map(|r| r.sessions.iter().find(|s| s.session == session))
                            .map(|s| 100.0 * s.correct as f64 / s.total as f64)
                            .collect();
                        let (mean_acc, se) = summarize(&accuracies);
                        SessionSummary {
                            session,
                            accuracies,
                            mean_acc,
                            se,
                        }
                    })
                    .collect();
                let protocol = match &spec.protocol {
                    Protocol::WindowSweep { .. } => format!("sweep:ws={ws}"),
                    p => p.name().to_string(),
                };
                methods.push(MethodReport {
                    method: name,
                    protocol,
                    ws,
                    n_runs: group.len(),
                    accuracies,
                    mean_acc,
                    se,
                    per_class_recall: per_class_recall(&confusion),
                    confusion,
                    sessions,
                });
            }
        }
        Ok(EvalReport {
            spec,
            splits,
            methods,
            runs,
        })
    }

    /// The first row for `method` (display name such as `AUG-SPN`).
    pub fn method(&self, method: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(s)?)
    }

    /// `method,protocol,mean_acc,se,n_runs`, one row per method report.
    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "method,protocol,mean_acc,se,n_runs")?;
        for m in &self.methods {
            let se = m.se.map(|s| format!("{s:.4}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{:.4},{},{}",
                m.method, m.protocol, m.mean_acc, se, m.n_runs
            )?;
        }
        Ok(())
    }
}

impl MethodReport {
    /// Summed confusion matrix with class tokens as headers; rows are true
    /// classes.
    pub fn write_confusion_csv(&self, classes: &[&str], mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "true\\pred,{}", classes.join(","))?;
        for (name, row) in classes.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }
}
