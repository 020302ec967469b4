//! Forward/backward pass ledger, epoch conversion and data utilization.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};

pub const HISTORY: usize = 10;

/// Per-iteration quantities the ledger keeps for windowed averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub t: u64,
    pub u_t: usize,
    pub n_confident: usize,
    pub n_correct_confident: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassLedger {
    pub forward_total: u64,
    pub backward_total: u64,
    pub dataset_size: u64,
    pub iterations: u64,
    history: VecDeque<IterationCounts>,
}

impl PassLedger {
    pub fn new(dataset_size: u64) -> Self {
        Self {
            forward_total: 0,
            backward_total: 0,
            dataset_size,
            iterations: 0,
            history: VecDeque::with_capacity(HISTORY),
        }
    }

    /// Prices one iteration: `l + u + n_conf` forward and `l + n_conf` backward.
    pub fn record_iteration(&mut self, l_t: usize, u_t: usize, n_confident: usize) -> Result<()> {
        if n_confident > u_t {
            return Err(Error::Accounting(format!("{n_confident} confident samples out of {u_t}")));
        }
        self.forward_total += (l_t + u_t + n_confident) as u64;
        self.backward_total += (l_t + n_confident) as u64;
        self.iterations += 1;
        Ok(())
    }

    /// Records the pass counts and keeps the counts in the last-10 window.
    pub fn record(&mut self, l_t: usize, counts: IterationCounts) -> Result<()> {
        if counts.n_correct_confident > counts.n_confident {
            return Err(Error::Accounting(format!(
                "{} correct out of {} confident",
                counts.n_correct_confident, counts.n_confident
            )));
        }
        self.record_iteration(l_t, counts.u_t, counts.n_confident)?;
        if self.history.len() == HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(counts);
        Ok(())
    }

    pub fn history(&self) -> impl Iterator<Item = &IterationCounts> {
        self.history.iter()
    }

    pub fn total_passes(&self) -> u64 {
        self.forward_total + self.backward_total
    }

    /// `(forward + backward) / (2 · dataset_size)`.
    pub fn epochs(&self) -> f64 {
        epochs_for(self.total_passes(), self.dataset_size)
    }

    /// Figure-style row: window means of confident and correct counts.
    pub fn window_row(&self) -> Option<WindowRow> {
        let last = self.history.back()?;
        let n = self.history.len() as f64;
        Some(WindowRow {
            t: last.t,
            u_t: last.u_t,
            n_confident_avg10: self.history.iter().map(|h| h.n_confident as f64).sum::<f64>() / n,
            n_correct_avg10: self.history.iter().map(|h| h.n_correct_confident as f64).sum::<f64>() / n,
        })
    }

    /// Sums pass totals of another ledger into this one. The dataset size is kept.
    pub fn merge(&mut self, other: &PassLedger) {
        self.forward_total += other.forward_total;
        self.backward_total += other.backward_total;
        self.iterations += other.iterations;
    }
}

pub fn epochs_for(passes: u64, dataset_size: u64) -> f64 {
    passes as f64 / (2.0 * dataset_size as f64)
}

/// Mean of forward and backward passes over `iterations` at full confidence,
/// `iterations · ((l + 2u) + (l + u)) / 2`. Dividing by the dataset size gives
/// the same epoch count as [`PassLedger::epochs`].
pub fn full_confidence_mean_passes(iterations: u64, l: usize, u: usize) -> Result<u64> {
    let mut ledger = PassLedger::new(1);
    ledger.record_iteration(l, u, u)?;
    Ok(iterations * ledger.total_passes() / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub t: u64,
    pub u_t: usize,
    pub n_confident_avg10: f64,
    pub n_correct_avg10: f64,
}

/// Window rows for every iteration of a run, as a ledger would report them.
pub fn window_rows(stream: &[IterationCounts]) -> Vec<WindowRow> {
    (0..stream.len())
        .map(|i| {
            let w = &stream[i.saturating_sub(HISTORY - 1)..=i];
            let n = w.len() as f64;
            WindowRow {
                t: stream[i].t,
                u_t: stream[i].u_t,
                n_confident_avg10: w.iter().map(|c| c.n_confident as f64).sum::<f64>() / n,
                n_correct_avg10: w.iter().map(|c| c.n_correct_confident as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// `n_confident / u_t` per iteration, `None` when `u_t = 0`.
    pub batch: Vec<Option<f64>>,
    /// Mean of the defined batch values among the last 10 iterations.
    pub running: Vec<Option<f64>>,
    /// `Σ n_confident / Σ u_t`.
    pub total: Option<f64>,
}

pub fn utilization(stream: &[IterationCounts]) -> Result<UtilizationReport> {
    if stream.is_empty() {
        return Err(Error::Accounting("empty iteration stream".into()));
    }
    let batch: Vec<Option<f64>> = stream
        .iter()
        .map(|s| (s.u_t > 0).then(|| s.n_confident as f64 / s.u_t as f64))
        .collect();
    let running = (0..batch.len())
        .map(|i| {
            let window: Vec<f64> = batch[i.saturating_sub(HISTORY - 1)..=i].iter().flatten().copied().collect();
            (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64)
        })
        .collect();
    let conf: u64 = stream.iter().map(|s| s.n_confident as u64).sum();
    let drawn: u64 = stream.iter().map(|s| s.u_t as u64).sum();
    Ok(UtilizationReport {
        batch,
        running,
        total: (drawn > 0).then(|| conf as f64 / drawn as f64),
    })
}

/// One line of the per-run CSV summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub flags: String,
    pub total_forward: u64,
    pub total_backward: u64,
    pub epochs: f64,
    pub total_utilization: Option<f64>,
    pub epochs_to_target: Option<f64>,
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[RunSummary]) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_window_csv<W: Write>(out: W, rows: &[WindowRow]) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Accounting(format!("csv: {e}"))
}
