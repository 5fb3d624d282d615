use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The metric obtained at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub metric: f64,
}

/// Evaluates `metric` at every threshold in `grid` and returns the best one
/// together with the full table. Ties go to the smaller threshold.
pub fn select_tau(grid: &[f64], mut metric: impl FnMut(f64) -> Result<f64>) -> Result<(f64, Vec<SweepPoint>)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| t.is_nan()) {
        return Err(Error::InvalidConfig("threshold grid contains NaN".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &tau in grid {
        let m = metric(tau)?;
        table.push(SweepPoint { tau, metric: m });
    }
    let best = table
        .iter()
        .filter(|p| !p.metric.is_nan())
        .fold(None::<SweepPoint>, |best, p| match best {
            Some(b) if b.metric > p.metric || (b.metric == p.metric && b.tau <= p.tau) => Some(b),
            _ => Some(*p),
        })
        .map_or(table[0].tau, |b| b.tau);
    Ok((best, table))
}
