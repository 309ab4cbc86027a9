//! Moving-average forecasts from a short history of snapshots.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::schema::AttributeCombination;
use crate::snapshot::RawSnapshot;

/// Per-leaf real values at consecutive time points, oldest first.
#[derive(Debug, Clone, Default)]
pub struct LeafHistory {
    window: Vec<HashMap<AttributeCombination, f64>>,
}

impl LeafHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the next (newer) time point.
    pub fn push(&mut self, values: HashMap<AttributeCombination, f64>) -> Result<()> {
        if let Some((_, v)) = values.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("history value {v} is not a non-negative number")));
        }
        self.window.push(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

pub const DEFAULT_WINDOW: usize = 10;

/// Mean of each leaf's real values over the last `window` time points.
///
/// A leaf missing from a time point counts as zero there. `window` is capped
/// at the available history.
pub fn ma_forecast(history: &LeafHistory, window: usize) -> Result<HashMap<AttributeCombination, f64>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("empty history".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let w = window.min(history.len());
    let recent = &history.window[history.len() - w..];
    let mut sums: HashMap<AttributeCombination, f64> = HashMap::new();
    for point in recent {
        for (leaf, v) in point {
            *sums.entry(leaf.clone()).or_default() += v;
        }
    }
    for v in sums.values_mut() {
        *v /= w as f64;
    }
    Ok(sums)
}

/// Fill the forecasts of `current` from earlier snapshots of the same
/// layout, one moving average per value column.
pub fn forecast_from_history(current: &mut RawSnapshot, history: &[RawSnapshot], window: usize) -> Result<()> {
    for (i, h) in history.iter().enumerate() {
        if h.attributes != current.attributes || h.columns != current.columns {
            return Err(Error::InvalidArgument(format!("history snapshot {} has a different header", i + 1)));
        }
    }
    let key = |attrs: &[String], values: &[String]| {
        AttributeCombination::from_pairs(attrs.iter().cloned().zip(values.iter().cloned()))
    };
    for c in 0..current.columns.len() {
        let mut hist = LeafHistory::new();
        for h in history {
            hist.push(h.rows.iter().map(|r| (key(&h.attributes, &r.values), r.real[c])).collect())?;
        }
        let f = ma_forecast(&hist, window)?;
        for row in &mut current.rows {
            row.forecast[c] = f.get(&key(&current.attributes, &row.values)).copied().unwrap_or(0.0);
        }
    }
    Ok(())
}
