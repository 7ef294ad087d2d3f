use serde::{Deserialize, Serialize};

use dynfx::effects::{EffectSeries, Period};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub mse: f64,
    pub coverage: f64,
    pub width: f64,
    /// Mean signed error `mean_t (estimate - truth)`.
    pub bias: f64,
    pub points: usize,
}

/// Scores the points of `estimate` that fall in `period` against the true
/// series `truth`, given on the time grid `times`.
///
/// Every scored estimate time must exist in `times`; otherwise the series
/// are misaligned and an error is returned.
pub fn score(times: &[i64], truth: &[f64], estimate: &EffectSeries, period: Period) -> Result<Score> {
    if times.len() != truth.len() {
        return Err(SimError::Misaligned(format!("{} times for {} truth values", times.len(), truth.len())));
    }
    let points = estimate.period(period);
    if points.is_empty() {
        return Err(SimError::Misaligned(format!("no {} points in the estimate", period.as_str())));
    }
    let first = times[0];
    let (mut se, mut covered, mut width, mut err) = (0.0, 0usize, 0.0, 0.0);
    for p in &points {
        let k = usize::try_from(p.time - first)
            .ok()
            .filter(|&k| k < times.len() && times[k] == p.time)
            .ok_or_else(|| SimError::Misaligned(format!("estimate time {} has no true value", p.time)))?;
        let tau = truth[k];
        se += (tau - p.point).powi(2);
        err += p.point - tau;
        width += p.upper - p.lower;
        if p.lower <= tau && tau <= p.upper {
            covered += 1;
        }
    }
    let n = points.len() as f64;
    Ok(Score { mse: se / n, coverage: covered as f64 / n, width: width / n, bias: err / n, points: points.len() })
}
