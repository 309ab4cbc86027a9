//! Knee-point threshold on the empirical CDF of forecast residuals.

/// Selected residual threshold. `fallback` is set when there were too few
/// distinct residuals for a knee and the median was used instead.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KneeThreshold {
    pub value: f64,
    pub fallback: bool,
}

/// Residual at the knee of the empirical CDF.
///
/// The residual axis is min-max normalized (the CDF already lies in
/// `[0, 1]`). The knee is the point furthest above the diagonal, which is
/// where a concave increasing curve bends hardest. The returned value is always one of the
/// observed residuals.
pub fn knee_threshold(residuals: &[f64]) -> KneeThreshold {
    let mut xs: Vec<f64> = residuals.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return KneeThreshold { value: 0.0, fallback: true };
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    // distinct values with the CDF evaluated at each
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let y = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = y,
            _ => points.push((x, y)),
        }
    }
    if points.len() < 3 {
        return KneeThreshold { value: median(&xs), fallback: true };
    }
    // the CDF already spans [0, 1]; only the residual axis is rescaled, so a
    // heavy atom at the smallest residual keeps its weight
    let x0 = points[0].0;
    let dx = points[points.len() - 1].0 - x0;
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for (i, &(x, y)) in points.iter().enumerate() {
        let gap = y - (x - x0) / dx;
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    KneeThreshold { value: points[best].0, fallback: false }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
