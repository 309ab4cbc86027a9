//! Deviation scores, expected abnormal values and derived-measure composition.
//!
//! A root cause shifts every slice it touches by the same deviation score
//! `(f - v) / (f + v)`. Given a candidate's score, the value a slice should
//! show under that candidate is its expected abnormal value.

use crate::error::{Error, Result};
use crate::schema::{MeasureKind, MeasureSpec};

/// Deviation score `(f - v) / (f + v)`, in `[-1, 1]`.
pub fn deviation_score(real: f64, forecast: f64) -> Result<f64> {
    if real < 0.0 || forecast < 0.0 {
        return Err(Error::InvalidArgument("values must be non-negative".into()));
    }
    let sum = real + forecast;
    if sum == 0.0 {
        return Err(Error::MeaninglessPair);
    }
    Ok((forecast - real) / sum)
}

/// Value a slice with forecast `forecast` would show if it deviated by `score`.
pub fn expected_abnormal_value(forecast: f64, score: f64) -> Result<f64> {
    if score <= -1.0 {
        return Err(Error::Undefined("expected value is unbounded for a score of -1".into()));
    }
    Ok(forecast * (1.0 - score) / (1.0 + score))
}

/// Apply a measure's composition to its operand values.
pub fn derived_value(spec: &MeasureSpec, operands: (f64, f64)) -> Result<f64> {
    let (a, b) = operands;
    match spec.kind {
        MeasureKind::Fundamental => Ok(a),
        MeasureKind::Quotient => {
            if b == 0.0 {
                Err(Error::Undefined("quotient with zero denominator".into()))
            } else {
                Ok(a / b)
            }
        }
        MeasureKind::Product => Ok(a * b),
    }
}
