//! Synthetic base snapshots: a full attribute grid with Poisson counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};

use crate::error::{Error, Result};
use crate::schema::{DistributionFamily, MeasureSpec};
use crate::snapshot::{LeafRow, Snapshot};

/// Shape of a synthetic base. Parsed from `synthetic:<A>x<V>[@<mean>][:rate][#<seed>]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBase {
    pub attributes: usize,
    pub values: usize,
    /// Mean count per leaf.
    pub mean: f64,
    /// Log-scale spread of the per-value weights.
    pub spread: f64,
    /// Emit `succ`/`total` columns analysed as a success rate.
    pub success_rate: bool,
    pub seed: u64,
}

impl Default for SyntheticBase {
    fn default() -> Self {
        Self { attributes: 4, values: 10, mean: 50.0, spread: 0.3, success_rate: false, seed: 7 }
    }
}

impl SyntheticBase {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad synthetic base spec `{spec}`"));
        let body = spec.strip_prefix("synthetic:").ok_or_else(bad)?;
        let mut out = Self::default();
        let (body, seed) = match body.split_once('#') {
            Some((b, s)) => (b, Some(s)),
            None => (body, None),
        };
        if let Some(s) = seed {
            out.seed = s.parse().map_err(|_| bad())?;
        }
        let (body, rate) = match body.strip_suffix(":rate") {
            Some(b) => (b, true),
            None => (body, false),
        };
        out.success_rate = rate;
        let (shape, mean) = match body.split_once('@') {
            Some((s, m)) => (s, Some(m)),
            None => (body, None),
        };
        if let Some(m) = mean {
            out.mean = m.parse().map_err(|_| bad())?;
        }
        let (a, v) = shape.split_once('x').ok_or_else(bad)?;
        out.attributes = a.parse().map_err(|_| bad())?;
        out.values = v.parse().map_err(|_| bad())?;
        if out.attributes == 0 || out.attributes > 26 || out.values == 0 || !(out.mean > 0.0) {
            return Err(bad());
        }
        Ok(out)
    }

    /// Build the snapshot; real and forecast are equal. Leaves whose count
    /// comes out zero are not observed and are left out.
    pub fn build(&self) -> Result<Snapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lognormal = LogNormal::new(0.0, self.spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let weights: Vec<Vec<f64>> = (0..self.attributes)
            .map(|_| {
                let w: Vec<f64> = (0..self.values).map(|_| lognormal.sample(&mut rng)).collect();
                let m = w.iter().sum::<f64>() / w.len() as f64;
                w.into_iter().map(|x| x / m).collect()
            })
            .collect();
        let names: Vec<String> = (0..self.attributes).map(|a| ((b'A' + a as u8) as char).to_string()).collect();
        let total = self.values.checked_pow(self.attributes as u32).filter(|&t| t <= 5_000_000).ok_or_else(|| {
            Error::InvalidArgument("synthetic base too large".into())
        })?;
        let mut rows = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.attributes];
        for _ in 0..total {
            let mu = self.mean * idx.iter().enumerate().map(|(a, &i)| weights[a][i]).product::<f64>();
            let count = Poisson::new(mu).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut rng);
            if count > 0.0 {
                let values = idx
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| format!("{}{}", names[a].to_lowercase(), i))
                    .collect();
                let vals = if self.success_rate {
                    let rate: f64 = rng.gen_range(0.9..0.99);
                    vec![(count * rate).round(), count]
                } else {
                    vec![count]
                };
                rows.push(LeafRow { values, real: vals.clone(), forecast: vals });
            }
            // odometer over the attribute grid
            for a in (0..self.attributes).rev() {
                idx[a] += 1;
                if idx[a] < self.values {
                    break;
                }
                idx[a] = 0;
            }
        }
        let (columns, measure) = if self.success_rate {
            (vec!["succ".to_string(), "total".to_string()], MeasureSpec::quotient("succ", "total"))
        } else {
            (vec!["value".to_string()], MeasureSpec::default().with_family(DistributionFamily::Poisson))
        };
        Snapshot::from_rows(names, columns, rows, measure)
    }
}
