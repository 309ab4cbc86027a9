//! Discretized deviation-score distributions.

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::schema::DistributionFamily;

/// Uniformly spaced bin centers from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Grid {
    /// `[-1, 1]` with step 0.01 (201 bins).
    pub const DEVIATION: Grid = Grid { lo: -1.0, hi: 1.0, bins: 201 };
    /// `[0, 1]` with step 0.01, used for clustering GPS values.
    pub const UNIT: Grid = Grid { lo: 0.0, hi: 1.0, bins: 101 };

    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 || hi <= lo || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument("grid needs hi > lo and at least 2 bins".into()));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.bins - 1) as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + bin as f64 * self.step()
    }

    /// Nearest bin; values outside the grid are clamped to the end bins.
    pub fn bin_of(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.step()).round();
        i.clamp(0.0, (self.bins - 1) as f64) as usize
    }
}

/// Probability mass over the bins of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationDistribution {
    grid: Grid,
    mass: Vec<f64>,
}

impl DeviationDistribution {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, mass: vec![0.0; grid.bins] }
    }

    /// All mass in the bin containing `x`.
    pub fn dirac(grid: Grid, x: f64) -> Self {
        let mut d = Self::zeros(grid);
        d.mass[grid.bin_of(x)] = 1.0;
        d
    }

    pub fn from_mass(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.bins {
            return Err(Error::InvalidArgument("mass length does not match the grid".into()));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidArgument("mass must be finite and non-negative".into()));
        }
        Ok(Self { grid, mass })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Mass inside the bin range `[lo, hi)`.
    pub fn mass_in(&self, lo: usize, hi: usize) -> f64 {
        self.mass[lo..hi.min(self.mass.len())].iter().sum()
    }

    /// `(bin center, density)` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for (i, m) in self.mass.iter().enumerate() {
            out.push_str(&format!("{:.4},{}\n", self.grid.center(i), m));
        }
        out
    }
}

/// Terms below this probability are dropped before renormalizing.
pub const PMF_CUTOFF: f64 = 1e-6;

/// Poisson probability of observing `k` events at rate `lambda`.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// `(rate, probability)` terms of a Poisson-modelled leaf.
///
/// The true rate is taken to be `v + k` for integers `k >= -v`; the weight of
/// each candidate rate is the likelihood of the observed count under it.
/// Terms under [`PMF_CUTOFF`] are truncated and the rest renormalized. Rates
/// whose deviation score is undefined (`f + rate = 0`) are skipped.
fn poisson_terms(v: u64, f: f64) -> Result<Vec<(u64, f64)>> {
    if !(f.is_finite() && f >= 0.0) {
        return Err(Error::InvalidArgument(format!("forecast {f} must be non-negative")));
    }
    if v == 0 && f == 0.0 {
        return Err(Error::MeaninglessPair);
    }
    let mut terms = Vec::new();
    let mut push = |lambda: u64| -> bool {
        let p = poisson_pmf(v, lambda as f64);
        if p < PMF_CUTOFF {
            return false;
        }
        if f + lambda as f64 > 0.0 {
            terms.push((lambda, p));
        }
        true
    };
    // the likelihood is unimodal in lambda with its peak at lambda = v
    let mut lambda = v;
    while push(lambda) {
        lambda += 1;
    }
    let mut lambda = v;
    while lambda > 0 {
        lambda -= 1;
        if !push(lambda) {
            break;
        }
    }
    let total: f64 = terms.iter().map(|t| t.1).sum();
    if total <= 0.0 {
        return Err(Error::Undefined("empty Poisson support".into()));
    }
    for t in &mut terms {
        t.1 /= total;
    }
    terms.sort_by_key(|t| t.0);
    Ok(terms)
}

fn score(f: f64, rate: f64) -> f64 {
    (f - rate) / (f + rate)
}

/// `(deviation score, probability)` support of a Poisson-modelled leaf,
/// ordered by increasing rate.
pub fn poisson_support(v: u64, f: f64) -> Result<Vec<(f64, f64)>> {
    Ok(poisson_terms(v, f)?.into_iter().map(|(l, p)| (score(f, l as f64), p)).collect())
}

/// Spread `m` uniformly over the score interval `[a, b]`; bin `i` owns
/// `[center - step/2, center + step/2)`.
fn deposit(grid: Grid, mass: &mut [f64], a: f64, b: f64, m: f64) {
    let step = grid.step();
    let to_t = |x: f64| ((x - grid.lo) / step + 0.5).clamp(0.0, grid.bins as f64);
    let (ta, tb) = (to_t(a.min(b)), to_t(a.max(b)));
    let last = grid.bins - 1;
    if tb - ta < 1e-12 {
        mass[(ta.floor() as usize).min(last)] += m;
        return;
    }
    let mut i = ta.floor() as usize;
    while (i as f64) < tb && i <= last {
        let overlap = tb.min(i as f64 + 1.0) - ta.max(i as f64);
        if overlap > 0.0 {
            mass[i] += m * overlap / (tb - ta);
        }
        i += 1;
    }
}

/// Distribution of one leaf's deviation score.
///
/// Under the Poisson family each candidate rate's probability is spread over
/// the scores of its unit rate cell `[rate - 1/2, rate + 1/2]`, so the
/// lattice of integer rates does not alias onto the grid as a comb.
pub fn leaf_distribution(v: f64, f: f64, family: DistributionFamily, grid: Grid) -> Result<DeviationDistribution> {
    if v < 0.0 || f < 0.0 || !v.is_finite() || !f.is_finite() {
        return Err(Error::InvalidArgument("values must be finite and non-negative".into()));
    }
    if v + f == 0.0 {
        return Err(Error::MeaninglessPair);
    }
    match family {
        DistributionFamily::None => Ok(DeviationDistribution::dirac(grid, (f - v) / (f + v))),
        DistributionFamily::Poisson => {
            if v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("Poisson family needs an integer count, got {v}")));
            }
            let mut d = DeviationDistribution::zeros(grid);
            for (rate, p) in poisson_terms(v as u64, f)? {
                let r = rate as f64;
                let lo = (r - 0.5).max(0.0);
                // with f = 0 every positive rate scores -1
                let a = if f + lo > 0.0 { score(f, lo) } else { score(f, r) };
                deposit(grid, &mut d.mass, score(f, r + 0.5), a, p);
            }
            Ok(d)
        }
    }
}

/// Bin-wise mean of distributions on a common grid.
pub fn overall_distribution(dists: &[DeviationDistribution]) -> Result<DeviationDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidArgument("no distributions to average".into()))?;
    let mut out = DeviationDistribution::zeros(first.grid);
    for d in dists {
        if d.grid != first.grid {
            return Err(Error::InvalidArgument("grid mismatch".into()));
        }
        for (o, m) in out.mass.iter_mut().zip(&d.mass) {
            *o += m;
        }
    }
    let n = dists.len() as f64;
    for o in &mut out.mass {
        *o /= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G: Grid = Grid::DEVIATION;

    #[test]
    fn grid_layout() {
        assert_eq!(G.bins, 201);
        assert!((G.step() - 0.01).abs() < 1e-15);
        assert_eq!(G.bin_of(-1.0), 0);
        assert_eq!(G.bin_of(1.0), 200);
        assert_eq!(G.bin_of(0.0), 100);
        assert!((G.center(133) - 0.33).abs() < 1e-12);
    }

    #[test]
    fn poisson_mass_at_zero_shift() {
        // k = 0: lambda = v = 5
        let direct = 5f64.powi(5) * (-5f64).exp() / 120.0;
        assert!((poisson_pmf(5, 5.0) - 0.17547).abs() < 1e-5);
        assert!((poisson_pmf(5, 5.0) - direct).abs() < 1e-12);
        let support = poisson_support(5, 5.0).unwrap();
        let at_zero = support.iter().find(|t| t.0 == 0.0).unwrap().1;
        // renormalization after truncation moves the mass only slightly
        assert!((at_zero - direct).abs() < 1e-4, "{at_zero}");
    }

    #[test]
    fn dirac_leaf() {
        let d = leaf_distribution(10.0, 20.0, DistributionFamily::None, G).unwrap();
        assert_eq!(d.mass()[G.bin_of(1.0 / 3.0)], 1.0);
        assert_eq!(d.total(), 1.0);
    }

    #[test]
    fn zero_count_support() {
        let s = poisson_support(0, 10.0).unwrap();
        assert!(s.iter().all(|&(score, _)| score <= 1.0));
        // lambda = 0 (k = -v) gives score exactly 1
        assert!(s.iter().any(|&(score, _)| score == 1.0));
        let d = leaf_distribution(0.0, 10.0, DistributionFamily::Poisson, G).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-9);
        assert!(leaf_distribution(0.0, 0.0, DistributionFamily::Poisson, G).is_err());
        assert!(leaf_distribution(1.5, 1.0, DistributionFamily::Poisson, G).is_err());
    }

    #[test]
    fn overall_examples() {
        let a = DeviationDistribution::dirac(G, 0.5);
        assert_eq!(overall_distribution(&[a.clone(), a.clone()]).unwrap(), a);
        let b = DeviationDistribution::dirac(G, -0.5);
        let m = overall_distribution(&[a, b]).unwrap();
        assert_eq!(m.mass()[G.bin_of(0.5)], 0.5);
        assert_eq!(m.mass()[G.bin_of(-0.5)], 0.5);
        assert_eq!(m.mass().iter().filter(|&&x| x > 0.0).count(), 2);
        let other = DeviationDistribution::zeros(Grid::UNIT);
        assert!(overall_distribution(&[m, other]).is_err());
        assert!(overall_distribution(&[]).is_err());
    }

    #[test]
    fn poisson_average_is_unimodal_near_target() {
        // counts whose forecast sits at deviation score 0.5: f = 3 v
        let counts: Vec<u64> = (0..100).map(|i| 20 + (i % 7) as u64).collect();
        let dists: Vec<_> = counts
            .iter()
            .map(|&v| leaf_distribution(v as f64, 3.0 * v as f64, DistributionFamily::Poisson, G).unwrap())
            .collect();
        let all = overall_distribution(&dists).unwrap();
        let m = all.mass();
        let argmax = (0..G.bins).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
        // oracle: continuous change of variables of the mean likelihood,
        // rate(s) = f (1 - s) / (1 + s), |d rate / d s| = 2 f / (1 + s)^2
        let density = |s: f64| -> f64 {
            counts
                .iter()
                .map(|&v| {
                    let f = 3.0 * v as f64;
                    let rate = f * (1.0 - s) / (1.0 + s);
                    let ln = v as f64 * rate.ln() - rate - ln_factorial(v);
                    ln.exp() * 2.0 * f / (1.0 + s).powi(2)
                })
                .sum()
        };
        let mode = (1..20000)
            .map(|i| -1.0 + i as f64 * 1e-4)
            .max_by(|&a, &b| density(a).total_cmp(&density(b)))
            .unwrap();
        assert!((mode - 0.5).abs() < 0.05, "{mode}");
        assert!((G.center(argmax) - mode).abs() <= 0.015, "{} vs {mode}", G.center(argmax));
        // a single rise then a single fall
        let mut changes = 0;
        let mut rising = true;
        for w in m.windows(2) {
            if rising && w[1] < w[0] - 1e-12 {
                rising = false;
                changes += 1;
            } else if !rising && w[1] > w[0] + 1e-12 {
                rising = true;
                changes += 1;
            }
        }
        assert!(changes <= 1, "{changes} direction changes");
    }

    #[test]
    fn cell_spreading_keeps_term_mass() {
        // the k = 0 term's probability lands inside its rate cell
        let terms = poisson_support(5, 5.0).unwrap();
        let p0 = terms.iter().find(|t| t.0 == 0.0).unwrap().1;
        let raw = poisson_pmf(5, 5.0);
        let total: f64 = (0..200).map(|l| poisson_pmf(5, l as f64)).filter(|&p| p >= PMF_CUTOFF).sum();
        assert!((p0 - raw / total).abs() < 1e-12);
        let d = leaf_distribution(5.0, 5.0, DistributionFamily::Poisson, G).unwrap();
        // cell [4.5, 5.5] maps to scores [-1/21, 1/19]
        let (lo, hi) = (G.bin_of(-1.0 / 21.0), G.bin_of(1.0 / 19.0));
        assert!(d.mass_in(lo, hi + 1) >= p0 - 1e-12);
    }

    proptest! {
        #[test]
        fn pmf_normalized(v in 0u64..400, f in 0.0f64..500.0) {
            prop_assume!(v as f64 + f > 0.0);
            let d = leaf_distribution(v as f64, f, DistributionFamily::Poisson, G).unwrap();
            prop_assert!((d.total() - 1.0).abs() < 1e-6);
            prop_assert!(d.mass().iter().all(|&m| m >= 0.0));
        }
    }
}
