//! GRE-based fault simulation over a base snapshot.
//!
//! A fault perturbs every leaf with relative Gaussian noise, picks
//! root-cause combinations from cuboids of one layer, rescales their leaves
//! so each combination's deviation score equals a random magnitude, adds
//! extra noise to those leaves and finally drops faults whose root cause is
//! ambiguous or whose normal part is itself abnormal.

mod base;
mod io;

pub use base::SyntheticBase;
pub use io::{read_fault, write_fault, FaultRecord, GroundTruth, FAULT_VERSION};

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cluster::knee_threshold;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::schema::{cuboids_by_layer, AttributeCombination, DistributionFamily, MeasureKind};
use crate::snapshot::{CuboidGroups, Snapshot};

/// Redraws allowed when placing one root-cause combination.
pub const MAX_REDRAWS: usize = 100;

/// Jaccard overlap above which another combination makes a fault ambiguous.
pub const AMBIGUITY_JACCARD: f64 = 0.95;

/// Minimum share of valid attempts before dataset generation gives up.
pub const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMeasure {
    Fundamental,
    SuccessRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    pub n_element: usize,
    pub cuboid_layer: usize,
    /// Relative sigma of the noise applied to every leaf.
    pub base_noise_sigma: f64,
    /// Relative sigma of the extra noise on affected leaves.
    pub leaf_noise_sigma: f64,
    /// Deviation score magnitudes are drawn from `(lo, hi]`.
    pub magnitude_range: (f64, f64),
    /// Distinct root causes get magnitudes at least this far apart.
    pub min_magnitude_gap: f64,
    /// Let faults raise as well as lower the measure.
    pub allow_increase: bool,
    /// Round fundamental real values to integers.
    pub integer_counts: bool,
    pub seed: u64,
    pub measure_kind: SimMeasure,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            n_element: 1,
            cuboid_layer: 1,
            base_noise_sigma: 0.05,
            leaf_noise_sigma: 0.05,
            magnitude_range: (0.2, 1.0),
            min_magnitude_gap: 0.1,
            allow_increase: false,
            integer_counts: true,
            seed: 0,
            measure_kind: SimMeasure::Fundamental,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_element == 0 || self.cuboid_layer == 0 {
            return bad("n_element and cuboid_layer must be at least 1");
        }
        if !(self.base_noise_sigma >= 0.0 && self.leaf_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        let (lo, hi) = self.magnitude_range;
        if !(lo >= 0.0 && lo < hi && hi <= 1.0) {
            return bad("magnitude_range must satisfy 0 <= lo < hi <= 1");
        }
        if !(self.min_magnitude_gap >= 0.0) || self.min_magnitude_gap * (self.n_element as f64 - 1.0) >= hi - lo {
            return bad("min_magnitude_gap leaves no room for n_element magnitudes");
        }
        Ok(())
    }

    /// The `(n_element, cuboid_layer)` cell this fault belongs to.
    pub fn cell(&self) -> (usize, usize) {
        (self.n_element, self.cuboid_layer)
    }
}

/// One simulated fault and its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedFault {
    pub snapshot: Snapshot,
    /// Root causes; combinations sharing a deviation score form one entry.
    pub ground_truth: Vec<Vec<AttributeCombination>>,
    /// Injected deviation score of each ground-truth entry.
    pub magnitudes: Vec<f64>,
    pub params: SimulationParams,
    /// Sorted leaves descended from some root-cause combination.
    pub affected: Vec<usize>,
    /// Knee threshold of the noise-only residuals.
    pub noise_threshold: f64,
    /// Attributes removed after simulation.
    pub eliminated: Vec<String>,
    /// Some root-cause combination uses an eliminated attribute.
    pub external: bool,
}

impl SimulatedFault {
    pub fn truth_combinations(&self) -> Vec<AttributeCombination> {
        let mut all: Vec<_> = self.ground_truth.iter().flatten().cloned().collect();
        all.sort();
        all
    }

    /// Remove `attrs` from the snapshot, as if they were never recorded.
    /// The fault becomes external when a root cause binds one of them.
    pub fn eliminate(&self, attrs: &[&str]) -> Result<SimulatedFault> {
        let snapshot = self.snapshot.eliminate_attributes(attrs)?;
        let external = self.ground_truth.iter().flatten().any(|c| c.attributes().any(|a| attrs.contains(&a)));
        let mut eliminated = self.eliminated.clone();
        eliminated.extend(attrs.iter().map(|s| s.to_string()));
        Ok(SimulatedFault {
            snapshot,
            affected: Vec::new(),
            eliminated,
            external: self.external || external,
            ..self.clone()
        })
    }

    /// Eliminate `count` attributes chosen at random.
    pub fn eliminate_random<R: Rng>(&self, count: usize, rng: &mut R) -> Result<SimulatedFault> {
        let names = self.snapshot.schema().attributes().to_vec();
        if count >= names.len() {
            return Err(Error::InvalidArgument(format!("cannot eliminate {count} of {} attributes", names.len())));
        }
        let mut picked: Vec<&str> = names.choose_multiple(rng, count).map(String::as_str).collect();
        picked.sort();
        self.eliminate(&picked)
    }
}

/// Reusable state for drawing many faults from one base.
pub struct FaultGenerator<'a> {
    base: &'a Snapshot,
    /// `(layer, groups)` for every cuboid.
    cuboids: Vec<(usize, CuboidGroups)>,
}

impl<'a> FaultGenerator<'a> {
    pub fn new(base: &'a Snapshot) -> Self {
        let cuboids = cuboids_by_layer(base.schema())
            .into_iter()
            .map(|c| (c.layer(), base.cuboid_groups(&c)))
            .collect();
        Self { base, cuboids }
    }

    fn check_base(&self, params: &SimulationParams) -> Result<()> {
        params.validate()?;
        if params.cuboid_layer > self.base.schema().len() {
            return Err(Error::Simulation(format!(
                "layer {} requested but the base has {} attributes",
                params.cuboid_layer,
                self.base.schema().len()
            )));
        }
        let m = self.base.measure();
        match params.measure_kind {
            SimMeasure::Fundamental if m.kind != MeasureKind::Fundamental => {
                Err(Error::Simulation("fundamental simulation needs a fundamental base measure".into()))
            }
            SimMeasure::SuccessRate if m.kind != MeasureKind::Quotient => {
                Err(Error::Simulation("success-rate simulation needs a quotient base measure".into()))
            }
            _ => Ok(()),
        }
    }

    /// Steps 1-5: noise, root-cause choice, GRE injection, extra noise.
    pub fn simulate(&self, params: &SimulationParams, rng: &mut ChaCha8Rng) -> Result<SimulatedFault> {
        self.check_base(params)?;
        let base = self.base;
        let n = base.len();
        let ncol = base.columns().len();
        let truth: Vec<Vec<f64>> = (0..ncol).map(|c| base.column_real(c).to_vec()).collect();
        let ops: Vec<usize> = base
            .measure()
            .operands
            .iter()
            .map(|o| base.columns().iter().position(|c| c == o).expect("validated measure"))
            .collect();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let noisy = |rng: &mut ChaCha8Rng, x: f64, sigma: f64| -> f64 {
            if sigma == 0.0 {
                x
            } else {
                (x * (1.0 + sigma * unit.sample(rng))).max(0.0)
            }
        };

        // step 1
        let mut real = truth.clone();
        let mut rate = vec![0.0; n];
        let rate_of = |r: usize| {
            let t = truth[ops[1]][r];
            if t > 0.0 {
                (truth[ops[0]][r] / t).min(1.0)
            } else {
                0.0
            }
        };
        match params.measure_kind {
            SimMeasure::Fundamental => {
                for r in 0..n {
                    real[ops[0]][r] = noisy(rng, truth[ops[0]][r], params.base_noise_sigma);
                }
            }
            SimMeasure::SuccessRate => {
                for r in 0..n {
                    rate[r] = noisy(rng, rate_of(r), params.base_noise_sigma).min(1.0);
                }
            }
        }
        let noise_residuals: Vec<f64> = match params.measure_kind {
            SimMeasure::Fundamental => (0..n).map(|r| (real[ops[0]][r] - truth[ops[0]][r]).abs()).collect(),
            SimMeasure::SuccessRate => (0..n).map(|r| (rate[r] - rate_of(r)).abs()).collect(),
        };
        let noise_threshold = knee_threshold(&noise_residuals).value;

        // steps 2 and 3
        let layer: Vec<usize> = (0..self.cuboids.len()).filter(|&i| self.cuboids[i].0 == params.cuboid_layer).collect();
        let mut used = FixedBitSet::with_capacity(n);
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for _ in 0..params.n_element {
            let mut placed = false;
            for _ in 0..MAX_REDRAWS {
                let ci = *layer.choose(rng).expect("layer has cuboids");
                let cg = &self.cuboids[ci].1;
                let g = rng.gen_range(0..cg.groups.len());
                if chosen.contains(&(ci, g)) || cg.groups[g].leaves.iter().any(|&l| used.contains(l as usize)) {
                    continue;
                }
                for &l in &cg.groups[g].leaves {
                    used.insert(l as usize);
                }
                chosen.push((ci, g));
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::Simulation(format!("no free combination after {MAX_REDRAWS} redraws")));
            }
        }

        // step 4
        let magnitudes = draw_magnitudes(params, rng)?;
        let mut affected = Vec::new();
        for (&(ci, g), &d) in chosen.iter().zip(&magnitudes) {
            let scale = (1.0 - d) / (1.0 + d);
            for &l in &self.cuboids[ci].1.groups[g].leaves {
                let l = l as usize;
                affected.push(l);
                match params.measure_kind {
                    SimMeasure::Fundamental => {
                        // step 5 on top of the exact ripple
                        real[ops[0]][l] = noisy(rng, truth[ops[0]][l] * scale, params.leaf_noise_sigma);
                    }
                    SimMeasure::SuccessRate => {
                        rate[l] = noisy(rng, rate_of(l) * scale, params.leaf_noise_sigma).min(1.0);
                    }
                }
            }
        }
        affected.sort_unstable();

        match params.measure_kind {
            SimMeasure::Fundamental => {
                if params.integer_counts {
                    for v in &mut real[ops[0]] {
                        *v = v.round();
                    }
                }
            }
            SimMeasure::SuccessRate => {
                // totals around the base, successes from the (possibly faulty) rate
                for r in 0..n {
                    let t = truth[ops[1]][r];
                    let total = if t > 0.0 {
                        Poisson::new(t).map_err(|e| Error::Simulation(e.to_string()))?.sample(rng)
                    } else {
                        0.0
                    };
                    let succ = Binomial::new(total as u64, rate[r].clamp(0.0, 1.0))
                        .map_err(|e| Error::Simulation(e.to_string()))?
                        .sample(rng);
                    real[ops[1]][r] = total;
                    real[ops[0]][r] = succ as f64;
                }
            }
        }
        let snapshot = if params.integer_counts || base.measure().family != DistributionFamily::Poisson {
            base.with_values(real, truth)?
        } else {
            // unrounded counts cannot feed the Poisson family
            base.with_measure(base.measure().clone().with_family(DistributionFamily::None))?.with_values(real, truth)?
        };

        // group combinations by injected score
        let mut order: Vec<usize> = (0..chosen.len()).collect();
        order.sort_by(|&a, &b| magnitudes[a].total_cmp(&magnitudes[b]));
        let mut ground_truth: Vec<Vec<AttributeCombination>> = Vec::new();
        let mut group_mags: Vec<f64> = Vec::new();
        for i in order {
            let (ci, g) = chosen[i];
            let combo = base.group_combination(&self.cuboids[ci].1, g);
            match group_mags.last() {
                Some(&m) if m == magnitudes[i] => ground_truth.last_mut().expect("non-empty").push(combo),
                _ => {
                    ground_truth.push(vec![combo]);
                    group_mags.push(magnitudes[i]);
                }
            }
        }
        for set in &mut ground_truth {
            set.sort();
        }
        Ok(SimulatedFault {
            snapshot,
            ground_truth,
            magnitudes: group_mags,
            params: params.clone(),
            affected,
            noise_threshold,
            eliminated: Vec::new(),
            external: false,
        })
    }

    /// Step 6.
    pub fn is_valid(&self, fault: &SimulatedFault) -> bool {
        !self.ambiguous(fault) && !normal_part_abnormal(fault)
    }

    /// Some other observed combination covers nearly the same leaves as a
    /// root-cause combination.
    fn ambiguous(&self, fault: &SimulatedFault) -> bool {
        let snap = &fault.snapshot;
        for combo in fault.ground_truth.iter().flatten() {
            let Ok(leaves) = snap.leaves_under(combo) else { return true };
            let size = leaves.len();
            for (_, cg) in &self.cuboids {
                let mut hits: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
                for &l in &leaves {
                    *hits.entry(cg.leaf_group[l]).or_default() += 1;
                }
                for (g, inter) in hits {
                    let other = cg.groups[g as usize].leaves.len();
                    let jaccard = inter as f64 / (size + other - inter) as f64;
                    if jaccard >= AMBIGUITY_JACCARD && snap.group_combination(cg, g as usize) != *combo {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Normal leaves whose aggregate drifted beyond what leaf-level noise
/// explains: `|sum(v - f)| > tau * sqrt(|N|)` for fundamental measures and
/// `|v(N) - f(N)| > tau / sqrt(|N|)` for derived ones.
fn normal_part_abnormal(fault: &SimulatedFault) -> bool {
    let snap = &fault.snapshot;
    let mut is_affected = vec![false; snap.len()];
    for &l in &fault.affected {
        is_affected[l] = true;
    }
    let normal: Vec<usize> = (0..snap.len()).filter(|&l| !is_affected[l]).collect();
    if normal.is_empty() {
        return false;
    }
    let (v, f) = snap.operand_sums(normal.iter().copied());
    let Ok((vn, fn_)) = snap.compose(v, f) else { return false };
    let root_n = (normal.len() as f64).sqrt();
    let tau = fault.noise_threshold;
    if snap.measure().is_derived() {
        (vn - fn_).abs() > tau / root_n
    } else {
        (vn - fn_).abs() > tau * root_n
    }
}

fn draw_magnitudes(params: &SimulationParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let (lo, hi) = params.magnitude_range;
    for _ in 0..10_000 {
        let mags: Vec<f64> = (0..params.n_element)
            .map(|_| {
                // (lo, hi]
                let m = hi - rng.gen::<f64>() * (hi - lo);
                if params.allow_increase && rng.gen_bool(0.5) {
                    -m
                } else {
                    m
                }
            })
            .collect();
        let separated = mags
            .iter()
            .enumerate()
            .all(|(i, a)| mags[..i].iter().all(|b| (a - b).abs() >= params.min_magnitude_gap));
        if separated {
            return Ok(mags);
        }
    }
    Err(Error::Simulation("could not draw separated magnitudes".into()))
}

/// Simulate one fault (steps 1-5) from a fresh generator.
pub fn simulate_fault(base: &Snapshot, params: &SimulationParams, rng: &mut ChaCha8Rng) -> Result<SimulatedFault> {
    FaultGenerator::new(base).simulate(params, rng)
}

/// Step 6 validity: no ambiguous root-cause combination and a normal part
/// that is not abnormal as a whole.
pub fn validity_check(fault: &SimulatedFault) -> bool {
    FaultGenerator::new(&fault.snapshot).is_valid(fault)
}

/// Eliminate `count` random attributes, drawn from a generator seeded by the
/// fault's own seed so the choice is reproducible.
pub fn eliminate_for_exrc(fault: &SimulatedFault, count: usize) -> Result<SimulatedFault> {
    let mut rng = ChaCha8Rng::seed_from_u64(fault.params.seed ^ 0x5EED_E11A);
    fault.eliminate_random(count, &mut rng)
}

/// Seed of attempt `attempt` of cell `cell`.
pub fn attempt_seed(seed: u64, cell: usize, attempt: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut z = seed ^ (cell as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (attempt as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw valid faults until each cell holds `per_cell` of them.
///
/// Attempt `i` of cell `c` is seeded from `(params.seed, c, i)` and the first
/// `per_cell` valid attempts in index order are kept, so the output does not
/// depend on the execution policy.
pub fn generate_dataset(
    base: &Snapshot,
    cells: &[SimulationParams],
    per_cell: usize,
    execution: Execution,
) -> Result<Vec<SimulatedFault>> {
    let mut out = Vec::with_capacity(cells.len() * per_cell);
    let generator = FaultGenerator::new(base);
    for (ci, cell) in cells.iter().enumerate() {
        out.extend(generate_cell(&generator, cell, ci, per_cell, execution)?);
    }
    Ok(out)
}

/// Faults of a single cell; `cell_index` feeds the seed derivation.
pub fn generate_cell(
    generator: &FaultGenerator<'_>,
    params: &SimulationParams,
    cell_index: usize,
    per_cell: usize,
    execution: Execution,
) -> Result<Vec<SimulatedFault>> {
    if per_cell == 0 {
        return Err(Error::InvalidArgument("per_cell must be at least 1".into()));
    }
    generator.check_base(params)?;
    let mut accepted = Vec::with_capacity(per_cell);
    let mut attempts = 0usize;
    let mut failures: Vec<String> = Vec::new();
    while accepted.len() < per_cell {
        let batch = (per_cell - accepted.len()).max(8);
        let results = execution.map_range(attempts..attempts + batch, |i| {
            let seed = attempt_seed(params.seed, cell_index, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SimulationParams { seed, ..params.clone() };
            generator.simulate(&p, &mut rng).map(|f| {
                let ok = generator.is_valid(&f);
                (f, ok)
            })
        });
        attempts += batch;
        for r in results {
            match r {
                Ok((f, true)) if accepted.len() < per_cell => accepted.push(f),
                Ok(_) => {}
                Err(e) => {
                    if failures.len() < 3 {
                        failures.push(e.to_string());
                    }
                }
            }
        }
        if attempts >= 100 && (accepted.len() as f64) < MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::Simulation(format!(
                "cell ({}, {}): {} of {attempts} attempts valid; sample errors: {:?}",
                params.n_element,
                params.cuboid_layer,
                accepted.len(),
                failures
            )));
        }
    }
    Ok(accepted)
}

/// The 3x3 grid of `(n_element, cuboid_layer)` cells sharing `template`.
pub fn full_grid(template: &SimulationParams) -> Vec<SimulationParams> {
    let mut cells = Vec::new();
    for n in 1..=3 {
        for layer in 1..=3 {
            cells.push(SimulationParams { n_element: n, cuboid_layer: layer, ..template.clone() });
        }
    }
    cells
}
