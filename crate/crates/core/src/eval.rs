//! Scoring localization output against simulated ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::localize::{localize, LocalizeConfig, REPORT_VERSION};
use crate::schema::AttributeCombination;
use crate::simulate::read_fault;
use crate::snapshot::Snapshot;

/// One localized fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub predicted: Vec<AttributeCombination>,
    pub truth: Vec<AttributeCombination>,
    pub predicted_external: bool,
    pub truth_external: bool,
    pub elapsed: f64,
}

impl EvalCase {
    /// `(tp, fp, fn)` by exact binding equality; duplicates count once.
    pub fn counts(&self) -> (usize, usize, usize) {
        let p = dedup(&self.predicted);
        let t = dedup(&self.truth);
        let tp = p.iter().filter(|e| t.contains(e)).count();
        (tp, p.len() - tp, t.len() - tp)
    }

    pub fn f1(&self) -> f64 {
        f1_of(self.counts())
    }
}

fn dedup(set: &[AttributeCombination]) -> Vec<&AttributeCombination> {
    let mut v: Vec<&AttributeCombination> = set.iter().collect();
    v.sort();
    v.dedup();
    v
}

fn f1_of((tp, fp, fn_): (usize, usize, usize)) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Micro F1: counts summed over all cases. 1 when every set is empty.
pub fn f1_score(cases: &[EvalCase]) -> f64 {
    let mut total = (0, 0, 0);
    for c in cases {
        let (tp, fp, fn_) = c.counts();
        total = (total.0 + tp, total.1 + fp, total.2 + fn_);
    }
    f1_of(total)
}

/// Mean of the per-case F1 scores.
pub fn macro_f1(cases: &[EvalCase]) -> Option<f64> {
    if cases.is_empty() {
        return None;
    }
    Some(cases.iter().map(EvalCase::f1).sum::<f64>() / cases.len() as f64)
}

/// Binary F1 over the external flags. 1 when nothing is external on
/// either side, 0 when there are positives but none agree.
pub fn exrc_f1(cases: &[EvalCase]) -> f64 {
    let tp = cases.iter().filter(|c| c.predicted_external && c.truth_external).count();
    let fp = cases.iter().filter(|c| c.predicted_external && !c.truth_external).count();
    let fn_ = cases.iter().filter(|c| !c.predicted_external && c.truth_external).count();
    f1_of((tp, fp, fn_))
}

/// `|sum(v - f)| / sum(f)` over all leaves.
pub fn anomaly_magnitude(snapshot: &Snapshot) -> Result<f64> {
    let f: f64 = snapshot.leaf_forecast().iter().sum();
    if !(f > 0.0) {
        return Err(Error::Undefined("total forecast is zero".into()));
    }
    let v: f64 = snapshot.leaf_real().iter().sum();
    Ok((v - f).abs() / f)
}

/// Mean relative leaf residual `sum|v - f| / sum f`.
pub fn relative_residual(snapshot: &Snapshot) -> Result<f64> {
    let f: f64 = snapshot.leaf_forecast().iter().sum();
    if !(f > 0.0) {
        return Err(Error::Undefined("total forecast is zero".into()));
    }
    let r: f64 = snapshot.leaf_real().iter().zip(snapshot.leaf_forecast()).map(|(v, f)| (v - f).abs()).sum();
    Ok(r / f)
}

/// Localize one snapshot and score it.
pub fn evaluate_case(
    snapshot: &Snapshot,
    truth: Vec<AttributeCombination>,
    truth_external: bool,
    cfg: &LocalizeConfig,
) -> Result<EvalCase> {
    let start = Instant::now();
    let report = localize(snapshot, cfg)?;
    Ok(EvalCase {
        predicted: report.root_causes,
        truth,
        predicted_external: report.external_root_cause,
        truth_external,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub n_element: usize,
    pub cuboid_layer: usize,
    pub cases: usize,
    pub f1: f64,
    pub macro_f1: Option<f64>,
    pub exrc_f1: Option<f64>,
    pub mean_elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub per_setting: Vec<SettingReport>,
    /// `None` when no case was scored.
    pub overall_f1: Option<f64>,
    /// Present when some fault carries elimination metadata.
    pub exrc_f1: Option<f64>,
    pub mean_elapsed: Option<f64>,
    pub cases: usize,
    /// Fault directories that could not be read or localized, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Aggregate scored cases keyed by `(n_element, cuboid_layer)`. `with_exrc`
/// marks cases whose external flag is meaningful.
pub fn summarize(cases: &[((usize, usize), EvalCase, bool)], skipped: Vec<(String, String)>) -> BenchmarkReport {
    let mut by_cell: BTreeMap<(usize, usize), Vec<(EvalCase, bool)>> = BTreeMap::new();
    for (cell, case, ex) in cases {
        by_cell.entry(*cell).or_default().push((case.clone(), *ex));
    }
    let exrc_of = |items: &[(EvalCase, bool)]| -> Option<f64> {
        let ex: Vec<EvalCase> = items.iter().filter(|(_, e)| *e).map(|(c, _)| c.clone()).collect();
        (!ex.is_empty()).then(|| exrc_f1(&ex))
    };
    let per_setting = by_cell
        .iter()
        .map(|(&(n, l), items)| {
            let cs: Vec<EvalCase> = items.iter().map(|(c, _)| c.clone()).collect();
            SettingReport {
                n_element: n,
                cuboid_layer: l,
                cases: cs.len(),
                f1: f1_score(&cs),
                macro_f1: macro_f1(&cs),
                exrc_f1: exrc_of(items),
                mean_elapsed: cs.iter().map(|c| c.elapsed).sum::<f64>() / cs.len() as f64,
            }
        })
        .collect();
    let all: Vec<(EvalCase, bool)> = cases.iter().map(|(_, c, e)| (c.clone(), *e)).collect();
    let plain: Vec<EvalCase> = all.iter().map(|(c, _)| c.clone()).collect();
    BenchmarkReport {
        version: REPORT_VERSION,
        per_setting,
        overall_f1: (!plain.is_empty()).then(|| f1_score(&plain)),
        exrc_f1: exrc_of(&all),
        mean_elapsed: (!plain.is_empty()).then(|| plain.iter().map(|c| c.elapsed).sum::<f64>() / plain.len() as f64),
        cases: plain.len(),
        skipped,
    }
}

/// Fault directories below `dir`: every directory holding a `truth.json`.
pub fn fault_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join("truth.json").exists() {
            out.push(d);
            continue;
        }
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Localize every fault under `dataset` and score it per setting.
///
/// `workers` caps the number of faults localized at once; `None` uses every
/// core. Faults run with a sequential inner loop either way.
pub fn run_benchmark(dataset: &Path, cfg: &LocalizeConfig, workers: Option<usize>) -> Result<BenchmarkReport> {
    if !dataset.is_dir() {
        return Err(Error::Io(format!("{} is not a directory", dataset.display())));
    }
    let dirs = fault_dirs(dataset)?;
    let inner = LocalizeConfig { execution: Execution::Sequential, ..cfg.clone() };
    let run = |d: &PathBuf| -> std::result::Result<((usize, usize), EvalCase, bool), String> {
        let rec = read_fault(d).map_err(|e| e.to_string())?;
        let truth: Vec<AttributeCombination> = rec.truth.root_causes.iter().flatten().cloned().collect();
        let case = evaluate_case(&rec.snapshot, truth, rec.truth.external, &inner).map_err(|e| e.to_string())?;
        Ok((rec.params.cell(), case, !rec.truth.eliminated.is_empty()))
    };
    let results = with_workers(workers, cfg.execution, || cfg.execution.map(&dirs, run))?;
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for (d, r) in dirs.iter().zip(results) {
        match r {
            Ok(c) => cases.push(c),
            Err(e) => skipped.push((d.display().to_string(), e)),
        }
    }
    Ok(summarize(&cases, skipped))
}

/// Run `f` on a pool of `workers` threads when parallel execution is enabled.
pub fn with_workers<R: Send>(workers: Option<usize>, execution: Execution, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == Some(0) {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    if let (Some(n), true) = (workers, execution.is_parallel()) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        return Ok(pool.install(f));
    }
    let _ = execution;
    Ok(f())
}
