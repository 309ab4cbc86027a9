//! On-disk layout of a simulated fault: one directory holding
//! `snapshot.csv`, `truth.json` and `params.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SimulatedFault, SimulationParams};
use crate::error::{Error, Result};
use crate::schema::{AttributeCombination, MeasureSpec};
use crate::snapshot::{parse_snapshot, Snapshot};

pub const FAULT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub version: u32,
    pub root_causes: Vec<Vec<AttributeCombination>>,
    pub external: bool,
    pub magnitudes: Vec<f64>,
    #[serde(default)]
    pub eliminated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    params: SimulationParams,
    measure: MeasureSpec,
}

/// A fault read back from disk.
#[derive(Debug, Clone)]
pub struct FaultRecord {
    pub snapshot: Snapshot,
    pub truth: GroundTruth,
    pub params: SimulationParams,
}

pub fn write_fault(dir: &Path, fault: &SimulatedFault) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("snapshot.csv"), fault.snapshot.to_csv())?;
    let truth = GroundTruth {
        version: FAULT_VERSION,
        root_causes: fault.ground_truth.clone(),
        external: fault.external,
        magnitudes: fault.magnitudes.clone(),
        eliminated: fault.eliminated.clone(),
    };
    fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    let params = ParamsFile {
        version: FAULT_VERSION,
        params: fault.params.clone(),
        measure: fault.snapshot.measure().clone(),
    };
    fs::write(dir.join("params.json"), serde_json::to_string_pretty(&params)?)?;
    Ok(())
}

pub fn read_fault(dir: &Path) -> Result<FaultRecord> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| Error::Io(format!("{}: {e}", dir.join(name).display())))
    };
    let params: ParamsFile = serde_json::from_str(&read("params.json")?)?;
    let truth: GroundTruth = serde_json::from_str(&read("truth.json")?)?;
    if params.version != FAULT_VERSION || truth.version != FAULT_VERSION {
        return Err(Error::Io(format!("{}: unsupported fault version", dir.display())));
    }
    let snapshot = parse_snapshot(&read("snapshot.csv")?, params.measure)?;
    Ok(FaultRecord { snapshot, truth, params: params.params })
}
