//! Root-cause localization for multi-dimensional KPI snapshots.
//!
//! The pipeline filters abnormal leaves with a knee threshold on forecast
//! residuals, clusters them by deviation score, and searches each cluster's
//! cuboids top-down for the attribute combinations whose generalized ripple
//! effect best explains the cluster. A GRE-based fault simulator and an F1
//! harness are included for evaluation.

pub mod cluster;
pub mod error;
pub mod eval;
pub mod exec;
pub mod forecast;
pub mod gre;
pub mod localize;
pub mod schema;
pub mod simulate;
pub mod snapshot;

pub use error::{Error, Result};
pub use exec::Execution;
pub use localize::{localize, LocalizationReport, LocalizeConfig, RootCauseCandidate};
pub use schema::{AttributeCombination, AttributeSchema, Cuboid, DistributionFamily, MeasureKind, MeasureSpec};
pub use snapshot::{parse_snapshot, Snapshot};
