//! Experiments and acceptance measurements built on the solver modules.

pub mod backend;
pub mod lipschitz;
pub mod regimes;
pub mod scaling;
pub mod symmetry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use backend::{backend_equivalence, BackendComparison, BackendConfig};
pub use lipschitz::{free_quotient_check, lipschitz_check, LipschitzConfig, LipschitzReport};
pub use regimes::{
    ballistic_experiment, effective_mass_experiment, BallisticConfig, BallisticReport, EffectiveMassConfig,
    EffectiveMassReport,
};
pub use scaling::{effective_dynamics_error, scaling_study, ErrorNorms, ScalingConfig, ScalingRow, SimulationReport};
pub use symmetry::{symmetry_suite, SymmetryConfig, SymmetrySuiteReport};

/// What produced a report: hashes and the discretization actually used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub potential_hash: String,
    pub cutoff: i32,
    /// Grid sizes and step lengths by name.
    pub discretization: BTreeMap<String, f64>,
}

impl Provenance {
    pub fn new(potential_hash: impl Into<String>, cutoff: i32) -> Self {
        Self { potential_hash: potential_hash.into(), cutoff, ..Default::default() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.discretization.insert(key.to_string(), value);
        self
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}
