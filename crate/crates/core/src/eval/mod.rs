//! Metrics over tables: statistical similarity, association structure,
//! distance to closest record, downstream probes, and the imputation
//! benchmark with synthetic missingness.

mod association;
mod benchmark;
mod dcr;
mod missing;
mod probes;
mod report;
mod similarity;

pub use association::{association_matrix, corr_l2, correlation_ratio, theils_u};
pub use benchmark::{benchmark_imputation, split_40_30_30, BenchmarkReport, BenchmarkSettings, ImputationReport, Splits};
pub use dcr::{dcr, dcr_holdout_self, distance_space, nearest_distances, DcrSummary};
pub use missing::{
    inject_missing, realized_rate, MissingMechanism, MissingSpec, CALIBRATION_TOLERANCE, MAR_OBSERVED_FRACTION, MNAR_SLOPE,
};
pub use probes::{
    mean_squared_error, ml_efficiency, probe_score, weighted_f1, DesignEncoder, MlEfficiency, ProbeKind, MLP_EPOCHS, MLP_HIDDEN,
    PROBE_L2,
};
pub use report::{evaluate, MetricsReport};
pub use similarity::{column_jensen_shannon, column_wasserstein, jensen_shannon, wasserstein_1d, MinMax};
