use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Preprocessor, RawTable};
use crate::error::{Error, Result};
use crate::eval::association::{association_matrix, corr_l2};
use crate::eval::dcr::{dcr, DcrSummary};
use crate::eval::probes::{ml_efficiency, MlEfficiency, ProbeKind};
use crate::eval::similarity::{average, column_jensen_shannon, column_wasserstein};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows_real: usize,
    pub rows_synthetic: usize,
    /// Present when a real test split was supplied.
    pub ml_efficiency: Option<MlEfficiency>,
    pub avg_wasserstein: f64,
    pub wasserstein: BTreeMap<String, f64>,
    pub avg_jensen_shannon: f64,
    pub jensen_shannon: BTreeMap<String, f64>,
    pub corr_l2: f64,
    pub dcr: DcrSummary,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Compares a synthetic table with the real one it imitates. Encodings
/// for the distance metrics are fit on `real`.
pub fn evaluate(real: &RawTable, synth: &RawTable, test: Option<&RawTable>, probe: ProbeKind, seed: u64) -> Result<MetricsReport> {
    if real.schema != synth.schema {
        return Err(Error::SchemaMismatch("real and synthetic tables have different schemas".into()));
    }
    if real.missing_count() > 0 || synth.missing_count() > 0 {
        return Err(Error::Request("evaluation tables must be complete".into()));
    }
    let wasserstein = column_wasserstein(real, synth)?;
    let jensen_shannon = column_jensen_shannon(real, synth)?;
    let corr = corr_l2(&association_matrix(real)?, &association_matrix(synth)?)?;
    let prep = Preprocessor::fit(real, &real.schema)?;
    let distances = dcr(&prep.encode(synth)?, &prep.encode(real)?)?;
    let ml = test.map(|t| ml_efficiency(real, synth, t, probe, seed)).transpose()?;
    Ok(MetricsReport {
        rows_real: real.n_rows(),
        rows_synthetic: synth.n_rows(),
        ml_efficiency: ml,
        avg_wasserstein: average(&wasserstein),
        wasserstein: wasserstein.into_iter().collect(),
        avg_jensen_shannon: average(&jensen_shannon),
        jensen_shannon: jensen_shannon.into_iter().collect(),
        corr_l2: corr,
        dcr: DcrSummary::of(&distances)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::mixed_classification;

    #[test]
    fn self_comparison_is_zero() {
        let real = mixed_classification(300, 1);
        let test = mixed_classification(200, 2);
        let r = evaluate(&real, &real, Some(&test), ProbeKind::Linear, 0).unwrap();
        assert_eq!(r.avg_wasserstein, 0.0);
        assert_eq!(r.avg_jensen_shannon, 0.0);
        assert_eq!(r.corr_l2, 0.0);
        assert_eq!(r.dcr.min, 0.0);
        assert_eq!(r.ml_efficiency.as_ref().unwrap().gap, 0.0);
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.wasserstein.len(), 2);
    }

    #[test]
    fn different_samples_are_close_but_not_identical() {
        let real = mixed_classification(1000, 3);
        let other = mixed_classification(1000, 4);
        let r = evaluate(&real, &other, None, ProbeKind::Linear, 0).unwrap();
        assert!(r.avg_wasserstein > 0.0 && r.avg_wasserstein < 0.05);
        assert!(r.avg_jensen_shannon < 0.05);
        assert!(r.corr_l2 < 0.05);
        assert!(r.dcr.min > 0.0);
        assert!(r.ml_efficiency.is_none());
    }
}
