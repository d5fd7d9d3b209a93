use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, EncodedTable};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::sigmoid;

/// Largest allowed gap between requested and realized missing rate for the
/// calibrated mechanisms.
pub const CALIBRATION_TOLERANCE: f64 = 0.01;
/// Share of feature columns MAR keeps fully observed (at least one).
pub const MAR_OBSERVED_FRACTION: f64 = 0.3;
/// Slope of the self-masking logistic in the standardized cell value.
pub const MNAR_SLOPE: f64 = 2.0;
const BISECTION_STEPS: usize = 200;
const INTERCEPT_BOUND: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissingMechanism {
    Mcar,
    Mar,
    Mnar,
}

impl MissingMechanism {
    pub fn label(self) -> &'static str {
        match self {
            MissingMechanism::Mcar => "MCAR",
            MissingMechanism::Mar => "MAR",
            MissingMechanism::Mnar => "MNAR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    pub mechanism: MissingMechanism,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MissingSpec {
    /// Rates lie in `[0, 1)`; zero injects nothing and serves as a control.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("missing rate {} outside [0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// Fraction of feature cells that are missing.
pub fn realized_rate(t: &EncodedTable) -> f64 {
    let cells = t.n_rows() * t.n_features();
    if cells == 0 {
        0.0
    } else {
        t.missing_count() as f64 / cells as f64
    }
}

/// Column-standardized feature values, row-major `n × k`; codes are used
/// as numbers for categorical features.
fn standardized(t: &EncodedTable) -> Vec<f64> {
    let (n, k) = (t.n_rows(), t.n_features());
    let features = t.schema.features();
    let mut z = vec![0.0; n * k];
    for (j, f) in features.iter().enumerate() {
        let col: Vec<f64> = (0..n)
            .map(|r| match f.kind {
                ColumnKind::Numerical => t.numeric_at(r, f.block),
                ColumnKind::Categorical => t.code_at(r, f.block) as f64,
            })
            .collect();
        let mean = crate::stats::mean(&col);
        let std = crate::stats::variance(&col).sqrt();
        for r in 0..n {
            z[r * k + j] = if std > 0.0 { (col[r] - mean) / std } else { 0.0 };
        }
    }
    z
}

/// Finds the intercept whose mask `u < sigmoid(logit + b)` over the
/// candidate cells hits `target` masked cells, and returns that mask.
fn calibrate(logits: &[f64], uniforms: &[f64], candidates: &[bool], target: f64, total: f64) -> Result<Vec<bool>> {
    let count = |b: f64| {
        logits
            .iter()
            .zip(uniforms)
            .zip(candidates)
            .filter(|((l, u), c)| **c && **u < sigmoid(**l + b))
            .count() as f64
    };
    let (mut lo, mut hi) = (-INTERCEPT_BOUND, INTERCEPT_BOUND);
    if count(hi) < target - CALIBRATION_TOLERANCE * total {
        return Err(Error::Calibration(format!(
            "rate {:.3} is unreachable; at most {:.3} of the cells can be masked",
            target / total,
            count(hi) / total
        )));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = if (count(lo) - target).abs() < (count(hi) - target).abs() { lo } else { hi };
    let realized = count(b) / total;
    if (realized - target / total).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "realized rate {realized:.4} misses the requested {:.4}",
            target / total
        )));
    }
    Ok(logits
        .iter()
        .zip(uniforms)
        .zip(candidates)
        .map(|((l, u), c)| *c && *u < sigmoid(l + b))
        .collect())
}

/// Copies a complete table and marks feature cells missing according to
/// `spec`. The target is never masked.
pub fn inject_missing(table: &EncodedTable, spec: &MissingSpec) -> Result<EncodedTable> {
    spec.validate()?;
    if table.missing_count() > 0 || table.target_missing.iter().any(|m| *m) {
        return Err(Error::Request("missingness can only be injected into a complete table".into()));
    }
    let mut out = table.clone();
    let (n, k) = (table.n_rows(), table.n_features());
    if spec.rate == 0.0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let mut rng = substream(spec.seed, &[spec.mechanism as u64]);
    let uniforms: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
    let total = (n * k) as f64;
    let target = spec.rate * total;
    let mask = match spec.mechanism {
        MissingMechanism::Mcar => uniforms.iter().map(|u| *u < spec.rate).collect(),
        MissingMechanism::Mar => {
            if k < 2 {
                return Err(Error::Calibration("MAR needs at least two feature columns".into()));
            }
            let n_observed = ((MAR_OBSERVED_FRACTION * k as f64).round() as usize).clamp(1, k - 1);
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let observed = &order[..n_observed];
            let z = standardized(table);
            let scale = 1.0 / (n_observed as f64).sqrt();
            let weights: Vec<f64> = (0..k * n_observed).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
            let mut logits = vec![0.0; n * k];
            let mut candidates = vec![false; n * k];
            for r in 0..n {
                for j in 0..k {
                    if observed.contains(&j) {
                        continue;
                    }
                    candidates[r * k + j] = true;
                    logits[r * k + j] = observed
                        .iter()
                        .enumerate()
                        .map(|(i, &o)| weights[j * n_observed + i] * z[r * k + o])
                        .sum();
                }
            }
            calibrate(&logits, &uniforms, &candidates, target, total)?
        }
        MissingMechanism::Mnar => {
            let logits: Vec<f64> = standardized(table).iter().map(|z| MNAR_SLOPE * z).collect();
            calibrate(&logits, &uniforms, &vec![true; n * k], target, total)?
        }
    };
    for (i, m) in mask.iter().enumerate() {
        if *m {
            out.set_missing(i / k, i % k);
        }
    }
    Ok(out)
}
