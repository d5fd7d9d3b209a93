use std::collections::BTreeMap;

use crate::data::{ColumnKind, RawTable};
use crate::error::{Error, Result};

/// Empirical 1-Wasserstein distance: the integral of the absolute gap
/// between the two quantile functions, evaluated on the merged grid of
/// their breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Request("Wasserstein distance needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Square root of the base-2 Jensen–Shannon divergence between two count
/// vectors over the same categories.
pub fn jensen_shannon(p_counts: &[f64], q_counts: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p_counts.iter().sum(), q_counts.iter().sum());
    let mut div = 0.0;
    for (p, q) in p_counts.iter().zip(q_counts) {
        let (p, q) = (p / sp, q / sq);
        let m = 0.5 * (p + q);
        if p > 0.0 {
            div += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            div += 0.5 * q * (q / m).log2();
        }
    }
    div.clamp(0.0, 1.0).sqrt()
}

/// Min-max scaling fit on one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }
}

pub(crate) fn numeric_column(t: &RawTable, c: usize) -> Vec<f64> {
    t.column(c).filter_map(|cell| cell.as_number()).collect()
}

pub(crate) fn label_column(t: &RawTable, c: usize) -> Vec<String> {
    t.column(c).filter(|cell| !cell.is_missing()).map(|cell| cell.text()).collect()
}

fn check_same_schema(real: &RawTable, synth: &RawTable) -> Result<()> {
    if real.schema != synth.schema {
        return Err(Error::SchemaMismatch("compared tables have different schemas".into()));
    }
    Ok(())
}

/// Per numeric column (target included) Wasserstein distance after
/// min-max scaling fit on `real`.
pub fn column_wasserstein(real: &RawTable, synth: &RawTable) -> Result<Vec<(String, f64)>> {
    check_same_schema(real, synth)?;
    let mut out = Vec::new();
    for (c, spec) in real.schema.columns.iter().enumerate() {
        if spec.kind != ColumnKind::Numerical {
            continue;
        }
        let r = numeric_column(real, c);
        let s = numeric_column(synth, c);
        let scale = MinMax::fit(&r);
        let rs: Vec<f64> = r.iter().map(|v| scale.apply(*v)).collect();
        let ss: Vec<f64> = s.iter().map(|v| scale.apply(*v)).collect();
        out.push((spec.name.clone(), wasserstein_1d(&rs, &ss)?));
    }
    Ok(out)
}

/// Per categorical column (target included) Jensen–Shannon distance over
/// the union of observed labels.
pub fn column_jensen_shannon(real: &RawTable, synth: &RawTable) -> Result<Vec<(String, f64)>> {
    check_same_schema(real, synth)?;
    let mut out = Vec::new();
    for (c, spec) in real.schema.columns.iter().enumerate() {
        if spec.kind != ColumnKind::Categorical {
            continue;
        }
        let mut counts: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for l in label_column(real, c) {
            counts.entry(l).or_default().0 += 1.0;
        }
        for l in label_column(synth, c) {
            counts.entry(l).or_default().1 += 1.0;
        }
        let (p, q): (Vec<f64>, Vec<f64>) = counts.values().copied().unzip();
        if p.iter().sum::<f64>() == 0.0 || q.iter().sum::<f64>() == 0.0 {
            return Err(Error::Request(format!("column `{}` has no observed labels", spec.name)));
        }
        out.push((spec.name.clone(), jensen_shannon(&p, &q)));
    }
    Ok(out)
}

pub(crate) fn average(values: &[(String, f64)]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64
    }
}
