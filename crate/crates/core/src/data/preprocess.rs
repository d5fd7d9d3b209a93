//! Reversible preprocessing: a rank-based Gaussian quantile map for numerical
//! columns and a lexicographic ordinal dictionary for categorical ones.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::encoded::{EncodedTable, TargetBlock};
use crate::data::schema::{ColumnKind, TableSchema};
use crate::data::table::{Cell, RawTable};
use crate::error::{Error, Result};

/// Standard-normal inverse CDF.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Monotone map from fitted values to standard-normal scores.
///
/// The r-th of n sorted values maps to `Φ⁻¹((r − 0.5)/n)`; tied values share
/// their mean rank. Between fitted points the map interpolates linearly and
/// outside the fitted range it clips.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMap {
    fit_values: Vec<f64>,
    knots: Vec<f64>,
    scores: Vec<f64>,
}

impl QuantileMap {
    pub fn fit(column: &str, values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Fit {
                column: column.into(),
                message: format!("need at least 2 values, found {}", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Fit {
                column: column.into(),
                message: format!("non-finite value {v}"),
            });
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut knots = Vec::new();
        let mut scores = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // 1-based ranks i+1..=j+1 share their mean.
            let mean_rank = (i + j) as f64 / 2.0 + 1.0;
            knots.push(sorted[i]);
            scores.push(normal_quantile((mean_rank - 0.5) / n));
            i = j + 1;
        }
        if knots.len() < 2 {
            return Err(Error::Fit {
                column: column.into(),
                message: "constant column has a degenerate quantile map".into(),
            });
        }
        Ok(Self {
            fit_values: sorted,
            knots,
            scores,
        })
    }

    pub fn fit_values(&self) -> &[f64] {
        &self.fit_values
    }

    pub fn min(&self) -> f64 {
        self.knots[0]
    }

    pub fn max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn forward(&self, x: f64) -> f64 {
        interpolate(&self.knots, &self.scores, x)
    }

    pub fn inverse(&self, z: f64) -> f64 {
        interpolate(&self.scores, &self.knots, z)
    }
}

/// Piecewise-linear interpolation through strictly increasing `xs`, clipped
/// at both ends. Exact at the knots.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    match xs.binary_search_by(|k| k.total_cmp(&x)) {
        Ok(i) => ys[i],
        Err(i) => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            let (y0, y1) = (ys[i - 1], ys[i]);
            let w = (x - x0) / (x1 - x0);
            y0 + w * (y1 - y0)
        }
    }
}

/// Bijective category ↔ code dictionary, codes in lexicographic label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryDict {
    labels: Vec<String>,
    codes: HashMap<String, usize>,
}

impl CategoryDict {
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let labels: Vec<String> = labels
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, codes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn code(&self, label: &str) -> Option<usize> {
        self.codes.get(label).copied()
    }

    pub fn label(&self, code: usize) -> Option<&str> {
        self.labels.get(code).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnTransform {
    Quantile(QuantileMap),
    Ordinal(CategoryDict),
}

/// Fitted per-column transforms. Immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    schema: TableSchema,
    columns: Vec<ColumnTransform>,
}

impl Preprocessor {
    pub fn fit(raw: &RawTable, schema: &TableSchema) -> Result<Self> {
        schema.validate()?;
        if raw.schema.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "table has {} columns, schema {}",
                raw.schema.len(),
                schema.len()
            )));
        }
        let mut columns = Vec::with_capacity(schema.len());
        for (ci, spec) in schema.columns.iter().enumerate() {
            let present: Vec<&Cell> = raw.column(ci).filter(|c| !c.is_missing()).collect();
            match spec.kind {
                ColumnKind::Numerical => {
                    let values = present
                        .iter()
                        .map(|c| {
                            c.as_number().ok_or_else(|| Error::Fit {
                                column: spec.name.clone(),
                                message: format!("`{}` is not a number", c.text()),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    columns.push(ColumnTransform::Quantile(QuantileMap::fit(
                        &spec.name, &values,
                    )?));
                }
                ColumnKind::Categorical => {
                    if present.len() < 2 {
                        return Err(Error::Fit {
                            column: spec.name.clone(),
                            message: "need at least 2 values".into(),
                        });
                    }
                    let dict = CategoryDict::from_labels(present.iter().map(|c| c.text()));
                    if Some(dict.len()) != spec.class_count {
                        return Err(Error::SchemaMismatch(format!(
                            "column `{}` declares {} classes but the data has {}",
                            spec.name,
                            spec.classes(),
                            dict.len()
                        )));
                    }
                    columns.push(ColumnTransform::Ordinal(dict));
                }
            }
        }
        Ok(Self {
            schema: schema.clone(),
            columns,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn column(&self, index: usize) -> &ColumnTransform {
        &self.columns[index]
    }

    pub fn dict(&self, column: usize) -> Option<&CategoryDict> {
        match &self.columns[column] {
            ColumnTransform::Ordinal(d) => Some(d),
            _ => None,
        }
    }

    pub fn quantile(&self, column: usize) -> Option<&QuantileMap> {
        match &self.columns[column] {
            ColumnTransform::Quantile(q) => Some(q),
            _ => None,
        }
    }

    fn check_schema(&self, schema: &TableSchema) -> Result<()> {
        if *schema != self.schema {
            return Err(Error::SchemaMismatch(
                "table schema differs from the fitted schema".into(),
            ));
        }
        Ok(())
    }

    /// Encodes one cell of column `ci`; `None` for missing cells.
    pub fn encode_cell(&self, ci: usize, cell: &Cell) -> Result<Option<f64>> {
        if cell.is_missing() {
            return Ok(None);
        }
        let name = &self.schema.columns[ci].name;
        match &self.columns[ci] {
            ColumnTransform::Quantile(q) => {
                let v = cell.as_number().ok_or_else(|| Error::Parse {
                    row: 0,
                    message: format!("column `{name}` expects a number, found `{}`", cell.text()),
                })?;
                Ok(Some(q.forward(v)))
            }
            ColumnTransform::Ordinal(d) => {
                let label = cell.text();
                d.code(&label)
                    .map(|c| Some(c as f64))
                    .ok_or_else(|| Error::UnseenCategory {
                        column: name.clone(),
                        label,
                    })
            }
        }
    }

    pub fn encode(&self, raw: &RawTable) -> Result<EncodedTable> {
        self.check_schema(&raw.schema)?;
        let features = self.schema.features();
        let ti = self.schema.target_index();
        let n = raw.n_rows();
        let mut enc = EncodedTable::empty(self.schema.clone(), n);
        for (r, row) in raw.rows.iter().enumerate() {
            for (j, f) in features.iter().enumerate() {
                let value = self.encode_cell(f.column, &row[f.column])?;
                match (f.kind, value) {
                    (_, None) => enc.set_missing(r, j),
                    (ColumnKind::Numerical, Some(v)) => enc.set_numeric(r, f.block, v),
                    (ColumnKind::Categorical, Some(c)) => enc.set_code(r, f.block, c as usize),
                }
            }
            match self.encode_cell(ti, &row[ti])? {
                None => enc.target_missing[r] = true,
                Some(v) => match &mut enc.target {
                    TargetBlock::Real(t) => t[r] = v,
                    TargetBlock::Codes(t) => t[r] = v as usize,
                },
            }
        }
        Ok(enc)
    }

    /// Decodes a single encoded value of column `ci`.
    pub fn decode_value(&self, ci: usize, value: f64) -> Result<Cell> {
        let name = &self.schema.columns[ci].name;
        match &self.columns[ci] {
            ColumnTransform::Quantile(q) => {
                if !value.is_finite() {
                    return Err(Error::Decode {
                        column: name.clone(),
                        message: format!("non-finite value {value}"),
                    });
                }
                Ok(Cell::Number(q.inverse(value)))
            }
            ColumnTransform::Ordinal(d) => {
                let code = value as usize;
                d.label(code)
                    .filter(|_| value >= 0.0 && value.fract() == 0.0)
                    .map(|l| Cell::Label(l.to_string()))
                    .ok_or_else(|| Error::Decode {
                        column: name.clone(),
                        message: format!("code {value} outside [0, {})", d.len()),
                    })
            }
        }
    }

    pub fn decode(&self, enc: &EncodedTable) -> Result<RawTable> {
        self.check_schema(&enc.schema)?;
        let features = self.schema.features();
        let ti = self.schema.target_index();
        let mut rows = Vec::with_capacity(enc.n_rows());
        for r in 0..enc.n_rows() {
            let mut row = vec![Cell::Missing; self.schema.len()];
            for (j, f) in features.iter().enumerate() {
                if enc.is_missing(r, j) {
                    continue;
                }
                let v = match f.kind {
                    ColumnKind::Numerical => enc.numeric_at(r, f.block),
                    ColumnKind::Categorical => enc.code_at(r, f.block) as f64,
                };
                row[f.column] = self.decode_value(f.column, v)?;
            }
            if !enc.target_missing[r] {
                let v = match &enc.target {
                    TargetBlock::Real(t) => t[r],
                    TargetBlock::Codes(t) => t[r] as f64,
                };
                row[ti] = self.decode_value(ti, v)?;
            }
            rows.push(row);
        }
        RawTable::new(self.schema.clone(), rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PreprocessorDoc::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PreprocessorDoc = serde_json::from_str(text)?;
        doc.into_preprocessor()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

/// Persisted form: sorted fit values and category dictionaries. serde_json
/// writes doubles in shortest round-trip form, so reloading is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PreprocessorDoc {
    schema: TableSchema,
    columns: Vec<ColumnDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "lowercase", deny_unknown_fields)]
enum ColumnDoc {
    Quantile { fit_values: Vec<f64> },
    Ordinal { labels: Vec<String> },
}

impl From<&Preprocessor> for PreprocessorDoc {
    fn from(p: &Preprocessor) -> Self {
        Self {
            schema: p.schema.clone(),
            columns: p
                .columns
                .iter()
                .map(|c| match c {
                    ColumnTransform::Quantile(q) => ColumnDoc::Quantile {
                        fit_values: q.fit_values.clone(),
                    },
                    ColumnTransform::Ordinal(d) => ColumnDoc::Ordinal {
                        labels: d.labels.clone(),
                    },
                })
                .collect(),
        }
    }
}

impl PreprocessorDoc {
    fn into_preprocessor(self) -> Result<Preprocessor> {
        self.schema.validate()?;
        if self.columns.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(
                "preprocessor column count differs from its schema".into(),
            ));
        }
        let columns = self
            .columns
            .into_iter()
            .zip(&self.schema.columns)
            .map(|(c, spec)| match (c, spec.kind) {
                (ColumnDoc::Quantile { fit_values }, ColumnKind::Numerical) => {
                    QuantileMap::fit(&spec.name, &fit_values).map(ColumnTransform::Quantile)
                }
                (ColumnDoc::Ordinal { labels }, ColumnKind::Categorical) => {
                    let dict = CategoryDict::from_labels(labels);
                    if Some(dict.len()) != spec.class_count {
                        return Err(Error::SchemaMismatch(format!(
                            "dictionary size differs from class_count for `{}`",
                            spec.name
                        )));
                    }
                    Ok(ColumnTransform::Ordinal(dict))
                }
                _ => Err(Error::SchemaMismatch(format!(
                    "transform kind does not match column `{}`",
                    spec.name
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Preprocessor {
            schema: self.schema,
            columns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::ColumnSpec;
    use proptest::prelude::*;

    /// Standard-normal CDF from its Taylor series; independent of statrs.
    fn phi_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for k in 1..200 {
            term *= -x * x / 2.0 / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        0.5 + sum / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn phi_inverse_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi_series(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn table(values: &[f64], labels: &[&str]) -> RawTable {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("x"),
            ColumnSpec::categorical(
                "c",
                labels.iter().collect::<BTreeSet<_>>().len(),
            )
            .as_target(),
        ])
        .unwrap();
        let rows = values
            .iter()
            .zip(labels.iter().cycle())
            .map(|(v, l)| vec![Cell::Number(*v), Cell::Label(l.to_string())])
            .collect();
        RawTable::new(schema, rows).unwrap()
    }

    #[test]
    fn median_maps_to_zero_and_back() {
        let q = QuantileMap::fit("x", &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(q.forward(2.0), 0.0);
        assert_eq!(q.inverse(0.0), 2.0);
    }

    #[test]
    fn top_of_twenty_matches_oracle() {
        let values: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let q = QuantileMap::fit("x", &values).unwrap();
        let oracle = phi_inverse_by_bisection(0.975);
        assert!((oracle - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((q.forward(19.0) - oracle).abs() < 1e-9);
    }

    #[test]
    fn ties_share_mean_rank() {
        let q = QuantileMap::fit("x", &[1.0, 2.0, 2.0, 3.0]).unwrap();
        // ranks 2 and 3 average to 2.5, the middle of 4 values
        assert!(q.forward(2.0).abs() < 1e-15);
        assert_eq!(q.knots.len(), 3);
    }

    #[test]
    fn clipping_outside_fitted_range() {
        let q = QuantileMap::fit("x", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(q.forward(-100.0), q.forward(1.0));
        assert_eq!(q.inverse(50.0), 3.0);
        assert_eq!(q.inverse(-50.0), 1.0);
        let mid = q.forward(1.5);
        assert!(mid > q.forward(1.0) && mid < q.forward(2.0));
    }

    #[test]
    fn constant_column_is_rejected() {
        assert!(matches!(
            QuantileMap::fit("x", &[4.0, 4.0, 4.0]),
            Err(Error::Fit { .. })
        ));
    }

    #[test]
    fn lexicographic_codes() {
        let d = CategoryDict::from_labels(["x", "a", "m"].map(String::from));
        assert_eq!(d.code("a"), Some(0));
        assert_eq!(d.code("m"), Some(1));
        assert_eq!(d.code("x"), Some(2));
        assert_eq!(d.label(2), Some("x"));
    }

    #[test]
    fn encoded_fit_data_is_centered() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 * 0.37).collect();
        let raw = table(&values, &["a", "b"]);
        let prep = Preprocessor::fit(&raw, &raw.schema).unwrap();
        let enc = prep.encode(&raw).unwrap();
        let mean: f64 = (0..enc.n_rows()).map(|r| enc.numeric_at(r, 0)).sum::<f64>()
            / enc.n_rows() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn unseen_label_and_bad_code() {
        let raw = table(&[1.0, 2.0, 3.0, 4.0], &["a", "b"]);
        let prep = Preprocessor::fit(&raw, &raw.schema).unwrap();
        let mut other = raw.clone();
        other.rows[0][1] = Cell::Label("zzz".into());
        assert!(matches!(
            prep.encode(&other),
            Err(Error::UnseenCategory { .. })
        ));
        assert!(matches!(prep.decode_value(1, 5.0), Err(Error::Decode { .. })));
        assert_eq!(prep.decode_value(1, 1.0).unwrap(), Cell::Label("b".into()));
    }

    #[test]
    fn missing_mask_conservation() {
        let mut raw = table(&[1.0, 2.0, 3.0, 4.0, 5.0], &["a", "b"]);
        raw.rows[1][0] = Cell::Missing;
        raw.rows[3][0] = Cell::Missing;
        let prep = Preprocessor::fit(&raw, &raw.schema).unwrap();
        let enc = prep.encode(&raw).unwrap();
        let mask: Vec<bool> = (0..5).map(|r| enc.is_missing(r, 0)).collect();
        assert_eq!(mask, vec![false, true, false, true, false]);
        let back = prep.decode(&enc).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn json_persistence_is_bit_exact() {
        let values = [0.1, 0.2 + 0.1, 1e-300, 7.25, 3.0_f64.sqrt()];
        let raw = table(&values, &["p", "q"]);
        let prep = Preprocessor::fit(&raw, &raw.schema).unwrap();
        let back = Preprocessor::from_json(&prep.to_json()).unwrap();
        assert_eq!(back, prep);
    }

    proptest! {
        #[test]
        fn round_trip_and_monotone(values in prop::collection::vec(-1e6f64..1e6, 2..60)) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let q = QuantileMap::fit("x", &values).unwrap();
            for v in &values {
                let back = q.inverse(q.forward(*v));
                prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
            for w in q.knots.windows(2) {
                prop_assert!(q.forward(w[0]) < q.forward(w[1]));
            }
            for w in q.scores.windows(2) {
                prop_assert!(q.inverse(w[0]) < q.inverse(w[1]));
            }
        }
    }
}
