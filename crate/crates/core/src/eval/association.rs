use std::collections::BTreeMap;

use crate::data::{ColumnKind, RawTable};
use crate::error::{Error, Result};
use crate::eval::similarity::{label_column, numeric_column};
use crate::stats::pearson;

enum Column {
    Numeric(Vec<f64>),
    Codes(Vec<usize>, usize),
}

fn codes(labels: &[String]) -> (Vec<usize>, usize) {
    let mut index = BTreeMap::new();
    for l in labels {
        let next = index.len();
        index.entry(l.as_str()).or_insert(next);
    }
    (labels.iter().map(|l| index[l.as_str()]).collect(), index.len())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|c| *c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Theil's uncertainty coefficient `U(x | y)`: the fraction of the entropy
/// of `x` explained by `y`; 0 when `x` is constant.
pub fn theils_u(x: &[usize], x_classes: usize, y: &[usize], y_classes: usize) -> f64 {
    let n = x.len() as f64;
    let mut cx = vec![0usize; x_classes];
    let mut cy = vec![0usize; y_classes];
    let mut joint = vec![0usize; x_classes * y_classes];
    for (a, b) in x.iter().zip(y) {
        cx[*a] += 1;
        cy[*b] += 1;
        joint[a * y_classes + b] += 1;
    }
    let hx = entropy(cx.iter().copied(), n);
    if hx <= 0.0 {
        return 0.0;
    }
    // H(x | y) = H(x, y) − H(y)
    let hxy = entropy(joint.iter().copied(), n) - entropy(cy.iter().copied(), n);
    ((hx - hxy) / hx).clamp(0.0, 1.0)
}

/// Correlation ratio: sqrt(between-category variance / total variance);
/// 0 for a constant numeric column.
pub fn correlation_ratio(values: &[f64], categories: &[usize], classes: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (v, c) in values.iter().zip(categories) {
        sums[*c] += v;
        counts[*c] += 1;
    }
    let total: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let between: f64 = sums
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c > 0)
        .map(|(s, c)| *c as f64 * (s / *c as f64 - mean).powi(2))
        .sum();
    (between / total).clamp(0.0, 1.0).sqrt()
}

/// Mixed-type association matrix over all columns (row-major, `C × C`):
/// Pearson for numeric pairs, Theil's `U(row | column)` for categorical
/// pairs, the correlation ratio for mixed pairs, 1 on the diagonal.
pub fn association_matrix(table: &RawTable) -> Result<Vec<f64>> {
    if table.n_rows() < 2 {
        return Err(Error::Request("association needs at least two rows".into()));
    }
    if table.missing_count() > 0 {
        return Err(Error::Request("association needs a complete table".into()));
    }
    let cols: Vec<Column> = table
        .schema
        .columns
        .iter()
        .enumerate()
        .map(|(c, spec)| match spec.kind {
            ColumnKind::Numerical => Column::Numeric(numeric_column(table, c)),
            ColumnKind::Categorical => {
                let (codes, k) = codes(&label_column(table, c));
                Column::Codes(codes, k)
            }
        })
        .collect();
    for (c, col) in cols.iter().enumerate() {
        if let Column::Numeric(v) = col {
            if crate::stats::variance(v) == 0.0 {
                log::warn!("column `{}` is constant; its associations are 0", table.schema.columns[c].name);
            }
        }
    }
    let k = cols.len();
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            m[i * k + j] = if i == j {
                1.0
            } else {
                match (&cols[i], &cols[j]) {
                    (Column::Numeric(a), Column::Numeric(b)) => pearson(a, b),
                    (Column::Codes(a, ka), Column::Codes(b, kb)) => theils_u(a, *ka, b, *kb),
                    (Column::Numeric(v), Column::Codes(c, kc)) | (Column::Codes(c, kc), Column::Numeric(v)) => {
                        correlation_ratio(v, c, *kc)
                    }
                }
            };
        }
    }
    Ok(m)
}

/// Root-mean-square difference over off-diagonal entries of two square
/// matrices.
pub fn corr_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "corr_l2",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let k = (a.len() as f64).sqrt().round() as usize;
    if k * k != a.len() {
        return Err(Error::Shape {
            op: "corr_l2",
            lhs: vec![a.len()],
            rhs: vec![k, k],
        });
    }
    if k < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                sum += (a[i * k + j] - b[i * k + j]).powi(2);
            }
        }
    }
    Ok((sum / (k * k - k) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{Cell, ColumnSpec, TableSchema};

    #[test]
    fn self_association() {
        let x = [0, 1, 2, 1, 0, 2];
        assert!((theils_u(&x, 3, &x, 3) - 1.0).abs() < 1e-12);
        assert_eq!(theils_u(&[0, 0, 0], 1, &[0, 1, 0], 2), 0.0);
    }

    #[test]
    fn independent_categories_have_low_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        assert!(theils_u(&a, 3, &b, 4) < 0.05);
        assert!(theils_u(&b, 4, &a, 3) < 0.05);
    }

    #[test]
    fn correlation_ratio_examples() {
        assert!((correlation_ratio(&[1.0, 1.0, 5.0, 5.0], &[0, 0, 1, 1], 2) - 1.0).abs() < 1e-12);
        assert_eq!(correlation_ratio(&[1.0, 2.0, 1.0, 2.0], &[0, 0, 1, 1], 2), 0.0);
        assert_eq!(correlation_ratio(&[3.0; 4], &[0, 1, 0, 1], 2), 0.0);
    }

    #[test]
    fn matrix_and_distance() {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::numerical("b"),
            ColumnSpec::categorical("c", 2),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let rows = (0..8)
            .map(|i| {
                vec![
                    Cell::Number(i as f64),
                    Cell::Number(2.0 * i as f64 + 1.0),
                    Cell::Label(if i < 4 { "lo" } else { "hi" }.into()),
                    Cell::Label(if i % 2 == 0 { "e" } else { "o" }.into()),
                ]
            })
            .collect();
        let t = RawTable::new(schema, rows).unwrap();
        let m = association_matrix(&t).unwrap();
        assert_eq!(m.len(), 16);
        assert!((m[1] - 1.0).abs() < 1e-12);
        assert_eq!(m[0], 1.0);
        assert!(m[2] > 0.8 && (m[2] - m[8]).abs() < 1e-15);
        assert!(m[2 * 4 + 3].abs() < 1e-12);
        assert!(m.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(corr_l2(&m, &m).unwrap(), 0.0);
        let shifted: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 5 == 0 { *v } else { v + 0.1 })
            .collect();
        assert!((corr_l2(&m, &shifted).unwrap() - 0.1).abs() < 1e-12);
        assert!(corr_l2(&m, &m[..9]).is_err());
    }
}
