use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, EncodedTable, TargetBlock};
use crate::error::{Error, Result};
use crate::par;
use crate::stats::quantile_sorted;

/// Row-major points: quantile scores for numerics, one-hot blocks for
/// categoricals, target included, every coordinate weighted equally.
pub fn distance_space(t: &EncodedTable) -> Result<(Vec<f64>, usize)> {
    if t.missing_count() > 0 || t.target_missing.iter().any(|m| *m) {
        return Err(Error::Request("distance space needs a complete table".into()));
    }
    let features = t.schema.features();
    let target_classes = t.schema.target().classes();
    let width: usize = features
        .iter()
        .map(|f| if f.kind == ColumnKind::Categorical { f.classes } else { 1 })
        .sum::<usize>()
        + match t.target {
            TargetBlock::Real(_) => 1,
            TargetBlock::Codes(_) => target_classes,
        };
    let mut points = vec![0.0; t.n_rows() * width];
    for (r, row) in points.chunks_mut(width.max(1)).enumerate().take(t.n_rows()) {
        let mut at = 0;
        for f in &features {
            match f.kind {
                ColumnKind::Numerical => {
                    row[at] = t.numeric_at(r, f.block);
                    at += 1;
                }
                ColumnKind::Categorical => {
                    row[at + t.code_at(r, f.block)] = 1.0;
                    at += f.classes;
                }
            }
        }
        match &t.target {
            TargetBlock::Real(v) => row[at] = v[r],
            TargetBlock::Codes(v) => row[at + v[r]] = 1.0,
        }
    }
    Ok((points, width))
}

fn nearest(point: &[f64], real: &[f64], width: usize, skip: Option<usize>) -> f64 {
    let mut best = f64::INFINITY;
    for (j, other) in real.chunks_exact(width).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let d: f64 = point.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.min(d);
    }
    best.sqrt()
}

/// Distance from each point to its nearest neighbour in `real`, by
/// exhaustive search.
pub fn nearest_distances(synth: &[f64], real: &[f64], width: usize) -> Result<Vec<f64>> {
    if real.is_empty() || width == 0 {
        return Err(Error::Request("nearest-neighbour search needs a non-empty real set".into()));
    }
    let n = synth.len() / width;
    Ok(par::map_range(n, |i| nearest(&synth[i * width..(i + 1) * width], real, width, None)))
}

/// Per synthetic row, Euclidean distance to the closest real row.
pub fn dcr(synth: &EncodedTable, real: &EncodedTable) -> Result<Vec<f64>> {
    if synth.schema != real.schema {
        return Err(Error::SchemaMismatch("DCR tables have different schemas".into()));
    }
    if real.n_rows() == 0 {
        return Err(Error::Request("DCR needs a non-empty real table".into()));
    }
    let (s, width) = distance_space(synth)?;
    let (r, _) = distance_space(real)?;
    nearest_distances(&s, &r, width)
}

/// DCR of a table against itself, each row excluded from its own search.
pub fn dcr_holdout_self(real: &EncodedTable) -> Result<Vec<f64>> {
    if real.n_rows() < 2 {
        return Err(Error::Request("self DCR needs at least two rows".into()));
    }
    let (r, width) = distance_space(real)?;
    Ok(par::map_range(real.n_rows(), |i| {
        nearest(&r[i * width..(i + 1) * width], &r, width, Some(i))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrSummary {
    pub min: f64,
    pub p5: f64,
    pub median: f64,
}

impl DcrSummary {
    pub fn of(distances: &[f64]) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::Request("no distances to summarise".into()));
        }
        let mut d = distances.to_vec();
        d.sort_by(f64::total_cmp);
        Ok(Self {
            min: d[0],
            p5: quantile_sorted(&d, 0.05),
            median: quantile_sorted(&d, 0.5),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSpec, TableSchema};

    fn numeric_table(points: &[(f64, f64)]) -> EncodedTable {
        let schema = TableSchema::new(vec![ColumnSpec::numerical("a"), ColumnSpec::numerical("y").as_target()]).unwrap();
        let mut t = EncodedTable::empty(schema, points.len());
        for (r, (a, y)) in points.iter().enumerate() {
            t.set_numeric(r, 0, *a);
            if let TargetBlock::Real(v) = &mut t.target {
                v[r] = *y;
            }
        }
        t
    }

    #[test]
    fn pythagoras_and_copies() {
        let real = numeric_table(&[(0.0, 0.0)]);
        assert_eq!(dcr(&numeric_table(&[(3.0, 4.0)]), &real).unwrap(), vec![5.0]);
        assert_eq!(dcr(&real, &real).unwrap(), vec![0.0]);
        let empty = numeric_table(&[]);
        assert!(dcr(&real, &empty).is_err());
    }

    #[test]
    fn adding_real_rows_never_increases_distances() {
        let synth = numeric_table(&[(1.0, 1.0), (-2.0, 0.5), (0.3, -0.7)]);
        let small = numeric_table(&[(0.0, 0.0), (2.0, 2.0)]);
        let large = numeric_table(&[(0.0, 0.0), (2.0, 2.0), (-1.5, 0.5)]);
        let a = dcr(&synth, &small).unwrap();
        let b = dcr(&synth, &large).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        assert!(b[1] < a[1]);
    }

    #[test]
    fn categoricals_are_one_hot() {
        let schema = TableSchema::new(vec![
            ColumnSpec::categorical("c", 3),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let mut a = EncodedTable::empty(schema.clone(), 1);
        let mut b = EncodedTable::empty(schema, 1);
        a.set_code(0, 0, 0);
        b.set_code(0, 0, 2);
        b.target = TargetBlock::Codes(vec![1]);
        // two one-hot mismatches, each contributing 1 + 1
        assert!((dcr(&a, &b).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn self_distance_excludes_own_row() {
        let t = numeric_table(&[(0.0, 0.0), (1.0, 0.0), (5.0, 0.0)]);
        assert_eq!(dcr_holdout_self(&t).unwrap(), vec![1.0, 1.0, 4.0]);
        let s = DcrSummary::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.min, s.median), (1.0, 2.0));
    }
}
