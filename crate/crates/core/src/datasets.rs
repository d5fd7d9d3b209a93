//! Small synthetic datasets with known structure, used by the examples,
//! the CLI and the end-to-end tests.
//!
//! Mixed classification (`mixed_classification`), per row:
//!
//! ```text
//! x1 ~ N(0, 1)
//! x2 = 0.6·x1 + 0.8·N(0, 1)             (corr(x1, x2) = 0.6)
//! u  = x1 + x2 + 0.3·N(0, 1)
//! c  = "low" if u < −0.8, "high" if u > 0.8, else "mid"
//! y  = "yes" if x1 − 0.5·x2 + 0.5·[c = "high"] + 0.5·N(0, 1) > 0 else "no"
//! ```
//!
//! Numeric regression (`numeric_regression`), per row:
//!
//! ```text
//! x1, x2, x3 ~ N(0, 1) independent
//! y = 1.5·x1 − x2 + 0.5·x3² + 0.3·N(0, 1)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Cell, ColumnSpec, RawTable, TableSchema};
use crate::rng::substream;

pub const MIXED_ROWS: usize = 2000;
pub const MIXED_CORRELATION: f64 = 0.6;

pub fn mixed_classification_schema() -> TableSchema {
    TableSchema::new(vec![
        ColumnSpec::numerical("x1"),
        ColumnSpec::numerical("x2"),
        ColumnSpec::categorical("c", 3),
        ColumnSpec::categorical("y", 2).as_target(),
    ])
    .expect("valid schema")
}

pub fn mixed_classification(n: usize, seed: u64) -> RawTable {
    let mut rng = substream(seed, &[0x6d69786564]);
    let rho = MIXED_CORRELATION;
    let rows = (0..n)
        .map(|_| {
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let x1 = normal();
            let x2 = rho * x1 + (1.0 - rho * rho).sqrt() * normal();
            let u = x1 + x2 + 0.3 * normal();
            let c = if u < -0.8 {
                "low"
            } else if u > 0.8 {
                "high"
            } else {
                "mid"
            };
            let score = x1 - 0.5 * x2 + if c == "high" { 0.5 } else { 0.0 } + 0.5 * normal();
            vec![
                Cell::Number(x1),
                Cell::Number(x2),
                Cell::Label(c.into()),
                Cell::Label(if score > 0.0 { "yes" } else { "no" }.into()),
            ]
        })
        .collect();
    RawTable::new(mixed_classification_schema(), rows).expect("rows match the schema")
}

pub fn numeric_regression_schema() -> TableSchema {
    TableSchema::new(vec![
        ColumnSpec::numerical("x1"),
        ColumnSpec::numerical("x2"),
        ColumnSpec::numerical("x3"),
        ColumnSpec::numerical("y").as_target(),
    ])
    .expect("valid schema")
}

pub fn numeric_regression(n: usize, seed: u64) -> RawTable {
    let mut rng = substream(seed, &[0x72656772]);
    let rows = (0..n)
        .map(|_| {
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let (x1, x2, x3) = (normal(), normal(), normal());
            let y = 1.5 * x1 - x2 + 0.5 * x3 * x3 + 0.3 * normal();
            [x1, x2, x3, y].into_iter().map(Cell::Number).collect()
        })
        .collect();
    RawTable::new(numeric_regression_schema(), rows).expect("rows match the schema")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    fn numbers(t: &RawTable, c: usize) -> Vec<f64> {
        t.column(c).filter_map(Cell::as_number).collect()
    }

    #[test]
    fn mixed_structure() {
        let t = mixed_classification(20_000, 1);
        let r = pearson(&numbers(&t, 0), &numbers(&t, 1));
        assert!((r - 0.6).abs() < 0.02, "corr {r}");
        let labels: Vec<String> = t.column(2).map(Cell::text).collect();
        for l in ["low", "mid", "high"] {
            assert!(labels.iter().filter(|x| *x == l).count() > 2000, "{l} is rare");
        }
        let yes = t.column(3).filter(|c| c.text() == "yes").count() as f64 / 20_000.0;
        assert!((0.3..0.7).contains(&yes));
        assert_eq!(mixed_classification(50, 3), mixed_classification(50, 3));
    }

    #[test]
    fn regression_structure() {
        let t = numeric_regression(20_000, 2);
        let r = pearson(&numbers(&t, 0), &numbers(&t, 3));
        // cov(x1, y) = 1.5; var(y) = 2.25 + 1 + 0.5 + 0.09
        assert!((r - 1.5 / 3.84f64.sqrt()).abs() < 0.02, "corr {r}");
    }
}
