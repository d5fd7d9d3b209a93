use crate::data::schema::{ColumnKind, TableSchema};

/// Encoded target values: quantile scores for regression, codes otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetBlock {
    Real(Vec<f64>),
    Codes(Vec<usize>),
}

impl TargetBlock {
    pub fn len(&self) -> usize {
        match self {
            TargetBlock::Real(v) => v.len(),
            TargetBlock::Codes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> f64 {
        match self {
            TargetBlock::Real(v) => v[row],
            TargetBlock::Codes(v) => v[row] as f64,
        }
    }

    pub fn select(&self, rows: &[usize]) -> TargetBlock {
        match self {
            TargetBlock::Real(v) => TargetBlock::Real(rows.iter().map(|&r| v[r]).collect()),
            TargetBlock::Codes(v) => TargetBlock::Codes(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Sentinel stored in missing numeric cells.
pub const MISSING_NUMERIC: f64 = 0.0;
/// Sentinel stored in missing categorical cells.
pub const MISSING_CODE: usize = 0;

/// Preprocessed table: row-major numeric and code blocks, the target, and a
/// per-feature missing mask (`true` = missing). Missing cells hold sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub schema: TableSchema,
    n_rows: usize,
    k_num: usize,
    k_cat: usize,
    k: usize,
    pub numeric: Vec<f64>,
    pub categorical: Vec<usize>,
    pub target: TargetBlock,
    pub missing: Vec<bool>,
    pub target_missing: Vec<bool>,
}

impl EncodedTable {
    pub fn empty(schema: TableSchema, n_rows: usize) -> Self {
        let k_num = schema.n_numeric();
        let k_cat = schema.n_categorical();
        let k = schema.n_features();
        let target = match schema.target().kind {
            ColumnKind::Numerical => TargetBlock::Real(vec![0.0; n_rows]),
            ColumnKind::Categorical => TargetBlock::Codes(vec![0; n_rows]),
        };
        Self {
            schema,
            n_rows,
            k_num,
            k_cat,
            k,
            numeric: vec![0.0; n_rows * k_num],
            categorical: vec![0; n_rows * k_cat],
            target,
            missing: vec![false; n_rows * k],
            target_missing: vec![false; n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.k
    }

    pub fn n_numeric(&self) -> usize {
        self.k_num
    }

    pub fn n_categorical(&self) -> usize {
        self.k_cat
    }

    pub fn numeric_at(&self, row: usize, block: usize) -> f64 {
        self.numeric[row * self.k_num + block]
    }

    pub fn code_at(&self, row: usize, block: usize) -> usize {
        self.categorical[row * self.k_cat + block]
    }

    pub fn is_missing(&self, row: usize, feature: usize) -> bool {
        self.missing[row * self.k + feature]
    }

    pub fn missing_row(&self, row: usize) -> &[bool] {
        &self.missing[row * self.k..(row + 1) * self.k]
    }

    pub fn set_numeric(&mut self, row: usize, block: usize, v: f64) {
        self.numeric[row * self.k_num + block] = v;
    }

    pub fn set_code(&mut self, row: usize, block: usize, c: usize) {
        self.categorical[row * self.k_cat + block] = c;
    }

    /// Flags a feature cell missing and overwrites it with the sentinel.
    pub fn set_missing(&mut self, row: usize, feature: usize) {
        self.missing[row * self.k + feature] = true;
        let slot = self.schema.features()[feature];
        match slot.kind {
            ColumnKind::Numerical => self.set_numeric(row, slot.block, MISSING_NUMERIC),
            ColumnKind::Categorical => self.set_code(row, slot.block, MISSING_CODE),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> EncodedTable {
        let mut out = EncodedTable::empty(self.schema.clone(), rows.len());
        for (i, &r) in rows.iter().enumerate() {
            out.numeric[i * self.k_num..(i + 1) * self.k_num]
                .copy_from_slice(&self.numeric[r * self.k_num..(r + 1) * self.k_num]);
            out.categorical[i * self.k_cat..(i + 1) * self.k_cat]
                .copy_from_slice(&self.categorical[r * self.k_cat..(r + 1) * self.k_cat]);
            out.missing[i * self.k..(i + 1) * self.k].copy_from_slice(self.missing_row(r));
            out.target_missing[i] = self.target_missing[r];
        }
        out.target = self.target.select(rows);
        out
    }
}
