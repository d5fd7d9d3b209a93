//! Dataset ingestion, schemas, and reversible preprocessing.

mod encoded;
mod preprocess;
mod schema;
mod table;

pub use encoded::{EncodedTable, TargetBlock, MISSING_CODE, MISSING_NUMERIC};
pub use preprocess::{normal_quantile, CategoryDict, ColumnTransform, Preprocessor, QuantileMap};
pub use schema::{ColumnKind, ColumnSpec, FeatureSlot, Role, TableSchema};
pub use table::{
    format_number, infer_schema, load_csv, read_csv, Cell, RawTable, CARDINALITY_THRESHOLD,
};
