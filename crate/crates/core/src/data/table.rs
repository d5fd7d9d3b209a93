use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::schema::{ColumnKind, ColumnSpec, Role, TableSchema};
use crate::error::{Error, Result};

/// Distinct-value count above which an all-numeric column is numerical.
pub const CARDINALITY_THRESHOLD: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Label(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Label(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
            Cell::Missing => None,
        }
    }

    /// Text form used for CSV output and category labels.
    pub fn text(&self) -> String {
        match self {
            Cell::Missing => String::new(),
            Cell::Number(v) => format_number(*v),
            Cell::Label(s) => s.clone(),
        }
    }
}

/// Shortest decimal representation that round-trips to the same double.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

fn is_missing_marker(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s == "NA"
}

/// A typed table: one row of cells per record, columns in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn new(schema: TableSchema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != schema.len() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("expected {} cells, found {}", schema.len(), r.len()),
                });
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn missing_count(&self) -> usize {
        self.rows
            .iter()
            .flatten()
            .filter(|c| c.is_missing())
            .count()
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    pub fn select_rows(&self, indices: &[usize]) -> RawTable {
        RawTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Re-types cells against `schema`: numerical columns become
    /// [`Cell::Number`], categorical ones [`Cell::Label`].
    pub fn retype(self, schema: TableSchema) -> Result<Self> {
        let mut rows = self.rows;
        for (ri, row) in rows.iter_mut().enumerate() {
            for (ci, cell) in row.iter_mut().enumerate() {
                let spec = &schema.columns[ci];
                *cell = match (spec.kind, std::mem::replace(cell, Cell::Missing)) {
                    (_, Cell::Missing) => Cell::Missing,
                    (ColumnKind::Numerical, c) => match c.as_number() {
                        Some(v) => Cell::Number(v),
                        None => {
                            return Err(Error::Parse {
                                // header is line 1
                                row: ri + 2,
                                message: format!(
                                    "column `{}` expects a finite number, found `{}`",
                                    spec.name,
                                    c.text()
                                ),
                            })
                        }
                    },
                    (ColumnKind::Categorical, c) => Cell::Label(c.text()),
                };
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let map = |e: csv::Error| Error::io("writing csv", std::io::Error::other(e));
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))
            .map_err(map)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Missing => "NA".to_string(),
                c => c.text(),
            }))
            .map_err(map)?;
        }
        w.flush()
            .map_err(|e| Error::io("flushing csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Rejects input whose quoting never closes; the csv reader would otherwise
/// silently swallow the remainder of the file into one field.
fn check_quotes(text: &str) -> Result<()> {
    let mut in_quotes = false;
    let mut line = 1;
    let mut opened_at = 0;
    let mut field_start = true;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                } else {
                    in_quotes = false;
                }
            }
            '"' if field_start => {
                in_quotes = true;
                opened_at = line;
            }
            '\n' => {
                line += 1;
                if !in_quotes {
                    field_start = true;
                    continue;
                }
            }
            ',' if !in_quotes => {
                field_start = true;
                continue;
            }
            _ => {}
        }
        field_start = false;
    }
    if in_quotes {
        return Err(Error::Parse {
            row: opened_at,
            message: "unbalanced quote".into(),
        });
    }
    Ok(())
}

/// Reads CSV text. Without a schema one is inferred with [`infer_schema`].
///
/// Row numbers in errors are file line numbers (the header is line 1).
pub fn read_csv<R: Read>(mut reader: R, schema: Option<&TableSchema>) -> Result<RawTable> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io("reading csv", e))?;
    check_quotes(&text)?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(e, i + 2))?;
        rows.push(
            rec.iter()
                .map(|s| {
                    if is_missing_marker(s) {
                        Cell::Missing
                    } else {
                        Cell::Label(s.to_string())
                    }
                })
                .collect::<Vec<_>>(),
        );
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 2,
            message: "no data rows".into(),
        });
    }

    match schema {
        Some(schema) => {
            // Reorder file columns into schema order.
            let mut order = Vec::with_capacity(schema.len());
            for c in &schema.columns {
                let pos = header.iter().position(|h| *h == c.name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("schema column `{}` not in file header", c.name))
                })?;
                order.push(pos);
            }
            if let Some(extra) = header.iter().find(|h| schema.column_index(h).is_none()) {
                return Err(Error::SchemaMismatch(format!(
                    "file column `{extra}` is not in the schema"
                )));
            }
            let rows = rows
                .into_iter()
                .map(|r| order.iter().map(|&p| r[p].clone()).collect())
                .collect();
            let placeholder = untyped_schema(&header_in_order(schema))?;
            RawTable {
                schema: placeholder,
                rows,
            }
            .retype(schema.clone())
        }
        None => {
            let placeholder = untyped_schema(&header)?;
            let raw = RawTable {
                schema: placeholder,
                rows,
            };
            let inferred = infer_schema(&raw)?;
            raw.retype(inferred)
        }
    }
}

fn header_in_order(schema: &TableSchema) -> Vec<String> {
    schema.columns.iter().map(|c| c.name.clone()).collect()
}

fn untyped_schema(header: &[String]) -> Result<TableSchema> {
    let mut seen = BTreeSet::new();
    for h in header {
        if !seen.insert(h) {
            return Err(Error::Parse {
                row: 1,
                message: format!("duplicate header `{h}`"),
            });
        }
    }
    // Placeholder typing; every cell is still a label at this point.
    Ok(TableSchema {
        columns: header
            .iter()
            .map(|h| ColumnSpec {
                name: h.clone(),
                kind: ColumnKind::Categorical,
                class_count: None,
                role: Role::Feature,
            })
            .collect(),
    })
}

fn csv_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_row);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    Error::Parse { row, message }
}

pub fn load_csv(path: impl AsRef<Path>, schema: Option<&TableSchema>) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Infers column kinds: numerical iff every present cell parses as a finite
/// number and there are more than [`CARDINALITY_THRESHOLD`] distinct values.
/// The last column becomes the target.
pub fn infer_schema(raw: &RawTable) -> Result<TableSchema> {
    let mut columns = Vec::with_capacity(raw.schema.len());
    for (ci, spec) in raw.schema.columns.iter().enumerate() {
        let present: Vec<&Cell> = raw.column(ci).filter(|c| !c.is_missing()).collect();
        if present.is_empty() {
            return Err(Error::Inference {
                column: spec.name.clone(),
                message: "no non-missing cells".into(),
            });
        }
        let numbers: Option<Vec<f64>> = present.iter().map(|c| c.as_number()).collect();
        let numeric = numbers.is_some_and(|vals| {
            let distinct: BTreeSet<u64> = vals.iter().map(|v| canonical_bits(*v)).collect();
            distinct.len() > CARDINALITY_THRESHOLD
        });
        if numeric {
            columns.push(ColumnSpec::numerical(&spec.name));
        } else {
            let distinct: BTreeSet<String> = present.iter().map(|c| c.text()).collect();
            if distinct.len() < 2 {
                return Err(Error::Inference {
                    column: spec.name.clone(),
                    message: "a categorical column needs at least two distinct values".into(),
                });
            }
            columns.push(ColumnSpec::categorical(&spec.name, distinct.len()));
        }
    }
    if let Some(last) = columns.last_mut() {
        last.role = Role::Target;
    }
    TableSchema::new(columns)
}

fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}
