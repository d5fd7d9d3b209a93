use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Feature,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub role: Role,
}

impl ColumnSpec {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numerical,
            class_count: None,
            role: Role::Feature,
        }
    }

    pub fn categorical(name: impl Into<String>, class_count: usize) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            class_count: Some(class_count),
            role: Role::Feature,
        }
    }

    pub fn as_target(mut self) -> Self {
        self.role = Role::Target;
        self
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    /// Class count for categorical columns, 0 for numerical ones.
    pub fn classes(&self) -> usize {
        self.class_count.unwrap_or(0)
    }
}

/// Where a feature lives inside the encoded blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSlot {
    /// Column index in the schema.
    pub column: usize,
    pub kind: ColumnKind,
    /// Index within the numeric or categorical block.
    pub block: usize,
    /// Class count (categorical only, 0 otherwise).
    pub classes: usize,
}

/// Ordered column specifications; column order defines the feature index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    /// Builds and validates a schema.
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::SchemaMismatch("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate column name `{}`",
                    c.name
                )));
            }
            match (c.kind, c.class_count) {
                (ColumnKind::Categorical, Some(n)) if n >= 2 => {}
                (ColumnKind::Categorical, _) => {
                    return Err(Error::SchemaMismatch(format!(
                        "categorical column `{}` needs class_count >= 2",
                        c.name
                    )))
                }
                (ColumnKind::Numerical, None) => {}
                (ColumnKind::Numerical, Some(_)) => {
                    return Err(Error::SchemaMismatch(format!(
                        "numerical column `{}` cannot carry class_count",
                        c.name
                    )))
                }
            }
        }
        let targets = self
            .columns
            .iter()
            .filter(|c| c.role == Role::Target)
            .count();
        if targets != 1 {
            return Err(Error::SchemaMismatch(format!(
                "expected exactly one target column, found {targets}"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut schema: TableSchema = serde_json::from_str(text)?;
        // A schema file without an explicit target follows the inference rule.
        if !schema.columns.iter().any(|c| c.role == Role::Target) {
            if let Some(last) = schema.columns.last_mut() {
                last.role = Role::Target;
            }
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading schema {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing schema {}", path.display()), e))
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == Role::Target)
            .expect("validated schema has a target")
    }

    pub fn target(&self) -> &ColumnSpec {
        &self.columns[self.target_index()]
    }

    /// Feature slots in schema order (the target is excluded).
    pub fn features(&self) -> Vec<FeatureSlot> {
        let mut num = 0;
        let mut cat = 0;
        let mut out = Vec::with_capacity(self.columns.len());
        for (i, c) in self.columns.iter().enumerate() {
            if c.role == Role::Target {
                continue;
            }
            let block = match c.kind {
                ColumnKind::Numerical => {
                    num += 1;
                    num - 1
                }
                ColumnKind::Categorical => {
                    cat += 1;
                    cat - 1
                }
            };
            out.push(FeatureSlot {
                column: i,
                kind: c.kind,
                block,
                classes: c.classes(),
            });
        }
        out
    }

    /// K, the number of non-target features.
    pub fn n_features(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn n_numeric(&self) -> usize {
        self.features()
            .iter()
            .filter(|f| f.kind == ColumnKind::Numerical)
            .count()
    }

    pub fn n_categorical(&self) -> usize {
        self.features()
            .iter()
            .filter(|f| f.kind == ColumnKind::Categorical)
            .count()
    }

    /// Class counts of the categorical features, in block order.
    pub fn categorical_classes(&self) -> Vec<usize> {
        self.features()
            .iter()
            .filter(|f| f.kind == ColumnKind::Categorical)
            .map(|f| f.classes)
            .collect()
    }

    /// Feature index (position in [`features`](Self::features)) for a column.
    pub fn feature_of_column(&self, column: usize) -> Option<usize> {
        self.features().iter().position(|f| f.column == column)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> TableSchema {
        TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::categorical("c", 3),
            ColumnSpec::numerical("b"),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap()
    }

    #[test]
    fn feature_slots_follow_column_order() {
        let s = mixed();
        let f = s.features();
        assert_eq!(f.len(), 3);
        assert_eq!((f[0].column, f[0].block), (0, 0));
        assert_eq!((f[1].column, f[1].block, f[1].classes), (1, 0, 3));
        assert_eq!((f[2].column, f[2].block), (2, 1));
        assert_eq!(s.n_numeric(), 2);
        assert_eq!(s.n_categorical(), 1);
        assert_eq!(s.target_index(), 3);
    }

    #[test]
    fn rejects_duplicates_and_bad_counts() {
        let dup = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::numerical("a").as_target(),
        ]);
        assert!(matches!(dup, Err(Error::SchemaMismatch(_))));
        let one_class = TableSchema::new(vec![
            ColumnSpec::categorical("a", 1),
            ColumnSpec::numerical("y").as_target(),
        ]);
        assert!(one_class.is_err());
        let two_targets = TableSchema::new(vec![
            ColumnSpec::numerical("a").as_target(),
            ColumnSpec::numerical("y").as_target(),
        ]);
        assert!(two_targets.is_err());
    }

    #[test]
    fn json_round_trip_and_default_target() {
        let s = mixed();
        assert_eq!(TableSchema::from_json(&s.to_json()).unwrap(), s);

        let text = r#"{"columns":[{"name":"x","kind":"numerical"},{"name":"y","kind":"categorical","class_count":2}]}"#;
        let s = TableSchema::from_json(text).unwrap();
        assert_eq!(s.target_index(), 1);

        let unknown = r#"{"columns":[{"name":"x","kind":"numerical","bogus":1}]}"#;
        assert!(TableSchema::from_json(unknown).is_err());
    }
}
