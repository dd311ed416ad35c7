//! Record-oriented tables with a key index, CSV ingestion and the
//! `SEALTABLE v1` file format.
//!
//! The first schema column is the record key: a non-sensitive integer column
//! whose values are unique and at least 1. Key 0 is reserved for noise rows
//! in search tables and never appears in a main table.

mod format;

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use thiserror::Error;

use crate::cipher::CipherEnvelope;
use crate::value::{Kind, Value, ValueError};

pub use format::{read_table_data, write_table_data, TableData, FORMAT_HEADER};

/// Reserved key carried by noise rows.
pub const SENTINEL_KEY: u64 = 0;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("duplicate key {0}")]
    DuplicateKey(u64),
    #[error("key {0} is reserved")]
    ReservedKey(u64),
    #[error("line {line}: empty value in sensitive column `{column}`")]
    NullSensitiveValue { line: u64, column: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("unsupported format version `{0}`")]
    VersionMismatch(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: Kind,
    pub sensitive: bool,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: Kind, sensitive: bool) -> Self {
        Self {
            name: name.into(),
            kind,
            sensitive,
        }
    }

    /// Parses one `name:kind:sensitive` triple.
    pub fn parse(spec: &str) -> Result<Self, StorageError> {
        let parts: Vec<&str> = spec.trim().split(':').collect();
        let [name, kind, sensitive] = parts.as_slice() else {
            return Err(StorageError::InvalidSchema(format!(
                "`{spec}` is not a name:kind:sensitive triple"
            )));
        };
        let kind = kind
            .parse::<Kind>()
            .map_err(|e| StorageError::InvalidSchema(e.to_string()))?;
        let sensitive = match *sensitive {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => {
                return Err(StorageError::InvalidSchema(format!(
                    "sensitive flag must be true or false, got `{other}`"
                )))
            }
        };
        Ok(Self::new(*name, kind, sensitive))
    }

    pub fn render(&self) -> String {
        format!("{}:{}:{}", self.name, self.kind, self.sensitive)
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Validates a column list: identifiers, unique names.
pub fn validate_columns(columns: &[ColumnSpec]) -> Result<(), StorageError> {
    let mut seen = HashSet::new();
    for c in columns {
        if !is_identifier(&c.name) {
            return Err(StorageError::InvalidSchema(format!("`{}` is not a valid column name", c.name)));
        }
        if !seen.insert(c.name.as_str()) {
            return Err(StorageError::InvalidSchema(format!("duplicate column `{}`", c.name)));
        }
    }
    Ok(())
}

/// A main-table schema. Column 0 is the key column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, StorageError> {
        validate_columns(&columns)?;
        match columns.first() {
            None => return Err(StorageError::InvalidSchema("schema has no columns".into())),
            Some(key) if key.kind != Kind::Integer || key.sensitive => {
                return Err(StorageError::InvalidSchema(format!(
                    "key column `{}` must be a non-sensitive integer",
                    key.name
                )))
            }
            Some(_) => {}
        }
        Ok(Self { columns })
    }

    /// Parses a comma-separated list of `name:kind:sensitive` triples.
    pub fn parse_spec(spec: &str) -> Result<Self, StorageError> {
        let columns = spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(ColumnSpec::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(columns)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn key_column(&self) -> &ColumnSpec {
        &self.columns[0]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn sensitive_columns(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns.iter().enumerate().filter(|(_, c)| c.sensitive)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Field {
    Plain(Value),
    Encrypted(CipherEnvelope),
}

impl Field {
    pub fn as_plain(&self) -> Option<&Value> {
        match self {
            Field::Plain(v) => Some(v),
            Field::Encrypted(_) => None,
        }
    }

    pub fn as_envelope(&self) -> Option<&CipherEnvelope> {
        match self {
            Field::Encrypted(e) => Some(e),
            Field::Plain(_) => None,
        }
    }
}

/// One row. `fields` is aligned with the schema and `fields[0]` holds the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    key: u64,
    fields: Vec<Field>,
}

impl Record {
    /// Builds a record from schema-aligned fields, taking the key from column 0.
    pub fn from_fields(fields: Vec<Field>) -> Result<Self, StorageError> {
        let key = match fields.first() {
            Some(Field::Plain(Value::Integer(k))) if *k >= 0 => *k as u64,
            other => {
                return Err(StorageError::InvalidRecord(format!(
                    "key field must be a non-negative plaintext integer, got {other:?}"
                )))
            }
        };
        Ok(Self { key, fields })
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, index: usize) -> &Field {
        &self.fields[index]
    }

    pub(crate) fn into_fields(self) -> Vec<Field> {
        self.fields
    }
}

/// A keyed table. Immutable once built, apart from appending rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Record>,
    index: HashMap<u64, usize>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_records(schema: Schema, records: impl IntoIterator<Item = Record>) -> Result<Self, StorageError> {
        let mut table = Self::new(schema);
        for r in records {
            table.push(r)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, record: Record) -> Result<(), StorageError> {
        if record.key == SENTINEL_KEY {
            return Err(StorageError::ReservedKey(SENTINEL_KEY));
        }
        if record.fields.len() != self.schema.len() {
            return Err(StorageError::InvalidRecord(format!(
                "record {} has {} fields, schema has {}",
                record.key,
                record.fields.len(),
                self.schema.len()
            )));
        }
        for (field, spec) in record.fields.iter().zip(self.schema.columns()) {
            match field {
                Field::Encrypted(_) if !spec.sensitive => {
                    return Err(StorageError::InvalidRecord(format!(
                        "encrypted value in non-sensitive column `{}`",
                        spec.name
                    )))
                }
                Field::Plain(v) if v.kind() != spec.kind => {
                    return Err(StorageError::InvalidRecord(format!(
                        "{} value in {} column `{}`",
                        v.kind(),
                        spec.kind,
                        spec.name
                    )))
                }
                _ => {}
            }
        }
        if self.index.contains_key(&record.key) {
            return Err(StorageError::DuplicateKey(record.key));
        }
        self.index.insert(record.key, self.rows.len());
        self.rows.push(record);
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, key: u64) -> Option<&Record> {
        self.index.get(&key).map(|&i| &self.rows[i])
    }

    pub fn contains_key(&self, key: u64) -> bool {
        self.index.contains_key(&key)
    }

    pub fn save(&self, sink: &mut impl Write) -> Result<(), StorageError> {
        let data = TableData {
            columns: self.schema.columns().to_vec(),
            rows: self.rows.iter().map(|r| r.fields.clone()).collect(),
        };
        write_table_data(&data, sink)?;
        Ok(())
    }

    pub fn load(source: &mut impl Read) -> Result<Self, StorageError> {
        let data = read_table_data(source)?;
        let schema = Schema::new(data.columns)?;
        let records = data
            .rows
            .into_iter()
            .map(Record::from_fields)
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(schema, records)
    }
}

/// Reads a CSV whose header matches `schema` and builds a plaintext table.
pub fn ingest_csv(source: impl Read, schema: &Schema) -> Result<Table, StorageError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let expected: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(StorageError::SchemaMismatch(format!(
            "CSV header {names:?} does not match schema {expected:?}"
        )));
    }

    let mut table = Table::new(schema.clone());
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(e, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        let mut fields = Vec::with_capacity(schema.len());
        for (cell, spec) in row.iter().zip(schema.columns()) {
            if spec.sensitive && cell.is_empty() {
                return Err(StorageError::NullSensitiveValue {
                    line,
                    column: spec.name.clone(),
                });
            }
            let value = Value::parse(spec.kind, cell).map_err(|e: ValueError| StorageError::Parse {
                line,
                message: format!("column `{}`: {e}", spec.name),
            })?;
            fields.push(Field::Plain(value));
        }
        let record = Record::from_fields(fields).map_err(|e| StorageError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.key() == SENTINEL_KEY {
            return Err(StorageError::Parse {
                line,
                message: "record key must be a positive integer".into(),
            });
        }
        table.push(record)?;
    }
    Ok(table)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> StorageError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    match e.kind() {
        csv::ErrorKind::UnequalLengths { .. } => StorageError::SchemaMismatch(format!("line {line}: {e}")),
        _ => StorageError::Parse {
            line,
            message: e.to_string(),
        },
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const STAFF_SCHEMA: &str = "Key:integer:false,Emp_Name:text:false,Salary:integer:true,Job_Title:text:false";

    pub const STAFF_CSV: &str = "Key,Emp_Name,Salary,Job_Title\n\
        1,Rajesh,10000,Manager\n\
        2,Suresh,8000,Asst. Manager\n\
        3,Mahesh,6000,Peon\n";

    pub fn staff() -> Table {
        ingest_csv(STAFF_CSV.as_bytes(), &Schema::parse_spec(STAFF_SCHEMA).unwrap()).unwrap()
    }
}
