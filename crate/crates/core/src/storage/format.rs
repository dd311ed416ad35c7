//! `SEALTABLE v1` line format.
//!
//! ```text
//! SEALTABLE v1
//! Key:integer:false<TAB>Emp_Name:text:false<TAB>Salary:integer:true
//! rows<TAB>3
//! 1<TAB>Rajesh<TAB>enc:<24 hex nonce chars><body hex>
//! ...
//! ```
//!
//! Text fields escape backslash, tab, CR and LF as `\\`, `\t`, `\r`, `\n`.
//! A text value that itself begins with `enc:` is written with a leading
//! `\e` so it cannot be mistaken for an envelope. Every line, including the
//! last, ends in `\n`; the declared row count catches truncation at a line
//! boundary.

use std::io::{Read, Write};

use super::{validate_columns, ColumnSpec, Field, StorageError};
use crate::cipher::CipherEnvelope;
use crate::value::{Kind, Value};

pub const FORMAT_HEADER: &str = "SEALTABLE v1";
const MAGIC: &str = "SEALTABLE ";
const ENC_PREFIX: &str = "enc:";

/// Raw schema plus rows, without keyed-table invariants. Search tables and
/// main tables share this representation on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableData {
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Field>>,
}

pub fn write_table_data(data: &TableData, sink: &mut impl Write) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    let schema: Vec<String> = data.columns.iter().map(ColumnSpec::render).collect();
    out.push_str(&schema.join("\t"));
    out.push('\n');
    out.push_str(&format!("rows\t{}\n", data.rows.len()));
    for row in &data.rows {
        for (i, field) in row.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            encode_field(field, &mut out);
        }
        out.push('\n');
    }
    sink.write_all(out.as_bytes())
}

fn encode_field(field: &Field, out: &mut String) {
    match field {
        Field::Encrypted(env) => {
            out.push_str(ENC_PREFIX);
            out.push_str(&env.to_hex());
        }
        Field::Plain(Value::Text(s)) => {
            if s.starts_with(ENC_PREFIX) {
                out.push_str("\\e");
                escape_into(&s[1..], out);
            } else {
                escape_into(s, out);
            }
        }
        Field::Plain(v) => out.push_str(&v.render()),
    }
}

fn escape_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('e') => out.push('e'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

struct Lines<'a> {
    text: &'a str,
    offset: usize,
}

impl<'a> Lines<'a> {
    /// Next `\n`-terminated line and its starting byte offset.
    fn next_line(&mut self) -> Result<Option<(u64, &'a str)>, StorageError> {
        if self.offset >= self.text.len() {
            return Ok(None);
        }
        let start = self.offset;
        let rest = &self.text[start..];
        match rest.find('\n') {
            Some(end) => {
                self.offset = start + end + 1;
                Ok(Some((start as u64, &rest[..end])))
            }
            None => Err(StorageError::Format {
                offset: start as u64,
                message: "unterminated final line".into(),
            }),
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<(u64, &'a str), StorageError> {
        self.next_line()?.ok_or_else(|| StorageError::Format {
            offset: self.text.len() as u64,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

pub fn read_table_data(source: &mut impl Read) -> Result<TableData, StorageError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| StorageError::Format {
        offset: e.valid_up_to() as u64,
        message: "file is not valid UTF-8".into(),
    })?;
    let mut lines = Lines { text, offset: 0 };

    let (_, header) = lines.expect_line("header")?;
    let Some(version) = header.strip_prefix(MAGIC) else {
        return Err(StorageError::Format {
            offset: 0,
            message: format!("missing `{FORMAT_HEADER}` header"),
        });
    };
    if version != "v1" {
        return Err(StorageError::VersionMismatch(version.to_string()));
    }

    let (schema_offset, schema_line) = lines.expect_line("schema line")?;
    let columns = schema_line
        .split('\t')
        .map(ColumnSpec::parse)
        .collect::<Result<Vec<_>, _>>()
        .and_then(|cols| validate_columns(&cols).map(|_| cols))
        .map_err(|e| StorageError::Format {
            offset: schema_offset,
            message: e.to_string(),
        })?;

    let (count_offset, count_line) = lines.expect_line("row count")?;
    let declared: usize = count_line
        .strip_prefix("rows\t")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| StorageError::Format {
            offset: count_offset,
            message: format!("expected `rows<TAB>n`, got `{count_line}`"),
        })?;

    let mut rows = Vec::with_capacity(declared);
    while let Some((offset, line)) = lines.next_line()? {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(StorageError::Format {
                offset,
                message: format!("expected {} fields, found {}", columns.len(), cells.len()),
            });
        }
        let row = cells
            .iter()
            .zip(&columns)
            .map(|(cell, spec)| decode_field(cell, spec))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|message| StorageError::Format { offset, message })?;
        rows.push(row);
    }
    if rows.len() != declared {
        return Err(StorageError::Format {
            offset: text.len() as u64,
            message: format!("declared {declared} rows, found {}", rows.len()),
        });
    }
    Ok(TableData { columns, rows })
}

fn decode_field(cell: &str, spec: &ColumnSpec) -> Result<Field, String> {
    if let Some(hex) = cell.strip_prefix(ENC_PREFIX) {
        if !spec.sensitive {
            return Err(format!("encrypted value in non-sensitive column `{}`", spec.name));
        }
        return CipherEnvelope::from_hex(hex)
            .map(Field::Encrypted)
            .map_err(|e| e.to_string());
    }
    let value = match spec.kind {
        Kind::Text => Value::Text(unescape(cell)?),
        kind => {
            let v = Value::parse(kind, cell).map_err(|e| e.to_string())?;
            // Numbers must be stored canonically to keep the format bit-exact.
            if v.render() != cell {
                return Err(format!("non-canonical {kind} `{cell}`"));
            }
            v
        }
    };
    Ok(Field::Plain(value))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::staff;
    use super::super::{Schema, Table};
    use super::*;
    use crate::cipher::NONCE_LEN;
    use crate::value::Decimal;
    use proptest::prelude::*;

    fn save(t: &Table) -> Vec<u8> {
        let mut buf = Vec::new();
        t.save(&mut buf).unwrap();
        buf
    }

    #[test]
    fn staff_roundtrip_and_layout() {
        let t = staff();
        let bytes = save(&t);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(
            text,
            "SEALTABLE v1\n\
             Key:integer:false\tEmp_Name:text:false\tSalary:integer:true\tJob_Title:text:false\n\
             rows\t3\n\
             1\tRajesh\t10000\tManager\n\
             2\tSuresh\t8000\tAsst. Manager\n\
             3\tMahesh\t6000\tPeon\n"
        );
        assert_eq!(Table::load(&mut bytes.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = save(&staff());
        for cut in [5, 20, bytes.len() - 3, bytes.len() - "3\tMahesh\t6000\tPeon\n".len()] {
            let err = Table::load(&mut &bytes[..cut]).unwrap_err();
            assert!(matches!(err, StorageError::Format { .. }), "cut {cut}: {err:?}");
        }
        assert!(matches!(Table::load(&mut &b""[..]), Err(StorageError::Format { .. })));
    }

    #[test]
    fn unknown_version() {
        let text = "SEALTABLE v2\nKey:integer:false\nrows\t0\n";
        assert!(matches!(
            Table::load(&mut text.as_bytes()),
            Err(StorageError::VersionMismatch(v)) if v == "v2"
        ));
        let text = "NOTATABLE v1\n";
        assert!(matches!(
            Table::load(&mut text.as_bytes()),
            Err(StorageError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn format_error_reports_line_offset() {
        let text = "SEALTABLE v1\nKey:integer:false\trows_x:text:false\nrows\t2\n1\ta\n2\n";
        let offset = text.rfind("2\n").unwrap() as u64;
        match Table::load(&mut text.as_bytes()) {
            Err(StorageError::Format { offset: o, .. }) => assert_eq!(o, offset),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encrypted_cell_in_plain_column_rejected() {
        let text = format!("SEALTABLE v1\nKey:integer:false\tA:text:false\nrows\t1\n1\tenc:{}\n", "00".repeat(NONCE_LEN));
        assert!(matches!(Table::load(&mut text.as_bytes()), Err(StorageError::Format { .. })));
    }

    #[test]
    fn text_that_looks_like_envelope_survives() {
        let data = TableData {
            columns: vec![ColumnSpec::new("A", Kind::Text, true)],
            rows: vec![vec![Field::Plain(Value::Text("enc:abc\t\\".into()))]],
        };
        let mut buf = Vec::new();
        write_table_data(&data, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("\\enc:abc\\t\\\\"));
        assert_eq!(read_table_data(&mut buf.as_slice()).unwrap(), data);
    }

    fn field_strategy(spec: ColumnSpec) -> BoxedStrategy<Field> {
        let plain: BoxedStrategy<Value> = match spec.kind {
            Kind::Integer => any::<i64>().prop_map(Value::Integer).boxed(),
            Kind::Decimal => (any::<i32>(), 0u32..1000)
                .prop_map(|(i, f)| Value::Decimal(Decimal::parse(&format!("{i}.{f:03}")).unwrap()))
                .boxed(),
            Kind::Text => "[ -~\\t\\n\\r\u{e9}\u{4e2d}]{0,12}".prop_map(Value::Text).boxed(),
        };
        if spec.sensitive {
            prop_oneof![
                plain.prop_map(Field::Plain),
                (any::<[u8; NONCE_LEN]>(), proptest::collection::vec(any::<u8>(), 0..40))
                    .prop_map(|(n, b)| Field::Encrypted(CipherEnvelope::new(n, b))),
            ]
            .boxed()
        } else {
            plain.prop_map(Field::Plain).boxed()
        }
    }

    fn table_strategy() -> impl Strategy<Value = Table> {
        let kinds = prop_oneof![Just(Kind::Integer), Just(Kind::Decimal), Just(Kind::Text)];
        proptest::collection::vec((kinds, any::<bool>()), 0..5).prop_flat_map(|cols| {
            let mut columns = vec![ColumnSpec::new("Key", Kind::Integer, false)];
            columns.extend(
                cols.into_iter()
                    .enumerate()
                    .map(|(i, (k, s))| ColumnSpec::new(format!("C{i}"), k, s)),
            );
            let schema = Schema::new(columns.clone()).unwrap();
            let row = columns[1..]
                .iter()
                .cloned()
                .map(field_strategy)
                .collect::<Vec<_>>();
            (
                Just(schema),
                proptest::collection::btree_set(1u64..10_000, 0..20),
                proptest::collection::vec(row, 20),
            )
                .prop_map(|(schema, keys, rows)| {
                    let records = keys.into_iter().zip(rows).map(|(k, rest)| {
                        let mut fields = vec![Field::Plain(Value::Integer(k as i64))];
                        fields.extend(rest);
                        super::super::Record::from_fields(fields).unwrap()
                    });
                    Table::from_records(schema, records).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn save_load_is_identity(t in table_strategy()) {
            let bytes = save(&t);
            let back = Table::load(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(save(&back), bytes);
        }
    }
}
