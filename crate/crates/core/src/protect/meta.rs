//! `SEALMETA v1`: tab-separated `key<TAB>value...` lines after a header.
//!
//! ```text
//! SEALMETA v1
//! table          Encrypted_Data_Table
//! secure_schema  Secure_Schema
//! cipher         chacha20poly1305
//! key_mode       derived
//! noise_fraction 1/20
//! shuffle_seed   7
//! noise_seed     9
//! principal      alice
//! alias          Salary  QS_QWERTYUI  ASDFGHJK  QWERTYUI
//! ```

use std::collections::BTreeSet;
use std::io::{Read, Write};

use thiserror::Error;

use super::NoiseFraction;
use crate::cipher::{CipherKind, KeyMode};

pub const META_HEADER: &str = "SEALMETA v1";

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("metadata line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported metadata version `{0}`")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the search table for one sensitive column lives and what its
/// headings are called.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasEntry {
    pub column: String,
    pub table_id: String,
    pub alias_key: String,
    pub alias_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureMetadata {
    pub table_name: String,
    pub secure_schema: String,
    pub cipher: CipherKind,
    pub key_mode: KeyMode,
    pub noise_fraction: NoiseFraction,
    pub shuffle_seed: u64,
    pub noise_seed: u64,
    pub principals: BTreeSet<String>,
    pub aliases: Vec<AliasEntry>,
}

impl SecureMetadata {
    pub fn alias_for(&self, column: &str) -> Option<&AliasEntry> {
        self.aliases.iter().find(|a| a.column == column)
    }

    pub fn aliases(&self) -> &[AliasEntry] {
        &self.aliases
    }

    pub fn is_principal(&self, user: &str) -> bool {
        self.principals.contains(user)
    }

    pub fn save(&self, sink: &mut impl Write) -> std::io::Result<()> {
        let mut out = format!("{META_HEADER}\n");
        out.push_str(&format!("table\t{}\n", self.table_name));
        out.push_str(&format!("secure_schema\t{}\n", self.secure_schema));
        out.push_str(&format!("cipher\t{}\n", self.cipher.id()));
        out.push_str(&format!("key_mode\t{}\n", self.key_mode.as_str()));
        out.push_str(&format!("noise_fraction\t{}\n", self.noise_fraction));
        out.push_str(&format!("shuffle_seed\t{}\n", self.shuffle_seed));
        out.push_str(&format!("noise_seed\t{}\n", self.noise_seed));
        for p in &self.principals {
            out.push_str(&format!("principal\t{p}\n"));
        }
        for a in &self.aliases {
            out.push_str(&format!(
                "alias\t{}\t{}\t{}\t{}\n",
                a.column, a.table_id, a.alias_key, a.alias_value
            ));
        }
        sink.write_all(out.as_bytes())
    }

    pub fn load(source: &mut impl Read) -> Result<Self, MetaError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let mut lines = text.lines().enumerate();
        let fail = |line: usize, message: String| MetaError::Format { line: line + 1, message };

        match lines.next() {
            Some((_, h)) if h == META_HEADER => {}
            Some((_, h)) if h.starts_with("SEALMETA ") => {
                return Err(MetaError::VersionMismatch(h["SEALMETA ".len()..].to_string()))
            }
            _ => return Err(fail(0, format!("missing `{META_HEADER}` header"))),
        }

        let mut table_name = None;
        let mut secure_schema = None;
        let mut cipher = None;
        let mut key_mode = None;
        let mut noise_fraction = None;
        let mut shuffle_seed = None;
        let mut noise_seed = None;
        let mut principals = BTreeSet::new();
        let mut aliases = Vec::new();

        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let single = || -> Result<&str, MetaError> {
                match parts.as_slice() {
                    [_, v] => Ok(v),
                    _ => Err(fail(n, format!("expected one value in `{line}`"))),
                }
            };
            match parts[0] {
                "table" => table_name = Some(single()?.to_string()),
                "secure_schema" => secure_schema = Some(single()?.to_string()),
                "cipher" => cipher = Some(single()?.parse::<CipherKind>().map_err(|e| fail(n, e))?),
                "key_mode" => key_mode = Some(single()?.parse::<KeyMode>().map_err(|e| fail(n, e))?),
                "noise_fraction" => {
                    noise_fraction = Some(
                        single()?
                            .parse::<NoiseFraction>()
                            .map_err(|e| fail(n, e.to_string()))?,
                    )
                }
                "shuffle_seed" => shuffle_seed = Some(single()?.parse::<u64>().map_err(|e| fail(n, e.to_string()))?),
                "noise_seed" => noise_seed = Some(single()?.parse::<u64>().map_err(|e| fail(n, e.to_string()))?),
                "principal" => {
                    principals.insert(single()?.to_string());
                }
                "alias" => match parts.as_slice() {
                    [_, column, table_id, alias_key, alias_value] => aliases.push(AliasEntry {
                        column: column.to_string(),
                        table_id: table_id.to_string(),
                        alias_key: alias_key.to_string(),
                        alias_value: alias_value.to_string(),
                    }),
                    _ => return Err(fail(n, "alias needs column, table id, key and value headings".into())),
                },
                other => return Err(fail(n, format!("unknown entry `{other}`"))),
            }
        }

        let missing = |what: &str| MetaError::Format {
            line: 0,
            message: format!("missing `{what}` entry"),
        };
        Ok(Self {
            table_name: table_name.ok_or_else(|| missing("table"))?,
            secure_schema: secure_schema.ok_or_else(|| missing("secure_schema"))?,
            cipher: cipher.ok_or_else(|| missing("cipher"))?,
            key_mode: key_mode.ok_or_else(|| missing("key_mode"))?,
            noise_fraction: noise_fraction.ok_or_else(|| missing("noise_fraction"))?,
            shuffle_seed: shuffle_seed.ok_or_else(|| missing("shuffle_seed"))?,
            noise_seed: noise_seed.ok_or_else(|| missing("noise_seed"))?,
            principals,
            aliases,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SecureMetadata {
        SecureMetadata {
            table_name: "Encrypted_Data_Table".into(),
            secure_schema: "Secure_Schema".into(),
            cipher: CipherKind::Aead,
            key_mode: KeyMode::Derived,
            noise_fraction: NoiseFraction::new(1, 20).unwrap(),
            shuffle_seed: 7,
            noise_seed: u64::MAX,
            principals: ["alice".to_string(), "bob".to_string()].into_iter().collect(),
            aliases: vec![AliasEntry {
                column: "Salary".into(),
                table_id: "QS_QWERTYUI".into(),
                alias_key: "ASDFGHJK".into(),
                alias_value: "QWERTYUI".into(),
            }],
        }
    }

    #[test]
    fn roundtrip() {
        let mut buf = Vec::new();
        sample().save(&mut buf).unwrap();
        assert!(buf.starts_with(b"SEALMETA v1\ntable\tEncrypted_Data_Table\n"));
        assert_eq!(SecureMetadata::load(&mut buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SecureMetadata::load(&mut "SEALMETA v9\n".as_bytes()),
            Err(MetaError::VersionMismatch(v)) if v == "v9"
        ));
        assert!(matches!(
            SecureMetadata::load(&mut "SEALTABLE v1\n".as_bytes()),
            Err(MetaError::Format { .. })
        ));
        let mut buf = Vec::new();
        sample().save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("shuffle_seed\t7\n", "");
        assert!(matches!(SecureMetadata::load(&mut text.as_bytes()), Err(MetaError::Format { .. })));
        let text = "SEALMETA v1\nbogus\t1\n";
        assert!(matches!(
            SecureMetadata::load(&mut text.as_bytes()),
            Err(MetaError::Format { line: 2, .. })
        ));
    }
}
