//! Encrypted-column querying over a main table and shuffled search tables.
//!
//! A plaintext [`Table`] is split by [`protect()`] into a [`ProtectedPair`]:
//! the main table with sensitive cells encrypted, plus one search table per
//! sensitive column pairing plaintext values with encrypted record keys.
//! Queries are parsed and rewritten into key lookups ([`rewrite`]) and run by
//! [`execute`], which decrypts only the keys and cells it needs.

pub mod bench;
pub mod cipher;
pub mod executor;
pub mod protect;
pub mod query;
pub mod storage;
pub mod value;

pub use cipher::{CipherKind, CountingCipher, DecryptionCounter, KeyMode, KeyPair};
pub use executor::{baseline_full_decrypt, execute, AuthContext, ExecError, ExecStats, ResultSet, ResultStatus};
pub use protect::{protect, NoiseFraction, ProtectConfig, ProtectError, ProtectedPair, SecureMetadata};
pub use query::{parse, rewrite, QueryAst, QueryError, QueryPlan};
pub use storage::{ingest_csv, ColumnSpec, Field, Record, Schema, StorageError, Table};
pub use value::{Kind, Value};
