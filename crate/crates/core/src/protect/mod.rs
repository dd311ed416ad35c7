//! Builds the protected pair: the main table with its sensitive cells
//! encrypted, and one shuffled, noise-padded search table per sensitive
//! column holding plaintext values next to encrypted record keys.

mod meta;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cipher::{CipherEnvelope, CipherError, CipherKind, CountingCipher, KeyMode, KeyPair, NONCE_LEN};
use crate::storage::{ColumnSpec, Field, Record, StorageError, Table, TableData, SENTINEL_KEY};
use crate::value::{Kind, Value};

pub use meta::{AliasEntry, MetaError, SecureMetadata, META_HEADER};
pub use persist::{
    load_main, load_meta, load_pair, load_pair_with, load_search_tables, main_path, meta_path, save_pair, search_path,
    PersistError, MAIN_FILE, META_FILE, SECURE_DIR,
};

#[derive(Debug, Error)]
pub enum ProtectError {
    #[error("table has no sensitive column")]
    NoSensitiveColumn,
    #[error("nonce generator repeated a nonce")]
    NonceExhaustion,
    #[error("cannot sample {0} noise rows from an empty value domain")]
    EmptyDomain(usize),
    #[error("invalid noise fraction: {0}")]
    InvalidNoiseFraction(String),
    #[error("invalid search table: {0}")]
    InvalidSearchTable(String),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Exact rational in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseFraction {
    num: u64,
    den: u64,
}

impl NoiseFraction {
    pub const ZERO: NoiseFraction = NoiseFraction { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, ProtectError> {
        if den == 0 || num >= den {
            return Err(ProtectError::InvalidNoiseFraction(format!("{num}/{den} is not in [0, 1)")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `ceil(fraction * real_rows)`.
    pub fn noise_rows(self, real_rows: usize) -> usize {
        let n = self.num as u128 * real_rows as u128;
        n.div_ceil(self.den as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for NoiseFraction {
    /// 5%.
    fn default() -> Self {
        Self { num: 1, den: 20 }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

impl FromStr for NoiseFraction {
    type Err = ProtectError;

    /// Accepts `a/b` or a plain decimal such as `0.05`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProtectError::InvalidNoiseFraction(format!("`{s}`"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            return Self::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || (int.is_empty() && frac.is_empty())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac_val)).ok_or_else(bad)?;
        Self::new(num, den)
    }
}

impl fmt::Display for NoiseFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Hands out 12-byte nonces and refuses to repeat one within a protect run.
pub struct NonceSource<R: RngCore = ChaCha20Rng> {
    rng: R,
    issued: HashSet<[u8; NONCE_LEN]>,
}

impl NonceSource<ChaCha20Rng> {
    pub fn seeded(seed: u64) -> Self {
        Self::with_rng(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn from_entropy() -> Self {
        Self::with_rng(ChaCha20Rng::from_entropy())
    }
}

impl<R: RngCore> NonceSource<R> {
    pub fn with_rng(rng: R) -> Self {
        Self {
            rng,
            issued: HashSet::new(),
        }
    }

    pub fn next_nonce(&mut self) -> Result<[u8; NONCE_LEN], ProtectError> {
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        if !self.issued.insert(nonce) {
            return Err(ProtectError::NonceExhaustion);
        }
        Ok(nonce)
    }

    pub fn issued(&self) -> usize {
        self.issued.len()
    }
}

/// One search-table row: an encrypted record key next to a plaintext value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRow {
    pub enc_key: CipherEnvelope,
    pub value: Value,
}

/// Search table for one sensitive column. Row reads through [`scan`] are
/// counted so tests can prove a code path never touched the table.
///
/// [`scan`]: SearchTable::scan
#[derive(Debug)]
pub struct SearchTable {
    alias_key_column: String,
    alias_value_column: String,
    value_kind: Kind,
    rows: Vec<SearchRow>,
    reads: AtomicU64,
}

impl SearchTable {
    pub fn new(alias_key_column: String, alias_value_column: String, value_kind: Kind, rows: Vec<SearchRow>) -> Self {
        Self {
            alias_key_column,
            alias_value_column,
            value_kind,
            rows,
            reads: AtomicU64::new(0),
        }
    }

    pub fn alias_key_column(&self) -> &str {
        &self.alias_key_column
    }

    pub fn alias_value_column(&self) -> &str {
        &self.alias_value_column
    }

    pub fn value_kind(&self) -> Kind {
        self.value_kind
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Iterates rows, counting each one read.
    pub fn scan(&self) -> impl Iterator<Item = &SearchRow> + '_ {
        self.rows.iter().inspect(|_| {
            self.reads.fetch_add(1, Ordering::Relaxed);
        })
    }

    pub fn rows_read(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Uncounted access for persistence and audits.
    pub fn rows_unaudited(&self) -> &[SearchRow] {
        &self.rows
    }

    pub fn to_data(&self) -> TableData {
        TableData {
            columns: vec![
                ColumnSpec::new(&self.alias_key_column, Kind::Integer, true),
                ColumnSpec::new(&self.alias_value_column, self.value_kind, false),
            ],
            rows: self
                .rows
                .iter()
                .map(|r| vec![Field::Encrypted(r.enc_key.clone()), Field::Plain(r.value.clone())])
                .collect(),
        }
    }

    pub fn from_data(data: TableData) -> Result<Self, ProtectError> {
        let bad = |m: &str| ProtectError::InvalidSearchTable(m.to_string());
        let [key_col, value_col] = data.columns.as_slice() else {
            return Err(bad("search table must have exactly two columns"));
        };
        if !key_col.sensitive || value_col.sensitive {
            return Err(bad("first column must be the encrypted key, second the plaintext value"));
        }
        let rows = data
            .rows
            .into_iter()
            .map(|row| match <[Field; 2]>::try_from(row) {
                Ok([Field::Encrypted(enc_key), Field::Plain(value)]) => Ok(SearchRow { enc_key, value }),
                _ => Err(bad("search row must be an envelope followed by a plaintext value")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(key_col.name.clone(), value_col.name.clone(), value_col.kind, rows))
    }
}

impl Clone for SearchTable {
    fn clone(&self) -> Self {
        Self::new(
            self.alias_key_column.clone(),
            self.alias_value_column.clone(),
            self.value_kind,
            self.rows.clone(),
        )
    }
}

impl PartialEq for SearchTable {
    fn eq(&self, other: &Self) -> bool {
        self.alias_key_column == other.alias_key_column
            && self.alias_value_column == other.alias_value_column
            && self.value_kind == other.value_kind
            && self.rows == other.rows
    }
}

/// Settings for one protect run.
#[derive(Debug, Clone)]
pub struct ProtectConfig {
    pub table_name: String,
    pub secure_schema: String,
    pub noise_fraction: NoiseFraction,
    pub shuffle_seed: u64,
    pub noise_seed: u64,
    /// `None` draws nonces from OS entropy.
    pub nonce_seed: Option<u64>,
    pub principals: BTreeSet<String>,
    pub key_mode: KeyMode,
}

impl Default for ProtectConfig {
    fn default() -> Self {
        Self {
            table_name: "Encrypted_Data_Table".into(),
            secure_schema: "Secure_Schema".into(),
            noise_fraction: NoiseFraction::default(),
            shuffle_seed: 0,
            noise_seed: 0,
            nonce_seed: None,
            principals: BTreeSet::new(),
            key_mode: KeyMode::Derived,
        }
    }
}

/// The encrypted main table, its search tables, and the secure metadata.
#[derive(Debug, Clone)]
pub struct ProtectedPair {
    main: Table,
    search_tables: BTreeMap<String, SearchTable>,
    meta: SecureMetadata,
}

impl ProtectedPair {
    /// Assembles a pair, checking that every sensitive column has an alias
    /// entry and a search table with matching value kind.
    pub fn assemble(
        main: Table,
        search_tables: BTreeMap<String, SearchTable>,
        meta: SecureMetadata,
    ) -> Result<Self, ProtectError> {
        for (_, spec) in main.schema().sensitive_columns() {
            let entry = meta.alias_for(&spec.name).ok_or_else(|| {
                ProtectError::InvalidSearchTable(format!("no alias entry for sensitive column `{}`", spec.name))
            })?;
            let table = search_tables.get(&spec.name).ok_or_else(|| {
                ProtectError::InvalidSearchTable(format!("no search table for `{}`", spec.name))
            })?;
            if table.value_kind() != spec.kind
                || table.alias_key_column() != entry.alias_key
                || table.alias_value_column() != entry.alias_value
            {
                return Err(ProtectError::InvalidSearchTable(format!(
                    "search table for `{}` does not match its metadata",
                    spec.name
                )));
            }
        }
        if meta.aliases().len() != search_tables.len() {
            return Err(ProtectError::InvalidSearchTable("metadata lists unknown columns".into()));
        }
        Ok(Self {
            main,
            search_tables,
            meta,
        })
    }

    /// A pair with no search tables loaded. Only direct plans can run on it.
    pub fn without_search_tables(main: Table, meta: SecureMetadata) -> Self {
        Self {
            main,
            search_tables: BTreeMap::new(),
            meta,
        }
    }

    pub fn main(&self) -> &Table {
        &self.main
    }

    pub fn meta(&self) -> &SecureMetadata {
        &self.meta
    }

    pub fn search_table(&self, column: &str) -> Option<&SearchTable> {
        self.search_tables.get(column)
    }

    pub fn search_tables(&self) -> &BTreeMap<String, SearchTable> {
        &self.search_tables
    }

    /// Total rows read from all search tables so far.
    pub fn search_rows_read(&self) -> u64 {
        self.search_tables.values().map(SearchTable::rows_read).sum()
    }
}

fn derive_seed(seed: u64, purpose: &str, column: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_be_bytes())
        .chain_update(purpose.as_bytes())
        .chain_update([0])
        .chain_update(column.as_bytes())
        .finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

fn alias_candidate(seed: u64, column: &str, attempt: u32) -> (String, String) {
    let digest = Sha256::new()
        .chain_update(seed.to_be_bytes())
        .chain_update(b"alias")
        .chain_update(attempt.to_be_bytes())
        .chain_update(column.as_bytes())
        .finalize();
    let letters = |bytes: &[u8]| bytes.iter().map(|b| (b'A' + b % 26) as char).collect::<String>();
    (letters(&digest[..8]), letters(&digest[8..16]))
}

/// Two distinct 8-letter uppercase headings standing in for the key and value
/// columns of a search table. Deterministic in `(seed, column)`.
pub fn alias_columns(seed: u64, column: &str) -> (String, String) {
    alias_columns_avoiding(seed, column, &HashSet::new())
}

/// As [`alias_columns`], but re-derives until neither heading is in `taken`.
pub fn alias_columns_avoiding(seed: u64, column: &str, taken: &HashSet<String>) -> (String, String) {
    (0u32..)
        .map(|attempt| alias_candidate(seed, column, attempt))
        .find(|(k, v)| k != v && !taken.contains(k) && !taken.contains(v))
        .expect("alias space exhausted")
}

fn encode_key(key: u64) -> [u8; 8] {
    key.to_be_bytes()
}

/// `count` decoy rows: values drawn uniformly (with replacement) from
/// `real_values`, keys encrypting the sentinel.
pub fn add_noise<R: RngCore>(
    real_values: &[Value],
    count: usize,
    noise_seed: u64,
    cipher: &CountingCipher,
    search_key: &crate::cipher::CipherKey,
    nonces: &mut NonceSource<R>,
) -> Result<Vec<SearchRow>, ProtectError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if real_values.is_empty() {
        return Err(ProtectError::EmptyDomain(count));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    (0..count)
        .map(|_| {
            let value = real_values[rng.gen_range(0..real_values.len())].clone();
            let enc_key = cipher.encrypt(&encode_key(SENTINEL_KEY), search_key, &nonces.next_nonce()?)?;
            Ok(SearchRow { enc_key, value })
        })
        .collect()
}

/// Parameters for one search table.
#[derive(Debug, Clone)]
pub struct SearchTableConfig {
    pub alias_key_column: String,
    pub alias_value_column: String,
    pub value_kind: Kind,
    pub noise_fraction: NoiseFraction,
    pub shuffle_seed: u64,
    pub noise_seed: u64,
}

/// Encrypts each real key, appends `ceil(fraction * n)` noise rows, then
/// shuffles with a Fisher-Yates permutation seeded by `shuffle_seed`.
pub fn build_search_table<R: RngCore>(
    column_values: &[(u64, Value)],
    cipher: &CountingCipher,
    search_key: &crate::cipher::CipherKey,
    nonces: &mut NonceSource<R>,
    config: &SearchTableConfig,
) -> Result<SearchTable, ProtectError> {
    let mut rows = Vec::with_capacity(column_values.len() + config.noise_fraction.noise_rows(column_values.len()));
    for (key, value) in column_values {
        if *key == SENTINEL_KEY {
            return Err(StorageError::ReservedKey(SENTINEL_KEY).into());
        }
        let enc_key = cipher.encrypt(&encode_key(*key), search_key, &nonces.next_nonce()?)?;
        rows.push(SearchRow {
            enc_key,
            value: value.clone(),
        });
    }
    let values: Vec<Value> = column_values.iter().map(|(_, v)| v.clone()).collect();
    let noise_count = config.noise_fraction.noise_rows(values.len());
    rows.extend(add_noise(&values, noise_count, config.noise_seed, cipher, search_key, nonces)?);

    rows.shuffle(&mut ChaCha20Rng::seed_from_u64(config.shuffle_seed));
    Ok(SearchTable::new(
        config.alias_key_column.clone(),
        config.alias_value_column.clone(),
        config.value_kind,
        rows,
    ))
}

/// Protects `table`: encrypts sensitive cells under `keys.main` and builds a
/// search table per sensitive column under `keys.search`.
pub fn protect(
    table: &Table,
    cipher: &CountingCipher,
    keys: &KeyPair,
    cipher_kind: CipherKind,
    config: &ProtectConfig,
) -> Result<ProtectedPair, ProtectError> {
    let schema = table.schema();
    let sensitive: Vec<(usize, ColumnSpec)> = schema.sensitive_columns().map(|(i, c)| (i, c.clone())).collect();
    if sensitive.is_empty() {
        return Err(ProtectError::NoSensitiveColumn);
    }
    let mut nonces = match config.nonce_seed {
        Some(seed) => NonceSource::seeded(seed),
        None => NonceSource::from_entropy(),
    };

    let mut taken: HashSet<String> = schema.columns().iter().map(|c| c.name.clone()).collect();
    let mut search_tables = BTreeMap::new();
    let mut aliases = Vec::new();
    for (index, spec) in &sensitive {
        let column_values = table
            .rows()
            .iter()
            .map(|r| match r.field(*index) {
                Field::Plain(v) => Ok((r.key(), v.clone())),
                Field::Encrypted(_) => Err(ProtectError::InvalidSearchTable(format!(
                    "column `{}` is already encrypted",
                    spec.name
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (alias_key, alias_value) = alias_columns_avoiding(config.shuffle_seed, &spec.name, &taken);
        taken.insert(alias_key.clone());
        taken.insert(alias_value.clone());
        let search = build_search_table(
            &column_values,
            cipher,
            &keys.search,
            &mut nonces,
            &SearchTableConfig {
                alias_key_column: alias_key.clone(),
                alias_value_column: alias_value.clone(),
                value_kind: spec.kind,
                noise_fraction: config.noise_fraction,
                shuffle_seed: derive_seed(config.shuffle_seed, "shuffle", &spec.name),
                noise_seed: derive_seed(config.noise_seed, "noise", &spec.name),
            },
        )?;
        aliases.push(AliasEntry {
            column: spec.name.clone(),
            table_id: format!("QS_{alias_value}"),
            alias_key,
            alias_value,
        });
        search_tables.insert(spec.name.clone(), search);
    }

    let mut main = Table::new(schema.clone());
    for record in table.rows() {
        let mut fields = record.clone().into_fields();
        for (index, _) in &sensitive {
            if let Field::Plain(v) = &fields[*index] {
                let env = cipher.encrypt(v.render().as_bytes(), &keys.main, &nonces.next_nonce()?)?;
                fields[*index] = Field::Encrypted(env);
            }
        }
        main.push(Record::from_fields(fields)?)?;
    }

    let meta = SecureMetadata {
        table_name: config.table_name.clone(),
        secure_schema: config.secure_schema.clone(),
        cipher: cipher_kind,
        key_mode: config.key_mode,
        noise_fraction: config.noise_fraction,
        shuffle_seed: config.shuffle_seed,
        noise_seed: config.noise_seed,
        principals: config.principals.clone(),
        aliases,
    };
    ProtectedPair::assemble(main, search_tables, meta)
}
