//! Plan execution.
//!
//! Rewritten plans run in two decryption phases: matching search-table rows
//! have their record keys decrypted (inner), then the fetched main-table rows
//! have their projected sensitive cells decrypted (outer). Direct plans scan
//! the main table. [`baseline_full_decrypt`] is the comparison strategy that
//! decrypts whole sensitive columns before filtering.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::cipher::{CipherError, CipherKey, CountingCipher, DecryptionCounter, KeyPair};
use crate::protect::{ProtectedPair, SearchTable, SecureMetadata};
use crate::query::{
    classify, AtomTest, BoundPredicate, KeyExpr, Probe, ProjectedColumn, QueryAst, QueryError, QueryPlan,
};
use crate::storage::{Field, Record, Table, SENTINEL_KEY};
use crate::value::{Kind, Value, ValueError};

/// Record keys surviving the inner phase, ascending.
pub type KeySet = BTreeSet<u64>;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("user `{user}` is not authorized for secure schema `{schema}`")]
    Unauthorized { user: String, schema: String },
    #[error("no search table for column `{0}`")]
    MissingSearchTable(String),
    #[error("decrypted record key has {0} bytes, expected 8")]
    MalformedKey(usize),
    #[error("decrypted value is not a valid {kind}: {message}")]
    CorruptValue { kind: Kind, message: String },
    #[error("baseline strategy needs a predicate over an encrypted column")]
    NothingEncrypted,
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

/// Who is running a query and which schemas they may enter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthContext {
    pub user: String,
    pub granted: BTreeSet<String>,
}

impl AuthContext {
    pub fn new(user: impl Into<String>, granted: impl IntoIterator<Item = String>) -> Self {
        Self {
            user: user.into(),
            granted: granted.into_iter().collect(),
        }
    }

    /// Grants the secure schema if `user` is on the metadata's principal list.
    pub fn for_user(user: &str, meta: &SecureMetadata) -> Self {
        let granted = meta
            .is_principal(user)
            .then(|| meta.secure_schema.clone())
            .into_iter();
        Self::new(user, granted)
    }
}

/// Checks the secure-schema grant.
pub fn authorize(auth: &AuthContext, meta: &SecureMetadata) -> Result<(), ExecError> {
    if auth.granted.contains(&meta.secure_schema) {
        Ok(())
    } else {
        Err(ExecError::Unauthorized {
            user: auth.user.clone(),
            schema: meta.secure_schema.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultStatus {
    Found,
    /// No record matched; not an error.
    SearchUnsuccessful,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecStats {
    /// Search-table rows examined by probes.
    pub keys_probed: u64,
    /// Rows returned.
    pub keys_matched: u64,
    /// Decrypted keys dropped as sentinel or absent from the main table.
    pub noise_filtered: u64,
    pub decrypt_calls_inner: u64,
    pub decrypt_calls_outer: u64,
    pub elapsed: Duration,
}

impl ExecStats {
    pub fn decrypt_calls(&self) -> u64 {
        self.decrypt_calls_inner + self.decrypt_calls_outer
    }

    pub fn render(&self) -> String {
        format!(
            "keys_probed={} keys_matched={} noise_filtered={} decrypt_calls_inner={} decrypt_calls_outer={} elapsed_us={}",
            self.keys_probed,
            self.keys_matched,
            self.noise_filtered,
            self.decrypt_calls_inner,
            self.decrypt_calls_outer,
            self.elapsed.as_micros()
        )
    }
}

/// Decrypted rows in ascending key order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub keys: Vec<u64>,
    pub stats: ExecStats,
    pub status: ResultStatus,
}

impl ResultSet {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn decode_key(bytes: &[u8]) -> Result<u64, ExecError> {
    let arr: [u8; 8] = bytes.try_into().map_err(|_| ExecError::MalformedKey(bytes.len()))?;
    Ok(u64::from_be_bytes(arr))
}

fn decode_value(bytes: Vec<u8>, kind: Kind) -> Result<Value, ExecError> {
    let text = String::from_utf8(bytes).map_err(|e| ExecError::CorruptValue {
        kind,
        message: e.to_string(),
    })?;
    Value::parse(kind, &text).map_err(|e: ValueError| ExecError::CorruptValue {
        kind,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProbeStats {
    pub rows_examined: u64,
    pub keys_decrypted: u64,
    pub noise_filtered: u64,
}

/// Scans `search` on plaintext values, decrypting the key of each matching
/// row only. Sentinel keys and keys absent from `main` are dropped.
pub fn probe_search_table(
    test: &AtomTest,
    search: &SearchTable,
    main: &Table,
    cipher: &CountingCipher,
    search_key: &CipherKey,
    counter: &DecryptionCounter,
) -> Result<(KeySet, ProbeStats), ExecError> {
    let mut keys = KeySet::new();
    let mut stats = ProbeStats::default();
    for row in search.scan() {
        stats.rows_examined += 1;
        if !test.matches(&row.value) {
            continue;
        }
        stats.keys_decrypted += 1;
        let key = decode_key(&cipher.decrypt(&row.enc_key, search_key, counter)?)?;
        if key == SENTINEL_KEY || !main.contains_key(key) {
            stats.noise_filtered += 1;
            continue;
        }
        keys.insert(key);
    }
    Ok((keys, stats))
}

struct Run<'a> {
    pair: &'a ProtectedPair,
    cipher: &'a CountingCipher,
    keys: &'a KeyPair,
    counter: &'a DecryptionCounter,
    stats: ExecStats,
}

impl Run<'_> {
    fn probe(&mut self, probe: &Probe) -> Result<KeySet, ExecError> {
        let search = self
            .pair
            .search_table(&probe.atom.column)
            .ok_or_else(|| ExecError::MissingSearchTable(probe.atom.column.clone()))?;
        let (keys, stats) = probe_search_table(
            &probe.atom.test,
            search,
            self.pair.main(),
            self.cipher,
            &self.keys.search,
            self.counter,
        )?;
        self.stats.keys_probed += stats.rows_examined;
        self.stats.noise_filtered += stats.noise_filtered;
        Ok(keys)
    }

    fn filter_keys(&self, keys: KeySet, pred: &BoundPredicate) -> KeySet {
        let main = self.pair.main();
        keys.into_iter()
            .filter(|k| main.lookup(*k).is_some_and(|r| pred.eval(r)))
            .collect()
    }

    fn eval(&mut self, expr: &KeyExpr) -> Result<KeySet, ExecError> {
        match expr {
            KeyExpr::Probe(p) => self.probe(p),
            KeyExpr::Filter(pred) => Ok(self
                .pair
                .main()
                .rows()
                .iter()
                .filter(|r| pred.eval(*r))
                .map(Record::key)
                .collect()),
            KeyExpr::And(l, r) => match (l.as_ref(), r.as_ref()) {
                (KeyExpr::Filter(pred), other) | (other, KeyExpr::Filter(pred)) => {
                    let keys = self.eval(other)?;
                    Ok(self.filter_keys(keys, pred))
                }
                _ => {
                    let left = self.eval(l)?;
                    let right = self.eval(r)?;
                    Ok(left.intersection(&right).copied().collect())
                }
            },
            KeyExpr::Or(l, r) => {
                let mut left = self.eval(l)?;
                left.extend(self.eval(r)?);
                Ok(left)
            }
        }
    }
}

/// Projects `record`, decrypting sensitive cells not already in `known`.
/// Each sensitive column costs at most one decryption per row.
fn project(
    record: &Record,
    projection: &[ProjectedColumn],
    known: &mut HashMap<usize, Value>,
    table: &Table,
    cipher: &CountingCipher,
    main_key: &CipherKey,
    counter: &DecryptionCounter,
) -> Result<Vec<Value>, ExecError> {
    projection
        .iter()
        .map(|col| match record.field(col.index) {
            Field::Plain(v) => Ok(v.clone()),
            Field::Encrypted(env) => {
                if let Some(v) = known.get(&col.index) {
                    return Ok(v.clone());
                }
                let kind = table.schema().columns()[col.index].kind;
                let v = decode_value(cipher.decrypt(env, main_key, counter)?, kind)?;
                known.insert(col.index, v.clone());
                Ok(v)
            }
        })
        .collect()
}

fn finish(
    projection: &[ProjectedColumn],
    rows: Vec<Vec<Value>>,
    keys: Vec<u64>,
    mut stats: ExecStats,
    started: Instant,
) -> ResultSet {
    stats.keys_matched = rows.len() as u64;
    stats.elapsed = started.elapsed();
    let status = if rows.is_empty() {
        ResultStatus::SearchUnsuccessful
    } else {
        ResultStatus::Found
    };
    ResultSet {
        columns: projection.iter().map(|c| c.name.clone()).collect(),
        rows,
        keys,
        stats,
        status,
    }
}

/// Runs a plan. Rewritten plans require the secure-schema grant, checked
/// before any search-table row is read.
pub fn execute(
    plan: &QueryPlan,
    pair: &ProtectedPair,
    auth: &AuthContext,
    cipher: &CountingCipher,
    keys: &KeyPair,
    counter: &DecryptionCounter,
) -> Result<ResultSet, ExecError> {
    let started = Instant::now();
    let main = pair.main();
    match plan {
        QueryPlan::Direct(p) => {
            let mut matched: Vec<&Record> = main
                .rows()
                .iter()
                .filter(|r| p.filter.as_ref().is_none_or(|f| f.eval(*r)))
                .collect();
            matched.sort_by_key(|r| r.key());
            let before = counter.count();
            let mut rows = Vec::with_capacity(matched.len());
            for r in &matched {
                rows.push(project(r, &p.projection, &mut HashMap::new(), main, cipher, &keys.main, counter)?);
            }
            let stats = ExecStats {
                decrypt_calls_outer: counter.count() - before,
                ..ExecStats::default()
            };
            Ok(finish(&p.projection, rows, matched.iter().map(|r| r.key()).collect(), stats, started))
        }
        QueryPlan::Rewritten(p) => {
            authorize(auth, pair.meta())?;
            let mut run = Run {
                pair,
                cipher,
                keys,
                counter,
                stats: ExecStats::default(),
            };
            let before_inner = counter.count();
            let key_set = run.eval(&p.keys)?;
            let mut stats = run.stats;
            stats.decrypt_calls_inner = counter.count() - before_inner;

            let before_outer = counter.count();
            let mut rows = Vec::with_capacity(key_set.len());
            let mut result_keys = Vec::with_capacity(key_set.len());
            for key in key_set {
                let Some(record) = main.lookup(key) else { continue };
                if p.residual.as_ref().is_some_and(|r| !r.eval(record)) {
                    continue;
                }
                rows.push(project(record, &p.projection, &mut HashMap::new(), main, cipher, &keys.main, counter)?);
                result_keys.push(key);
            }
            stats.decrypt_calls_outer = counter.count() - before_outer;
            Ok(finish(&p.projection, rows, result_keys, stats, started))
        }
    }
}

/// Full-column strategy: decrypts every cell of each sensitive column named
/// in the predicate, filters on plaintext, then decrypts any remaining
/// projected sensitive cells of matching rows.
pub fn baseline_full_decrypt(
    ast: &QueryAst,
    pair: &ProtectedPair,
    cipher: &CountingCipher,
    main_key: &CipherKey,
    counter: &DecryptionCounter,
) -> Result<ResultSet, ExecError> {
    let started = Instant::now();
    let main = pair.main();
    let c = classify(ast, pair.meta(), main.schema())?;
    let predicate = match c.predicate {
        Some(p) if c.touches_encrypted => p,
        _ => return Err(ExecError::NothingEncrypted),
    };
    let referenced: BTreeSet<usize> = c.encrypted_atoms.iter().map(|a| a.index).collect();
    let kinds: Vec<Kind> = main.schema().columns().iter().map(|s| s.kind).collect();

    // Decrypt whole columns first, then search.
    let mut decrypted: Vec<Vec<Option<Value>>> = Vec::with_capacity(main.len());
    for record in main.rows() {
        let mut row: Vec<Option<Value>> = record.fields().iter().map(|f| f.as_plain().cloned()).collect();
        for &i in &referenced {
            if let Field::Encrypted(env) = record.field(i) {
                row[i] = Some(decode_value(cipher.decrypt(env, main_key, counter)?, kinds[i])?);
            }
        }
        decrypted.push(row);
    }
    let inner = (main.len() * referenced.len()) as u64;

    let mut matched: Vec<(u64, usize)> = decrypted
        .iter()
        .enumerate()
        .filter(|(_, row)| predicate.eval(row.as_slice()))
        .map(|(i, _)| (main.rows()[i].key(), i))
        .collect();
    matched.sort_unstable();

    let before_outer = counter.count();
    let mut rows = Vec::with_capacity(matched.len());
    for &(_, i) in &matched {
        let mut known: HashMap<usize, Value> = referenced
            .iter()
            .filter_map(|&idx| decrypted[i][idx].clone().map(|v| (idx, v)))
            .collect();
        rows.push(project(&main.rows()[i], &c.projection, &mut known, main, cipher, main_key, counter)?);
    }
    let stats = ExecStats {
        decrypt_calls_inner: inner,
        decrypt_calls_outer: counter.count() - before_outer,
        ..ExecStats::default()
    };
    Ok(finish(&c.projection, rows, matched.iter().map(|m| m.0).collect(), stats, started))
}
