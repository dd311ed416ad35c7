//! Selectivity sweep comparing the rewritten two-phase plan against full
//! column decryption.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::cipher::{CipherKind, CountingCipher, DecryptionCounter, KeyMode, KeyPair};
use crate::executor::{baseline_full_decrypt, execute, AuthContext, ExecError, ResultSet};
use crate::protect::{protect, NoiseFraction, ProtectConfig, ProtectError, ProtectedPair};
use crate::query::{parse, rewrite, QueryAst, QueryError, QueryPlan};
use crate::storage::{ColumnSpec, Field, Record, Schema, Table};
use crate::value::{Kind, Value};

pub const TABLE_NAME: &str = "Bench_Table";
pub const VALUE_COLUMN: &str = "Value";
pub const CSV_HEADER: &str = "selectivity,time_rewritten_us,time_baseline_us,decrypts_rewritten,decrypts_baseline";
const BENCH_USER: &str = "bench";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("strategies disagree at selectivity {selectivity}: {detail}")]
    MismatchedWorkload { selectivity: f64, detail: String },
    #[error("malformed report line {line}: {message}")]
    Report { line: usize, message: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Protect(#[from] ProtectError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub row_count: usize,
    /// Strictly increasing fractions in `(0, 1]`.
    pub selectivity_steps: Vec<f64>,
    pub repetitions: usize,
    pub decryption_delay: Duration,
    pub noise_fraction: NoiseFraction,
    pub cipher: CipherKind,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            row_count: 50_000,
            selectivity_steps: BenchConfig::even_steps(30, 0.60),
            repetitions: 5,
            decryption_delay: Duration::from_micros(2),
            noise_fraction: NoiseFraction::default(),
            cipher: CipherKind::Aead,
            seed: 1,
        }
    }
}

impl BenchConfig {
    /// `count` evenly spaced fractions ending at `max`.
    pub fn even_steps(count: usize, max: f64) -> Vec<f64> {
        (1..=count).map(|i| max * i as f64 / count as f64).collect()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.row_count == 0 {
            return bad("row_count must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if let Some(f) = self.selectivity_steps.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("selectivity {f} is outside (0, 1]"));
        }
        if self.selectivity_steps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("selectivity steps must be strictly increasing".into());
        }
        Ok(())
    }
}

/// One range query and the exact fraction of rows it matches.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadQuery {
    pub sql: String,
    pub matched_rows: usize,
    pub selectivity: f64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub table: Table,
    pub queries: Vec<WorkloadQuery>,
}

pub fn bench_schema() -> Schema {
    Schema::new(vec![
        ColumnSpec::new("Key", Kind::Integer, false),
        ColumnSpec::new("Bucket", Kind::Integer, false),
        ColumnSpec::new(VALUE_COLUMN, Kind::Integer, true),
    ])
    .expect("static schema is valid")
}

/// Builds a table whose sensitive `Value` column is a seeded permutation of
/// `0..row_count`, so `BETWEEN 0 AND m-1` matches exactly `m` rows.
pub fn generate_workload(config: &BenchConfig) -> Result<Workload, BenchError> {
    config.validate()?;
    let n = config.row_count;
    let mut values: Vec<i64> = (0..n as i64).collect();
    values.shuffle(&mut ChaCha20Rng::seed_from_u64(config.seed));
    let records = values.iter().enumerate().map(|(i, v)| {
        Record::from_fields(vec![
            Field::Plain(Value::Integer(i as i64 + 1)),
            Field::Plain(Value::Integer(v % 100)),
            Field::Plain(Value::Integer(*v)),
        ])
        .expect("generated key is valid")
    });
    let table = Table::from_records(bench_schema(), records).expect("generated keys are unique");

    let queries = config
        .selectivity_steps
        .iter()
        .map(|f| {
            let m = ((f * n as f64).round() as usize).clamp(1, n);
            WorkloadQuery {
                sql: format!(
                    "SELECT Key, {VALUE_COLUMN} FROM {TABLE_NAME} WHERE {VALUE_COLUMN} BETWEEN 0 AND {}",
                    m - 1
                ),
                matched_rows: m,
                selectivity: m as f64 / n as f64,
            }
        })
        .collect();
    Ok(Workload { table, queries })
}

/// Everything a run needs: the protected pair and the material to query it.
#[derive(Debug)]
pub struct Prepared {
    pub pair: ProtectedPair,
    pub keys: KeyPair,
    pub cipher: CountingCipher,
}

/// Protects the workload table with keys and nonces derived from the seed.
pub fn prepare(config: &BenchConfig, workload: &Workload) -> Result<Prepared, BenchError> {
    let keys = KeyPair::from_master(&config.seed.to_be_bytes().repeat(4), KeyMode::Derived, config.cipher.build().key_len())
        .map_err(ProtectError::from)?;
    let cipher = CountingCipher::of_kind(config.cipher);
    let protect_config = ProtectConfig {
        table_name: TABLE_NAME.into(),
        noise_fraction: config.noise_fraction,
        shuffle_seed: config.seed,
        noise_seed: config.seed,
        nonce_seed: Some(config.seed),
        principals: [BENCH_USER.to_string()].into_iter().collect(),
        ..ProtectConfig::default()
    };
    let pair = protect(&workload.table, &cipher, &keys, config.cipher, &protect_config)?;
    Ok(Prepared {
        pair,
        keys,
        cipher: cipher.with_delay(config.decryption_delay),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub selectivity: f64,
    pub time_rewritten_us: f64,
    pub time_baseline_us: f64,
    pub decrypts_rewritten: u64,
    pub decrypts_baseline: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub samples: Vec<BenchSample>,
    pub crossover: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Selectivity where `rewritten - baseline` first changes sign, linearly
/// interpolated between the two bracketing steps.
pub fn crossover(samples: &[BenchSample]) -> Option<f64> {
    let diff = |s: &BenchSample| s.time_rewritten_us - s.time_baseline_us;
    if let Some(s) = samples.first().filter(|s| diff(s) == 0.0) {
        return Some(s.selectivity);
    }
    samples.windows(2).find_map(|w| {
        let (d0, d1) = (diff(&w[0]), diff(&w[1]));
        if d1 == 0.0 {
            Some(w[1].selectivity)
        } else if d0.signum() != d1.signum() {
            Some(w[0].selectivity + (w[1].selectivity - w[0].selectivity) * d0 / (d0 - d1))
        } else {
            None
        }
    })
}

struct Timed {
    result: ResultSet,
    decrypts: u64,
    elapsed: Duration,
}

fn time_rewritten(prepared: &Prepared, plan: &QueryPlan, auth: &AuthContext) -> Result<Timed, BenchError> {
    let counter = DecryptionCounter::new("rewritten");
    let started = Instant::now();
    let result = execute(plan, &prepared.pair, auth, &prepared.cipher, &prepared.keys, &counter)?;
    let elapsed = started.elapsed();
    Ok(Timed {
        result,
        decrypts: counter.count(),
        elapsed,
    })
}

fn time_baseline(prepared: &Prepared, ast: &QueryAst) -> Result<Timed, BenchError> {
    let counter = DecryptionCounter::new("baseline");
    let started = Instant::now();
    let result = baseline_full_decrypt(ast, &prepared.pair, &prepared.cipher, &prepared.keys.main, &counter)?;
    let elapsed = started.elapsed();
    Ok(Timed {
        result,
        decrypts: counter.count(),
        elapsed,
    })
}

fn check_agreement(selectivity: f64, a: &Timed, b: &Timed, expected_rows: usize) -> Result<(), BenchError> {
    let mismatch = |detail: String| Err(BenchError::MismatchedWorkload { selectivity, detail });
    if a.result.keys != b.result.keys || a.result.rows != b.result.rows {
        return mismatch(format!(
            "rewritten returned {} rows, baseline {}",
            a.result.rows.len(),
            b.result.rows.len()
        ));
    }
    if a.result.rows.len() != expected_rows {
        return mismatch(format!("expected {expected_rows} rows, got {}", a.result.rows.len()));
    }
    Ok(())
}

/// Runs every step sequentially on the calling thread. Each repetition times
/// both strategies, alternating which goes first.
pub fn run(config: &BenchConfig, prepared: &Prepared, workload: &Workload) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let meta = prepared.pair.meta();
    let schema = prepared.pair.main().schema();
    let auth = AuthContext::for_user(BENCH_USER, meta);

    let mut samples = Vec::with_capacity(workload.queries.len());
    for query in &workload.queries {
        let ast = parse(&query.sql).map_err(QueryError::from)?;
        let plan = rewrite(&ast, meta, schema)?;
        let mut rewritten_times = Vec::with_capacity(config.repetitions);
        let mut baseline_times = Vec::with_capacity(config.repetitions);
        let mut counts = None;
        for rep in 0..config.repetitions {
            let (r, b) = if rep % 2 == 0 {
                let r = time_rewritten(prepared, &plan, &auth)?;
                (r, time_baseline(prepared, &ast)?)
            } else {
                let b = time_baseline(prepared, &ast)?;
                (time_rewritten(prepared, &plan, &auth)?, b)
            };
            check_agreement(query.selectivity, &r, &b, query.matched_rows)?;
            match counts {
                None => counts = Some((r.decrypts, b.decrypts)),
                Some(c) if c != (r.decrypts, b.decrypts) => {
                    return Err(BenchError::MismatchedWorkload {
                        selectivity: query.selectivity,
                        detail: "decryption counts changed between repetitions".into(),
                    })
                }
                Some(_) => {}
            }
            rewritten_times.push(r.elapsed.as_secs_f64() * 1e6);
            baseline_times.push(b.elapsed.as_secs_f64() * 1e6);
        }
        let (decrypts_rewritten, decrypts_baseline) = counts.expect("at least one repetition");
        samples.push(BenchSample {
            selectivity: query.selectivity,
            time_rewritten_us: median(rewritten_times),
            time_baseline_us: median(baseline_times),
            decrypts_rewritten,
            decrypts_baseline,
        });
    }
    let crossover = crossover(&samples);
    Ok(BenchReport { samples, crossover })
}

/// Writes the report as CSV followed by a `# crossover=` comment line.
pub fn emit(report: &BenchReport, sink: &mut impl Write) -> std::io::Result<()> {
    writeln!(sink, "{CSV_HEADER}")?;
    for s in &report.samples {
        writeln!(
            sink,
            "{},{},{},{},{}",
            s.selectivity, s.time_rewritten_us, s.time_baseline_us, s.decrypts_rewritten, s.decrypts_baseline
        )?;
    }
    match report.crossover {
        Some(c) => writeln!(sink, "# crossover={c}"),
        None => writeln!(sink, "# crossover=none"),
    }
}

/// Inverse of [`emit`].
pub fn parse_report(source: impl BufRead) -> Result<BenchReport, BenchError> {
    let fail = |line: usize, message: String| BenchError::Report { line, message };
    let mut lines = source.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == CSV_HEADER => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(fail(1, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut samples = Vec::new();
    let mut crossover = None;
    for (i, line) in lines {
        let (n, line) = (i + 1, line?);
        if crossover.is_some() {
            return Err(fail(n, "content after crossover line".into()));
        }
        if let Some(rest) = line.strip_prefix("# crossover=") {
            crossover = Some(match rest {
                "none" => None,
                x => Some(x.parse::<f64>().map_err(|e| fail(n, e.to_string()))?),
            });
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let [sel, tr, tb, dr, db] = cols.as_slice() else {
            return Err(fail(n, format!("expected 5 fields, found {}", cols.len())));
        };
        let float = |s: &str| s.parse::<f64>().map_err(|e| fail(n, e.to_string()));
        let int = |s: &str| s.parse::<u64>().map_err(|e| fail(n, e.to_string()));
        samples.push(BenchSample {
            selectivity: float(sel)?,
            time_rewritten_us: float(tr)?,
            time_baseline_us: float(tb)?,
            decrypts_rewritten: int(dr)?,
            decrypts_baseline: int(db)?,
        });
    }
    let crossover = crossover.ok_or_else(|| fail(0, "missing `# crossover=` line".into()))?;
    Ok(BenchReport { samples, crossover })
}
