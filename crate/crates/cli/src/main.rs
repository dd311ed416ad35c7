mod error;

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;

use sealtable::bench::{self, BenchConfig};
use sealtable::cipher::{CipherKind, CountingCipher, DecryptionCounter, KeyMode, KeyPair};
use sealtable::executor::{authorize, baseline_full_decrypt, execute, AuthContext, ResultSet, ResultStatus};
use sealtable::protect::{self, NoiseFraction, ProtectConfig, SecureMetadata};
use sealtable::query::{self, QueryPlan};
use sealtable::storage::{ingest_csv, read_table_data, Field, Schema, FORMAT_HEADER};
use sealtable::value::Value;

use error::{CliError, Status};

const MASTER_KEY_LEN: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "sealtable", version, about = "Query encrypted table columns through shuffled search tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encrypt a CSV into a main table plus search tables.
    Protect(ProtectArgs),
    /// Run a SELECT against a protected directory.
    Query(QueryArgs),
    /// Print the plan for a SELECT without touching data.
    Explain(ExplainArgs),
    /// Sweep selectivity and time both strategies; writes CSV.
    Bench(BenchArgs),
    /// Describe a table or metadata file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct ProtectArgs {
    /// Input CSV with a header row matching the schema.
    #[arg(long)]
    csv: PathBuf,
    /// Column list `name:kind:sensitive,...`; the first column is the key.
    #[arg(long)]
    schema: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master key file (hex). Created if missing.
    #[arg(long)]
    key_file: PathBuf,
    #[arg(long, default_value = "Encrypted_Data_Table")]
    table: String,
    /// Noise rows per real row, as `a/b` or a decimal.
    #[arg(long, default_value = "0.05")]
    noise: NoiseFraction,
    /// Seed for shuffling, noise sampling and alias names.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed nonces too, making output reproducible. Testing only.
    #[arg(long)]
    nonce_seed: Option<u64>,
    /// User allowed to query through the search tables. Repeatable.
    #[arg(long = "grant")]
    grants: Vec<String>,
    #[arg(long, default_value = "aead")]
    cipher: CipherKind,
    #[arg(long, default_value = "derived")]
    key_mode: KeyMode,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Strategy {
    Rewritten,
    Baseline,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long)]
    key_file: PathBuf,
    /// Append a `# stats` line.
    #[arg(long)]
    stats: bool,
    #[arg(long, value_enum, default_value = "rewritten")]
    strategy: Strategy,
    /// SQL text; read from stdin when omitted.
    sql: Option<String>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    dir: PathBuf,
    /// SQL text; read from stdin when omitted.
    sql: Option<String>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50_000)]
    rows: usize,
    /// Number of evenly spaced selectivity steps.
    #[arg(long, default_value_t = 30)]
    steps: usize,
    #[arg(long, default_value_t = 0.60)]
    max_selectivity: f64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Artificial cost added to every decryption, in microseconds.
    #[arg(long, default_value_t = 2.0)]
    delay_us: f64,
    #[arg(long, default_value = "0.05")]
    noise: NoiseFraction,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "aead")]
    cipher: CipherKind,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Protect(a) => cmd_protect(a),
        Command::Query(a) => cmd_query(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::new(Status::Io, format!("{}: {e}", path.display()))
}

fn read_sql(sql: Option<String>) -> Result<String, CliError> {
    let text = match sql {
        Some(s) => s,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    if text.trim().is_empty() {
        return Err(CliError::new(Status::Usage, "no SQL given"));
    }
    Ok(text)
}

fn read_master_key(path: &Path) -> Result<Vec<u8>, CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let key = hex::decode(text.trim())
        .map_err(|e| CliError::new(Status::Data, format!("{}: key file is not hex: {e}", path.display())))?;
    if key.len() < 16 {
        return Err(CliError::new(
            Status::Data,
            format!("{}: key has {} bytes, need at least 16", path.display(), key.len()),
        ));
    }
    Ok(key)
}

/// Reads the key file, or writes a fresh random key there if it is absent.
fn load_or_create_master_key(path: &Path) -> Result<(Vec<u8>, bool), CliError> {
    if path.exists() {
        return Ok((read_master_key(path)?, false));
    }
    let mut key = vec![0u8; MASTER_KEY_LEN];
    rand::rngs::OsRng.fill_bytes(&mut key);
    let mut options = fs::OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(path).map_err(io_at(path))?;
    writeln!(file, "{}", hex::encode(&key)).map_err(io_at(path))?;
    Ok((key, true))
}

fn key_pair(master: &[u8], meta: &SecureMetadata) -> Result<KeyPair, CliError> {
    KeyPair::from_master(master, meta.key_mode, meta.cipher.build().key_len()).map_err(|e| CliError::new(Status::Data, e))
}

fn cmd_protect(a: ProtectArgs) -> Result<(), CliError> {
    let schema = Schema::parse_spec(&a.schema).map_err(|e| CliError::new(Status::Usage, e))?;
    let file = fs::File::open(&a.csv).map_err(io_at(&a.csv))?;
    let table = ingest_csv(io::BufReader::new(file), &schema)?;
    let (master, created) = load_or_create_master_key(&a.key_file)?;
    let keys = KeyPair::from_master(&master, a.key_mode, a.cipher.build().key_len())
        .map_err(|e| CliError::new(Status::Data, e))?;
    let config = ProtectConfig {
        table_name: a.table,
        noise_fraction: a.noise,
        shuffle_seed: a.seed,
        noise_seed: a.seed,
        nonce_seed: a.nonce_seed,
        principals: a.grants.into_iter().collect(),
        key_mode: a.key_mode,
        ..ProtectConfig::default()
    };
    let pair = protect::protect(&table, &CountingCipher::of_kind(a.cipher), &keys, a.cipher, &config)?;
    protect::save_pair(&pair, &a.out)?;

    let noise_per_column = a.noise.noise_rows(table.len());
    let mut out = io::stdout().lock();
    writeln!(out, "table\t{}", pair.meta().table_name)?;
    writeln!(out, "rows\t{}", table.len())?;
    writeln!(out, "noise_rows\t{}", noise_per_column * pair.meta().aliases().len())?;
    for entry in pair.meta().aliases() {
        writeln!(
            out,
            "search_table\t{}\t{}\t{}\t{}",
            entry.column, entry.table_id, entry.alias_key, entry.alias_value
        )?;
    }
    writeln!(out, "cipher\t{}", a.cipher.id())?;
    if created {
        eprintln!("wrote new master key to {}", a.key_file.display());
    }
    Ok(())
}

fn escape_cell(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn print_result(rs: &ResultSet, stats: bool) -> Result<(), CliError> {
    let mut out = BufWriter::new(io::stdout().lock());
    let header: Vec<String> = rs.columns.iter().map(|c| escape_cell(c)).collect();
    writeln!(out, "{}", header.join("\t"))?;
    for row in &rs.rows {
        let cells: Vec<String> = row.iter().map(|v: &Value| escape_cell(&v.render())).collect();
        writeln!(out, "{}", cells.join("\t"))?;
    }
    if stats {
        writeln!(out, "# stats {}", rs.stats.render())?;
    }
    out.flush()?;
    if rs.status == ResultStatus::SearchUnsuccessful {
        eprintln!("Search is unsuccessful");
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<(), CliError> {
    let sql = read_sql(a.sql)?;
    let ast = query::parse(&sql).map_err(query::QueryError::from)?;
    let meta = protect::load_meta(&a.dir)?;
    let main = protect::load_main(&a.dir)?;
    let plan = query::rewrite(&ast, &meta, main.schema())?;
    drop(main);

    let auth = AuthContext::for_user(&a.user, &meta);
    let counter = DecryptionCounter::new(a.user.as_str());
    let cipher = CountingCipher::of_kind(meta.cipher);
    let result = match a.strategy {
        Strategy::Rewritten => {
            let needs_search = plan.is_rewritten();
            if needs_search {
                authorize(&auth, &meta)?;
            }
            let keys = key_pair(&read_master_key(&a.key_file)?, &meta)?;
            let pair = protect::load_pair_with(&a.dir, meta, needs_search)?;
            execute(&plan, &pair, &auth, &cipher, &keys, &counter)?
        }
        Strategy::Baseline => {
            if !matches!(plan, QueryPlan::Rewritten(_)) {
                return Err(CliError::new(
                    Status::Semantic,
                    "baseline strategy needs a predicate over an encrypted column",
                ));
            }
            authorize(&auth, &meta)?;
            let keys = key_pair(&read_master_key(&a.key_file)?, &meta)?;
            let pair = protect::load_pair_with(&a.dir, meta, false)?;
            baseline_full_decrypt(&ast, &pair, &cipher, &keys.main, &counter)?
        }
    };
    print_result(&result, a.stats)
}

fn cmd_explain(a: ExplainArgs) -> Result<(), CliError> {
    let sql = read_sql(a.sql)?;
    let ast = query::parse(&sql).map_err(query::QueryError::from)?;
    let meta = protect::load_meta(&a.dir)?;
    let main = protect::load_main(&a.dir)?;
    let plan = query::rewrite(&ast, &meta, main.schema())?;
    print!("{}", plan.explain());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if !(a.delay_us >= 0.0 && a.delay_us.is_finite()) {
        return Err(CliError::new(Status::Usage, "--delay-us must be a non-negative number"));
    }
    if !(a.max_selectivity > 0.0 && a.max_selectivity <= 1.0) {
        return Err(CliError::new(Status::Usage, "--max-selectivity must be in (0, 1]"));
    }
    let config = BenchConfig {
        row_count: a.rows,
        selectivity_steps: BenchConfig::even_steps(a.steps, a.max_selectivity),
        repetitions: a.reps,
        decryption_delay: Duration::from_secs_f64(a.delay_us / 1e6),
        noise_fraction: a.noise,
        cipher: a.cipher,
        seed: a.seed,
    };
    config.validate()?;
    let workload = bench::generate_workload(&config)?;
    let prepared = bench::prepare(&config, &workload)?;
    let report = bench::run(&config, &prepared, &workload)?;
    match &a.out {
        Some(path) => {
            let mut file = BufWriter::new(fs::File::create(path).map_err(io_at(path))?);
            bench::emit(&report, &mut file).map_err(io_at(path))?;
            file.flush().map_err(io_at(path))?;
        }
        None => {
            let mut out = io::stdout().lock();
            bench::emit(&report, &mut out)?;
        }
    }
    match report.crossover {
        Some(c) => eprintln!("crossover at selectivity {c:.3}"),
        None => eprintln!("no crossover within the sweep"),
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<(), CliError> {
    let bytes = fs::read(&a.file).map_err(io_at(&a.file))?;
    let first = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    let mut out = io::stdout().lock();
    if first.starts_with(b"SEALTABLE ") {
        let data = read_table_data(&mut bytes.as_slice())?;
        let encrypted = data
            .rows
            .iter()
            .flatten()
            .filter(|f| matches!(f, Field::Encrypted(_)))
            .count();
        let columns: Vec<String> = data.columns.iter().map(|c| c.render()).collect();
        writeln!(out, "format\t{FORMAT_HEADER}")?;
        writeln!(out, "columns\t{}", columns.join(","))?;
        writeln!(out, "rows\t{}", data.rows.len())?;
        writeln!(out, "encrypted_cells\t{encrypted}")?;
    } else if first.starts_with(b"SEALMETA ") {
        let meta = SecureMetadata::load(&mut bytes.as_slice())
            .map_err(|e| CliError::new(Status::Data, format!("{}: {e}", a.file.display())))?;
        meta.save(&mut out)?;
    } else {
        return Err(CliError::new(
            Status::Data,
            format!("{}: not a table or metadata file", a.file.display()),
        ));
    }
    Ok(())
}
