use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const STAFF_CSV: &str = "Key,Emp_Name,Salary,Job_Title\n\
                          1,Rajesh,10000,Manager\n\
                          2,Suresh,8000,Asst. Manager\n\
                          3,Mahesh,6000,Peon\n";
const STAFF_SCHEMA: &str = "Key:integer:false,Emp_Name:text:false,Salary:integer:true,Job_Title:text:false";
const QUERY: &str = "SELECT Emp_Name, Salary FROM Encrypted_Data_Table WHERE Salary = 10000";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sealtable"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

struct Protected {
    _tmp: TempDir,
    out: PathBuf,
    key: PathBuf,
    summary: String,
}

impl Protected {
    fn dir(&self) -> &str {
        self.out.to_str().unwrap()
    }

    fn key(&self) -> &str {
        self.key.to_str().unwrap()
    }

    fn query(&self, user: &str, extra: &[&str], sql: &str) -> Output {
        let mut args = vec!["query", "--dir", self.dir(), "--user", user, "--key-file", self.key()];
        args.extend_from_slice(extra);
        args.push(sql);
        run(&args)
    }
}

fn protect_csv(csv: &str, schema: &str, noise: &str) -> Protected {
    let tmp = TempDir::new().unwrap();
    let csv_path = tmp.path().join("input.csv");
    fs::write(&csv_path, csv).unwrap();
    let out = tmp.path().join("out");
    let key = tmp.path().join("master.key");
    let o = run(&[
        "protect",
        "--csv",
        csv_path.to_str().unwrap(),
        "--schema",
        schema,
        "--out",
        out.to_str().unwrap(),
        "--key-file",
        key.to_str().unwrap(),
        "--noise",
        noise,
        "--grant",
        "alice",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    Protected {
        summary: stdout(&o),
        _tmp: tmp,
        out,
        key,
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(files_under(&path));
        } else {
            found.push(path);
        }
    }
    found
}

#[test]
fn protect_staff_writes_three_files() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    assert_eq!(files_under(&p.out).len(), 3);
    assert!(p.summary.contains("rows\t3\n"), "{}", p.summary);
    assert!(p.summary.contains("noise_rows\t0\n"), "{}", p.summary);
    assert!(p.summary.contains("search_table\tSalary\tQS_"));
    let main = fs::read_to_string(p.out.join("main.sealtable")).unwrap();
    assert!(main.lines().all(|l| l.split('\t').all(|cell| cell != "10000")));
    assert!(main.contains("Rajesh"));
}

#[test]
fn protect_reports_ceil_noise_rows() {
    let mut csv = String::from("Key,Score\n");
    for k in 1..=1000 {
        csv.push_str(&format!("{k},{}\n", k % 37));
    }
    let p = protect_csv(&csv, "Key:integer:false,Score:integer:true", "0.05");
    assert!(p.summary.contains("noise_rows\t50\n"), "{}", p.summary);
}

#[test]
fn protect_missing_csv_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "protect",
        "--csv",
        "/nonexistent/input.csv",
        "--schema",
        STAFF_SCHEMA,
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--key-file",
        tmp.path().join("k").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent/input.csv"));
    assert!(o.stdout.is_empty());
}

#[test]
fn protect_bad_schema_is_usage_error() {
    let o = run(&["protect", "--csv", "x", "--schema", "Key:float:false", "--out", "o", "--key-file", "k"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn authorized_query_returns_rajesh_with_counts() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = p.query("alice", &["--stats"], QUERY);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Emp_Name\tSalary");
    assert_eq!(lines[1], "Rajesh\t10000");
    assert!(lines[2].starts_with("# stats "));
    assert!(lines[2].contains("decrypt_calls_inner=1"));
    assert!(lines[2].contains("decrypt_calls_outer=1"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn unauthorized_user_gets_its_exit_code() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = p.query("mallory", &[], QUERY);
    assert_eq!(o.status.code(), Some(6));
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("mallory"));
    let o = p.query("mallory", &["--strategy", "baseline"], QUERY);
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn plaintext_query_needs_no_grant() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = p.query("mallory", &[], "SELECT Emp_Name FROM Encrypted_Data_Table WHERE Job_Title = 'Peon'");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Emp_Name\nMahesh\n");
}

#[test]
fn strategies_print_identical_rows() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0.5");
    for sql in [
        QUERY,
        "SELECT * FROM Encrypted_Data_Table WHERE Salary BETWEEN 6000 AND 9000",
        "SELECT Key FROM Encrypted_Data_Table WHERE Salary > 7000 OR Job_Title LIKE 'P%'",
    ] {
        let a = p.query("alice", &[], sql);
        let b = p.query("alice", &["--strategy", "baseline"], sql);
        assert!(a.status.success() && b.status.success());
        assert_eq!(stdout(&a), stdout(&b), "{sql}");
    }
}

#[test]
fn empty_result_is_success_with_message() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = p.query("alice", &[], "SELECT Emp_Name, Salary FROM Encrypted_Data_Table WHERE Salary = 12345");
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "Emp_Name\tSalary\n");
    assert!(stderr(&o).contains("Search is unsuccessful"));
}

#[test]
fn query_from_stdin() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let mut child = bin()
        .args(["query", "--dir", p.dir(), "--user", "alice", "--key-file", p.key()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(QUERY.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Emp_Name\tSalary\nRajesh\t10000\n");
}

#[test]
fn query_error_codes() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    assert_eq!(p.query("alice", &[], "SELECT FROM").status.code(), Some(4));
    assert_eq!(p.query("alice", &[], "SELECT Bonus FROM Encrypted_Data_Table").status.code(), Some(5));
    assert_eq!(
        p.query("alice", &[], "SELECT * FROM Encrypted_Data_Table WHERE NOT Salary = 1").status.code(),
        Some(5)
    );
    assert_eq!(
        p.query("alice", &["--strategy", "baseline"], "SELECT * FROM Encrypted_Data_Table").status.code(),
        Some(5)
    );
}

#[test]
fn wrong_key_is_data_error() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    fs::write(&p.key, format!("{}\n", "ab".repeat(32))).unwrap();
    let o = p.query("alice", &[], QUERY);
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
}

#[test]
fn truncated_main_table_is_data_error() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let path = p.out.join("main.sealtable");
    let text = fs::read_to_string(&path).unwrap();
    let cut: Vec<&str> = text.lines().take(4).collect();
    fs::write(&path, cut.join("\n") + "\n").unwrap();
    let o = p.query("alice", &[], QUERY);
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
}

#[test]
fn explain_shows_probe_or_direct() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = run(&["explain", "--dir", p.dir(), QUERY]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("REWRITTEN\n"));
    assert!(text.contains("SELECT Emp_Name, DecryptFunction(Salary)"));
    assert!(text.contains("WHERE Key IN (SELECT DecryptFunction("));
    assert!(text.contains("= 10000)"));

    let o = run(&["explain", "--dir", p.dir(), "SELECT * FROM Encrypted_Data_Table"]);
    assert!(stdout(&o).starts_with("DIRECT\n"));

    let o = run(&["explain", "--dir", p.dir(), "SELECT * FROM WHERE"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn inspect_describes_files() {
    let p = protect_csv(STAFF_CSV, STAFF_SCHEMA, "0");
    let o = run(&["inspect", p.out.join("main.sealtable").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("rows\t3\n"));
    assert!(text.contains("encrypted_cells\t3\n"));
    let o = run(&["inspect", p.out.join("secure/meta.sealmeta").to_str().unwrap()]);
    assert!(stdout(&o).starts_with("SEALMETA v1\n"));
    assert!(stdout(&o).contains("principal\talice\n"));
    let o = run(&["inspect", p.key()]);
    assert_eq!(o.status.code(), Some(7));
}

#[test]
fn small_bench_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench.csv");
    let o = run(&[
        "bench",
        "--rows",
        "500",
        "--steps",
        "5",
        "--max-selectivity",
        "0.5",
        "--reps",
        "1",
        "--delay-us",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "selectivity,time_rewritten_us,time_baseline_us,decrypts_rewritten,decrypts_baseline");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("# crossover="));
    assert!(lines[1].starts_with("0.1,"));
    assert!(lines[1..6].iter().all(|l| l.ends_with(",500")));
}

#[test]
fn bench_rejects_zero_rows() {
    let o = run(&["bench", "--rows", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
