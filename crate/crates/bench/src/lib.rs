//! Fixtures shared by the criterion benches.

use std::time::Duration;

use sealtable::bench::{generate_workload, prepare, BenchConfig, Prepared, Workload};
use sealtable::cipher::{CipherKind, DecryptionCounter};
use sealtable::executor::{baseline_full_decrypt, execute, AuthContext, ResultSet};
use sealtable::query::{parse, rewrite, QueryAst, QueryPlan};

/// A protected synthetic table with one parsed and planned query per
/// selectivity.
pub struct Fixture {
    pub config: BenchConfig,
    pub workload: Workload,
    pub prepared: Prepared,
    pub queries: Vec<(f64, QueryAst, QueryPlan)>,
}

impl Fixture {
    pub fn new(rows: usize, selectivities: &[f64], delay: Duration, cipher: CipherKind) -> Self {
        let config = BenchConfig {
            row_count: rows,
            selectivity_steps: selectivities.to_vec(),
            repetitions: 1,
            decryption_delay: delay,
            cipher,
            ..BenchConfig::default()
        };
        let workload = generate_workload(&config).expect("valid bench config");
        let prepared = prepare(&config, &workload).expect("protect succeeds");
        let meta = prepared.pair.meta();
        let schema = prepared.pair.main().schema();
        let queries = workload
            .queries
            .iter()
            .map(|q| {
                let ast = parse(&q.sql).expect("generated SQL parses");
                let plan = rewrite(&ast, meta, schema).expect("generated SQL plans");
                (q.selectivity, ast, plan)
            })
            .collect();
        Self {
            config,
            workload,
            prepared,
            queries,
        }
    }

    pub fn auth(&self) -> AuthContext {
        AuthContext::for_user("bench", self.prepared.pair.meta())
    }

    pub fn rewritten(&self, plan: &QueryPlan, auth: &AuthContext) -> ResultSet {
        let p = &self.prepared;
        execute(plan, &p.pair, auth, &p.cipher, &p.keys, &DecryptionCounter::default()).expect("authorized")
    }

    pub fn baseline(&self, ast: &QueryAst) -> ResultSet {
        let p = &self.prepared;
        baseline_full_decrypt(ast, &p.pair, &p.cipher, &p.keys.main, &DecryptionCounter::default())
            .expect("query touches the encrypted column")
    }
}
