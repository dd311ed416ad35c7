use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sealtable::bench::{generate_workload, BenchConfig};
use sealtable::cipher::{CipherKind, CountingCipher, KeyMode, KeyPair};
use sealtable::protect::{protect, ProtectConfig};
use sealtable_bench::Fixture;

const ROWS: usize = 10_000;

fn strategies(c: &mut Criterion) {
    let fixture = Fixture::new(ROWS, &[0.05, 0.25, 0.50], Duration::ZERO, CipherKind::Aead);
    let auth = fixture.auth();
    let mut group = c.benchmark_group("strategy");
    for (selectivity, ast, plan) in &fixture.queries {
        let label = format!("{:.0}%", selectivity * 100.0);
        group.bench_with_input(BenchmarkId::new("rewritten", &label), plan, |b, plan| {
            b.iter(|| black_box(fixture.rewritten(plan, &auth)))
        });
        group.bench_with_input(BenchmarkId::new("baseline", &label), ast, |b, ast| {
            b.iter(|| black_box(fixture.baseline(ast)))
        });
    }
    group.finish();
}

fn protect_table(c: &mut Criterion) {
    let config = BenchConfig {
        row_count: ROWS,
        selectivity_steps: vec![],
        ..BenchConfig::default()
    };
    let table = generate_workload(&config).expect("valid config").table;
    let keys = KeyPair::from_master(&[3u8; 32], KeyMode::Derived, 32).expect("valid key");
    let mut group = c.benchmark_group("protect");
    for kind in [CipherKind::Aead, CipherKind::XorTest] {
        let cipher = CountingCipher::of_kind(kind);
        let protect_config = ProtectConfig {
            table_name: sealtable::bench::TABLE_NAME.into(),
            nonce_seed: Some(1),
            ..ProtectConfig::default()
        };
        group.bench_function(kind.id(), |b| {
            b.iter(|| black_box(protect(&table, &cipher, &keys, kind, &protect_config).expect("protect")))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = strategies, protect_table
}
criterion_main!(benches);
