//! Binding, classification and rewriting.
//!
//! A query whose predicate never names a sensitive column runs directly
//! against the main table. Otherwise each predicate atom over a sensitive
//! column becomes a probe of that column's search table, yielding a key set;
//! the boolean structure over those atoms becomes intersection and union of
//! key sets. Top-level conjuncts that touch only plaintext columns stay behind
//! as a residual filter applied after rows are fetched by key.

use std::fmt::Write as _;

use super::ast::{CompareOp, Ident, Literal, Predicate, Projection, QueryAst};
use super::like::match_like;
use super::QueryError;
use crate::protect::SecureMetadata;
use crate::storage::{Field, Record, Schema};
use crate::value::{Decimal, Kind, Value};

/// A typed test against one column value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtomTest {
    Compare(CompareOp, Value),
    Between(Value, Value),
    Like(String),
}

impl AtomTest {
    pub fn matches(&self, value: &Value) -> bool {
        match self {
            AtomTest::Compare(op, lit) => value.compare(lit).is_some_and(|o| op.holds(o)),
            AtomTest::Between(lo, hi) => {
                value.compare(lo).is_some_and(|o| o.is_ge()) && value.compare(hi).is_some_and(|o| o.is_le())
            }
            AtomTest::Like(pattern) => value.as_text().is_some_and(|s| match_like(s, pattern)),
        }
    }

    fn literal(v: &Value) -> Literal {
        match v {
            Value::Text(s) => Literal::Text(s.clone()),
            other => Literal::Number(other.render()),
        }
    }

    /// SQL text of this test applied to `column`.
    pub fn render(&self, column: &str) -> String {
        match self {
            AtomTest::Compare(op, v) => format!("{} {} {}", Ident(column), op.symbol(), Self::literal(v)),
            AtomTest::Between(lo, hi) => format!(
                "{} BETWEEN {} AND {}",
                Ident(column),
                Self::literal(lo),
                Self::literal(hi)
            ),
            AtomTest::Like(p) => format!("{} LIKE {}", Ident(column), Literal::Text(p.clone())),
        }
    }
}

/// An atom resolved against the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundAtom {
    pub column: String,
    pub index: usize,
    pub sensitive: bool,
    pub test: AtomTest,
}

/// Something that can supply a plaintext value per schema column.
pub trait ValueSource {
    fn value(&self, index: usize) -> Option<&Value>;
}

impl ValueSource for Record {
    fn value(&self, index: usize) -> Option<&Value> {
        self.fields().get(index).and_then(Field::as_plain)
    }
}

impl ValueSource for [Option<Value>] {
    fn value(&self, index: usize) -> Option<&Value> {
        self.get(index).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundPredicate {
    Atom(BoundAtom),
    And(Box<BoundPredicate>, Box<BoundPredicate>),
    Or(Box<BoundPredicate>, Box<BoundPredicate>),
    Not(Box<BoundPredicate>),
}

impl BoundPredicate {
    pub fn eval<S: ValueSource + ?Sized>(&self, row: &S) -> bool {
        match self {
            BoundPredicate::Atom(a) => row.value(a.index).is_some_and(|v| a.test.matches(v)),
            BoundPredicate::And(l, r) => l.eval(row) && r.eval(row),
            BoundPredicate::Or(l, r) => l.eval(row) || r.eval(row),
            BoundPredicate::Not(p) => !p.eval(row),
        }
    }

    pub fn touches_sensitive(&self) -> bool {
        match self {
            BoundPredicate::Atom(a) => a.sensitive,
            BoundPredicate::And(l, r) | BoundPredicate::Or(l, r) => l.touches_sensitive() || r.touches_sensitive(),
            BoundPredicate::Not(p) => p.touches_sensitive(),
        }
    }

    pub fn atoms(&self) -> Vec<&BoundAtom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a BoundAtom>) {
        match self {
            BoundPredicate::Atom(a) => out.push(a),
            BoundPredicate::And(l, r) | BoundPredicate::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
            BoundPredicate::Not(p) => p.collect_atoms(out),
        }
    }

    fn render(&self) -> String {
        let child = |p: &BoundPredicate| match p {
            BoundPredicate::And(..) | BoundPredicate::Or(..) => format!("({})", p.render()),
            _ => p.render(),
        };
        match self {
            BoundPredicate::Atom(a) => a.test.render(&a.column),
            BoundPredicate::And(l, r) => format!("{} AND {}", child(l), child(r)),
            BoundPredicate::Or(l, r) => format!("{} OR {}", child(l), child(r)),
            BoundPredicate::Not(p) => format!("NOT {}", child(p)),
        }
    }

    fn and_all(parts: Vec<BoundPredicate>) -> Option<BoundPredicate> {
        parts
            .into_iter()
            .reduce(|l, r| BoundPredicate::And(Box::new(l), Box::new(r)))
    }
}

/// A projected output column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedColumn {
    pub name: String,
    pub index: usize,
    pub sensitive: bool,
}

/// A search-table probe for one encrypted atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub atom: BoundAtom,
    pub table_id: String,
    pub alias_key: String,
    pub alias_value: String,
}

impl Probe {
    /// The inner subquery, with alias headings in place of real names.
    pub fn render(&self) -> String {
        format!(
            "SELECT DecryptFunction({}) FROM {} WHERE {}",
            self.alias_key,
            self.table_id,
            self.atom.test.render(&self.alias_value)
        )
    }
}

/// Key-set algebra over probes. `Filter` leaves hold plaintext-only
/// predicates evaluated against main-table rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyExpr {
    Probe(Probe),
    Filter(BoundPredicate),
    And(Box<KeyExpr>, Box<KeyExpr>),
    Or(Box<KeyExpr>, Box<KeyExpr>),
}

impl KeyExpr {
    pub fn probes(&self) -> Vec<&Probe> {
        match self {
            KeyExpr::Probe(p) => vec![p],
            KeyExpr::Filter(_) => Vec::new(),
            KeyExpr::And(l, r) | KeyExpr::Or(l, r) => {
                let mut v = l.probes();
                v.extend(r.probes());
                v
            }
        }
    }

    pub fn render(&self, key_column: &str) -> String {
        let child = |e: &KeyExpr| match e {
            KeyExpr::And(..) | KeyExpr::Or(..) => format!("({})", e.render(key_column)),
            KeyExpr::Filter(p @ (BoundPredicate::And(..) | BoundPredicate::Or(..))) => format!("({})", p.render()),
            _ => e.render(key_column),
        };
        match self {
            KeyExpr::Probe(p) => format!("{} IN ({})", Ident(key_column), p.render()),
            KeyExpr::Filter(p) => p.render(),
            KeyExpr::And(l, r) => format!("{} AND {}", child(l), child(r)),
            KeyExpr::Or(l, r) => format!("{} OR {}", child(l), child(r)),
        }
    }
}

/// Result of checking a query against the schema and secure metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub touches_encrypted: bool,
    pub encrypted_atoms: Vec<BoundAtom>,
    pub plain_residual: Option<BoundPredicate>,
    pub key_expr: Option<KeyExpr>,
    pub predicate: Option<BoundPredicate>,
    pub projection: Vec<ProjectedColumn>,
    pub table: String,
    pub key_column: String,
}

fn bind_literal(column: &str, kind: Kind, literal: &Literal) -> Result<Value, QueryError> {
    let mismatch = || QueryError::TypeMismatch {
        column: column.to_string(),
        literal: literal.to_string(),
    };
    match (kind, literal) {
        (Kind::Integer, Literal::Number(n)) => n.parse::<i64>().map(Value::Integer).map_err(|_| mismatch()),
        (Kind::Decimal, Literal::Number(n)) => Decimal::parse(n).map(Value::Decimal).ok_or_else(mismatch),
        (Kind::Text, Literal::Text(s)) => Ok(Value::Text(s.clone())),
        _ => Err(mismatch()),
    }
}

fn bind(pred: &Predicate, schema: &Schema) -> Result<BoundPredicate, QueryError> {
    let resolve = |column: &str| {
        schema
            .index_of(column)
            .map(|i| (i, &schema.columns()[i]))
            .ok_or_else(|| QueryError::UnknownColumn(column.to_string()))
    };
    let atom = |column: &str, test: AtomTest| -> Result<BoundPredicate, QueryError> {
        let (index, spec) = resolve(column)?;
        Ok(BoundPredicate::Atom(BoundAtom {
            column: column.to_string(),
            index,
            sensitive: spec.sensitive,
            test,
        }))
    };
    Ok(match pred {
        Predicate::Compare { column, op, literal } => {
            let (_, spec) = resolve(column)?;
            atom(column, AtomTest::Compare(*op, bind_literal(column, spec.kind, literal)?))?
        }
        Predicate::Between { column, low, high } => {
            let (_, spec) = resolve(column)?;
            atom(
                column,
                AtomTest::Between(bind_literal(column, spec.kind, low)?, bind_literal(column, spec.kind, high)?),
            )?
        }
        Predicate::Like { column, pattern } => {
            let (_, spec) = resolve(column)?;
            if spec.kind != Kind::Text {
                return Err(QueryError::TypeMismatch {
                    column: column.clone(),
                    literal: Literal::Text(pattern.clone()).to_string(),
                });
            }
            atom(column, AtomTest::Like(pattern.clone()))?
        }
        Predicate::And(l, r) => BoundPredicate::And(Box::new(bind(l, schema)?), Box::new(bind(r, schema)?)),
        Predicate::Or(l, r) => BoundPredicate::Or(Box::new(bind(l, schema)?), Box::new(bind(r, schema)?)),
        Predicate::Not(p) => {
            let inner = bind(p, schema)?;
            if let Some(a) = inner.atoms().into_iter().find(|a| a.sensitive) {
                return Err(QueryError::UnsupportedNegation(a.column.clone()));
            }
            BoundPredicate::Not(Box::new(inner))
        }
    })
}

fn conjuncts(pred: BoundPredicate, out: &mut Vec<BoundPredicate>) {
    match pred {
        BoundPredicate::And(l, r) => {
            conjuncts(*l, out);
            conjuncts(*r, out);
        }
        other => out.push(other),
    }
}

fn to_key_expr(pred: &BoundPredicate, meta: &SecureMetadata) -> Result<KeyExpr, QueryError> {
    if !pred.touches_sensitive() {
        return Ok(KeyExpr::Filter(pred.clone()));
    }
    match pred {
        BoundPredicate::Atom(atom) => {
            let entry = meta
                .alias_for(&atom.column)
                .ok_or_else(|| QueryError::UnknownColumn(atom.column.clone()))?;
            Ok(KeyExpr::Probe(Probe {
                atom: atom.clone(),
                table_id: entry.table_id.clone(),
                alias_key: entry.alias_key.clone(),
                alias_value: entry.alias_value.clone(),
            }))
        }
        BoundPredicate::And(l, r) => Ok(KeyExpr::And(Box::new(to_key_expr(l, meta)?), Box::new(to_key_expr(r, meta)?))),
        BoundPredicate::Or(l, r) => Ok(KeyExpr::Or(Box::new(to_key_expr(l, meta)?), Box::new(to_key_expr(r, meta)?))),
        BoundPredicate::Not(_) => {
            let column = pred.atoms().into_iter().find(|a| a.sensitive).map(|a| a.column.clone());
            Err(QueryError::UnsupportedNegation(column.unwrap_or_default()))
        }
    }
}

/// Resolves names and types, and splits the predicate into encrypted probes
/// and a plaintext residual.
pub fn classify(ast: &QueryAst, meta: &SecureMetadata, schema: &Schema) -> Result<Classification, QueryError> {
    if ast.table != meta.table_name {
        return Err(QueryError::UnknownTable(ast.table.clone()));
    }
    let projection = match &ast.projection {
        Projection::All => schema
            .columns()
            .iter()
            .enumerate()
            .map(|(index, c)| ProjectedColumn {
                name: c.name.clone(),
                index,
                sensitive: c.sensitive,
            })
            .collect(),
        Projection::Columns(cols) => cols
            .iter()
            .map(|name| {
                let index = schema.index_of(name).ok_or_else(|| QueryError::UnknownColumn(name.clone()))?;
                Ok(ProjectedColumn {
                    name: name.clone(),
                    index,
                    sensitive: schema.columns()[index].sensitive,
                })
            })
            .collect::<Result<Vec<_>, QueryError>>()?,
    };

    let predicate = ast.predicate.as_ref().map(|p| bind(p, schema)).transpose()?;
    let encrypted_atoms: Vec<BoundAtom> = predicate
        .as_ref()
        .map(|p| p.atoms().into_iter().filter(|a| a.sensitive).cloned().collect())
        .unwrap_or_default();
    let touches_encrypted = !encrypted_atoms.is_empty();

    let (key_expr, plain_residual) = match &predicate {
        Some(p) if touches_encrypted => {
            let mut parts = Vec::new();
            conjuncts(p.clone(), &mut parts);
            let (enc, plain): (Vec<_>, Vec<_>) = parts.into_iter().partition(BoundPredicate::touches_sensitive);
            let key_expr = enc
                .iter()
                .map(|c| to_key_expr(c, meta))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .reduce(|l, r| KeyExpr::And(Box::new(l), Box::new(r)));
            (key_expr, BoundPredicate::and_all(plain))
        }
        Some(p) => (None, Some(p.clone())),
        None => (None, None),
    };

    Ok(Classification {
        touches_encrypted,
        encrypted_atoms,
        plain_residual,
        key_expr,
        predicate,
        projection,
        table: ast.table.clone(),
        key_column: schema.key_column().name.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectPlan {
    pub table: String,
    pub projection: Vec<ProjectedColumn>,
    pub filter: Option<BoundPredicate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewrittenPlan {
    pub table: String,
    pub key_column: String,
    pub projection: Vec<ProjectedColumn>,
    pub keys: KeyExpr,
    pub residual: Option<BoundPredicate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryPlan {
    Direct(DirectPlan),
    Rewritten(Box<RewrittenPlan>),
}

/// Classifies and produces the executable plan.
pub fn rewrite(ast: &QueryAst, meta: &SecureMetadata, schema: &Schema) -> Result<QueryPlan, QueryError> {
    let c = classify(ast, meta, schema)?;
    Ok(match c.key_expr {
        Some(keys) => QueryPlan::Rewritten(Box::new(RewrittenPlan {
            table: c.table,
            key_column: c.key_column,
            projection: c.projection,
            keys,
            residual: c.plain_residual,
        })),
        None => QueryPlan::Direct(DirectPlan {
            table: c.table,
            projection: c.projection,
            filter: c.plain_residual,
        }),
    })
}

fn render_projection(projection: &[ProjectedColumn]) -> String {
    projection
        .iter()
        .map(|p| {
            if p.sensitive {
                format!("DecryptFunction({})", Ident(&p.name))
            } else {
                Ident(&p.name).to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl QueryPlan {
    pub fn is_rewritten(&self) -> bool {
        matches!(self, QueryPlan::Rewritten(_))
    }

    /// Human-readable plan in SQL form, with the search-table subqueries
    /// written out over their alias headings.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        match self {
            QueryPlan::Direct(p) => {
                out.push_str("DIRECT\n");
                let _ = writeln!(out, "SELECT {}", render_projection(&p.projection));
                let _ = writeln!(out, "FROM {}", Ident(&p.table));
                if let Some(f) = &p.filter {
                    let _ = writeln!(out, "WHERE {}", f.render());
                }
            }
            QueryPlan::Rewritten(p) => {
                out.push_str("REWRITTEN\n");
                let _ = writeln!(out, "SELECT {}", render_projection(&p.projection));
                let _ = writeln!(out, "FROM {}", Ident(&p.table));
                let keys = match &p.keys {
                    e @ KeyExpr::Or(..) => format!("({})", e.render(&p.key_column)),
                    e => e.render(&p.key_column),
                };
                match &p.residual {
                    Some(r) => {
                        let r = match r {
                            BoundPredicate::Or(..) | BoundPredicate::And(..) => format!("({})", r.render()),
                            r => r.render(),
                        };
                        let _ = writeln!(out, "WHERE {keys}\n  AND {r}");
                    }
                    None => {
                        let _ = writeln!(out, "WHERE {keys}");
                    }
                }
            }
        }
        out
    }
}
