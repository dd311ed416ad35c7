//! Random datasets and queries plus a brute-force evaluator that shares no
//! code with the crate's query engine.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;

use sealtable::storage::{ColumnSpec, Field, Record, Schema, Table};
use sealtable::value::{Kind, Value};

pub const TABLE: &str = "Encrypted_Data_Table";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Int(i64),
    Text(String),
}

impl Cell {
    fn cmp_same(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            _ => panic!("generator mixed kinds"),
        }
    }

    pub fn sql(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    /// How the CLI prints the value.
    pub fn display(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Cell::Int(i) => Value::Integer(*i),
            Cell::Text(s) => Value::Text(s.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub text: bool,
    pub sensitive: bool,
}

/// Column 0 is always `Key`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

const TEXT_ALPHABET: &[char] = &['a', 'b', 'c', '%', '_', '\'', ' '];

fn random_text(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(0..=4);
    (0..len).map(|_| *TEXT_ALPHABET.choose(rng).unwrap()).collect()
}

fn random_int(rng: &mut impl Rng) -> i64 {
    rng.gen_range(-40..=40)
}

impl Dataset {
    /// Key plus 2 to 5 columns of mixed kinds, at least one sensitive.
    pub fn random(rng: &mut impl Rng, max_rows: usize) -> Dataset {
        let extra = rng.gen_range(2..=5);
        let mut columns = vec![Column {
            name: "Key".into(),
            text: false,
            sensitive: false,
        }];
        for i in 0..extra {
            columns.push(Column {
                name: format!("C{i}"),
                text: rng.gen_bool(0.5),
                sensitive: rng.gen_bool(0.6),
            });
        }
        if !columns.iter().any(|c| c.sensitive) {
            columns[1].sensitive = true;
        }
        let n = rng.gen_range(0..=max_rows);
        let mut keys: Vec<i64> = (1..=(n as i64) * 3).collect();
        keys.shuffle(rng);
        keys.truncate(n);
        let rows = keys
            .into_iter()
            .map(|k| {
                let mut row = vec![Cell::Int(k)];
                for c in &columns[1..] {
                    row.push(if c.text {
                        Cell::Text(random_text(rng))
                    } else {
                        Cell::Int(random_int(rng))
                    });
                }
                row
            })
            .collect();
        Dataset { columns, rows }
    }

    pub fn schema(&self) -> Schema {
        Schema::new(
            self.columns
                .iter()
                .map(|c| ColumnSpec::new(&c.name, if c.text { Kind::Text } else { Kind::Integer }, c.sensitive))
                .collect(),
        )
        .unwrap()
    }

    pub fn table(&self) -> Table {
        let records = self
            .rows
            .iter()
            .map(|r| Record::from_fields(r.iter().map(|c| Field::Plain(c.to_value())).collect()).unwrap());
        Table::from_records(self.schema(), records).unwrap()
    }

    fn sensitive_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|i| self.columns[*i].sensitive).collect()
    }

    fn random_literal(&self, rng: &mut impl Rng, col: usize) -> Cell {
        // Prefer values that occur, so predicates are selective but not empty.
        if !self.rows.is_empty() && rng.gen_bool(0.7) {
            return self.rows[rng.gen_range(0..self.rows.len())][col].clone();
        }
        if col == 0 {
            Cell::Int(rng.gen_range(0..=(self.rows.len() as i64) * 3 + 1))
        } else if self.columns[col].text {
            Cell::Text(random_text(rng))
        } else {
            Cell::Int(random_int(rng))
        }
    }

    pub fn random_atom(&self, rng: &mut impl Rng, col: usize) -> Query {
        let text = self.columns[col].text;
        let choice = rng.gen_range(0..if text { 8 } else { 7 });
        match choice {
            0..=5 => Query::Cmp(col, Op::ALL[choice], self.random_literal(rng, col)),
            6 => {
                let a = self.random_literal(rng, col);
                let b = self.random_literal(rng, col);
                Query::Between(col, a, b)
            }
            _ => {
                let mut pattern = String::new();
                for _ in 0..rng.gen_range(0..=4) {
                    pattern.push(*['a', 'b', '%', '_', '\''].choose(rng).unwrap());
                }
                Query::Like(col, pattern)
            }
        }
    }

    /// A predicate tree with at least one atom over a sensitive column.
    /// `NOT` only wraps subtrees over plaintext columns.
    pub fn random_query(&self, rng: &mut impl Rng) -> Query {
        let sensitive = self.sensitive_columns();
        let anchor_col = *sensitive.choose(rng).unwrap();
        let mut q = self.random_atom(rng, anchor_col);
        for _ in 0..rng.gen_range(0..=3) {
            let col = rng.gen_range(0..self.columns.len());
            let mut other = self.random_atom(rng, col);
            if !self.columns[col].sensitive && rng.gen_bool(0.2) {
                other = Query::Not(Box::new(other));
            }
            let (l, r) = if rng.gen_bool(0.5) { (q, other) } else { (other, q) };
            q = if rng.gen_bool(0.5) {
                Query::And(Box::new(l), Box::new(r))
            } else {
                Query::Or(Box::new(l), Box::new(r))
            };
        }
        q
    }

    pub fn select_all(&self, q: &Query) -> String {
        format!("SELECT * FROM {TABLE} WHERE {}", q.sql(self))
    }

    /// Keys and full rows matching `q`, ascending by key.
    pub fn oracle(&self, q: &Query) -> Vec<Vec<Cell>> {
        let mut rows: Vec<Vec<Cell>> = self.rows.iter().filter(|r| q.eval(r)).cloned().collect();
        rows.sort_by(|a, b| a[0].cmp_same(&b[0]));
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    pub const ALL: [Op; 6] = [Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge];

    fn sql(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "<>",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }

    fn holds(self, o: Ordering) -> bool {
        match self {
            Op::Eq => o == Ordering::Equal,
            Op::Ne => o != Ordering::Equal,
            Op::Lt => o == Ordering::Less,
            Op::Le => o != Ordering::Greater,
            Op::Gt => o == Ordering::Greater,
            Op::Ge => o != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Query {
    Cmp(usize, Op, Cell),
    Between(usize, Cell, Cell),
    Like(usize, String),
    And(Box<Query>, Box<Query>),
    Or(Box<Query>, Box<Query>),
    Not(Box<Query>),
}

/// Matches `value` against a LIKE pattern by trying every split.
pub fn like(value: &[char], pattern: &[char]) -> bool {
    match pattern.split_first() {
        None => value.is_empty(),
        Some(('%', rest)) => (0..=value.len()).any(|i| like(&value[i..], rest)),
        Some(('_', rest)) => !value.is_empty() && like(&value[1..], rest),
        Some((c, rest)) => value.first() == Some(c) && like(&value[1..], rest),
    }
}

impl Query {
    pub fn sql(&self, d: &Dataset) -> String {
        match self {
            Query::Cmp(c, op, lit) => format!("{} {} {}", d.columns[*c].name, op.sql(), lit.sql()),
            Query::Between(c, lo, hi) => format!("{} BETWEEN {} AND {}", d.columns[*c].name, lo.sql(), hi.sql()),
            Query::Like(c, p) => format!("{} LIKE '{}'", d.columns[*c].name, p.replace('\'', "''")),
            Query::And(l, r) => format!("({}) AND ({})", l.sql(d), r.sql(d)),
            Query::Or(l, r) => format!("({}) OR ({})", l.sql(d), r.sql(d)),
            Query::Not(q) => format!("NOT ({})", q.sql(d)),
        }
    }

    pub fn eval(&self, row: &[Cell]) -> bool {
        match self {
            Query::Cmp(c, op, lit) => op.holds(row[*c].cmp_same(lit)),
            Query::Between(c, lo, hi) => {
                row[*c].cmp_same(lo) != Ordering::Less && row[*c].cmp_same(hi) != Ordering::Greater
            }
            Query::Like(c, p) => match &row[*c] {
                Cell::Text(s) => {
                    let v: Vec<char> = s.chars().collect();
                    let p: Vec<char> = p.chars().collect();
                    like(&v, &p)
                }
                Cell::Int(_) => panic!("LIKE on integer column"),
            },
            Query::And(l, r) => l.eval(row) && r.eval(row),
            Query::Or(l, r) => l.eval(row) || r.eval(row),
            Query::Not(q) => !q.eval(row),
        }
    }
}

pub fn cells_to_values(rows: &[Vec<Cell>]) -> Vec<Vec<Value>> {
    rows.iter().map(|r| r.iter().map(Cell::to_value).collect()).collect()
}
