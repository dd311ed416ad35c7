use std::fmt;

use super::parser::is_keyword;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "<>",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
        }
    }
}

/// A literal as written. Numbers keep their source text; typing against the
/// column kind happens during classification.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Number(String),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => f.write_str(n),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Compare { column: String, op: CompareOp, literal: Literal },
    Between { column: String, low: Literal, high: Literal },
    Like { column: String, pattern: String },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn and(l: Predicate, r: Predicate) -> Predicate {
        Predicate::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Predicate, r: Predicate) -> Predicate {
        Predicate::Or(Box::new(l), Box::new(r))
    }

    pub fn negate(p: Predicate) -> Predicate {
        Predicate::Not(Box::new(p))
    }

    fn is_compound(&self) -> bool {
        matches!(self, Predicate::And(..) | Predicate::Or(..))
    }
}

pub(crate) struct Ident<'a>(pub &'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let plain = {
            let mut chars = self.0.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        };
        if plain && !is_keyword(self.0) {
            f.write_str(self.0)
        } else {
            write!(f, "\"{}\"", self.0.replace('"', "\"\""))
        }
    }
}

fn child(f: &mut fmt::Formatter<'_>, p: &Predicate) -> fmt::Result {
    if p.is_compound() {
        write!(f, "({p})")
    } else {
        write!(f, "{p}")
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare { column, op, literal } => write!(f, "{} {} {}", Ident(column), op.symbol(), literal),
            Predicate::Between { column, low, high } => write!(f, "{} BETWEEN {} AND {}", Ident(column), low, high),
            Predicate::Like { column, pattern } => {
                write!(f, "{} LIKE {}", Ident(column), Literal::Text(pattern.clone()))
            }
            Predicate::And(l, r) => {
                child(f, l)?;
                f.write_str(" AND ")?;
                child(f, r)
            }
            Predicate::Or(l, r) => {
                child(f, l)?;
                f.write_str(" OR ")?;
                child(f, r)
            }
            Predicate::Not(p) => {
                f.write_str("NOT ")?;
                child(f, p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    All,
    Columns(Vec<String>),
}

/// `SELECT <projection> FROM <table> [WHERE <predicate>]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub projection: Projection,
    pub table: String,
    pub predicate: Option<Predicate>,
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::All => f.write_str("*")?,
            Projection::Columns(cols) => {
                for (i, c) in cols.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", Ident(c))?;
                }
            }
        }
        write!(f, " FROM {}", Ident(&self.table))?;
        if let Some(p) = &self.predicate {
            write!(f, " WHERE {p}")?;
        }
        Ok(())
    }
}
