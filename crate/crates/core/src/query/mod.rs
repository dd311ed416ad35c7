//! The SELECT subset: parsing, classification and rewriting onto search tables.

mod ast;
mod like;
mod parser;
mod plan;

use thiserror::Error;

pub use ast::{CompareOp, Literal, Predicate, Projection, QueryAst};
pub use like::match_like;
pub use parser::{parse, SyntaxError};
pub use plan::{
    classify, rewrite, AtomTest, BoundAtom, BoundPredicate, Classification, DirectPlan, KeyExpr, Probe,
    ProjectedColumn, QueryPlan, RewrittenPlan, ValueSource,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("literal {literal} does not fit column `{column}`")]
    TypeMismatch { column: String, literal: String },
    #[error("NOT over encrypted column `{0}` is not supported")]
    UnsupportedNegation(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{CipherKind, CountingCipher, KeyMode, KeyPair};
    use crate::protect::{protect, ProtectConfig, ProtectedPair};
    use crate::storage::fixtures::staff;
    use crate::value::Value;

    fn pair() -> ProtectedPair {
        let keys = KeyPair::from_master(&[1u8; 32], KeyMode::Derived, 32).unwrap();
        let config = ProtectConfig {
            noise_fraction: "0".parse().unwrap(),
            nonce_seed: Some(3),
            ..ProtectConfig::default()
        };
        protect(&staff(), &CountingCipher::of_kind(CipherKind::XorTest), &keys, CipherKind::XorTest, &config).unwrap()
    }

    fn classify_sql(sql: &str) -> Result<Classification, QueryError> {
        let p = pair();
        classify(&parse(sql)?, p.meta(), p.main().schema())
    }

    fn rewrite_sql(sql: &str) -> Result<QueryPlan, QueryError> {
        let p = pair();
        rewrite(&parse(sql)?, p.meta(), p.main().schema())
    }

    const SALARY_QUERY: &str = "SELECT Emp_Name, Salary FROM Encrypted_Data_Table WHERE Salary = 10000";

    #[test]
    fn salary_query_touches_encrypted_column() {
        let c = classify_sql(SALARY_QUERY).unwrap();
        assert!(c.touches_encrypted);
        assert_eq!(c.encrypted_atoms.len(), 1);
        assert_eq!(c.encrypted_atoms[0].column, "Salary");
        assert_eq!(c.encrypted_atoms[0].test, AtomTest::Compare(CompareOp::Eq, Value::Integer(10000)));
        assert!(c.plain_residual.is_none());
    }

    #[test]
    fn plain_column_query_is_not_encrypted() {
        let c = classify_sql("SELECT * FROM Encrypted_Data_Table WHERE Job_Title = 'Peon'").unwrap();
        assert!(!c.touches_encrypted);
        assert!(c.plain_residual.is_some());
        assert!(matches!(
            rewrite_sql("SELECT * FROM Encrypted_Data_Table WHERE Job_Title = 'Peon'").unwrap(),
            QueryPlan::Direct(_)
        ));
        assert!(matches!(rewrite_sql("SELECT * FROM Encrypted_Data_Table").unwrap(), QueryPlan::Direct(_)));
    }

    #[test]
    fn negation_over_encrypted_rejected() {
        assert_eq!(
            classify_sql("SELECT * FROM Encrypted_Data_Table WHERE NOT (Salary = 10000)").unwrap_err(),
            QueryError::UnsupportedNegation("Salary".into())
        );
        assert!(classify_sql("SELECT * FROM Encrypted_Data_Table WHERE NOT (Key = 1 OR Salary = 5)").is_err());
        // Negation over plaintext columns is fine, even next to encrypted atoms.
        assert!(classify_sql("SELECT * FROM Encrypted_Data_Table WHERE NOT Key = 1 AND Salary = 5").is_ok());
    }

    #[test]
    fn semantic_errors() {
        assert_eq!(
            classify_sql("SELECT * FROM Other").unwrap_err(),
            QueryError::UnknownTable("Other".into())
        );
        assert_eq!(
            classify_sql("SELECT Bonus FROM Encrypted_Data_Table").unwrap_err(),
            QueryError::UnknownColumn("Bonus".into())
        );
        assert_eq!(
            classify_sql("SELECT * FROM Encrypted_Data_Table WHERE Bonus = 1").unwrap_err(),
            QueryError::UnknownColumn("Bonus".into())
        );
        for sql in [
            "SELECT * FROM Encrypted_Data_Table WHERE Salary = 'high'",
            "SELECT * FROM Encrypted_Data_Table WHERE Salary = 1.5",
            "SELECT * FROM Encrypted_Data_Table WHERE Emp_Name = 3",
            "SELECT * FROM Encrypted_Data_Table WHERE Salary LIKE '1%'",
            "SELECT * FROM Encrypted_Data_Table WHERE Salary BETWEEN 1 AND 'x'",
            "SELECT * FROM Encrypted_Data_Table WHERE Salary = 99999999999999999999",
        ] {
            assert!(matches!(classify_sql(sql), Err(QueryError::TypeMismatch { .. })), "{sql}");
        }
    }

    #[test]
    fn salary_query_rewrite_and_explain() {
        let p = pair();
        let entry = p.meta().alias_for("Salary").unwrap().clone();
        let plan = rewrite(&parse(SALARY_QUERY).unwrap(), p.meta(), p.main().schema()).unwrap();
        let QueryPlan::Rewritten(r) = &plan else {
            panic!("expected rewritten plan")
        };
        let probes = r.keys.probes();
        assert_eq!(probes.len(), 1);
        assert_eq!(probes[0].alias_value, entry.alias_value);
        assert!(r.residual.is_none());
        assert!(r.projection[1].sensitive);
        let text = plan.explain();
        let expected = format!(
            "REWRITTEN\nSELECT Emp_Name, DecryptFunction(Salary)\nFROM Encrypted_Data_Table\n\
             WHERE Key IN (SELECT DecryptFunction({}) FROM {} WHERE {} = 10000)\n",
            entry.alias_key, entry.table_id, entry.alias_value
        );
        assert_eq!(text, expected);
    }

    #[test]
    fn range_plus_plain_like_splits_into_probe_and_residual() {
        let plan = rewrite_sql(
            "SELECT * FROM Encrypted_Data_Table WHERE Salary BETWEEN 6000 AND 9000 AND Emp_Name LIKE 'S%'",
        )
        .unwrap();
        let QueryPlan::Rewritten(r) = plan else { panic!() };
        let probes = r.keys.probes();
        assert_eq!(probes.len(), 1);
        assert_eq!(
            probes[0].atom.test,
            AtomTest::Between(Value::Integer(6000), Value::Integer(9000))
        );
        let residual = r.residual.unwrap();
        assert!(!residual.touches_sensitive());
        assert_eq!(residual.atoms()[0].test, AtomTest::Like("S%".into()));
    }

    #[test]
    fn or_with_plain_branch_becomes_filter_leaf() {
        let plan = rewrite_sql("SELECT * FROM Encrypted_Data_Table WHERE Salary = 1 OR Emp_Name = 'x'").unwrap();
        let QueryPlan::Rewritten(r) = plan else { panic!() };
        assert!(r.residual.is_none());
        assert!(matches!(r.keys, KeyExpr::Or(ref l, ref rr) if matches!(**l, KeyExpr::Probe(_)) && matches!(**rr, KeyExpr::Filter(_))));
        assert!(r.keys.render("Key").contains("OR Emp_Name = 'x'"));
    }

    #[test]
    fn direct_explain() {
        let plan = rewrite_sql("SELECT * FROM Encrypted_Data_Table").unwrap();
        assert_eq!(
            plan.explain(),
            "DIRECT\nSELECT Key, Emp_Name, DecryptFunction(Salary), Job_Title\nFROM Encrypted_Data_Table\n"
        );
    }

    #[test]
    fn classify_is_deterministic() {
        let sql = "SELECT * FROM Encrypted_Data_Table WHERE (Salary > 1 OR Salary < 0) AND Key <> 2";
        assert_eq!(classify_sql(sql).unwrap(), classify_sql(sql).unwrap());
    }
}
