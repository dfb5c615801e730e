//! Spider-dialect SQL: lexing, parsing with alias resolution, canonical
//! rendering and subquery traversal.

mod ast;
mod lexer;
mod parser;
mod render;

pub use ast::*;
pub use parser::parse_sql;
pub use render::to_canonical_string;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SqlError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
}

impl SqlError {
    pub(crate) fn parse(position: usize, message: impl Into<String>) -> Self {
        SqlError::Parse {
            position,
            message: message.into(),
        }
    }
}

/// Every nested SELECT block of `q` (FROM subqueries, condition subqueries
/// and set-operation arms), depth-first in source order, excluding `q`.
pub fn collect_subqueries(q: &SqlQuery) -> Vec<&SqlQuery> {
    let mut out = Vec::new();
    walk(q, &mut out);
    out
}

fn walk<'a>(q: &'a SqlQuery, out: &mut Vec<&'a SqlQuery>) {
    for unit in q.from.table_units() {
        if let TableUnit::Subquery { query, .. } = unit {
            visit(query, out);
        }
    }
    for cond in [&q.where_, &q.having].into_iter().flatten() {
        for atom in cond.atoms() {
            operand_subqueries(&atom.rhs, out);
        }
    }
    if let Some(set) = &q.set_op {
        visit(&set.right, out);
    }
}

fn visit<'a>(q: &'a SqlQuery, out: &mut Vec<&'a SqlQuery>) {
    out.push(q);
    walk(q, out);
}

fn operand_subqueries<'a>(o: &'a Operand, out: &mut Vec<&'a SqlQuery>) {
    match o {
        Operand::Subquery(q) => visit(q, out),
        Operand::Range(lo, hi) => {
            operand_subqueries(lo, out);
            operand_subqueries(hi, out);
        }
        Operand::Value(_) | Operand::List(_) => {}
    }
}
