//! Canonical AST for the Spider SQL dialect.
//!
//! Identifiers are stored lowercased with table aliases already replaced by
//! the table names they stand for. Literals keep their source lexeme.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One SELECT block plus an optional right-nested set operation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SqlQuery {
    pub select: SelectClause,
    pub from: FromClause,
    pub where_: Option<Condition>,
    pub group_by: Vec<ColumnRef>,
    pub having: Option<Condition>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
    pub set_op: Option<SetOperation>,
}

impl SqlQuery {
    /// HAVING without GROUP BY is accepted by SQLite but invalid in the
    /// benchmark's grammar. The clause is kept; this reports it.
    pub fn has_having_without_group_by(&self) -> bool {
        self.having.is_some() && self.group_by.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetOperator {
    Intersect,
    Union,
    Except,
}

impl SetOperator {
    pub fn keyword(self) -> &'static str {
        match self {
            SetOperator::Intersect => "intersect",
            SetOperator::Union => "union",
            SetOperator::Except => "except",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetOperation {
    pub op: SetOperator,
    pub right: Box<SqlQuery>,
}

/// Projection list. Cannot be empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SelectClause {
    pub distinct: bool,
    items: Vec<ValueExpr>,
}

impl SelectClause {
    /// Returns `None` for an empty projection.
    pub fn new(distinct: bool, items: Vec<ValueExpr>) -> Option<Self> {
        (!items.is_empty()).then_some(Self { distinct, items })
    }

    pub fn items(&self) -> &[ValueExpr] {
        &self.items
    }

    pub fn items_mut(&mut self) -> &mut Vec<ValueExpr> {
        &mut self.items
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TableUnit {
    Table(String),
    /// Derived table. The alias is kept because columns of a derived table
    /// can only be referenced through it.
    Subquery {
        query: Box<SqlQuery>,
        alias: Option<String>,
    },
}

/// Equality join predicate `left = right` taken from a JOIN ... ON clause.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JoinCondition {
    pub left: ColumnRef,
    pub right: ColumnRef,
    /// Joined to the preceding condition with OR instead of AND.
    pub disjunctive: bool,
}

impl JoinCondition {
    pub fn new(left: ColumnRef, right: ColumnRef) -> Self {
        Self {
            left,
            right,
            disjunctive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FromClause {
    table_units: Vec<TableUnit>,
    pub join_conditions: Vec<JoinCondition>,
}

impl FromClause {
    /// Returns `None` when no table unit is given.
    pub fn new(table_units: Vec<TableUnit>, join_conditions: Vec<JoinCondition>) -> Option<Self> {
        (!table_units.is_empty()).then_some(Self {
            table_units,
            join_conditions,
        })
    }

    pub fn table_units(&self) -> &[TableUnit] {
        &self.table_units
    }

    pub fn table_units_mut(&mut self) -> &mut Vec<TableUnit> {
        &mut self.table_units
    }
}

/// A column reference; `column == "*"` is the wildcard.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: Option<&str>, column: &str) -> Self {
        Self {
            table: table.map(str::to_string),
            column: column.to_string(),
        }
    }

    pub fn wildcard() -> Self {
        Self {
            table: None,
            column: "*".to_string(),
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.column == "*"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggFunc {
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl AggFunc {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "max" => Some(AggFunc::Max),
            "min" => Some(AggFunc::Min),
            "count" => Some(AggFunc::Count),
            "sum" => Some(AggFunc::Sum),
            "avg" => Some(AggFunc::Avg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Max => "max",
            AggFunc::Min => "min",
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LiteralKind {
    Number,
    String,
    Null,
    /// Value abstracted away by canonicalization for exact-set-match.
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub kind: LiteralKind,
    pub lexeme: String,
}

impl Literal {
    pub fn placeholder() -> Self {
        Self {
            kind: LiteralKind::Placeholder,
            lexeme: "value".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueExpr {
    Column(ColumnRef),
    Aggregate {
        func: AggFunc,
        distinct: bool,
        arg: Box<ValueExpr>,
    },
    Binary {
        op: ArithOp,
        lhs: Box<ValueExpr>,
        rhs: Box<ValueExpr>,
    },
    Literal(Literal),
}

impl ValueExpr {
    pub fn column(table: Option<&str>, column: &str) -> Self {
        ValueExpr::Column(ColumnRef::new(table, column))
    }

    /// Aggregate nodes in this expression, outermost first.
    pub fn aggregate_count(&self) -> usize {
        match self {
            ValueExpr::Aggregate { arg, .. } => 1 + arg.aggregate_count(),
            ValueExpr::Binary { lhs, rhs, .. } => lhs.aggregate_count() + rhs.aggregate_count(),
            ValueExpr::Column(_) | ValueExpr::Literal(_) => 0,
        }
    }

    pub fn is_aggregate(&self) -> bool {
        matches!(self, ValueExpr::Aggregate { .. })
    }

    pub(crate) fn for_each_column_mut(&mut self, f: &mut impl FnMut(&mut ColumnRef)) {
        match self {
            ValueExpr::Column(c) => f(c),
            ValueExpr::Aggregate { arg, .. } => arg.for_each_column_mut(f),
            ValueExpr::Binary { lhs, rhs, .. } => {
                lhs.for_each_column_mut(f);
                rhs.for_each_column_mut(f);
            }
            ValueExpr::Literal(_) => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Like,
    NotLike,
    In,
    NotIn,
    Between,
    NotBetween,
    Exists,
    NotExists,
    Is,
    IsNot,
}

impl CompareOp {
    pub fn keyword(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Like => "like",
            CompareOp::NotLike => "not like",
            CompareOp::In => "in",
            CompareOp::NotIn => "not in",
            CompareOp::Between => "between",
            CompareOp::NotBetween => "not between",
            CompareOp::Exists => "exists",
            CompareOp::NotExists => "not exists",
            CompareOp::Is => "is",
            CompareOp::IsNot => "is not",
        }
    }

    /// Operators written with a leading NOT.
    pub fn is_negated(self) -> bool {
        matches!(
            self,
            CompareOp::NotLike
                | CompareOp::NotIn
                | CompareOp::NotBetween
                | CompareOp::NotExists
                | CompareOp::IsNot
        )
    }

    pub fn is_like(self) -> bool {
        matches!(self, CompareOp::Like | CompareOp::NotLike)
    }
}

/// Right-hand side of a predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Value(ValueExpr),
    Subquery(Box<SqlQuery>),
    List(Vec<ValueExpr>),
    Range(Box<Operand>, Box<Operand>),
}

/// A single comparison. `lhs` is absent only for EXISTS / NOT EXISTS.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub lhs: Option<ValueExpr>,
    pub op: CompareOp,
    pub rhs: Operand,
}

/// Boolean tree over predicates. And/Or nodes are n-ary, never directly
/// nest a node of the same kind, and always have at least two children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Atom(Predicate),
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    pub fn atoms(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Condition::Atom(p) => out.push(p),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.collect_atoms(out)),
        }
    }

    pub fn atom_count(&self) -> usize {
        match self {
            Condition::Atom(_) => 1,
            Condition::And(cs) | Condition::Or(cs) => cs.iter().map(Condition::atom_count).sum(),
        }
    }

    /// Number of AND connectives as written (an n-ary node holds n-1).
    pub fn and_connectives(&self) -> usize {
        match self {
            Condition::Atom(_) => 0,
            Condition::And(cs) => {
                cs.len() - 1 + cs.iter().map(Condition::and_connectives).sum::<usize>()
            }
            Condition::Or(cs) => cs.iter().map(Condition::and_connectives).sum(),
        }
    }

    /// Number of OR connectives as written.
    pub fn or_connectives(&self) -> usize {
        match self {
            Condition::Atom(_) => 0,
            Condition::Or(cs) => {
                cs.len() - 1 + cs.iter().map(Condition::or_connectives).sum::<usize>()
            }
            Condition::And(cs) => cs.iter().map(Condition::or_connectives).sum(),
        }
    }

    pub(crate) fn atoms_mut(&mut self, f: &mut impl FnMut(&mut Predicate)) {
        match self {
            Condition::Atom(p) => f(p),
            Condition::And(cs) | Condition::Or(cs) => cs.iter_mut().for_each(|c| c.atoms_mut(f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum OrderDirection {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderItem {
    pub expr: ValueExpr,
    pub direction: OrderDirection,
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::render::to_canonical_string(self))
    }
}
