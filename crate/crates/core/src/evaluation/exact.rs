//! Exact-set-match between two parsed queries.
//!
//! Both sides are first rewritten the way the Spider matcher rewrites them:
//! condition values become placeholders, DISTINCT markers are dropped from
//! the outer blocks, and foreign-key columns collapse to one representative
//! per key cluster. Clause-by-clause comparison then follows the matcher's
//! rules (multisets for SELECT and WHERE atoms, ordered GROUP BY for the
//! HAVING check, sequence equality for ORDER BY).

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::schema::DatabaseSchema;
use crate::sql::{
    parse_sql, ColumnRef, CompareOp, Condition, Literal, Operand, OrderDirection, Predicate,
    SetOperator, SqlQuery, TableUnit, ValueExpr,
};

/// Verdict plus the reason a comparison could not be made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmVerdict {
    pub matched: bool,
    pub reason: Option<String>,
}

/// Compares two queries without schema knowledge: no foreign-key folding.
pub fn exact_set_match(pred: &SqlQuery, gold: &SqlQuery) -> bool {
    Matcher::default().matches(pred, gold)
}

/// Compares two queries of the same database, folding foreign-key columns.
pub fn exact_set_match_in(pred: &SqlQuery, gold: &SqlQuery, schema: &DatabaseSchema) -> bool {
    Matcher::new(schema).matches(pred, gold)
}

/// Parses both texts against `schema` and compares them. A parse failure on
/// either side is a mismatch carrying the error.
pub fn exact_match_sql(pred_sql: &str, gold_sql: &str, schema: &DatabaseSchema) -> EmVerdict {
    let gold = match parse_sql(gold_sql, Some(schema)) {
        Ok(q) => q,
        Err(e) => {
            return EmVerdict {
                matched: false,
                reason: Some(format!("gold: {e}")),
            }
        }
    };
    let pred = match parse_sql(pred_sql, Some(schema)) {
        Ok(q) => q,
        Err(e) => {
            return EmVerdict {
                matched: false,
                reason: Some(format!("pred: {e}")),
            }
        }
    };
    EmVerdict {
        matched: exact_set_match_in(&pred, &gold, schema),
        reason: None,
    }
}

type ColKey = (String, String);

/// Foreign-key folding map for one database.
#[derive(Debug, Default, Clone)]
pub struct Matcher {
    fk: HashMap<ColKey, ColKey>,
}

impl Matcher {
    pub fn new(schema: &DatabaseSchema) -> Self {
        // Greedy clustering: each key pair joins the first cluster touching
        // either side, so chains may stay split exactly as in the reference.
        let mut clusters: Vec<BTreeSet<usize>> = Vec::new();
        for &(a, b) in &schema.foreign_keys {
            match clusters
                .iter_mut()
                .find(|c| c.contains(&a) || c.contains(&b))
            {
                Some(c) => {
                    c.insert(a);
                    c.insert(b);
                }
                None => clusters.push([a, b].into_iter().collect()),
            }
        }
        let key = |i: usize| -> Option<ColKey> {
            let col = &schema.columns[i];
            let t = col.table_index?;
            Some((
                schema.tables[t].original_name.to_lowercase(),
                col.original_name.to_lowercase(),
            ))
        };
        let mut fk = HashMap::new();
        for cluster in clusters {
            let Some(rep) = cluster.first().and_then(|&i| key(i)) else {
                continue;
            };
            for &i in &cluster {
                if let Some(k) = key(i) {
                    fk.insert(k, rep.clone());
                }
            }
        }
        Self { fk }
    }

    pub fn matches(&self, pred: &SqlQuery, gold: &SqlQuery) -> bool {
        let p = self.prepare(pred);
        let g = self.prepare(gold);
        match_blocks(&p, &g)
    }

    fn prepare(&self, q: &SqlQuery) -> Norm {
        let mut q = q.clone();
        strip_values(&mut q);
        let valid: HashSet<String> = q
            .from
            .table_units()
            .iter()
            .filter_map(|u| match u {
                TableUnit::Table(name) => Some(name.clone()),
                TableUnit::Subquery { .. } => None,
            })
            .collect();
        self.rebuild_columns(&mut q, &valid);
        Norm::from_query(&q)
    }

    /// Drops DISTINCT markers and folds foreign-key columns in the outer
    /// block and its set-operation arms. Nested subqueries are left alone.
    fn rebuild_columns(&self, q: &mut SqlQuery, valid: &HashSet<String>) {
        q.select.distinct = false;
        let fold = |c: &mut ColumnRef| {
            let Some(t) = &c.table else { return };
            if !valid.contains(t) {
                return;
            }
            if let Some((rt, rc)) = self.fk.get(&(t.clone(), c.column.clone())) {
                c.table = Some(rt.clone());
                c.column = rc.clone();
            }
        };
        let mut fix_expr = |e: &mut ValueExpr| {
            clear_distinct(e);
            e.for_each_column_mut(&mut |c| fold(c));
        };
        q.select.items_mut().iter_mut().for_each(&mut fix_expr);
        for cond in [&mut q.where_, &mut q.having].into_iter().flatten() {
            cond.atoms_mut(&mut |p| {
                if let Some(lhs) = &mut p.lhs {
                    fix_expr(lhs);
                }
            });
        }
        q.order_by
            .iter_mut()
            .for_each(|item| fix_expr(&mut item.expr));
        q.group_by.iter_mut().for_each(&fold);
        for jc in &mut q.from.join_conditions {
            fold(&mut jc.left);
        }
        if let Some(set) = &mut q.set_op {
            self.rebuild_columns(&mut set.right, valid);
        }
    }
}

fn clear_distinct(e: &mut ValueExpr) {
    match e {
        ValueExpr::Aggregate { distinct, arg, .. } => {
            *distinct = false;
            clear_distinct(arg);
        }
        ValueExpr::Binary { lhs, rhs, .. } => {
            clear_distinct(lhs);
            clear_distinct(rhs);
        }
        ValueExpr::Column(_) | ValueExpr::Literal(_) => {}
    }
}

/// Replaces every non-subquery condition operand with a placeholder,
/// recursing into condition subqueries and set arms but not derived tables.
fn strip_values(q: &mut SqlQuery) {
    for cond in [&mut q.where_, &mut q.having].into_iter().flatten() {
        cond.atoms_mut(&mut |p| strip_operand(&mut p.rhs));
    }
    if let Some(set) = &mut q.set_op {
        strip_values(&mut set.right);
    }
}

fn strip_operand(o: &mut Operand) {
    match o {
        Operand::Subquery(q) => strip_values(q),
        Operand::Range(lo, hi) => {
            strip_operand(lo);
            strip_operand(hi);
        }
        Operand::Value(_) | Operand::List(_) => *o = placeholder(),
    }
}

fn placeholder() -> Operand {
    Operand::Value(ValueExpr::Literal(Literal::placeholder()))
}

/// Right-hand value slot of a condition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Slot {
    Empty,
    Value(ValueExpr),
    List(Vec<ValueExpr>),
    Query(Box<Norm>),
}

impl Slot {
    fn from_operand(o: &Operand) -> Self {
        match o {
            Operand::Value(ValueExpr::Literal(l)) if l == &Literal::placeholder() => Slot::Empty,
            Operand::Value(v) => Slot::Value(norm_expr(v)),
            Operand::List(vs) => Slot::List(vs.iter().map(norm_expr).collect()),
            Operand::Subquery(q) => Slot::Query(Box::new(Norm::from_query(q))),
            Operand::Range(..) => unreachable!("ranges are split before slotting"),
        }
    }
}

/// A condition unit: optional NOT, base operator, operand and two value slots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Atom {
    negated: bool,
    op: &'static str,
    lhs: Option<ValueExpr>,
    v1: Slot,
    v2: Slot,
}

impl Atom {
    fn from_predicate(p: &Predicate) -> Self {
        let (negated, op) = base_op(p.op);
        let (v1, v2) = match &p.rhs {
            Operand::Range(lo, hi) => (Slot::from_operand(lo), Slot::from_operand(hi)),
            other => (Slot::from_operand(other), Slot::Empty),
        };
        Atom {
            negated,
            op,
            lhs: p.lhs.as_ref().map(norm_expr),
            v1,
            v2,
        }
    }
}

fn base_op(op: CompareOp) -> (bool, &'static str) {
    match op {
        CompareOp::NotLike => (true, "like"),
        CompareOp::NotIn => (true, "in"),
        CompareOp::NotBetween => (true, "between"),
        CompareOp::NotExists => (true, "exists"),
        CompareOp::IsNot => (true, "is"),
        other => (false, other.keyword()),
    }
}

/// Condition flattened to source order: atoms and the connective between
/// each consecutive pair (`true` for OR). Parentheses are not kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Flat {
    atoms: Vec<Atom>,
    ors: Vec<bool>,
}

impl Flat {
    fn from_condition(c: Option<&Condition>) -> Self {
        let mut flat = Flat::default();
        if let Some(c) = c {
            flatten(c, &mut flat);
        }
        flat
    }

    fn has_or(&self) -> bool {
        self.ors.iter().any(|&o| o)
    }

    fn has_and(&self) -> bool {
        self.ors.iter().any(|&o| !o)
    }
}

fn flatten(c: &Condition, out: &mut Flat) {
    match c {
        Condition::Atom(p) => out.atoms.push(Atom::from_predicate(p)),
        Condition::And(cs) | Condition::Or(cs) => {
            let or = matches!(c, Condition::Or(_));
            for (i, child) in cs.iter().enumerate() {
                if i > 0 {
                    out.ors.push(or);
                }
                flatten(child, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Unit {
    // Declared first: derived tables sort before named tables.
    Query(Box<Norm>),
    Table(String),
}

/// Normalized SELECT block, comparable field by field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Norm {
    distinct: bool,
    select: Vec<ValueExpr>,
    units: Vec<Unit>,
    /// JOIN ... ON conditions up to the first OR.
    join: Flat,
    where_: Flat,
    group_by: Vec<ColumnRef>,
    having: Flat,
    /// One direction for the whole clause: the matcher keeps only one.
    order_by: Option<(OrderDirection, Vec<ValueExpr>)>,
    limit: Option<u64>,
    set_op: Option<(SetOperator, Box<Norm>)>,
}

impl Norm {
    fn from_query(q: &SqlQuery) -> Self {
        let units = q
            .from
            .table_units()
            .iter()
            .map(|u| match u {
                TableUnit::Table(name) => Unit::Table(name.clone()),
                TableUnit::Subquery { query, .. } => Unit::Query(Box::new(Norm::from_query(query))),
            })
            .collect();
        let mut join = Flat::default();
        for jc in q
            .from
            .join_conditions
            .iter()
            .take_while(|jc| !jc.disjunctive)
        {
            if !join.atoms.is_empty() {
                join.ors.push(false);
            }
            join.atoms.push(Atom {
                negated: false,
                op: "=",
                lhs: Some(norm_expr(&ValueExpr::Column(jc.left.clone()))),
                // The right column is a value slot and values are not kept.
                v1: Slot::Empty,
                v2: Slot::Empty,
            });
        }
        let order_by = (!q.order_by.is_empty()).then(|| {
            let dir = if q
                .order_by
                .iter()
                .any(|i| i.direction == OrderDirection::Desc)
            {
                OrderDirection::Desc
            } else {
                OrderDirection::Asc
            };
            (dir, q.order_by.iter().map(|i| norm_expr(&i.expr)).collect())
        });
        Norm {
            distinct: q.select.distinct,
            select: q.select.items().iter().map(norm_expr).collect(),
            units,
            join,
            where_: Flat::from_condition(q.where_.as_ref()),
            group_by: q.group_by.iter().map(norm_col).collect(),
            having: Flat::from_condition(q.having.as_ref()),
            order_by,
            limit: q.limit,
            set_op: q
                .set_op
                .as_ref()
                .map(|s| (s.op, Box::new(Norm::from_query(&s.right)))),
        }
    }

    fn keywords(&self) -> BTreeSet<&'static str> {
        let mut k = BTreeSet::new();
        if !self.where_.atoms.is_empty() {
            k.insert("where");
        }
        if !self.group_by.is_empty() {
            k.insert("group");
        }
        if !self.having.atoms.is_empty() {
            k.insert("having");
        }
        if let Some((dir, _)) = &self.order_by {
            k.insert("order");
            k.insert(if *dir == OrderDirection::Desc {
                "desc"
            } else {
                "asc"
            });
        }
        if self.limit.is_some() {
            k.insert("limit");
        }
        if let Some((op, _)) = &self.set_op {
            k.insert(op.keyword());
        }
        let conds = [&self.join, &self.where_, &self.having];
        if conds.iter().any(|c| c.has_or()) {
            k.insert("or");
        }
        let atoms = || conds.iter().flat_map(|c| c.atoms.iter());
        if atoms().any(|a| a.negated) {
            k.insert("not");
        }
        if atoms().any(|a| a.op == "in") {
            k.insert("in");
        }
        if atoms().any(|a| a.op == "like") {
            k.insert("like");
        }
        k
    }
}

fn norm_col(c: &ColumnRef) -> ColumnRef {
    if c.is_wildcard() {
        ColumnRef::wildcard()
    } else {
        c.clone()
    }
}

fn norm_expr(e: &ValueExpr) -> ValueExpr {
    let mut e = e.clone();
    e.for_each_column_mut(&mut |c| *c = norm_col(c));
    e
}

fn same_multiset<T: Ord + Clone>(a: &[T], b: &[T]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

fn match_blocks(p: &Norm, g: &Norm) -> bool {
    if !same_multiset(&p.select, &g.select) || !same_multiset(&p.where_.atoms, &g.where_.atoms) {
        return false;
    }

    // GROUP BY columns compared by bare column name.
    let names = |n: &Norm| {
        n.group_by
            .iter()
            .map(|c| c.column.clone())
            .collect::<Vec<_>>()
    };
    if !same_multiset(&names(p), &names(g)) {
        return false;
    }
    match (p.group_by.is_empty(), g.group_by.is_empty()) {
        (true, true) => {}
        (false, false) if p.group_by == g.group_by && p.having == g.having => {}
        _ => return false,
    }

    match (&p.order_by, &g.order_by) {
        (None, None) => {}
        (Some(po), Some(go)) if po == go && p.limit.is_some() == g.limit.is_some() => {}
        _ => return false,
    }

    if (p.where_.has_and(), p.where_.has_or()) != (g.where_.has_and(), g.where_.has_or()) {
        return false;
    }

    match (&p.set_op, &g.set_op) {
        (None, None) => {}
        (Some((po, pq)), Some((go, gq))) if po == go && match_blocks(pq, gq) => {}
        _ => return false,
    }

    if p.keywords() != g.keywords() {
        return false;
    }

    same_multiset(&p.units, &g.units)
}
