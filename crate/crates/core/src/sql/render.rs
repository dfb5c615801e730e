use super::ast::*;

/// Renders a query as lowercase canonical SQL.
///
/// Qualifiers are dropped when a block reads from a single table unit, and
/// JOIN ... ON conditions are collected after the last joined unit. Parsing
/// the output yields a structurally equal query.
pub fn to_canonical_string(q: &SqlQuery) -> String {
    let mut out = String::new();
    render_query(q, &mut out);
    out
}

fn render_query(q: &SqlQuery, out: &mut String) {
    let units = q.from.table_units();
    let single = match units {
        [TableUnit::Table(name)] => Some(name.as_str()),
        [TableUnit::Subquery {
            alias: Some(alias), ..
        }] => Some(alias.as_str()),
        _ => None,
    };
    let ctx = Ctx { single };

    out.push_str("select ");
    if q.select.distinct {
        out.push_str("distinct ");
    }
    join_with(out, q.select.items(), ", ", |e, out| ctx.expr(e, out));

    out.push_str(" from ");
    for (i, unit) in units.iter().enumerate() {
        if i > 0 {
            out.push_str(" join ");
        }
        match unit {
            TableUnit::Table(name) => out.push_str(name),
            TableUnit::Subquery { query, alias } => {
                out.push('(');
                render_query(query, out);
                out.push(')');
                if let Some(alias) = alias {
                    out.push_str(" as ");
                    out.push_str(alias);
                }
            }
        }
    }
    if !q.from.join_conditions.is_empty() {
        out.push_str(" on ");
        for (i, jc) in q.from.join_conditions.iter().enumerate() {
            if i > 0 {
                out.push_str(if jc.disjunctive { " or " } else { " and " });
            }
            ctx.column(&jc.left, out);
            out.push_str(" = ");
            ctx.column(&jc.right, out);
        }
    }

    if let Some(w) = &q.where_ {
        out.push_str(" where ");
        ctx.condition(w, out);
    }
    if !q.group_by.is_empty() {
        out.push_str(" group by ");
        join_with(out, &q.group_by, ", ", |c, out| ctx.column(c, out));
    }
    if let Some(h) = &q.having {
        out.push_str(" having ");
        ctx.condition(h, out);
    }
    if !q.order_by.is_empty() {
        out.push_str(" order by ");
        join_with(out, &q.order_by, ", ", |item, out| {
            ctx.expr(&item.expr, out);
            if item.direction == OrderDirection::Desc {
                out.push_str(" desc");
            }
        });
    }
    if let Some(n) = q.limit {
        out.push_str(" limit ");
        out.push_str(&n.to_string());
    }
    if let Some(set) = &q.set_op {
        out.push(' ');
        out.push_str(set.op.keyword());
        out.push(' ');
        render_query(&set.right, out);
    }
}

fn join_with<T>(out: &mut String, items: &[T], sep: &str, mut f: impl FnMut(&T, &mut String)) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        f(item, out);
    }
}

struct Ctx<'a> {
    /// Name of the block's only table unit, if it has exactly one.
    single: Option<&'a str>,
}

impl Ctx<'_> {
    fn column(&self, c: &ColumnRef, out: &mut String) {
        match &c.table {
            Some(t) if c.is_wildcard() || self.single != Some(t.as_str()) => {
                out.push_str(t);
                out.push('.');
            }
            _ => {}
        }
        out.push_str(&c.column);
    }

    fn expr(&self, e: &ValueExpr, out: &mut String) {
        match e {
            ValueExpr::Column(c) => self.column(c, out),
            ValueExpr::Literal(l) => out.push_str(&l.lexeme),
            ValueExpr::Aggregate {
                func,
                distinct,
                arg,
            } => {
                out.push_str(func.name());
                out.push('(');
                if *distinct {
                    out.push_str("distinct ");
                }
                self.expr(arg, out);
                out.push(')');
            }
            ValueExpr::Binary { op, lhs, rhs } => {
                let wrap_l = matches!(&**lhs, ValueExpr::Binary { op: l, .. } if l.precedence() < op.precedence());
                let wrap_r = matches!(&**rhs, ValueExpr::Binary { op: r, .. } if r.precedence() <= op.precedence());
                self.wrapped(lhs, wrap_l, out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                self.wrapped(rhs, wrap_r, out);
            }
        }
    }

    fn wrapped(&self, e: &ValueExpr, paren: bool, out: &mut String) {
        if paren {
            out.push('(');
        }
        self.expr(e, out);
        if paren {
            out.push(')');
        }
    }

    fn condition(&self, c: &Condition, out: &mut String) {
        match c {
            Condition::Atom(p) => self.predicate(p, out),
            Condition::And(cs) => join_with(out, cs, " and ", |child, out| {
                if matches!(child, Condition::Or(_)) {
                    out.push('(');
                    self.condition(child, out);
                    out.push(')');
                } else {
                    self.condition(child, out);
                }
            }),
            Condition::Or(cs) => {
                join_with(out, cs, " or ", |child, out| self.condition(child, out))
            }
        }
    }

    fn predicate(&self, p: &Predicate, out: &mut String) {
        if let Some(lhs) = &p.lhs {
            self.expr(lhs, out);
            out.push(' ');
        }
        out.push_str(p.op.keyword());
        out.push(' ');
        self.operand(&p.rhs, out);
    }

    fn operand(&self, o: &Operand, out: &mut String) {
        match o {
            Operand::Value(v) => self.expr(v, out),
            Operand::Subquery(q) => {
                out.push('(');
                render_query(q, out);
                out.push(')');
            }
            Operand::List(vs) => {
                out.push('(');
                join_with(out, vs, ", ", |v, out| self.expr(v, out));
                out.push(')');
            }
            Operand::Range(lo, hi) => {
                self.operand(lo, out);
                out.push_str(" and ");
                self.operand(hi, out);
            }
        }
    }
}
