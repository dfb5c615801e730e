use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::SqlError;
use crate::schema::DatabaseSchema;

const RESERVED: &[&str] = &[
    "select",
    "from",
    "where",
    "group",
    "order",
    "by",
    "having",
    "limit",
    "intersect",
    "union",
    "except",
    "join",
    "on",
    "as",
    "and",
    "or",
    "not",
    "in",
    "like",
    "between",
    "exists",
    "is",
    "null",
    "asc",
    "desc",
    "distinct",
    "inner",
    "left",
    "right",
    "full",
    "outer",
    "cross",
    "natural",
    "using",
    "offset",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

/// Parses SQL text into a canonical [`SqlQuery`].
///
/// With a schema, every table and column must exist (case-insensitive) and
/// unqualified columns bind to the first FROM table that has them, searching
/// enclosing blocks outward for correlated references.
pub fn parse_sql(text: &str, schema: Option<&DatabaseSchema>) -> Result<SqlQuery, SqlError> {
    if text.trim().is_empty() {
        return Err(SqlError::parse(0, "empty query"));
    }
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        schema,
        scopes: Vec::new(),
    };
    let query = parser.parse_query()?;
    while parser.eat(&TokenKind::Semicolon) {}
    if let Some(tok) = parser.peek() {
        return Err(SqlError::parse(tok.pos, "unexpected trailing input"));
    }
    Ok(query)
}

#[derive(Debug, Clone)]
enum EntrySource {
    Table(Option<usize>),
    /// Output column names of a derived table; `None` when they are not all known.
    Derived(Option<Vec<String>>),
}

#[derive(Debug, Clone)]
struct ScopeEntry {
    name: Option<String>,
    alias: Option<String>,
    source: EntrySource,
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    schema: Option<&'a DatabaseSchema>,
    scopes: Vec<Vec<ScopeEntry>>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&Token> {
        self.tokens.get(self.pos + offset)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SqlError> {
        let message = message.into();
        match self.peek() {
            Some(_) => Err(SqlError::parse(self.here(), message)),
            None => Err(SqlError::parse(
                self.end,
                format!("{message} (found end of input)"),
            )),
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: &TokenKind, what: &str) -> Result<(), SqlError> {
        if self.eat(kind) {
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn at_keyword_at(&self, offset: usize, kw: &str) -> bool {
        self.peek_at(offset).is_some_and(|t| t.is_keyword(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.error(format!("expected '{kw}'"))
        }
    }

    fn at_subquery(&self) -> bool {
        matches!(self.peek().map(|t| &t.kind), Some(TokenKind::LParen))
            && self.at_keyword_at(1, "select")
    }

    fn identifier(&mut self, what: &str) -> Result<String, SqlError> {
        match self.peek().map(|t| t.kind.clone()) {
            Some(TokenKind::Ident(s)) if !is_reserved(&s) => {
                self.pos += 1;
                Ok(normalize_ident(&s))
            }
            _ => self.error(format!("expected {what}")),
        }
    }

    // query := block [set_op query]
    fn parse_query(&mut self) -> Result<SqlQuery, SqlError> {
        let mut query = if self.at_subquery() {
            self.pos += 1;
            let inner = self.parse_query()?;
            self.expect(&TokenKind::RParen, "')'")?;
            if inner.set_op.is_some() && self.at_set_operator() {
                return self
                    .error("a parenthesized set operation cannot be the left arm of another");
            }
            inner
        } else {
            self.parse_block()?
        };
        if let Some(op) = self.set_operator() {
            self.pos += 1;
            let right = self.parse_query()?;
            query.set_op = Some(SetOperation {
                op,
                right: Box::new(right),
            });
        }
        Ok(query)
    }

    fn set_operator(&self) -> Option<SetOperator> {
        if self.at_keyword("intersect") {
            Some(SetOperator::Intersect)
        } else if self.at_keyword("union") {
            Some(SetOperator::Union)
        } else if self.at_keyword("except") {
            Some(SetOperator::Except)
        } else {
            None
        }
    }

    fn at_set_operator(&self) -> bool {
        self.set_operator().is_some()
    }

    fn parse_block(&mut self) -> Result<SqlQuery, SqlError> {
        self.expect_keyword("select")?;
        if self.at_keyword("all") {
            self.pos += 1;
        }
        let distinct = self.eat_keyword("distinct");
        let mut items = vec![self.parse_expr()?];
        while self.eat(&TokenKind::Comma) {
            items.push(self.parse_expr()?);
        }
        if self.at_keyword("as") {
            return self.error("select item aliases are not supported");
        }

        self.expect_keyword("from")?;
        let (table_units, mut join_conditions, scope) = self.parse_from()?;

        self.scopes.push(scope);
        let result = self.parse_block_tail(distinct, items, table_units, &mut join_conditions);
        self.scopes.pop();
        result
    }

    fn parse_block_tail(
        &mut self,
        distinct: bool,
        mut items: Vec<ValueExpr>,
        table_units: Vec<TableUnit>,
        join_conditions: &mut [JoinCondition],
    ) -> Result<SqlQuery, SqlError> {
        for item in &mut items {
            self.resolve_expr(item)?;
        }
        for jc in join_conditions.iter_mut() {
            self.resolve_column(&mut jc.left)?;
            self.resolve_column(&mut jc.right)?;
        }

        let where_ = if self.eat_keyword("where") {
            Some(self.parse_condition()?)
        } else {
            None
        };

        let mut group_by = Vec::new();
        if self.eat_keyword("group") {
            self.expect_keyword("by")?;
            loop {
                let start = self.here();
                match self.parse_expr()? {
                    ValueExpr::Column(mut c) => {
                        self.resolve_column(&mut c)?;
                        group_by.push(c);
                    }
                    _ => {
                        return Err(SqlError::parse(
                            start,
                            "GROUP BY accepts column references only",
                        ))
                    }
                }
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
        }

        let having = if self.eat_keyword("having") {
            Some(self.parse_condition()?)
        } else {
            None
        };

        let mut order_by = Vec::new();
        if self.eat_keyword("order") {
            self.expect_keyword("by")?;
            loop {
                let mut expr = self.parse_expr()?;
                self.resolve_expr(&mut expr)?;
                let direction = if self.eat_keyword("desc") {
                    OrderDirection::Desc
                } else {
                    self.eat_keyword("asc");
                    OrderDirection::Asc
                };
                order_by.push(OrderItem { expr, direction });
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
        }

        let limit = if self.eat_keyword("limit") {
            match self.peek().map(|t| t.kind.clone()) {
                Some(TokenKind::Number(n)) => {
                    let value = n
                        .parse::<u64>()
                        .or_else(|_| self.error("LIMIT expects a non-negative integer"))?;
                    self.pos += 1;
                    Some(value)
                }
                _ => return self.error("LIMIT expects a non-negative integer"),
            }
        } else {
            None
        };

        let mut where_ = where_;
        let mut having = having;
        if let Some(c) = where_.as_mut() {
            self.resolve_condition(c)?;
        }
        if let Some(c) = having.as_mut() {
            self.resolve_condition(c)?;
        }

        let select = SelectClause::new(distinct, items).expect("select list parsed non-empty");
        let from = FromClause::new(table_units, join_conditions.to_vec())
            .expect("from list parsed non-empty");
        Ok(SqlQuery {
            select,
            from,
            where_,
            group_by,
            having,
            order_by,
            limit,
            set_op: None,
        })
    }

    fn parse_from(
        &mut self,
    ) -> Result<(Vec<TableUnit>, Vec<JoinCondition>, Vec<ScopeEntry>), SqlError> {
        let mut units = Vec::new();
        let mut scope = Vec::new();
        let mut joins = Vec::new();
        loop {
            let (unit, entry) = self.parse_table_unit()?;
            units.push(unit);
            scope.push(entry);
            if self.eat_keyword("on") {
                let mut disjunctive = false;
                loop {
                    let mut jc = self.parse_join_condition()?;
                    jc.disjunctive = disjunctive && !joins.is_empty();
                    joins.push(jc);
                    if self.eat_keyword("and") {
                        disjunctive = false;
                    } else if self.eat_keyword("or") {
                        disjunctive = true;
                    } else {
                        break;
                    }
                }
            }
            if self.eat(&TokenKind::Comma) {
                continue;
            }
            if self.at_keyword("left")
                || self.at_keyword("right")
                || self.at_keyword("full")
                || self.at_keyword("natural")
            {
                return self.error("outer and natural joins are not supported");
            }
            if self.eat_keyword("inner") || self.eat_keyword("cross") {
                self.expect_keyword("join")?;
                continue;
            }
            if self.eat_keyword("join") {
                continue;
            }
            break;
        }
        Ok((units, joins, scope))
    }

    fn parse_table_unit(&mut self) -> Result<(TableUnit, ScopeEntry), SqlError> {
        if self.at_subquery() {
            self.pos += 1;
            let query = self.parse_query()?;
            self.expect(&TokenKind::RParen, "')'")?;
            let alias = self.parse_alias()?;
            let outputs = derived_output_names(&query);
            let entry = ScopeEntry {
                name: alias.clone(),
                alias: alias.clone(),
                source: EntrySource::Derived(outputs),
            };
            return Ok((
                TableUnit::Subquery {
                    query: Box::new(query),
                    alias,
                },
                entry,
            ));
        }
        let start = self.here();
        let name = self.identifier("table name")?;
        let index = match self.schema {
            Some(schema) => Some(
                schema
                    .table_index(&name)
                    .ok_or(SqlError::UnknownIdentifier(name.clone()))?,
            ),
            None => None,
        };
        let _ = start;
        let alias = self.parse_alias()?;
        let entry = ScopeEntry {
            name: Some(name.clone()),
            alias,
            source: EntrySource::Table(index),
        };
        Ok((TableUnit::Table(name), entry))
    }

    fn parse_alias(&mut self) -> Result<Option<String>, SqlError> {
        if self.eat_keyword("as") {
            return self.identifier("alias").map(Some);
        }
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Ident(s)) if !is_reserved(s) => {
                let alias = normalize_ident(s);
                self.pos += 1;
                Ok(Some(alias))
            }
            _ => Ok(None),
        }
    }

    fn parse_join_condition(&mut self) -> Result<JoinCondition, SqlError> {
        let start = self.here();
        let left = self.parse_expr()?;
        self.expect(&TokenKind::Eq, "'=' in join condition")?;
        let right = self.parse_expr()?;
        match (left, right) {
            (ValueExpr::Column(left), ValueExpr::Column(right)) => {
                Ok(JoinCondition::new(left, right))
            }
            _ => Err(SqlError::parse(
                start,
                "join conditions must equate two columns",
            )),
        }
    }

    // cond := conj (OR conj)*
    fn parse_condition(&mut self) -> Result<Condition, SqlError> {
        let mut parts = vec![self.parse_conjunction()?];
        while self.eat_keyword("or") {
            parts.push(self.parse_conjunction()?);
        }
        Ok(make_or(parts))
    }

    fn parse_conjunction(&mut self) -> Result<Condition, SqlError> {
        let mut parts = vec![self.parse_condition_primary()?];
        while self.eat_keyword("and") {
            parts.push(self.parse_condition_primary()?);
        }
        Ok(make_and(parts))
    }

    fn parse_condition_primary(&mut self) -> Result<Condition, SqlError> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::LParen)) && !self.at_subquery() {
            // A parenthesis may open a nested condition or an arithmetic operand.
            let saved = self.pos;
            self.pos += 1;
            if let Ok(cond) = self.parse_condition() {
                if self.eat(&TokenKind::RParen) && !self.at_comparison_or_arith() {
                    return Ok(cond);
                }
            }
            self.pos = saved;
        }
        self.parse_predicate().map(Condition::Atom)
    }

    fn at_comparison_or_arith(&self) -> bool {
        match self.peek().map(|t| &t.kind) {
            Some(
                TokenKind::Eq
                | TokenKind::Ne
                | TokenKind::Lt
                | TokenKind::Le
                | TokenKind::Gt
                | TokenKind::Ge
                | TokenKind::Plus
                | TokenKind::Minus
                | TokenKind::Star
                | TokenKind::Slash,
            ) => true,
            Some(_) => ["like", "in", "between", "is", "not"]
                .iter()
                .any(|k| self.at_keyword(k)),
            None => false,
        }
    }

    fn parse_predicate(&mut self) -> Result<Predicate, SqlError> {
        if self.at_keyword("exists") || (self.at_keyword("not") && self.at_keyword_at(1, "exists"))
        {
            let negated = self.eat_keyword("not");
            self.expect_keyword("exists")?;
            let rhs = self.parse_subquery_operand()?;
            let op = if negated {
                CompareOp::NotExists
            } else {
                CompareOp::Exists
            };
            return Ok(Predicate { lhs: None, op, rhs });
        }

        let lhs = self.parse_expr()?;
        let negated = self.eat_keyword("not");
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => return self.error("expected comparison operator"),
        };
        let simple = match tok.kind {
            TokenKind::Eq => Some(CompareOp::Eq),
            TokenKind::Ne => Some(CompareOp::Ne),
            TokenKind::Lt => Some(CompareOp::Lt),
            TokenKind::Le => Some(CompareOp::Le),
            TokenKind::Gt => Some(CompareOp::Gt),
            TokenKind::Ge => Some(CompareOp::Ge),
            _ => None,
        };
        if let Some(op) = simple {
            if negated {
                return Err(SqlError::parse(
                    tok.pos,
                    "NOT cannot precede a comparison operator",
                ));
            }
            self.pos += 1;
            let rhs = self.parse_value_operand()?;
            return Ok(Predicate {
                lhs: Some(lhs),
                op,
                rhs,
            });
        }
        if self.eat_keyword("like") {
            let op = if negated {
                CompareOp::NotLike
            } else {
                CompareOp::Like
            };
            let rhs = self.parse_value_operand()?;
            return Ok(Predicate {
                lhs: Some(lhs),
                op,
                rhs,
            });
        }
        if self.eat_keyword("in") {
            let op = if negated {
                CompareOp::NotIn
            } else {
                CompareOp::In
            };
            let rhs = if self.at_subquery() {
                self.parse_subquery_operand()?
            } else {
                self.expect(&TokenKind::LParen, "'(' after IN")?;
                let mut values = vec![self.parse_expr()?];
                while self.eat(&TokenKind::Comma) {
                    values.push(self.parse_expr()?);
                }
                self.expect(&TokenKind::RParen, "')'")?;
                Operand::List(values)
            };
            return Ok(Predicate {
                lhs: Some(lhs),
                op,
                rhs,
            });
        }
        if self.eat_keyword("between") {
            let op = if negated {
                CompareOp::NotBetween
            } else {
                CompareOp::Between
            };
            let low = self.parse_value_operand()?;
            self.expect_keyword("and")?;
            let high = self.parse_value_operand()?;
            return Ok(Predicate {
                lhs: Some(lhs),
                op,
                rhs: Operand::Range(Box::new(low), Box::new(high)),
            });
        }
        if !negated && self.eat_keyword("is") {
            let op = if self.eat_keyword("not") {
                CompareOp::IsNot
            } else {
                CompareOp::Is
            };
            let rhs = self.parse_value_operand()?;
            return Ok(Predicate {
                lhs: Some(lhs),
                op,
                rhs,
            });
        }
        self.error("expected comparison operator")
    }

    fn parse_value_operand(&mut self) -> Result<Operand, SqlError> {
        if self.at_subquery() {
            self.parse_subquery_operand()
        } else {
            self.parse_expr().map(Operand::Value)
        }
    }

    fn parse_subquery_operand(&mut self) -> Result<Operand, SqlError> {
        self.expect(&TokenKind::LParen, "'('")?;
        let query = self.parse_query()?;
        self.expect(&TokenKind::RParen, "')'")?;
        Ok(Operand::Subquery(Box::new(query)))
    }

    // expr := term (('+'|'-') term)*
    fn parse_expr(&mut self) -> Result<ValueExpr, SqlError> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => ArithOp::Add,
                Some(TokenKind::Minus) => ArithOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_term()?;
            lhs = ValueExpr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<ValueExpr, SqlError> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => ArithOp::Mul,
                Some(TokenKind::Slash) => ArithOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_factor()?;
            lhs = ValueExpr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<ValueExpr, SqlError> {
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => return self.error("expected expression"),
        };
        match tok.kind {
            TokenKind::LParen => {
                if self.at_subquery() {
                    return self.error(
                        "subqueries are only supported as predicate operands or FROM units",
                    );
                }
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(&TokenKind::RParen, "')'")?;
                Ok(inner)
            }
            TokenKind::Star => {
                self.pos += 1;
                Ok(ValueExpr::Column(ColumnRef::wildcard()))
            }
            TokenKind::Number(n) => {
                self.pos += 1;
                Ok(ValueExpr::Literal(Literal {
                    kind: LiteralKind::Number,
                    lexeme: n,
                }))
            }
            TokenKind::Minus => {
                if let Some(TokenKind::Number(n)) = self.peek_at(1).map(|t| t.kind.clone()) {
                    self.pos += 2;
                    return Ok(ValueExpr::Literal(Literal {
                        kind: LiteralKind::Number,
                        lexeme: format!("-{n}"),
                    }));
                }
                self.error("expected expression")
            }
            TokenKind::Str(s) => {
                self.pos += 1;
                Ok(ValueExpr::Literal(Literal {
                    kind: LiteralKind::String,
                    lexeme: s,
                }))
            }
            TokenKind::Ident(word) => {
                if word.eq_ignore_ascii_case("null") {
                    self.pos += 1;
                    return Ok(ValueExpr::Literal(Literal {
                        kind: LiteralKind::Null,
                        lexeme: "null".into(),
                    }));
                }
                let is_call = matches!(self.peek_at(1).map(|t| &t.kind), Some(TokenKind::LParen));
                if is_call {
                    let Some(func) = AggFunc::from_name(&word) else {
                        return self.error(format!("unsupported function '{word}'"));
                    };
                    self.pos += 2;
                    let distinct = self.eat_keyword("distinct");
                    let arg_pos = self.here();
                    let arg = self.parse_expr()?;
                    if arg.aggregate_count() > 0 {
                        return Err(SqlError::parse(
                            arg_pos,
                            "aggregate functions cannot be nested",
                        ));
                    }
                    self.expect(&TokenKind::RParen, "')'")?;
                    return Ok(ValueExpr::Aggregate {
                        func,
                        distinct,
                        arg: Box::new(arg),
                    });
                }
                if is_reserved(&word) {
                    return self.error(format!(
                        "unexpected keyword '{}'",
                        word.to_ascii_lowercase()
                    ));
                }
                self.pos += 1;
                if self.eat(&TokenKind::Dot) {
                    let column = match self.peek().map(|t| t.kind.clone()) {
                        Some(TokenKind::Star) => "*".to_string(),
                        Some(TokenKind::Ident(c)) => normalize_ident(&c),
                        _ => return self.error("expected column name after '.'"),
                    };
                    self.pos += 1;
                    return Ok(ValueExpr::Column(ColumnRef {
                        table: Some(normalize_ident(&word)),
                        column,
                    }));
                }
                Ok(ValueExpr::Column(ColumnRef {
                    table: None,
                    column: normalize_ident(&word),
                }))
            }
            _ => self.error("expected expression"),
        }
    }

    fn resolve_condition(&self, cond: &mut Condition) -> Result<(), SqlError> {
        let mut result = Ok(());
        cond.atoms_mut(&mut |p| {
            if result.is_err() {
                return;
            }
            result = self.resolve_predicate(p);
        });
        result
    }

    fn resolve_predicate(&self, p: &mut Predicate) -> Result<(), SqlError> {
        if let Some(lhs) = p.lhs.as_mut() {
            self.resolve_expr(lhs)?;
        }
        self.resolve_operand(&mut p.rhs)
    }

    fn resolve_operand(&self, operand: &mut Operand) -> Result<(), SqlError> {
        match operand {
            Operand::Value(v) => self.resolve_expr(v),
            // resolved while it was parsed, with this block's scope visible
            Operand::Subquery(_) => Ok(()),
            Operand::List(vs) => vs.iter_mut().try_for_each(|v| self.resolve_expr(v)),
            Operand::Range(lo, hi) => {
                self.resolve_operand(lo)?;
                self.resolve_operand(hi)
            }
        }
    }

    fn resolve_expr(&self, expr: &mut ValueExpr) -> Result<(), SqlError> {
        let mut result = Ok(());
        expr.for_each_column_mut(&mut |c| {
            if result.is_err() {
                return;
            }
            result = self.resolve_column(c);
        });
        result
    }

    fn resolve_column(&self, col: &mut ColumnRef) -> Result<(), SqlError> {
        match col.table.clone() {
            Some(qualifier) => {
                let found = self
                    .scopes
                    .iter()
                    .rev()
                    .flat_map(|scope| scope.iter())
                    .find(|e| e.alias.as_deref() == Some(qualifier.as_str()))
                    .or_else(|| {
                        self.scopes
                            .iter()
                            .rev()
                            .flat_map(|scope| scope.iter())
                            .find(|e| e.name.as_deref() == Some(qualifier.as_str()))
                    });
                match found {
                    Some(entry) => {
                        if !col.is_wildcard() && !self.entry_has_column(entry, &col.column) {
                            return Err(SqlError::UnknownIdentifier(format!(
                                "{qualifier}.{}",
                                col.column
                            )));
                        }
                        col.table = entry.name.clone();
                        Ok(())
                    }
                    None if self.schema.is_some() => Err(SqlError::UnknownIdentifier(qualifier)),
                    None => Ok(()),
                }
            }
            None if col.is_wildcard() => Ok(()),
            None => {
                if self.schema.is_some() {
                    for scope in self.scopes.iter().rev() {
                        if let Some(entry) =
                            scope.iter().find(|e| self.entry_provides(e, &col.column))
                        {
                            col.table = entry.name.clone();
                            return Ok(());
                        }
                    }
                    Err(SqlError::UnknownIdentifier(col.column.clone()))
                } else {
                    if let Some([only]) = self.scopes.last().map(Vec::as_slice) {
                        col.table = only.name.clone();
                    }
                    Ok(())
                }
            }
        }
    }

    /// Column check used for qualified references; unknown sources accept anything.
    fn entry_has_column(&self, entry: &ScopeEntry, column: &str) -> bool {
        match (&entry.source, self.schema) {
            (EntrySource::Table(Some(ti)), Some(schema)) => schema.table_has_column(*ti, column),
            (EntrySource::Derived(Some(names)), _) => names.iter().any(|n| n == column),
            _ => true,
        }
    }

    /// Column lookup used for unqualified references (schema mode only).
    fn entry_provides(&self, entry: &ScopeEntry, column: &str) -> bool {
        match (&entry.source, self.schema) {
            (EntrySource::Table(Some(ti)), Some(schema)) => schema.table_has_column(*ti, column),
            (EntrySource::Derived(Some(names)), _) => names.iter().any(|n| n == column),
            (EntrySource::Derived(None), _) => true,
            _ => false,
        }
    }
}

fn normalize_ident(s: &str) -> String {
    s.trim().to_lowercase()
}

fn derived_output_names(query: &SqlQuery) -> Option<Vec<String>> {
    let mut names = Vec::new();
    for item in query.select.items() {
        if let ValueExpr::Column(c) = item {
            if c.is_wildcard() {
                return None;
            }
            names.push(c.column.clone());
        }
    }
    Some(names)
}

fn make_and(parts: Vec<Condition>) -> Condition {
    flatten(parts, true)
}

fn make_or(parts: Vec<Condition>) -> Condition {
    flatten(parts, false)
}

fn flatten(parts: Vec<Condition>, conjunction: bool) -> Condition {
    let mut flat = Vec::with_capacity(parts.len());
    for part in parts {
        match (part, conjunction) {
            (Condition::And(inner), true) | (Condition::Or(inner), false) => flat.extend(inner),
            (other, _) => flat.push(other),
        }
    }
    if flat.len() == 1 {
        return flat.pop().expect("one element");
    }
    if conjunction {
        Condition::And(flat)
    } else {
        Condition::Or(flat)
    }
}
