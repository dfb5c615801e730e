//! Schema-item relevance: scoring, top-k filtering, the focal ranking loss,
//! the column-enhanced attention layer and ROC AUC.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::schema::{DatabaseSchema, SchemaItem};
use crate::sql::{collect_subqueries, ColumnRef, Operand, SqlQuery, TableUnit, ValueExpr};

/// Probabilities are clamped to this distance from 0 and 1 before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum RankingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("labels are all identical")]
    DegenerateLabels,
    #[error("k1 and k2 must be at least 1")]
    InvalidK,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scores file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Per-table and per-column relevance. `column_probs[t]` follows the schema
/// order of table `t`'s columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScores {
    pub table_probs: Vec<f64>,
    pub column_probs: Vec<Vec<f64>>,
}

impl RelevanceScores {
    pub fn check(&self, schema: &DatabaseSchema) -> Result<(), RankingError> {
        if self.table_probs.len() != schema.tables.len()
            || self.column_probs.len() != schema.tables.len()
        {
            return Err(RankingError::ShapeMismatch(format!(
                "{} tables in schema, {} table scores, {} column score lists",
                schema.tables.len(),
                self.table_probs.len(),
                self.column_probs.len()
            )));
        }
        for (t, probs) in self.column_probs.iter().enumerate() {
            let expected = schema.table_columns(t).len();
            if probs.len() != expected {
                return Err(RankingError::ShapeMismatch(format!(
                    "table {t} has {expected} columns, got {} scores",
                    probs.len()
                )));
            }
        }
        let all = self
            .table_probs
            .iter()
            .chain(self.column_probs.iter().flatten());
        if let Some(p) = all.into_iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(RankingError::Domain(format!("score {p} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Gold relevance labels with the same shape as [`RelevanceScores`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceLabels {
    pub table_labels: Vec<u8>,
    pub column_labels: Vec<Vec<u8>>,
}

impl RelevanceLabels {
    /// Tables and columns referenced anywhere in `q`.
    pub fn from_query(q: &SqlQuery, schema: &DatabaseSchema) -> Self {
        let (tables, columns) = referenced_items(q, schema);
        let table_labels = (0..schema.tables.len())
            .map(|t| u8::from(tables.contains(&t)))
            .collect();
        let column_labels = (0..schema.tables.len())
            .map(|t| {
                schema
                    .table_columns(t)
                    .into_iter()
                    .map(|c| u8::from(columns.contains(&c)))
                    .collect()
            })
            .collect();
        Self {
            table_labels,
            column_labels,
        }
    }
}

/// The retained schema items, most relevant first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedSchema {
    pub kept_tables: Vec<usize>,
    /// Global column indices per entry of `kept_tables`.
    pub kept_columns: Vec<Vec<usize>>,
    pub k1: usize,
    pub k2: usize,
}

/// Longest common substring of `question` (lowercased) and each item's
/// semantic name, divided by the name length in characters.
pub fn lexical_rank(question: &str, schema: &DatabaseSchema) -> RelevanceScores {
    let q: Vec<char> = question.to_lowercase().chars().collect();
    let score = |item| {
        let name: Vec<char> = schema
            .semantic_tokens(item)
            .unwrap_or_default()
            .join(" ")
            .chars()
            .collect();
        if name.is_empty() {
            0.0
        } else {
            longest_common_substring(&q, &name) as f64 / name.len() as f64
        }
    };
    let table_probs = (0..schema.tables.len())
        .map(|t| score(SchemaItem::Table(t)))
        .collect();
    let column_probs = (0..schema.tables.len())
        .map(|t| {
            schema
                .table_columns(t)
                .into_iter()
                .map(|c| score(SchemaItem::Column(c)))
                .collect()
        })
        .collect();
    RelevanceScores {
        table_probs,
        column_probs,
    }
}

fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            if ca == cb {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

/// Keeps the `k1` best tables and, for each, its `k2` best columns. Ties go
/// to the lower schema index.
pub fn filter_top_k(
    scores: &RelevanceScores,
    schema: &DatabaseSchema,
    k1: usize,
    k2: usize,
) -> Result<RankedSchema, RankingError> {
    if k1 == 0 || k2 == 0 {
        return Err(RankingError::InvalidK);
    }
    scores.check(schema)?;
    let kept_tables: Vec<usize> = top_indices(&scores.table_probs, k1);
    let kept_columns = kept_tables
        .iter()
        .map(|&t| {
            let cols = schema.table_columns(t);
            top_indices(&scores.column_probs[t], k2)
                .into_iter()
                .map(|i| cols[i])
                .collect()
        })
        .collect();
    Ok(RankedSchema {
        kept_tables,
        kept_columns,
        k1,
        k2,
    })
}

fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_focal_params(p: f64, y: u8, gamma: f64, alpha: f64) -> Result<(), RankingError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RankingError::Domain(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    if y > 1 {
        return Err(RankingError::Domain(format!("label {y} is not 0 or 1")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RankingError::Domain(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    if gamma.is_nan() || gamma < 0.0 {
        return Err(RankingError::Domain(format!("gamma {gamma} is negative")));
    }
    Ok(())
}

/// Focal loss for one prediction; `p` is clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn focal_loss(p: f64, y: u8, gamma: f64, alpha: f64) -> Result<f64, RankingError> {
    check_focal_params(p, y, gamma, alpha)?;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    Ok(if y == 1 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    })
}

/// Mean focal loss over tables plus mean focal loss over all columns. An
/// empty group contributes zero.
pub fn ranker_loss(
    scores: &RelevanceScores,
    labels: &RelevanceLabels,
    gamma: f64,
    alpha: f64,
) -> Result<f64, RankingError> {
    if scores.table_probs.len() != labels.table_labels.len()
        || scores.column_probs.len() != labels.column_labels.len()
    {
        return Err(RankingError::ShapeMismatch(
            "table counts differ between scores and labels".into(),
        ));
    }
    for (t, (s, l)) in scores
        .column_probs
        .iter()
        .zip(&labels.column_labels)
        .enumerate()
    {
        if s.len() != l.len() {
            return Err(RankingError::ShapeMismatch(format!(
                "table {t}: {} column scores, {} labels",
                s.len(),
                l.len()
            )));
        }
    }
    let mean = |pairs: Vec<(f64, u8)>| -> Result<f64, RankingError> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let n = pairs.len() as f64;
        let mut sum = 0.0;
        for (p, y) in pairs {
            sum += focal_loss(p, y, gamma, alpha)?;
        }
        Ok(sum / n)
    };
    let tables = scores
        .table_probs
        .iter()
        .copied()
        .zip(labels.table_labels.iter().copied())
        .collect();
    let columns = scores
        .column_probs
        .iter()
        .flatten()
        .copied()
        .zip(labels.column_labels.iter().flatten().copied())
        .collect();
    Ok(mean(tables)? + mean(columns)?)
}

/// Per-head projections. Each head maps the model dimension `d` to
/// `d / h`; `wo` maps the concatenated heads back to `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    d_model: usize,
    wq: Vec<DMatrix<f64>>,
    wk: Vec<DMatrix<f64>>,
    wv: Vec<DMatrix<f64>>,
    wo: DMatrix<f64>,
}

impl AttentionParams {
    pub fn new(
        d_model: usize,
        wq: Vec<DMatrix<f64>>,
        wk: Vec<DMatrix<f64>>,
        wv: Vec<DMatrix<f64>>,
        wo: DMatrix<f64>,
    ) -> Result<Self, RankingError> {
        let h = wq.len();
        if h == 0 || d_model == 0 || !d_model.is_multiple_of(h) {
            return Err(RankingError::DimensionMismatch(format!(
                "model dimension {d_model} not divisible by {h} heads"
            )));
        }
        if wk.len() != h || wv.len() != h {
            return Err(RankingError::DimensionMismatch(
                "query, key and value head counts differ".into(),
            ));
        }
        let d_head = d_model / h;
        for m in wq.iter().chain(&wk).chain(&wv) {
            if m.shape() != (d_head, d_model) {
                return Err(RankingError::DimensionMismatch(format!(
                    "head projection is {:?}, expected {:?}",
                    m.shape(),
                    (d_head, d_model)
                )));
            }
        }
        if wo.shape() != (d_model, d_model) {
            return Err(RankingError::DimensionMismatch(format!(
                "output projection is {:?}, expected {:?}",
                wo.shape(),
                (d_model, d_model)
            )));
        }
        Ok(Self {
            d_model,
            wq,
            wk,
            wv,
            wo,
        })
    }

    /// One head with identity projections.
    pub fn identity(d_model: usize) -> Self {
        let i = DMatrix::identity(d_model, d_model);
        Self {
            d_model,
            wq: vec![i.clone()],
            wk: vec![i.clone()],
            wv: vec![i.clone()],
            wo: i,
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedTables {
    pub vectors: Vec<DVector<f64>>,
    /// `weights[table][head]` holds one weight per column of that table.
    pub weights: Vec<Vec<DVector<f64>>>,
}

/// Multi-head attention from each table vector over its column vectors,
/// added back to the table vector and scaled to unit L2 norm.
pub fn column_enhance(
    tables: &[DVector<f64>],
    columns: &[Vec<DVector<f64>>],
    params: &AttentionParams,
) -> Result<EnhancedTables, RankingError> {
    if tables.len() != columns.len() {
        return Err(RankingError::DimensionMismatch(format!(
            "{} table vectors, {} column groups",
            tables.len(),
            columns.len()
        )));
    }
    let d = params.d_model;
    let d_head = d / params.heads();
    let scale = (d_head as f64).sqrt();
    let mut vectors = Vec::with_capacity(tables.len());
    let mut weights = Vec::with_capacity(tables.len());
    for (t, cols) in tables.iter().zip(columns) {
        if t.len() != d || cols.iter().any(|c| c.len() != d) {
            return Err(RankingError::DimensionMismatch(format!(
                "vectors must have dimension {d}"
            )));
        }
        let mut concat = DVector::zeros(d);
        let mut head_weights = Vec::with_capacity(params.heads());
        for h in 0..params.heads() {
            if cols.is_empty() {
                head_weights.push(DVector::zeros(0));
                continue;
            }
            let q = &params.wq[h] * t;
            let logits = DVector::from_iterator(
                cols.len(),
                cols.iter().map(|c| q.dot(&(&params.wk[h] * c)) / scale),
            );
            let max = logits.max();
            let exp = logits.map(|x| (x - max).exp());
            let w = &exp / exp.sum();
            let mut out = DVector::zeros(d_head);
            for (j, c) in cols.iter().enumerate() {
                out += (&params.wv[h] * c) * w[j];
            }
            concat.rows_mut(h * d_head, d_head).copy_from(&out);
            head_weights.push(w);
        }
        let tc = if cols.is_empty() {
            DVector::zeros(d)
        } else {
            &params.wo * concat
        };
        let sum = t + tc;
        let norm = sum.norm().max(1e-12);
        vectors.push(sum / norm);
        weights.push(head_weights);
    }
    Ok(EnhancedTables { vectors, weights })
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn ranker_auc(scores: &[f64], labels: &[u8]) -> Result<f64, RankingError> {
    if scores.len() != labels.len() {
        return Err(RankingError::ShapeMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(RankingError::Domain(format!("label {y} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(RankingError::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // rank sum of positives, with tied groups sharing their mean rank (doubled to stay integral)
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mean_x2 = (i + 1 + j + 1) as u128;
        let group_pos = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum_x2 += mean_x2 * group_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub db_id: String,
    pub question_id: usize,
    pub table_probs: Vec<f64>,
    pub column_probs: Vec<Vec<f64>>,
}

impl ScoreRecord {
    pub fn scores(&self) -> RelevanceScores {
        RelevanceScores {
            table_probs: self.table_probs.clone(),
            column_probs: self.column_probs.clone(),
        }
    }
}

/// Reads a line-delimited scores file keyed by question id.
pub fn read_scores_file(path: &Path) -> Result<HashMap<usize, ScoreRecord>, RankingError> {
    let file = std::fs::File::open(path)?;
    let mut out = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| RankingError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(rec.question_id, rec);
    }
    Ok(out)
}

pub fn write_scores_file<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a ScoreRecord>,
) -> Result<(), RankingError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// How many of the gold query's tables and columns survived filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterRecall {
    pub tables_kept: usize,
    pub tables_total: usize,
    pub columns_kept: usize,
    pub columns_total: usize,
}

impl FilterRecall {
    pub fn add(&mut self, other: FilterRecall) {
        self.tables_kept += other.tables_kept;
        self.tables_total += other.tables_total;
        self.columns_kept += other.columns_kept;
        self.columns_total += other.columns_total;
    }
}

pub fn filter_recall(
    ranked: &RankedSchema,
    gold: &SqlQuery,
    schema: &DatabaseSchema,
) -> FilterRecall {
    let (tables, columns) = referenced_items(gold, schema);
    let kept_cols: BTreeSet<usize> = ranked.kept_columns.iter().flatten().copied().collect();
    FilterRecall {
        tables_kept: tables
            .iter()
            .filter(|t| ranked.kept_tables.contains(t))
            .count(),
        tables_total: tables.len(),
        columns_kept: columns.iter().filter(|c| kept_cols.contains(c)).count(),
        columns_total: columns.len(),
    }
}

fn referenced_items(q: &SqlQuery, schema: &DatabaseSchema) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut tables = BTreeSet::new();
    let mut columns = BTreeSet::new();
    let mut blocks = vec![q];
    blocks.extend(collect_subqueries(q));
    for block in blocks {
        for unit in block.from.table_units() {
            if let TableUnit::Table(name) = unit {
                tables.extend(schema.table_index(name));
            }
        }
        let mut add = |c: &ColumnRef| {
            if c.is_wildcard() {
                return;
            }
            if let Some(ti) = c.table.as_deref().and_then(|t| schema.table_index(t)) {
                columns.extend(schema.column_index(ti, &c.column));
            }
        };
        let mut exprs: Vec<&ValueExpr> = block.select.items().iter().collect();
        exprs.extend(block.order_by.iter().map(|o| &o.expr));
        for cond in [&block.where_, &block.having].into_iter().flatten() {
            for atom in cond.atoms() {
                exprs.extend(atom.lhs.as_ref());
                operand_exprs(&atom.rhs, &mut exprs);
            }
        }
        for e in exprs {
            visit_columns(e, &mut add);
        }
        for c in &block.group_by {
            add(c);
        }
        for jc in &block.from.join_conditions {
            add(&jc.left);
            add(&jc.right);
        }
    }
    (tables, columns)
}

fn operand_exprs<'a>(o: &'a Operand, out: &mut Vec<&'a ValueExpr>) {
    match o {
        Operand::Value(v) => out.push(v),
        Operand::List(vs) => out.extend(vs),
        Operand::Range(lo, hi) => {
            operand_exprs(lo, out);
            operand_exprs(hi, out);
        }
        Operand::Subquery(_) => {}
    }
}

fn visit_columns(e: &ValueExpr, f: &mut impl FnMut(&ColumnRef)) {
    match e {
        ValueExpr::Column(c) => f(c),
        ValueExpr::Aggregate { arg, .. } => visit_columns(arg, f),
        ValueExpr::Binary { lhs, rhs, .. } => {
            visit_columns(lhs, f);
            visit_columns(rhs, f);
        }
        ValueExpr::Literal(_) => {}
    }
}
