//! EM/EX evaluation of pipeline records, stratified by gold hardness, plus
//! recognizer confusion matrices and ideal-vs-practical comparison.

mod exact;
mod exec;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

pub use exact::{exact_match_sql, exact_set_match, exact_set_match_in, EmVerdict, Matcher};
pub use exec::{
    execution_match, execution_match_on, has_top_level_order_by, open_database, results_equal,
    run_query, Cell, ExecError, ExecOutcome, Row, DEFAULT_QUERY_TIMEOUT,
};
pub use report::{render_deltas, render_report};

use crate::hardness::{label_hardness, HardnessLevel, RuleProfile};
use crate::pipeline::PipelineRecord;
use crate::schema::DatabaseSchema;
use crate::util::{parallel_map_with, percent_tenths};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("reports cover different samples ({practical} vs {ideal} ids, first difference at id {first_difference:?})")]
    SampleSetMismatch {
        practical: usize,
        ideal: usize,
        first_difference: Option<usize>,
    },
}

/// Path of a benchmark database under `db_root`.
pub fn database_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub profile: RuleProfile,
    pub timeout: Duration,
    pub concurrency: usize,
    /// Skip execution entirely (EM only).
    pub skip_execution: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            profile: RuleProfile::default(),
            timeout: DEFAULT_QUERY_TIMEOUT,
            concurrency: 8,
            skip_execution: false,
        }
    }
}

/// Per-record verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub id: usize,
    pub db_id: String,
    pub em: bool,
    pub ex: bool,
    pub gold_hardness: HardnessLevel,
    pub predicted_hardness: Option<HardnessLevel>,
    pub execution_error: Option<String>,
    pub em_reason: Option<String>,
    /// False when the sample is excluded from the EX denominator.
    pub ex_counted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub id: usize,
    pub reason: String,
}

/// Match counts for one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub count: u64,
    pub em: u64,
    /// Samples with a valid gold execution.
    pub ex_count: u64,
    pub ex: u64,
}

impl BucketCounts {
    pub fn add(&mut self, o: &EvalOutcome) {
        self.count += 1;
        self.em += o.em as u64;
        if o.ex_counted {
            self.ex_count += 1;
            self.ex += o.ex as u64;
        }
    }

    pub fn em_tenths(&self) -> u64 {
        percent_tenths(self.em, self.count)
    }

    pub fn ex_tenths(&self) -> u64 {
        percent_tenths(self.ex, self.ex_count)
    }
}

/// Counts indexed `[predicted][gold]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, predicted: HardnessLevel, gold: HardnessLevel) {
        self.counts[predicted.index()][gold.index()] += 1;
    }

    pub fn gold_total(&self, gold: HardnessLevel) -> u64 {
        self.counts.iter().map(|row| row[gold.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    /// Correct predictions over gold samples of `level`, as a fraction pair.
    pub fn class_accuracy(&self, level: HardnessLevel) -> (u64, u64) {
        (
            self.counts[level.index()][level.index()],
            self.gold_total(level),
        )
    }

    pub fn overall_accuracy(&self) -> (u64, u64) {
        (self.trace(), self.total())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub outcomes: Vec<EvalOutcome>,
    /// Ids of every evaluated sample, ascending.
    pub sample_ids: Vec<usize>,
    pub overall: BucketCounts,
    pub buckets: BTreeMap<HardnessLevel, BucketCounts>,
    pub confusion: ConfusionMatrix,
    pub skipped: Vec<SkipEntry>,
}

impl EvalReport {
    pub fn bucket(&self, level: HardnessLevel) -> BucketCounts {
        self.buckets.get(&level).copied().unwrap_or_default()
    }

    /// Builds a report from outcomes; totals are recomputed.
    pub fn from_outcomes(outcomes: Vec<EvalOutcome>, skipped: Vec<SkipEntry>) -> Self {
        let mut report = EvalReport {
            skipped,
            ..Default::default()
        };
        for level in HardnessLevel::ALL {
            report.buckets.insert(level, BucketCounts::default());
        }
        for o in &outcomes {
            report.overall.add(o);
            report
                .buckets
                .get_mut(&o.gold_hardness)
                .expect("all levels present")
                .add(o);
            if let Some(p) = o.predicted_hardness {
                report.confusion.record(p, o.gold_hardness);
            }
        }
        report.sample_ids = outcomes.iter().map(|o| o.id).collect();
        report.sample_ids.sort_unstable();
        report.outcomes = outcomes;
        report
    }
}

struct Worker {
    connections: HashMap<String, Option<Connection>>,
}

enum RecordResult {
    Outcome(EvalOutcome, Vec<SkipEntry>),
    Skipped(SkipEntry),
}

/// Scores every record. Records without usable gold SQL are skipped; gold
/// execution failures and missing databases only drop the record from EX.
pub fn evaluate(
    records: &[PipelineRecord],
    schemas: &BTreeMap<String, DatabaseSchema>,
    db_root: &Path,
    opts: &EvalOptions,
) -> EvalReport {
    let results = parallel_map_with(
        records,
        opts.concurrency,
        || Worker {
            connections: HashMap::new(),
        },
        |worker, _, record| evaluate_record(worker, record, schemas, db_root, opts),
    );
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            RecordResult::Outcome(o, notes) => {
                outcomes.push(o);
                skipped.extend(notes);
            }
            RecordResult::Skipped(s) => skipped.push(s),
        }
    }
    EvalReport::from_outcomes(outcomes, skipped)
}

fn evaluate_record(
    worker: &mut Worker,
    record: &PipelineRecord,
    schemas: &BTreeMap<String, DatabaseSchema>,
    db_root: &Path,
    opts: &EvalOptions,
) -> RecordResult {
    let skip = |reason: String| {
        RecordResult::Skipped(SkipEntry {
            id: record.id,
            reason,
        })
    };
    let Some(schema) = schemas.get(&record.db_id) else {
        return skip(format!("unknown db_id '{}'", record.db_id));
    };
    let Some(gold_sql) = &record.gold_sql else {
        return skip("no gold SQL".into());
    };
    let gold_hardness = match record.gold_hardness {
        Some(h) => h,
        None => match label_hardness(gold_sql, schema, opts.profile) {
            Ok((_, h)) => h,
            Err(e) => return skip(format!("gold SQL unparsable: {e}")),
        },
    };

    let verdict = exact_match_sql(&record.predicted_sql, gold_sql, schema);
    let mut outcome = EvalOutcome {
        id: record.id,
        db_id: record.db_id.clone(),
        em: verdict.matched,
        ex: false,
        gold_hardness,
        predicted_hardness: record.predicted_hardness,
        execution_error: None,
        em_reason: verdict.reason,
        ex_counted: false,
    };
    let mut notes = Vec::new();
    if opts.skip_execution {
        return RecordResult::Outcome(outcome, notes);
    }

    let conn = worker
        .connections
        .entry(record.db_id.clone())
        .or_insert_with(|| {
            open_database(&database_path(db_root, &record.db_id))
                .map_err(|e| log::warn!("{e}"))
                .ok()
        });
    match conn {
        None => notes.push(SkipEntry {
            id: record.id,
            reason: format!("database '{}' unavailable; excluded from EX", record.db_id),
        }),
        Some(conn) => {
            let exec = execution_match_on(conn, &record.predicted_sql, gold_sql, opts.timeout);
            if let Some(e) = exec.gold_error {
                notes.push(SkipEntry {
                    id: record.id,
                    reason: format!("invalid gold (excluded from EX): {e}"),
                });
            } else {
                outcome.ex_counted = true;
                outcome.ex = exec.matched;
                outcome.execution_error = exec.pred_error;
            }
        }
    }
    RecordResult::Outcome(outcome, notes)
}

/// One row of the ideal-vs-practical table, in tenths of a percent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub label: String,
    pub practical_em: u64,
    pub ideal_em: u64,
    pub practical_ex: u64,
    pub ideal_ex: u64,
}

impl DeltaRow {
    fn new(label: &str, practical: BucketCounts, ideal: BucketCounts) -> Self {
        Self {
            label: label.to_string(),
            practical_em: practical.em_tenths(),
            ideal_em: ideal.em_tenths(),
            practical_ex: practical.ex_tenths(),
            ideal_ex: ideal.ex_tenths(),
        }
    }

    /// Ideal minus practical, from the rounded values as printed.
    pub fn em_delta(&self) -> i64 {
        self.ideal_em as i64 - self.practical_em as i64
    }

    pub fn ex_delta(&self) -> i64 {
        self.ideal_ex as i64 - self.practical_ex as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaTable {
    /// Easy, Medium, Hard, Extra, then All.
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn overall(&self) -> &DeltaRow {
        self.rows.last().expect("table always has an All row")
    }
}

pub fn compare_ideal_practical(
    practical: &EvalReport,
    ideal: &EvalReport,
) -> Result<DeltaTable, EvalError> {
    if practical.sample_ids != ideal.sample_ids {
        let first_difference = practical
            .sample_ids
            .iter()
            .zip(&ideal.sample_ids)
            .find(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .or_else(|| practical.sample_ids.get(ideal.sample_ids.len()).copied())
            .or_else(|| ideal.sample_ids.get(practical.sample_ids.len()).copied());
        return Err(EvalError::SampleSetMismatch {
            practical: practical.sample_ids.len(),
            ideal: ideal.sample_ids.len(),
            first_difference,
        });
    }
    let mut rows: Vec<DeltaRow> = HardnessLevel::ALL
        .iter()
        .map(|&l| DeltaRow::new(l.title(), practical.bucket(l), ideal.bucket(l)))
        .collect();
    rows.push(DeltaRow::new("All", practical.overall, ideal.overall));
    Ok(DeltaTable { rows })
}
