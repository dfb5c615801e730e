//! Execution match: run predicted and gold SQL on the same SQLite database
//! and compare their result tables.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("cannot open database {path}: {message}")]
    DbOpenError { path: PathBuf, message: String },
}

/// A result cell. Integral reals are stored as integers so `1` and `1.0`
/// compare equal.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Cell::Int(f as i64),
            ValueRef::Real(f) => Cell::Real(f),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Int(a), Cell::Real(b)) => (*a as f64).total_cmp(b),
            (Cell::Real(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

pub type Row = Vec<Cell>;

/// Result of comparing one prediction against its gold query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub matched: bool,
    pub pred_error: Option<String>,
    /// Set when the gold query itself fails; the sample is then invalid.
    pub gold_error: Option<String>,
}

/// Opens `path` read-only.
pub fn open_database(path: &Path) -> Result<Connection, ExecError> {
    let err = |message: String| ExecError::DbOpenError {
        path: path.to_path_buf(),
        message,
    };
    if !path.is_file() {
        return Err(err("no such file".into()));
    }
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| err(e.to_string()))
}

/// Executes both queries on the database at `db` and compares results.
pub fn execution_match(
    pred_sql: &str,
    gold_sql: &str,
    db: &Path,
) -> Result<ExecOutcome, ExecError> {
    let conn = open_database(db)?;
    Ok(execution_match_on(
        &conn,
        pred_sql,
        gold_sql,
        DEFAULT_QUERY_TIMEOUT,
    ))
}

/// Same as [`execution_match`] on an open connection.
pub fn execution_match_on(
    conn: &Connection,
    pred_sql: &str,
    gold_sql: &str,
    timeout: Duration,
) -> ExecOutcome {
    let gold = match run_query(conn, gold_sql, timeout) {
        Ok(rows) => rows,
        Err(e) => {
            return ExecOutcome {
                matched: false,
                pred_error: None,
                gold_error: Some(e),
            }
        }
    };
    let pred = match run_query(conn, pred_sql, timeout) {
        Ok(rows) => rows,
        Err(e) => {
            return ExecOutcome {
                matched: false,
                pred_error: Some(e),
                gold_error: None,
            }
        }
    };
    let matched = results_equal(&pred, &gold, has_top_level_order_by(gold_sql));
    ExecOutcome {
        matched,
        pred_error: None,
        gold_error: None,
    }
}

/// Runs one statement, interrupting it once `timeout` has elapsed.
pub fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> Result<Vec<Row>, String> {
    let sql = sql.trim().trim_end_matches(';').trim_end();
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() > deadline));
    let result = (|| {
        let mut stmt = conn.prepare(sql)?;
        let width = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            out.push(
                (0..width)
                    .map(|i| row.get_ref(i).map(Cell::from_ref))
                    .collect::<Result<Row, _>>()?,
            );
        }
        Ok::<_, rusqlite::Error>(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result.map_err(|e| match e {
        rusqlite::Error::SqliteFailure(f, _)
            if f.code == rusqlite::ErrorCode::OperationInterrupted =>
        {
            format!("query timed out after {} ms", timeout.as_millis())
        }
        other => other.to_string(),
    })
}

/// Column order always matters; row order only when `ordered`.
pub fn results_equal(pred: &[Row], gold: &[Row], ordered: bool) -> bool {
    if pred.len() != gold.len() {
        return false;
    }
    if ordered {
        return pred == gold;
    }
    let sorted = |rows: &[Row]| {
        let mut v = rows.to_vec();
        v.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.len().cmp(&b.len()))
        });
        v
    };
    sorted(pred) == sorted(gold)
}

/// True when ORDER BY appears outside parentheses and string literals.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let lower = sql.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut depth = 0i32;
    let mut quote: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None => match b {
                b'\'' | b'"' | b'`' => quote = Some(b),
                b'(' => depth += 1,
                b')' => depth -= 1,
                b'o' if depth == 0 && lower[i..].starts_with("order") => {
                    let before_ok = i == 0 || !is_word(bytes[i - 1]);
                    let rest = lower[i + 5..].trim_start();
                    let gap = lower.len() - (i + 5) - rest.len();
                    if before_ok
                        && gap > 0
                        && rest.starts_with("by")
                        && rest[2..].chars().next().is_none_or(|c| !is_word(c as u8))
                    {
                        return true;
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    false
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (name TEXT, age INTEGER);
             INSERT INTO singer VALUES ('a', 18), ('b', 25), ('c', 40);",
        )
        .unwrap();
        (dir, path)
    }

    #[test]
    fn identical_queries_match() {
        let (_d, db) = toy();
        let q = "SELECT name FROM singer WHERE age > 20";
        assert!(execution_match(q, q, &db).unwrap().matched);
    }

    #[test]
    fn values_matter() {
        let (_d, db) = toy();
        let out = execution_match(
            "SELECT name FROM singer WHERE age > 30",
            "SELECT name FROM singer WHERE age > 20",
            &db,
        )
        .unwrap();
        assert!(!out.matched);
        assert!(out.pred_error.is_none());
    }

    #[test]
    fn syntax_error_recorded() {
        let (_d, db) = toy();
        let out =
            execution_match("SELEC name FROM singer", "SELECT name FROM singer", &db).unwrap();
        assert!(!out.matched && out.pred_error.is_some());
        let out =
            execution_match("SELECT name FROM singer", "SELECT nope FROM singer", &db).unwrap();
        assert!(out.gold_error.is_some());
    }

    #[test]
    fn row_order_only_with_order_by() {
        let (_d, db) = toy();
        let asc = "SELECT name FROM singer ORDER BY age";
        let desc = "SELECT name FROM singer ORDER BY age DESC";
        assert!(!execution_match(desc, asc, &db).unwrap().matched);
        assert!(
            execution_match(desc, "SELECT name FROM singer", &db)
                .unwrap()
                .matched
        );
    }

    #[test]
    fn column_order_matters() {
        let (_d, db) = toy();
        assert!(
            !execution_match(
                "SELECT age, name FROM singer",
                "SELECT name, age FROM singer",
                &db
            )
            .unwrap()
            .matched
        );
    }

    #[test]
    fn integral_reals_equal_ints() {
        assert!(results_equal(
            &[vec![Cell::from_ref(ValueRef::Real(2.0))]],
            &[vec![Cell::Int(2)]],
            true
        ));
    }

    #[test]
    fn missing_db() {
        assert!(matches!(
            execution_match("x", "y", Path::new("/no/such.sqlite")),
            Err(ExecError::DbOpenError { .. })
        ));
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("select a from t order  by a"));
        assert!(!has_top_level_order_by(
            "select a from t where a in (select b from u order by b limit 1)"
        ));
        assert!(!has_top_level_order_by(
            "select a from t where a = 'order by'"
        ));
        assert!(!has_top_level_order_by("select reorder by from t"));
    }
}
