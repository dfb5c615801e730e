//! Database schemas in the Spider tables format and the serialized model input.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ranking::RankedSchema;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },
    #[error("duplicate db_id '{0}'")]
    DuplicateDbId(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("schema item index {0} out of range")]
    IndexOutOfRange(usize),
}

impl SchemaError {
    fn format(field: &str, reason: impl Into<String>) -> Self {
        SchemaError::Format {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub original_name: String,
    pub semantic_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    /// `None` only for the wildcard at index 0.
    pub table_index: Option<usize>,
    pub original_name: String,
    pub semantic_name: String,
    pub col_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    /// Column 0 is the wildcard `*`.
    pub columns: Vec<Column>,
    pub primary_keys: Vec<usize>,
    pub foreign_keys: Vec<(usize, usize)>,
}

/// A table or column of a schema, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaItem {
    Table(usize),
    Column(usize),
}

impl DatabaseSchema {
    /// Index of the table whose original name matches `name` case-insensitively.
    pub fn table_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.tables
            .iter()
            .position(|t| t.original_name.eq_ignore_ascii_case(name))
    }

    /// Index of column `name` in table `table`, case-insensitive.
    pub fn column_index(&self, table: usize, name: &str) -> Option<usize> {
        let name = name.trim();
        self.columns.iter().position(|c| {
            c.table_index == Some(table) && c.original_name.eq_ignore_ascii_case(name)
        })
    }

    pub fn table_has_column(&self, table: usize, name: &str) -> bool {
        self.column_index(table, name).is_some()
    }

    /// Global column indices belonging to `table`, in schema order.
    pub fn table_columns(&self, table: usize) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].table_index == Some(table))
            .collect()
    }

    /// Lowercased, whitespace-split semantic name of a table or column.
    pub fn semantic_tokens(&self, item: SchemaItem) -> Result<Vec<String>, SchemaError> {
        let name = match item {
            SchemaItem::Table(i) => {
                &self
                    .tables
                    .get(i)
                    .ok_or(SchemaError::IndexOutOfRange(i))?
                    .semantic_name
            }
            SchemaItem::Column(i) => {
                &self
                    .columns
                    .get(i)
                    .ok_or(SchemaError::IndexOutOfRange(i))?
                    .semantic_name
            }
        };
        Ok(name.split_whitespace().map(str::to_lowercase).collect())
    }

    fn semantic_lower(&self, item: SchemaItem) -> String {
        self.semantic_tokens(item)
            .map(|t| t.join(" "))
            .unwrap_or_default()
    }

    /// Entry in the Spider tables format.
    pub fn to_spider_value(&self) -> Value {
        let pair = |c: &Column, name: &str| {
            Value::Array(vec![
                Value::from(c.table_index.map_or(-1, |i| i as i64)),
                Value::from(name),
            ])
        };
        let mut obj = serde_json::Map::new();
        obj.insert(
            "column_names".into(),
            Value::Array(
                self.columns
                    .iter()
                    .map(|c| pair(c, &c.semantic_name))
                    .collect(),
            ),
        );
        obj.insert(
            "column_names_original".into(),
            Value::Array(
                self.columns
                    .iter()
                    .map(|c| pair(c, &c.original_name))
                    .collect(),
            ),
        );
        obj.insert(
            "column_types".into(),
            self.columns
                .iter()
                .map(|c| Value::from(c.col_type.as_str()))
                .collect(),
        );
        obj.insert("db_id".into(), Value::from(self.db_id.as_str()));
        obj.insert(
            "foreign_keys".into(),
            self.foreign_keys
                .iter()
                .map(|&(a, b)| Value::Array(vec![a.into(), b.into()]))
                .collect(),
        );
        obj.insert(
            "primary_keys".into(),
            self.primary_keys.iter().map(|&k| Value::from(k)).collect(),
        );
        obj.insert(
            "table_names".into(),
            self.tables
                .iter()
                .map(|t| Value::from(t.semantic_name.as_str()))
                .collect(),
        );
        obj.insert(
            "table_names_original".into(),
            self.tables
                .iter()
                .map(|t| Value::from(t.original_name.as_str()))
                .collect(),
        );
        Value::Object(obj)
    }

    /// `CREATE TABLE` statements for an empty database with this schema.
    pub fn ddl(&self) -> String {
        let mut out = String::new();
        for (ti, table) in self.tables.iter().enumerate() {
            // SQLite creates its own sqlite_* tables; they cannot be declared.
            if table
                .original_name
                .to_ascii_lowercase()
                .starts_with("sqlite_")
            {
                continue;
            }
            let cols: Vec<String> = self
                .table_columns(ti)
                .into_iter()
                .map(|ci| {
                    let c = &self.columns[ci];
                    let ty = match c.col_type.as_str() {
                        "number" => "NUMERIC",
                        "time" => "DATETIME",
                        "boolean" => "BOOLEAN",
                        _ => "TEXT",
                    };
                    format!("\"{}\" {ty}", c.original_name.replace('"', "\"\""))
                })
                .collect();
            out.push_str(&format!(
                "CREATE TABLE \"{}\" ({});\n",
                table.original_name.replace('"', "\"\""),
                cols.join(", ")
            ));
        }
        out
    }
}

/// Loads a Spider tables file into a map keyed by db_id.
pub fn load_schema(path: &Path) -> Result<BTreeMap<String, DatabaseSchema>, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tables(&text)
}

/// Parses the contents of a Spider tables file.
pub fn parse_tables(text: &str) -> Result<BTreeMap<String, DatabaseSchema>, SchemaError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| SchemaError::format("<root>", e.to_string()))?;
    let entries = root
        .as_array()
        .ok_or_else(|| SchemaError::format("<root>", "expected a list of schemas"))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let schema = parse_entry(entry)?;
        if out.contains_key(&schema.db_id) {
            return Err(SchemaError::DuplicateDbId(schema.db_id));
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

/// Canonical tables-file text: entries sorted by db_id, pretty-printed.
pub fn emit_tables<'a>(schemas: impl IntoIterator<Item = &'a DatabaseSchema>) -> String {
    let values: Vec<Value> = schemas
        .into_iter()
        .map(DatabaseSchema::to_spider_value)
        .collect();
    let mut text =
        serde_json::to_string_pretty(&Value::Array(values)).expect("json values serialize");
    text.push('\n');
    text
}

fn field<T: serde::de::DeserializeOwned>(
    obj: &serde_json::Map<String, Value>,
    name: &str,
) -> Result<T, SchemaError> {
    let value = obj
        .get(name)
        .ok_or_else(|| SchemaError::format(name, "absent"))?;
    serde_json::from_value(value.clone()).map_err(|e| SchemaError::format(name, e.to_string()))
}

fn parse_entry(entry: &Value) -> Result<DatabaseSchema, SchemaError> {
    let obj = entry
        .as_object()
        .ok_or_else(|| SchemaError::format("<entry>", "expected an object"))?;
    let db_id: String = field(obj, "db_id")?;
    let table_orig: Vec<String> = field(obj, "table_names_original")?;
    let table_sem: Vec<String> = field(obj, "table_names")?;
    if table_orig.is_empty() || table_sem.is_empty() {
        return Err(SchemaError::format("table_names", "empty"));
    }
    if table_orig.len() != table_sem.len() {
        return Err(SchemaError::format(
            "table_names",
            "length differs from table_names_original",
        ));
    }
    let col_sem: Vec<(i64, String)> = field(obj, "column_names")?;
    let col_orig: Vec<(i64, String)> = field(obj, "column_names_original")?;
    let col_types: Vec<String> = field(obj, "column_types")?;
    if col_sem.len() != col_orig.len() {
        return Err(SchemaError::format(
            "column_names",
            "length differs from column_names_original",
        ));
    }
    if col_types.len() != col_orig.len() {
        return Err(SchemaError::format(
            "column_types",
            "length differs from column_names_original",
        ));
    }
    match col_orig.first() {
        Some((-1, star)) if star == "*" => {}
        _ => {
            return Err(SchemaError::format(
                "column_names_original",
                "column 0 must be [-1, \"*\"]",
            ))
        }
    }

    let tables = table_orig
        .into_iter()
        .zip(table_sem)
        .map(|(original_name, sem)| {
            let semantic_name = if sem.trim().is_empty() {
                original_name.clone()
            } else {
                sem
            };
            Table {
                original_name,
                semantic_name,
            }
        })
        .collect::<Vec<_>>();

    let mut columns = Vec::with_capacity(col_orig.len());
    for (i, (((ti, original_name), (ti_sem, sem)), col_type)) in
        col_orig.into_iter().zip(col_sem).zip(col_types).enumerate()
    {
        if ti != ti_sem {
            return Err(SchemaError::format(
                "column_names",
                format!("column {i} table index disagrees with the original"),
            ));
        }
        let table_index = match (i, ti) {
            (0, _) => None,
            (_, t) if t >= 0 && (t as usize) < tables.len() => Some(t as usize),
            _ => {
                return Err(SchemaError::format(
                    "column_names_original",
                    format!("column {i} has table index {ti}"),
                ))
            }
        };
        let semantic_name = if sem.trim().is_empty() {
            original_name.clone()
        } else {
            sem
        };
        columns.push(Column {
            table_index,
            original_name,
            semantic_name,
            col_type,
        });
    }

    let primary_keys = parse_primary_keys(obj)?;
    if let Some(&bad) = primary_keys.iter().find(|&&k| k == 0 || k >= columns.len()) {
        return Err(SchemaError::format(
            "primary_keys",
            format!("column index {bad} out of range"),
        ));
    }
    let foreign_keys: Vec<(usize, usize)> = field(obj, "foreign_keys")?;
    for &(a, b) in &foreign_keys {
        if a == 0 || b == 0 || a >= columns.len() || b >= columns.len() {
            return Err(SchemaError::format(
                "foreign_keys",
                format!("pair ({a}, {b}) out of range"),
            ));
        }
        if a == b {
            return Err(SchemaError::format(
                "foreign_keys",
                format!("pair ({a}, {b}) links a column to itself"),
            ));
        }
    }

    Ok(DatabaseSchema {
        db_id,
        tables,
        columns,
        primary_keys,
        foreign_keys,
    })
}

/// Accepts both flat keys and composite keys written as nested lists.
fn parse_primary_keys(obj: &serde_json::Map<String, Value>) -> Result<Vec<usize>, SchemaError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Key {
        One(usize),
        Many(Vec<usize>),
    }
    let keys: Vec<Key> = field(obj, "primary_keys")?;
    Ok(keys
        .into_iter()
        .flat_map(|k| match k {
            Key::One(i) => vec![i],
            Key::Many(v) => v,
        })
        .collect())
}

/// Question plus schema rendered as `q | t1 : c1 , c2 | t2 : ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedInput {
    pub text: String,
    pub question: String,
    pub table_order: Vec<usize>,
    /// Global column indices per entry of `table_order`.
    pub column_order: Vec<Vec<usize>>,
}

/// Builds the model input. Without a selection every table and non-wildcard
/// column is rendered in schema order; with one, its order is used as is.
pub fn serialize_input(
    question: &str,
    schema: &DatabaseSchema,
    selection: Option<&RankedSchema>,
) -> Result<SerializedInput, SchemaError> {
    if question.trim().is_empty() {
        return Err(SchemaError::EmptyQuestion);
    }
    let (table_order, column_order) = match selection {
        Some(sel) => {
            for &t in &sel.kept_tables {
                if t >= schema.tables.len() {
                    return Err(SchemaError::IndexOutOfRange(t));
                }
            }
            for &c in sel.kept_columns.iter().flatten() {
                if c == 0 || c >= schema.columns.len() {
                    return Err(SchemaError::IndexOutOfRange(c));
                }
            }
            (sel.kept_tables.clone(), sel.kept_columns.clone())
        }
        None => {
            let tables: Vec<usize> = (0..schema.tables.len()).collect();
            let cols = tables.iter().map(|&t| schema.table_columns(t)).collect();
            (tables, cols)
        }
    };
    let text = render_serialized(question, schema, &table_order, &column_order);
    Ok(SerializedInput {
        text,
        question: question.to_string(),
        table_order,
        column_order,
    })
}

pub(crate) fn render_serialized(
    question: &str,
    schema: &DatabaseSchema,
    table_order: &[usize],
    column_order: &[Vec<usize>],
) -> String {
    let mut text = question.to_string();
    for (i, &t) in table_order.iter().enumerate() {
        text.push_str(" | ");
        text.push_str(&schema.semantic_lower(SchemaItem::Table(t)));
        text.push_str(" : ");
        let cols: Vec<String> = column_order
            .get(i)
            .map(|cs| {
                cs.iter()
                    .map(|&c| schema.semantic_lower(SchemaItem::Column(c)))
                    .collect()
            })
            .unwrap_or_default();
        text.push_str(&cols.join(" , "));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"[{
        "column_names": [[-1, "*"], [0, "department id"], [0, "name"], [1, "head id"], [1, "name"], [1, "age"]],
        "column_names_original": [[-1, "*"], [0, "Department_ID"], [0, "Name"], [1, "head_ID"], [1, "name"], [1, "age"]],
        "column_types": ["text", "number", "text", "number", "text", "number"],
        "db_id": "toy",
        "foreign_keys": [],
        "primary_keys": [1, 3],
        "table_names": ["department", "head"],
        "table_names_original": ["department", "head"]
    }]"#;

    fn toy() -> DatabaseSchema {
        parse_tables(TOY).unwrap().remove("toy").unwrap()
    }

    #[test]
    fn serializes_all_items_in_schema_order() {
        let s = serialize_input("how many heads are older than 56 ?", &toy(), None).unwrap();
        assert_eq!(
            s.text,
            "how many heads are older than 56 ? | department : department id , name | head : head id , name , age"
        );
        assert_eq!(s.table_order, vec![0, 1]);
        assert_eq!(s.column_order, vec![vec![1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn minimal_schema() {
        let text = r#"[{"column_names": [[-1,"*"],[0,"c"]], "column_names_original": [[-1,"*"],[0,"C"]],
            "column_types": ["text","text"], "db_id": "m", "foreign_keys": [], "primary_keys": [],
            "table_names": ["t"], "table_names_original": ["T"]}]"#;
        let schema = parse_tables(text).unwrap().remove("m").unwrap();
        assert_eq!(
            serialize_input("q", &schema, None).unwrap().text,
            "q | t : c"
        );
    }

    #[test]
    fn empty_question_rejected() {
        assert!(matches!(
            serialize_input("", &toy(), None),
            Err(SchemaError::EmptyQuestion)
        ));
    }

    #[test]
    fn semantic_tokens_split_and_lowercase() {
        let mut schema = toy();
        schema.columns[3].semantic_name = "Student ID".into();
        assert_eq!(
            schema.semantic_tokens(SchemaItem::Column(3)).unwrap(),
            ["student", "id"]
        );
        assert_eq!(
            schema.semantic_tokens(SchemaItem::Table(1)).unwrap(),
            ["head"]
        );
        assert!(matches!(
            schema.semantic_tokens(SchemaItem::Table(9)),
            Err(SchemaError::IndexOutOfRange(9))
        ));
    }

    #[test]
    fn format_errors() {
        let missing = TOY.replace("\"column_names\":", "\"colnames\":");
        match parse_tables(&missing) {
            Err(SchemaError::Format { field, reason }) => assert_eq!(
                (field.as_str(), reason.as_str()),
                ("column_names", "absent")
            ),
            other => panic!("unexpected {other:?}"),
        }
        let empty = r#"[{"column_names": [[-1,"*"]], "column_names_original": [[-1,"*"]], "column_types": ["text"],
            "db_id": "e", "foreign_keys": [], "primary_keys": [], "table_names": [], "table_names_original": []}]"#;
        match parse_tables(empty) {
            Err(SchemaError::Format { field, reason }) => {
                assert_eq!((field.as_str(), reason.as_str()), ("table_names", "empty"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let dup = format!(
            "[{0},{0}]",
            TOY.trim().trim_start_matches('[').trim_end_matches(']')
        );
        assert!(matches!(parse_tables(&dup), Err(SchemaError::DuplicateDbId(id)) if id == "toy"));
    }

    #[test]
    fn bad_foreign_key_rejected() {
        let bad = TOY.replace("\"foreign_keys\": []", "\"foreign_keys\": [[1, 40]]");
        assert!(
            matches!(parse_tables(&bad), Err(SchemaError::Format { field, .. }) if field == "foreign_keys")
        );
    }

    #[test]
    fn reemit_is_byte_stable() {
        let first = emit_tables(parse_tables(TOY).unwrap().values());
        let second = emit_tables(parse_tables(&first).unwrap().values());
        assert_eq!(first, second);
    }

    #[test]
    fn case_insensitive_lookup() {
        let schema = toy();
        assert_eq!(schema.table_index("HEAD"), Some(1));
        assert_eq!(schema.column_index(0, "department_id"), Some(1));
        assert!(!schema.table_has_column(0, "age"));
    }
}
