#![allow(dead_code)]

pub mod agreement;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dqhp_core::dataset::{load_dataset, Sample};
use dqhp_core::evaluation::database_path;
use dqhp_core::schema::{load_schema, DatabaseSchema};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn spider_dev() -> (Vec<Sample>, BTreeMap<String, DatabaseSchema>) {
    let dev = load_dataset(&fixture("spider/dev.json")).unwrap();
    let schemas = load_schema(&fixture("spider/tables.json")).unwrap();
    (dev, schemas)
}

/// Creates one empty database per schema under `root`, laid out as
/// `root/{db_id}/{db_id}.sqlite`.
pub fn empty_databases(root: &Path, schemas: &BTreeMap<String, DatabaseSchema>) {
    for (db_id, schema) in schemas {
        let path = database_path(root, db_id);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch(&schema.ddl()).unwrap();
    }
}
