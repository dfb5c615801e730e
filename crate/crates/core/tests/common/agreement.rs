//! Agreement with verdicts of the Spider reference evaluator, frozen in
//! `fixtures/toy/pairs_reference.jsonl`, on two populated toy databases.

use std::collections::BTreeMap;

use dqhp_core::evaluation::{database_path, exact_match_sql, execution_match};
use dqhp_core::hardness::{label_hardness, HardnessLevel, RuleProfile};
use serde::Deserialize;

#[derive(Deserialize)]
struct Pair {
    db_id: String,
    gold: String,
    pred: String,
}

#[derive(Deserialize)]
struct Reference {
    hardness: HardnessLevel,
    em: bool,
    /// Default configuration: DISTINCT stripped before execution.
    ex: bool,
    ex_keep_distinct: bool,
}

pub struct Agreement {
    pub pairs: usize,
    pub em_agree: usize,
    pub ex_agree: usize,
    pub ex_keep_distinct_agree: usize,
    /// Pairs where both EM and EX (default configuration) agree.
    pub both_agree: usize,
    pub levels: BTreeMap<HardnessLevel, usize>,
    pub disagreements: Vec<String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    std::fs::read_to_string(super::fixture(name))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn measure() -> Agreement {
    let (_, schemas) = super::spider_dev();
    let pairs: Vec<Pair> = read_jsonl("toy/pairs.jsonl");
    let refs: Vec<Reference> = read_jsonl("toy/pairs_reference.jsonl");
    assert_eq!(pairs.len(), refs.len());

    let root = tempfile::tempdir().unwrap();
    for db in ["concert_singer", "pets_1"] {
        let path = database_path(root.path(), db);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let script = std::fs::read_to_string(super::fixture(&format!("toy/{db}.sql"))).unwrap();
        rusqlite::Connection::open(&path)
            .unwrap()
            .execute_batch(&script)
            .unwrap();
    }

    let mut a = Agreement {
        pairs: pairs.len(),
        em_agree: 0,
        ex_agree: 0,
        ex_keep_distinct_agree: 0,
        both_agree: 0,
        levels: BTreeMap::new(),
        disagreements: Vec::new(),
    };
    for (i, (pair, r)) in pairs.iter().zip(&refs).enumerate() {
        let schema = &schemas[&pair.db_id];
        let (_, level) = label_hardness(&pair.gold, schema, RuleProfile::SpiderCompat).unwrap();
        assert_eq!(level, r.hardness, "pair {i}");
        *a.levels.entry(level).or_default() += 1;

        let em = exact_match_sql(&pair.pred, &pair.gold, schema).matched;
        let ex = execution_match(
            &pair.pred,
            &pair.gold,
            &database_path(root.path(), &pair.db_id),
        )
        .unwrap()
        .matched;
        a.em_agree += usize::from(em == r.em);
        a.ex_agree += usize::from(ex == r.ex);
        a.ex_keep_distinct_agree += usize::from(ex == r.ex_keep_distinct);
        if em == r.em && ex == r.ex {
            a.both_agree += 1;
        } else {
            a.disagreements.push(format!(
                "pair {i} [{}]\n  gold: {}\n  pred: {}\n  ours: em={em} ex={ex}  reference: em={} ex={} ex(keep distinct)={}",
                pair.db_id, pair.gold, pair.pred, r.em, r.ex, r.ex_keep_distinct
            ));
        }
    }
    a
}
