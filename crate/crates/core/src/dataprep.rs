//! Training data preparation: corpus-wide hardness labels, the stage-1 /
//! stage-2 split and distribution audits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::hardness::{label_hardness, HardnessCounts, HardnessLevel, RuleProfile};
use crate::schema::DatabaseSchema;
use crate::util::{fmt_hundredths, parallel_map_with, percent_hundredths};

/// Published per-level sample counts of the Spider train split.
pub const SPIDER_TRAIN_DISTRIBUTION: [u64; 4] = [1694, 2777, 1461, 1068];
/// Published per-level sample counts of the Spider dev split.
pub const SPIDER_DEV_DISTRIBUTION: [u64; 4] = [248, 446, 174, 166];

pub const STAGE1_FILE: &str = "stage1.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn stage2_file(level: HardnessLevel) -> String {
    format!("stage2_{}.jsonl", level.as_str())
}

#[derive(Debug, thiserror::Error)]
pub enum DataprepError {
    #[error("nothing to split: no labeled samples")]
    EmptyInput,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: usize,
    pub db_id: String,
    pub question: String,
    #[serde(rename = "query")]
    pub gold_sql: String,
    #[serde(flatten)]
    pub counts: HardnessCounts,
    pub hardness: HardnessLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSkip {
    pub id: usize,
    pub db_id: String,
    pub reason: String,
}

/// Labels every sample; failures land in the returned skip ledger. Output
/// keeps input order.
pub fn label_dataset(
    dataset: &[Sample],
    schemas: &BTreeMap<String, DatabaseSchema>,
    profile: RuleProfile,
) -> (Vec<LabeledSample>, Vec<LabelSkip>) {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results = parallel_map_with(
        dataset,
        workers,
        || (),
        |_, _, s| label_one(s, schemas, profile),
    );
    let mut labeled = Vec::with_capacity(dataset.len());
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(l) => labeled.push(l),
            Err(s) => skipped.push(s),
        }
    }
    (labeled, skipped)
}

fn label_one(
    s: &Sample,
    schemas: &BTreeMap<String, DatabaseSchema>,
    profile: RuleProfile,
) -> Result<LabeledSample, LabelSkip> {
    let skip = |reason: String| LabelSkip {
        id: s.id,
        db_id: s.db_id.clone(),
        reason,
    };
    let schema = schemas
        .get(&s.db_id)
        .ok_or_else(|| skip(format!("unknown db_id '{}'", s.db_id)))?;
    let gold = s
        .query
        .as_deref()
        .ok_or_else(|| skip("no gold SQL".into()))?;
    let (counts, hardness) =
        label_hardness(gold, schema, profile).map_err(|e| skip(e.to_string()))?;
    Ok(LabeledSample {
        id: s.id,
        db_id: s.db_id.clone(),
        question: s.question.clone(),
        gold_sql: gold.to_string(),
        counts,
        hardness,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub stage1: String,
    pub stage2: BTreeMap<HardnessLevel, String>,
    /// Identifier of the stage-1 model every stage-2 model starts from.
    pub base_model_id: String,
    pub profile: RuleProfile,
    pub total: u64,
    pub counts: BTreeMap<HardnessLevel, u64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSplit {
    pub stage1: Vec<LabeledSample>,
    pub stage2: BTreeMap<HardnessLevel, Vec<LabeledSample>>,
    pub manifest: TrainingManifest,
}

/// Stage 1 is every sample; stage 2 holds one disjoint, order-preserving
/// subset per level.
pub fn split_by_hardness(
    labeled: &[LabeledSample],
    profile: RuleProfile,
    base_model_id: &str,
) -> Result<TrainingSplit, DataprepError> {
    if labeled.is_empty() {
        return Err(DataprepError::EmptyInput);
    }
    let mut stage2: BTreeMap<HardnessLevel, Vec<LabeledSample>> = HardnessLevel::ALL
        .iter()
        .map(|&l| (l, Vec::new()))
        .collect();
    for s in labeled {
        stage2
            .get_mut(&s.hardness)
            .expect("all levels present")
            .push(s.clone());
    }
    let manifest = TrainingManifest {
        stage1: STAGE1_FILE.to_string(),
        stage2: HardnessLevel::ALL.iter().map(|&l| (l, stage2_file(l))).collect(),
        base_model_id: base_model_id.to_string(),
        profile,
        total: labeled.len() as u64,
        counts: stage2.iter().map(|(&l, v)| (l, v.len() as u64)).collect(),
        notes: vec![
            "stage-2 files are unweighted; whether to re-weight or oversample the scarce extra class is left open"
                .to_string(),
        ],
    };
    Ok(TrainingSplit {
        stage1: labeled.to_vec(),
        stage2,
        manifest,
    })
}

/// Writes the stage files and manifest into `dir`.
pub fn write_split(split: &TrainingSplit, dir: &Path) -> Result<(), DataprepError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataprepError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    write_jsonl(&dir.join(&split.manifest.stage1), &split.stage1)?;
    for (level, samples) in &split.stage2 {
        write_jsonl(&dir.join(&split.manifest.stage2[level]), samples)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&split.manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io(&path))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataprepError> {
    let err = |source| DataprepError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| err(e.into()))?;
        out.write_all(b"\n").map_err(err)?;
    }
    out.flush().map_err(err)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: u64,
    pub counts: [u64; 4],
    /// Percent of total in hundredths, half up.
    pub percent_hundredths: [u64; 4],
    pub expected: Option<[u64; 4]>,
    pub deltas: Option<[i64; 4]>,
    /// Exact match with `expected`, when given.
    pub pass: Option<bool>,
}

impl DistributionReport {
    pub fn from_counts(counts: [u64; 4], expected: Option<[u64; 4]>) -> Self {
        let total = counts.iter().sum();
        let deltas = expected.map(|e| std::array::from_fn(|i| counts[i] as i64 - e[i] as i64));
        Self {
            total,
            counts,
            percent_hundredths: counts.map(|c| percent_hundredths(c, total)),
            expected,
            deltas,
            pass: expected.map(|e| e == counts),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10}{:>8}{:>10}{}",
            "Level",
            "Count",
            "Percent",
            if self.expected.is_some() {
                "  Expected     Delta"
            } else {
                ""
            }
        );
        for (i, level) in HardnessLevel::ALL.iter().enumerate() {
            let _ = write!(
                out,
                "{:<10}{:>8}{:>10}",
                level.title(),
                self.counts[i],
                fmt_hundredths(self.percent_hundredths[i])
            );
            if let (Some(e), Some(d)) = (self.expected, self.deltas) {
                let _ = write!(out, "{:>10}{:>10}", e[i], format!("{:+}", d[i]));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{:<10}{:>8}", "Total", self.total);
        if let Some(pass) = self.pass {
            let _ = writeln!(
                out,
                "{}",
                if pass {
                    "PASS: exact match"
                } else {
                    "FAIL: counts differ"
                }
            );
        }
        out
    }
}

pub fn distribution_report(
    labeled: &[LabeledSample],
    expected: Option<[u64; 4]>,
) -> DistributionReport {
    let mut counts = [0u64; 4];
    for s in labeled {
        counts[s.hardness.index()] += 1;
    }
    DistributionReport::from_counts(counts, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_tables;

    fn schemas() -> BTreeMap<String, DatabaseSchema> {
        parse_tables(
            r#"[{"column_names": [[-1,"*"],[0,"name"],[0,"age"]], "column_names_original": [[-1,"*"],[0,"name"],[0,"age"]],
            "column_types": ["text","text","number"], "db_id": "s", "foreign_keys": [], "primary_keys": [],
            "table_names": ["singer"], "table_names_original": ["singer"]}]"#,
        )
        .unwrap()
    }

    fn sample(id: usize, q: &str) -> Sample {
        Sample {
            id,
            db_id: "s".into(),
            question: "q".into(),
            query: Some(q.into()),
        }
    }

    #[test]
    fn label_with_skip_ledger() {
        let ds = vec![
            sample(0, "SELECT name FROM singer"),
            sample(1, "SELECT FROM"),
            sample(2, "SELECT name FROM singer ORDER BY age LIMIT 1"),
        ];
        let (labeled, skipped) = label_dataset(&ds, &schemas(), RuleProfile::SpiderCompat);
        assert_eq!(labeled.iter().map(|l| l.id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].id, 1);
        assert!(label_dataset(&[], &schemas(), RuleProfile::SpiderCompat)
            .0
            .is_empty());
    }

    #[test]
    fn single_sample_split() {
        let (labeled, _) = label_dataset(
            &[sample(0, "SELECT name FROM singer")],
            &schemas(),
            RuleProfile::SpiderCompat,
        );
        let split = split_by_hardness(&labeled, RuleProfile::SpiderCompat, "base").unwrap();
        let sizes: Vec<usize> = split.stage2.values().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 0, 0, 0]);
        assert!(matches!(
            split_by_hardness(&[], RuleProfile::SpiderCompat, "b"),
            Err(DataprepError::EmptyInput)
        ));
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let ds: Vec<Sample> = (0..6)
            .map(|i| {
                sample(
                    i,
                    if i % 2 == 0 {
                        "SELECT name FROM singer"
                    } else {
                        "SELECT name FROM singer ORDER BY age LIMIT 1"
                    },
                )
            })
            .collect();
        let (labeled, _) = label_dataset(&ds, &schemas(), RuleProfile::SpiderCompat);
        let split = split_by_hardness(&labeled, RuleProfile::SpiderCompat, "base").unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_split(&split, a.path()).unwrap();
        write_split(&split, b.path()).unwrap();
        for name in [
            STAGE1_FILE,
            MANIFEST_FILE,
            "stage2_easy.jsonl",
            "stage2_extra.jsonl",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
        let medium = std::fs::read_to_string(a.path().join("stage2_medium.jsonl")).unwrap();
        assert_eq!(medium.lines().count(), 3);
    }

    #[test]
    fn percentages_two_decimals() {
        let r = DistributionReport::from_counts(
            SPIDER_TRAIN_DISTRIBUTION,
            Some(SPIDER_TRAIN_DISTRIBUTION),
        );
        assert_eq!(
            r.percent_hundredths.map(fmt_hundredths),
            ["24.20", "39.67", "20.87", "15.26"]
        );
        assert_eq!(r.pass, Some(true));
        let empty = distribution_report(&[], None);
        assert!(empty.render().contains("0.00"));
    }
}
