//! Hardness-routed generation: recognize each sample's hardness, then send
//! it to the generator backend registered for that level.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::hardness::{label_hardness, HardnessLevel, RuleProfile};
use crate::ranking::{
    filter_recall, filter_top_k, lexical_rank, FilterRecall, RankedSchema, ScoreRecord,
};
use crate::schema::{serialize_input, DatabaseSchema, SerializedInput};
use crate::sql::parse_sql;
use crate::util::parallel_map_with;

pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_CONCURRENCY: usize = 8;
pub const DEFAULT_TEMPLATE: &str = "SELECT count(*) FROM {table}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend timed out")]
    BackendTimeout,
    #[error("backend protocol error: {0}")]
    BackendProtocolError(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("sample has no gold SQL")]
    MissingGold,
    #[error("gold SQL cannot be labeled: {0}")]
    GoldUnparsable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    ConfigError(String),
}

/// A model server reached over HTTP with JSON bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    pub url: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub retries: u32,
    #[serde(with = "millis")]
    pub backoff: Duration,
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: DEFAULT_BACKOFF,
        }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let mut attempt = 0;
        loop {
            let result = client
                .post(&self.url)
                .json(body)
                .send()
                .map_err(classify_transport)
                .and_then(|resp| {
                    let status = resp.status();
                    if !status.is_success() {
                        return Err(BackendError::BackendUnavailable(format!("HTTP {status}")));
                    }
                    let text = resp.text().map_err(classify_transport)?;
                    serde_json::from_str(&text)
                        .map_err(|e| BackendError::BackendProtocolError(e.to_string()))
                });
            match result {
                Ok(r) => return Ok(r),
                Err(e) if attempt < self.retries => {
                    log::debug!("request to {} failed ({e}), retrying", self.url);
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn classify_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::BackendTimeout
    } else if e.is_decode() {
        BackendError::BackendProtocolError(e.to_string())
    } else {
        BackendError::BackendUnavailable(e.to_string())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub question: String,
    pub input: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub hardness: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub hardness: HardnessLevel,
    pub input: String,
    pub db_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RecognizerBackend {
    /// Labels the gold SQL.
    Oracle,
    Constant {
        level: HardnessLevel,
    },
    Remote {
        endpoint: RemoteEndpoint,
    },
}

impl RecognizerBackend {
    pub fn describe(&self) -> String {
        match self {
            RecognizerBackend::Oracle => "oracle".into(),
            RecognizerBackend::Constant { level } => format!("constant({level})"),
            RecognizerBackend::Remote { endpoint } => format!("remote({})", endpoint.url),
        }
    }

    fn is_remote(&self) -> bool {
        matches!(self, RecognizerBackend::Remote { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratorKind {
    /// Returns the gold SQL unchanged.
    EchoGold,
    /// Returns a fixed SQL text; `{table}` becomes the top-ranked table and
    /// `{db_id}` the database id.
    FixedTemplate {
        template: String,
    },
    Remote {
        endpoint: RemoteEndpoint,
    },
}

impl GeneratorKind {
    pub fn describe(&self) -> String {
        match self {
            GeneratorKind::EchoGold => "echo_gold".into(),
            GeneratorKind::FixedTemplate { template } => format!("fixed_template({template})"),
            GeneratorKind::Remote { endpoint } => format!("remote({})", endpoint.url),
        }
    }
}

/// One generator per hardness level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorBackends {
    by_level: [GeneratorKind; 4],
}

impl GeneratorBackends {
    pub fn uniform(kind: GeneratorKind) -> Self {
        Self {
            by_level: [kind.clone(), kind.clone(), kind.clone(), kind],
        }
    }

    /// Fails with a config error naming every unmapped level.
    pub fn from_map(
        mut map: BTreeMap<HardnessLevel, GeneratorKind>,
    ) -> Result<Self, PipelineError> {
        let missing: Vec<&str> = HardnessLevel::ALL
            .iter()
            .filter(|l| !map.contains_key(l))
            .map(|l| l.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::ConfigError(format!(
                "no generator for level(s): {}",
                missing.join(", ")
            )));
        }
        let mut take = |l| map.remove(&l).expect("checked above");
        Ok(Self {
            by_level: [
                take(HardnessLevel::Easy),
                take(HardnessLevel::Medium),
                take(HardnessLevel::Hard),
                take(HardnessLevel::ExtraHard),
            ],
        })
    }

    pub fn get(&self, level: HardnessLevel) -> &GeneratorKind {
        &self.by_level[level.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    /// Route by the recognizer's prediction.
    #[default]
    Practical,
    /// Route by the gold hardness.
    Ideal,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::Practical => "practical",
            RoutingMode::Ideal => "ideal",
        }
    }
}

/// Where schema relevance scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    Lexical,
    /// Scores written by an external ranker, keyed by sample id.
    File {
        path: PathBuf,
        records: HashMap<usize, ScoreRecord>,
    },
}

impl ScoreSource {
    pub fn describe(&self) -> String {
        match self {
            ScoreSource::Lexical => "lexical".into(),
            ScoreSource::File { path, .. } => format!("file({})", path.display()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub profile: RuleProfile,
    pub k1: usize,
    pub k2: usize,
    pub scores: ScoreSource,
    pub recognizer: RecognizerBackend,
    pub generators: GeneratorBackends,
    pub mode: RoutingMode,
    pub concurrency: usize,
}

impl PipelineConfig {
    pub fn new(recognizer: RecognizerBackend, generators: GeneratorBackends) -> Self {
        Self {
            profile: RuleProfile::default(),
            k1: 4,
            k2: 5,
            scores: ScoreSource::Lexical,
            recognizer,
            generators,
            mode: RoutingMode::Practical,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

/// One sample's trip through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub id: usize,
    pub db_id: String,
    pub question: String,
    pub gold_sql: Option<String>,
    pub gold_hardness: Option<HardnessLevel>,
    /// Absent only when the input could not be built.
    pub serialized_input: Option<SerializedInput>,
    /// Absent when recognition failed.
    pub predicted_hardness: Option<HardnessLevel>,
    /// Absent when no generator could be chosen.
    pub routed_level: Option<HardnessLevel>,
    pub predicted_sql: String,
    /// Wall time spent in remote backends; in-process backends report 0.
    pub backend_latency_ms: u64,
    pub error: Option<String>,
    /// Share of gold-referenced schema items that survived top-k filtering.
    pub filter_recall: Option<FilterRecall>,
}

/// Run-level provenance written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub profile: RuleProfile,
    pub mode: RoutingMode,
    pub k1: usize,
    pub k2: usize,
    pub score_source: String,
    pub recognizer: String,
    pub generators: BTreeMap<HardnessLevel, String>,
    pub concurrency: usize,
    pub samples: usize,
    pub errors: usize,
    /// False when any backend is remote, so outputs may vary between runs.
    pub deterministic: bool,
    pub filter_recall: FilterRecall,
}

/// Classifies a sample with `backend`. `input` is the filtered serialization.
pub fn recognize(
    sample: &Sample,
    input: &SerializedInput,
    backend: &RecognizerBackend,
    schema: &DatabaseSchema,
    profile: RuleProfile,
) -> Result<HardnessLevel, BackendError> {
    match backend {
        RecognizerBackend::Oracle => {
            let gold = sample.query.as_deref().ok_or(BackendError::MissingGold)?;
            label_hardness(gold, schema, profile)
                .map(|(_, level)| level)
                .map_err(|e| BackendError::GoldUnparsable(e.to_string()))
        }
        RecognizerBackend::Constant { level } => Ok(*level),
        RecognizerBackend::Remote { endpoint } => {
            let req = ClassifyRequest {
                question: sample.question.clone(),
                input: input.text.clone(),
            };
            let resp: ClassifyResponse = endpoint.post(&req)?;
            resp.hardness.parse().map_err(|_| {
                BackendError::BackendProtocolError(format!("unknown hardness '{}'", resp.hardness))
            })
        }
    }
}

fn generate(
    kind: &GeneratorKind,
    level: HardnessLevel,
    sample: &Sample,
    input: &SerializedInput,
    schema: &DatabaseSchema,
) -> Result<String, BackendError> {
    match kind {
        GeneratorKind::EchoGold => sample.query.clone().ok_or(BackendError::MissingGold),
        GeneratorKind::FixedTemplate { template } => {
            let table = input
                .table_order
                .first()
                .map_or("", |&t| schema.tables[t].original_name.as_str());
            Ok(template
                .replace("{table}", table)
                .replace("{db_id}", &schema.db_id))
        }
        GeneratorKind::Remote { endpoint } => {
            let req = GenerateRequest {
                hardness: level,
                input: input.text.clone(),
                db_id: sample.db_id.clone(),
            };
            endpoint.post::<_, GenerateResponse>(&req).map(|r| r.sql)
        }
    }
}

/// Ranks, serializes, recognizes and generates for one sample. Failures are
/// recorded on the returned record.
pub fn route_and_generate(
    sample: &Sample,
    schema: &DatabaseSchema,
    config: &PipelineConfig,
) -> PipelineRecord {
    let mut record = PipelineRecord {
        id: sample.id,
        db_id: sample.db_id.clone(),
        question: sample.question.clone(),
        gold_sql: sample.query.clone(),
        gold_hardness: None,
        serialized_input: None,
        predicted_hardness: None,
        routed_level: None,
        predicted_sql: String::new(),
        backend_latency_ms: 0,
        error: None,
        filter_recall: None,
    };
    if let Some(gold) = &sample.query {
        record.gold_hardness = label_hardness(gold, schema, config.profile)
            .ok()
            .map(|(_, l)| l);
    }

    let ranked = match rank_sample(sample, schema, &config.scores, config.k1, config.k2) {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e);
            return record;
        }
    };
    if let Some(gold) = sample
        .query
        .as_deref()
        .and_then(|g| parse_sql(g, Some(schema)).ok())
    {
        record.filter_recall = Some(filter_recall(&ranked, &gold, schema));
    }
    let input = match serialize_input(&sample.question, schema, Some(&ranked)) {
        Ok(i) => i,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.serialized_input = Some(input.clone());

    let started = Instant::now();
    let recognized = recognize(sample, &input, &config.recognizer, schema, config.profile);
    if config.recognizer.is_remote() {
        record.backend_latency_ms += started.elapsed().as_millis() as u64;
    }
    let recognize_error = match recognized {
        Ok(level) => {
            record.predicted_hardness = Some(level);
            None
        }
        Err(e) => Some(format!("recognizer: {e}")),
    };

    let route = match config.mode {
        RoutingMode::Practical => record.predicted_hardness,
        RoutingMode::Ideal => record.gold_hardness,
    };
    let Some(level) = route else {
        record.error = Some(match (config.mode, recognize_error) {
            (RoutingMode::Practical, Some(e)) => e,
            _ => "gold hardness unavailable for ideal routing".to_string(),
        });
        return record;
    };
    record.routed_level = Some(level);

    let generator = config.generators.get(level);
    let started = Instant::now();
    let generated = generate(generator, level, sample, &input, schema);
    if matches!(generator, GeneratorKind::Remote { .. }) {
        record.backend_latency_ms += started.elapsed().as_millis() as u64;
    }
    match generated {
        Ok(sql) => {
            record.predicted_sql = sql;
            record.error = recognize_error;
        }
        Err(e) => {
            let gen = format!("generator: {e}");
            record.error = Some(match recognize_error {
                Some(r) => format!("{r}; {gen}"),
                None => gen,
            });
        }
    }
    record
}

/// Scores a sample's schema items and keeps the top `k1`/`k2`.
pub fn rank_sample(
    sample: &Sample,
    schema: &DatabaseSchema,
    source: &ScoreSource,
    k1: usize,
    k2: usize,
) -> Result<RankedSchema, String> {
    let scores = match source {
        ScoreSource::Lexical => lexical_rank(&sample.question, schema),
        ScoreSource::File { records, .. } => {
            let rec = records
                .get(&sample.id)
                .ok_or_else(|| format!("no relevance scores for sample {}", sample.id))?;
            if rec.db_id != sample.db_id {
                return Err(format!(
                    "scores for sample {} name db '{}', expected '{}'",
                    sample.id, rec.db_id, sample.db_id
                ));
            }
            rec.scores()
        }
    };
    filter_top_k(&scores, schema, k1, k2).map_err(|e| e.to_string())
}

/// Runs every sample through the pipeline on up to `config.concurrency`
/// workers. Records come back in input order.
pub fn run_pipeline(
    dataset: &[Sample],
    schemas: &BTreeMap<String, DatabaseSchema>,
    config: &PipelineConfig,
) -> Result<(Vec<PipelineRecord>, RunManifest), PipelineError> {
    if config.k1 == 0 || config.k2 == 0 {
        return Err(PipelineError::ConfigError(
            "k1 and k2 must be at least 1".into(),
        ));
    }
    if let Some(s) = dataset.iter().find(|s| !schemas.contains_key(&s.db_id)) {
        return Err(PipelineError::ConfigError(format!(
            "unknown db_id '{}' (sample {})",
            s.db_id, s.id
        )));
    }
    let records = parallel_map_with(
        dataset,
        config.concurrency,
        || (),
        |_, _, sample| route_and_generate(sample, &schemas[&sample.db_id], config),
    );

    let mut recall = FilterRecall::default();
    records
        .iter()
        .filter_map(|r| r.filter_recall)
        .for_each(|r| recall.add(r));
    let generators: BTreeMap<HardnessLevel, String> = HardnessLevel::ALL
        .iter()
        .map(|&l| (l, config.generators.get(l).describe()))
        .collect();
    let any_remote = config.recognizer.is_remote()
        || HardnessLevel::ALL
            .iter()
            .any(|&l| matches!(config.generators.get(l), GeneratorKind::Remote { .. }));
    let manifest = RunManifest {
        profile: config.profile,
        mode: config.mode,
        k1: config.k1,
        k2: config.k2,
        score_source: config.scores.describe(),
        recognizer: config.recognizer.describe(),
        generators,
        concurrency: config.concurrency,
        samples: records.len(),
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        deterministic: !any_remote,
        filter_recall: recall,
    };
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_tables;

    fn schemas() -> BTreeMap<String, DatabaseSchema> {
        parse_tables(
            r#"[{"column_names": [[-1,"*"],[0,"name"],[0,"age"]], "column_names_original": [[-1,"*"],[0,"Name"],[0,"Age"]],
            "column_types": ["text","text","number"], "db_id": "s", "foreign_keys": [], "primary_keys": [],
            "table_names": ["singer"], "table_names_original": ["singer"]}]"#,
        )
        .unwrap()
    }

    fn sample(id: usize, q: &str) -> Sample {
        Sample {
            id,
            db_id: "s".into(),
            question: "list singer names".into(),
            query: Some(q.into()),
        }
    }

    #[test]
    fn identity_pipeline() {
        let ds = vec![
            sample(0, "SELECT name FROM singer"),
            sample(1, "SELECT name FROM singer ORDER BY age LIMIT 1"),
        ];
        let config = PipelineConfig::new(
            RecognizerBackend::Oracle,
            GeneratorBackends::uniform(GeneratorKind::EchoGold),
        );
        let (records, manifest) = run_pipeline(&ds, &schemas(), &config).unwrap();
        assert_eq!(records[0].predicted_hardness, Some(HardnessLevel::Easy));
        assert_eq!(records[1].routed_level, Some(HardnessLevel::Medium));
        assert!(records
            .iter()
            .all(|r| r.error.is_none() && Some(&r.predicted_sql) == r.gold_sql.as_ref()));
        assert_eq!(manifest.errors, 0);
        assert!(manifest.deterministic);
    }

    #[test]
    fn ideal_mode_routes_by_gold() {
        let ds = vec![sample(0, "SELECT name FROM singer ORDER BY age LIMIT 1")];
        let mut config = PipelineConfig::new(
            RecognizerBackend::Constant {
                level: HardnessLevel::Easy,
            },
            GeneratorBackends::uniform(GeneratorKind::EchoGold),
        );
        config.mode = RoutingMode::Ideal;
        let (records, _) = run_pipeline(&ds, &schemas(), &config).unwrap();
        assert_eq!(records[0].predicted_hardness, Some(HardnessLevel::Easy));
        assert_eq!(records[0].routed_level, Some(HardnessLevel::Medium));
    }

    #[test]
    fn unknown_db_is_a_config_error() {
        let mut s = sample(0, "SELECT 1");
        s.db_id = "nope".into();
        let config = PipelineConfig::new(
            RecognizerBackend::Oracle,
            GeneratorBackends::uniform(GeneratorKind::EchoGold),
        );
        match run_pipeline(&[s], &schemas(), &config) {
            Err(PipelineError::ConfigError(m)) => assert!(m.contains("nope")),
            other => panic!("unexpected {other:?}"),
        }
        let (records, manifest) = run_pipeline(&[], &schemas(), &config).unwrap();
        assert!(records.is_empty());
        assert_eq!(manifest.samples, 0);
    }

    #[test]
    fn unmapped_level_rejected() {
        let mut map = BTreeMap::new();
        map.insert(HardnessLevel::Easy, GeneratorKind::EchoGold);
        assert!(
            matches!(GeneratorBackends::from_map(map), Err(PipelineError::ConfigError(m)) if m.contains("medium"))
        );
    }

    #[test]
    fn oracle_without_gold() {
        let mut s = sample(0, "x");
        s.query = None;
        let config = PipelineConfig::new(
            RecognizerBackend::Oracle,
            GeneratorBackends::uniform(GeneratorKind::EchoGold),
        );
        let r = route_and_generate(&s, &schemas()["s"], &config);
        assert!(r.error.unwrap().contains("no gold SQL"));
        assert_eq!(r.routed_level, None);
    }

    #[test]
    fn template_generator() {
        let config = PipelineConfig::new(
            RecognizerBackend::Constant {
                level: HardnessLevel::Hard,
            },
            GeneratorBackends::uniform(GeneratorKind::FixedTemplate {
                template: DEFAULT_TEMPLATE.into(),
            }),
        );
        let r = route_and_generate(
            &sample(0, "SELECT name FROM singer"),
            &schemas()["s"],
            &config,
        );
        assert_eq!(r.predicted_sql, "SELECT count(*) FROM singer");
    }
}
