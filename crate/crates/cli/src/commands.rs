use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use dqhp_core::dataprep::{
    distribution_report, label_dataset, split_by_hardness, write_jsonl, write_split, LabeledSample,
    SPIDER_DEV_DISTRIBUTION, SPIDER_TRAIN_DISTRIBUTION,
};
use dqhp_core::dataset::{load_dataset, Sample};
use dqhp_core::evaluation::{
    compare_ideal_practical, evaluate, render_report, EvalOptions, EvalReport,
};
use dqhp_core::hardness::HardnessLevel;
use dqhp_core::pipeline::{
    rank_sample, run_pipeline, PipelineConfig, PipelineRecord, RoutingMode, ScoreSource,
};
use dqhp_core::ranking::{lexical_rank, read_scores_file, write_scores_file, ScoreRecord};
use dqhp_core::schema::{load_schema, serialize_input, DatabaseSchema, SerializedInput};

use crate::config::{config_error, GlobalArgs, ModeArg, Overrides, RunConfig};
use crate::Command;

pub enum Status {
    Ok,
    /// Finished, but some samples were skipped or failed.
    Partial,
}

impl Status {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Status::Ok
        } else {
            Status::Partial
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Expected {
    SpiderTrain,
    SpiderDev,
}

impl Expected {
    fn counts(self) -> [u64; 4] {
        match self {
            Expected::SpiderTrain => SPIDER_TRAIN_DISTRIBUTION,
            Expected::SpiderDev => SPIDER_DEV_DISTRIBUTION,
        }
    }
}

/// Enough to re-run a command: its name, the arguments and the resolved config.
#[derive(Serialize)]
struct CommandManifest<'a, T: Serialize> {
    command: &'a str,
    args: Vec<String>,
    config: &'a RunConfig,
    outputs: Vec<String>,
    summary: T,
}

fn write_manifest<T: Serialize>(
    config: &RunConfig,
    command: &str,
    outputs: &[&str],
    summary: T,
) -> anyhow::Result<()> {
    let manifest = CommandManifest {
        command,
        args: std::env::args().skip(1).collect(),
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        summary,
    };
    let path = config.out.join(format!("{command}_manifest.json"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(flags: &GlobalArgs, command: Command) -> anyhow::Result<Status> {
    let mut overrides = Overrides::default();
    match &command {
        Command::Route {
            recognizer,
            generators,
            scores,
        } => {
            overrides.recognizer = recognizer.clone();
            overrides.generators = generators.clone();
            overrides.scores = scores.clone();
        }
        Command::Serialize { rank } if rank != "lexical" => {
            overrides.scores = Some(PathBuf::from(rank));
        }
        _ => {}
    }
    let config = RunConfig::resolve(flags, overrides)?;
    config.write()?;
    match command {
        Command::Label { expect } => label(&config, expect),
        Command::Split {
            labeled,
            base_model_id,
        } => split(&config, labeled.as_deref(), &base_model_id),
        Command::Serialize { .. } => serialize(&config),
        Command::Rank => rank(&config),
        Command::Route { .. } => route(&config),
        Command::Eval { records } => eval(&config, records),
        Command::Report => report(&config),
    }
}

fn load_inputs(
    config: &RunConfig,
) -> anyhow::Result<(Vec<Sample>, BTreeMap<String, DatabaseSchema>)> {
    let tables = config.require(&config.tables, "--tables")?;
    let dataset = config.require(&config.dataset, "--dataset")?;
    let schemas = load_schema(tables).map_err(|e| config_error(format!("--tables: {e}")))?;
    let samples = load_dataset(dataset).map_err(|e| config_error(format!("--dataset: {e}")))?;
    Ok((samples, schemas))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = std::fs::File::open(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn label(config: &RunConfig, expect: Option<Expected>) -> anyhow::Result<Status> {
    let (samples, schemas) = load_inputs(config)?;
    let (labeled, skips) = label_dataset(&samples, &schemas, config.profile);
    write_jsonl(&config.out.join("labeled.jsonl"), &labeled)?;
    write_jsonl(&config.out.join("label_skips.jsonl"), &skips)?;
    let report = distribution_report(&labeled, expect.map(Expected::counts));
    print!("{}", report.render());
    for s in &skips {
        eprintln!("skipped #{} ({}): {}", s.id, s.db_id, s.reason);
    }
    write_manifest(
        config,
        "label",
        &["labeled.jsonl", "label_skips.jsonl"],
        &report,
    )?;
    Ok(Status::from_failures(skips.len()))
}

fn split(
    config: &RunConfig,
    labeled: Option<&Path>,
    base_model_id: &str,
) -> anyhow::Result<Status> {
    let (labeled, skipped) = match labeled {
        Some(path) => (read_jsonl::<LabeledSample>(path)?, 0),
        None => {
            let (samples, schemas) = load_inputs(config)?;
            let (labeled, skips) = label_dataset(&samples, &schemas, config.profile);
            for s in &skips {
                eprintln!("skipped #{} ({}): {}", s.id, s.db_id, s.reason);
            }
            (labeled, skips.len())
        }
    };
    let split = split_by_hardness(&labeled, config.profile, base_model_id)
        .map_err(|e| config_error(e.to_string()))?;
    write_split(&split, &config.out)?;
    for (level, n) in &split.manifest.counts {
        println!("{:<8}{n:>7}", level.title());
    }
    println!("{:<8}{:>7}", "Total", split.manifest.total);
    write_manifest(
        config,
        "split",
        &["stage1.jsonl", "stage2_*.jsonl", "manifest.json"],
        &split.manifest,
    )?;
    Ok(Status::from_failures(skipped))
}

fn score_source(config: &RunConfig) -> anyhow::Result<ScoreSource> {
    Ok(match &config.scores {
        None => ScoreSource::Lexical,
        Some(path) => ScoreSource::File {
            records: read_scores_file(path)
                .map_err(|e| config_error(format!("scores {}: {e}", path.display())))?,
            path: path.clone(),
        },
    })
}

#[derive(Serialize)]
struct SerializedRecord<'a> {
    id: usize,
    db_id: &'a str,
    input: SerializedInput,
}

fn serialize(config: &RunConfig) -> anyhow::Result<Status> {
    let (samples, schemas) = load_inputs(config)?;
    let source = score_source(config)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut failures = 0;
    for s in &samples {
        let Some(schema) = schemas.get(&s.db_id) else {
            eprintln!("skipped #{}: unknown db_id '{}'", s.id, s.db_id);
            failures += 1;
            continue;
        };
        let input = rank_sample(s, schema, &source, config.k1, config.k2).and_then(|ranked| {
            serialize_input(&s.question, schema, Some(&ranked)).map_err(|e| e.to_string())
        });
        match input {
            Ok(input) => records.push(SerializedRecord {
                id: s.id,
                db_id: &s.db_id,
                input,
            }),
            Err(e) => {
                eprintln!("skipped #{}: {e}", s.id);
                failures += 1;
            }
        }
    }
    write_jsonl(&config.out.join("serialized.jsonl"), &records)?;
    println!("serialized {} of {} samples", records.len(), samples.len());
    write_manifest(
        config,
        "serialize",
        &["serialized.jsonl"],
        serde_json::json!({
            "score_source": source.describe(),
            "serialized": records.len(),
            "failed": failures,
        }),
    )?;
    Ok(Status::from_failures(failures))
}

fn rank(config: &RunConfig) -> anyhow::Result<Status> {
    let (samples, schemas) = load_inputs(config)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut failures = 0;
    for s in &samples {
        match schemas.get(&s.db_id) {
            Some(schema) => {
                let scores = lexical_rank(&s.question, schema);
                records.push(ScoreRecord {
                    db_id: s.db_id.clone(),
                    question_id: s.id,
                    table_probs: scores.table_probs,
                    column_probs: scores.column_probs,
                });
            }
            None => {
                eprintln!("skipped #{}: unknown db_id '{}'", s.id, s.db_id);
                failures += 1;
            }
        }
    }
    write_scores_file(&config.out.join("scores.jsonl"), &records)?;
    println!("scored {} of {} samples", records.len(), samples.len());
    write_manifest(
        config,
        "rank",
        &["scores.jsonl"],
        serde_json::json!({ "ranker": "lexical", "scored": records.len(), "failed": failures }),
    )?;
    Ok(Status::from_failures(failures))
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: usize,
    db_id: &'a str,
    predicted_sql: &'a str,
    predicted_hardness: Option<HardnessLevel>,
}

fn records_file(mode: RoutingMode) -> String {
    format!("records_{}.jsonl", mode.as_str())
}

fn route(config: &RunConfig) -> anyhow::Result<Status> {
    let (samples, schemas) = load_inputs(config)?;
    let recognizer = config.recognizer_backend().map_err(config_error)?;
    let generators = config.generator_backends().map_err(config_error)?;
    let mut pipeline = PipelineConfig::new(recognizer, generators);
    pipeline.profile = config.profile;
    pipeline.k1 = config.k1;
    pipeline.k2 = config.k2;
    pipeline.concurrency = config.concurrency;
    pipeline.scores = score_source(config)?;

    let mut errors = 0;
    let mut outputs = Vec::new();
    let mut manifests = Vec::new();
    for mode in config.mode.modes() {
        pipeline.mode = mode;
        let (records, manifest) =
            run_pipeline(&samples, &schemas, &pipeline).map_err(|e| config_error(e.to_string()))?;
        let predictions: Vec<Prediction> = records
            .iter()
            .map(|r| Prediction {
                id: r.id,
                db_id: &r.db_id,
                predicted_sql: &r.predicted_sql,
                predicted_hardness: r.predicted_hardness,
            })
            .collect();
        let records_name = records_file(mode);
        let predictions_name = format!("predictions_{}.jsonl", mode.as_str());
        write_jsonl(&config.out.join(&records_name), &records)?;
        write_jsonl(&config.out.join(&predictions_name), &predictions)?;
        for r in records.iter().filter(|r| r.error.is_some()) {
            eprintln!(
                "#{} ({}): {}",
                r.id,
                mode.as_str(),
                r.error.as_deref().unwrap_or("")
            );
        }
        println!(
            "{}: routed {} samples, {} errors",
            mode.as_str(),
            manifest.samples,
            manifest.errors
        );
        errors += manifest.errors;
        outputs.push(records_name);
        outputs.push(predictions_name);
        manifests.push(manifest);
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(config, "route", &names, &manifests)?;
    Ok(Status::from_failures(errors))
}

fn eval_file(mode: RoutingMode) -> String {
    format!("eval_{}.json", mode.as_str())
}

fn eval(config: &RunConfig, records: Option<PathBuf>) -> anyhow::Result<Status> {
    let tables = config.require(&config.tables, "--tables")?;
    let db_root = config.require(&config.db_root, "--db-root")?;
    let schemas = load_schema(tables).map_err(|e| config_error(format!("--tables: {e}")))?;
    let modes = config.mode.modes();
    if records.is_some() && modes.len() > 1 {
        return Err(config_error(
            "--records: takes one file, so --mode must be practical or ideal",
        ));
    }
    let opts = EvalOptions {
        profile: config.profile,
        timeout: config.timeout(),
        concurrency: config.concurrency,
        skip_execution: false,
    };
    let mut skipped = 0;
    let mut outputs = Vec::new();
    for mode in modes {
        let path = records
            .clone()
            .unwrap_or_else(|| config.out.join(records_file(mode)));
        let input: Vec<PipelineRecord> = read_jsonl(&path)?;
        let report = evaluate(&input, &schemas, db_root, &opts);
        skipped += report.skipped.len();
        let name = eval_file(mode);
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(config.out.join(&name), text)?;
        outputs.push(name);
    }
    let text = render(config)?;
    print!("{text}");
    let mut names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    names.push("report.txt");
    write_manifest(
        config,
        "eval",
        &names,
        serde_json::json!({ "skipped": skipped }),
    )?;
    Ok(Status::from_failures(skipped))
}

fn load_report(config: &RunConfig, mode: RoutingMode) -> anyhow::Result<EvalReport> {
    let path = config.out.join(eval_file(mode));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Renders the report for the configured mode and writes `report.txt`.
fn render(config: &RunConfig) -> anyhow::Result<String> {
    let text = match config.mode {
        ModeArg::Practical | ModeArg::Ideal => {
            let mode = config.mode.modes()[0];
            let mut text = format!("Routing: {}\n\n", mode.as_str());
            text.push_str(&render_report(&load_report(config, mode)?, None));
            text
        }
        ModeArg::Both => {
            let practical = load_report(config, RoutingMode::Practical)?;
            let ideal = load_report(config, RoutingMode::Ideal)?;
            let deltas = compare_ideal_practical(&practical, &ideal)
                .map_err(|e| config_error(e.to_string()))?;
            let mut text = String::from("Routing: practical\n\n");
            text.push_str(&render_report(&practical, Some(&deltas)));
            text
        }
    };
    std::fs::write(config.out.join("report.txt"), &text)?;
    Ok(text)
}

fn report(config: &RunConfig) -> anyhow::Result<Status> {
    let text = render(config)?;
    print!("{text}");
    write_manifest(config, "report", &["report.txt"], ())?;
    Ok(Status::Ok)
}
