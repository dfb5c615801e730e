mod common;

use dqhp_core::evaluation::{evaluate, EvalOptions};
use dqhp_core::hardness::HardnessLevel;
use dqhp_core::pipeline::{
    run_pipeline, GeneratorBackends, GeneratorKind, PipelineConfig, RecognizerBackend,
};

#[test]
fn oracle_and_echo_gold_score_perfectly_on_dev() {
    let (dev, schemas) = common::spider_dev();
    let dbs = tempfile::tempdir().unwrap();
    common::empty_databases(dbs.path(), &schemas);

    let config = PipelineConfig::new(
        RecognizerBackend::Oracle,
        GeneratorBackends::uniform(GeneratorKind::EchoGold),
    );
    let (records, manifest) = run_pipeline(&dev, &schemas, &config).unwrap();
    assert_eq!(manifest.errors, 0);

    let report = evaluate(&records, &schemas, dbs.path(), &EvalOptions::default());
    assert!(
        report.skipped.is_empty(),
        "{:?}",
        &report.skipped[..report.skipped.len().min(5)]
    );
    assert_eq!(report.overall.count, 1034);
    for level in HardnessLevel::ALL {
        let b = report.bucket(level);
        assert_eq!((b.em_tenths(), b.ex_tenths()), (1000, 1000), "{level}");
    }
    assert_eq!(report.confusion.trace(), 1034);
}
