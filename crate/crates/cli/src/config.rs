//! Run configuration: command-line flags over an optional TOML file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use dqhp_core::hardness::{HardnessLevel, RuleProfile};
use dqhp_core::pipeline::{
    GeneratorBackends, GeneratorKind, RecognizerBackend, RemoteEndpoint, RoutingMode,
    DEFAULT_CONCURRENCY,
};

pub const CONFIG_FILE: &str = "config.toml";

/// An invalid or unusable configuration. Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Practical,
    Ideal,
    Both,
}

impl ModeArg {
    pub fn modes(self) -> Vec<RoutingMode> {
        match self {
            ModeArg::Practical => vec![RoutingMode::Practical],
            ModeArg::Ideal => vec![RoutingMode::Ideal],
            ModeArg::Both => vec![RoutingMode::Practical, RoutingMode::Ideal],
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Spider-format tables.json
    #[arg(long, global = true)]
    pub tables: Option<PathBuf>,
    /// Spider-format dataset (JSON list of {db_id, question, query})
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Directory holding {db_id}/{db_id}.sqlite
    #[arg(long, global = true)]
    pub db_root: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<RuleProfile>,
    /// Tables kept after ranking
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    /// Columns kept per table
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Upper bound on parallel workers and in-flight requests
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Per-request and per-query timeout
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    /// TOML config file; defaults to $DQHP_CONFIG
    #[arg(long, global = true, env = "DQHP_CONFIG")]
    pub config: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<RuleProfile, String> {
    s.parse()
        .map_err(|_| format!("unknown profile '{s}' (expected paper-literal or spider-compat)"))
}

/// What a config file may set. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tables: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub db_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub profile: Option<RuleProfile>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub mode: Option<ModeArg>,
    pub concurrency: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub seed: Option<u64>,
    pub scores: Option<PathBuf>,
    pub recognizer: Option<String>,
    pub generators: Option<BTreeMap<String, String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }
}

/// The fully resolved configuration, written to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tables: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub db_root: Option<PathBuf>,
    pub out: PathBuf,
    pub profile: RuleProfile,
    pub k1: usize,
    pub k2: usize,
    pub mode: ModeArg,
    pub concurrency: usize,
    pub timeout_ms: u64,
    /// Recorded for provenance; the built-in baselines are deterministic.
    pub seed: u64,
    /// Scores file from an external ranker; lexical ranking when absent.
    pub scores: Option<PathBuf>,
    pub recognizer: String,
    /// Generator spec per level name, or under `all`.
    pub generators: BTreeMap<String, String>,
}

impl RunConfig {
    /// Flags win over the file, the file over defaults. `overrides` carries
    /// subcommand-specific flags that shadow file keys.
    pub fn resolve(flags: &GlobalArgs, overrides: Overrides) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let generators = match overrides.generators {
            Some(spec) => parse_generator_list(&spec)?,
            None => file
                .generators
                .unwrap_or_else(|| BTreeMap::from([("all".to_string(), "echo-gold".to_string())])),
        };
        let config = RunConfig {
            tables: flags.tables.clone().or(file.tables),
            dataset: flags.dataset.clone().or(file.dataset),
            db_root: flags.db_root.clone().or(file.db_root),
            out: flags
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("dqhp-out")),
            profile: flags.profile.or(file.profile).unwrap_or_default(),
            k1: flags.k1.or(file.k1).unwrap_or(4),
            k2: flags.k2.or(file.k2).unwrap_or(5),
            mode: flags.mode.or(file.mode).unwrap_or(ModeArg::Practical),
            concurrency: flags
                .concurrency
                .or(file.concurrency)
                .unwrap_or(DEFAULT_CONCURRENCY),
            timeout_ms: flags.timeout_ms.or(file.timeout_ms).unwrap_or(30_000),
            seed: file.seed.unwrap_or(0),
            scores: overrides.scores.or(file.scores),
            recognizer: overrides
                .recognizer
                .or(file.recognizer)
                .unwrap_or_else(|| "oracle".to_string()),
            generators,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let mut problems = Vec::new();
        if self.k1 == 0 {
            problems.push("k1: must be at least 1".to_string());
        }
        if self.k2 == 0 {
            problems.push("k2: must be at least 1".to_string());
        }
        if self.concurrency == 0 {
            problems.push("concurrency: must be at least 1".to_string());
        }
        if self.timeout_ms == 0 {
            problems.push("timeout_ms: must be positive".to_string());
        }
        if let Err(e) = self.recognizer_backend() {
            problems.push(format!("recognizer: {e}"));
        }
        if let Err(e) = self.generator_backends() {
            problems.push(format!("generators: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_error(problems.join("; ")))
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    fn endpoint(&self, url: &str) -> RemoteEndpoint {
        let mut e = RemoteEndpoint::new(url);
        e.timeout = self.timeout();
        e
    }

    /// `oracle`, `constant:<level>` or an http(s) URL.
    pub fn recognizer_backend(&self) -> Result<RecognizerBackend, String> {
        let spec = self.recognizer.trim();
        if spec == "oracle" {
            Ok(RecognizerBackend::Oracle)
        } else if let Some(level) = spec.strip_prefix("constant:") {
            let level = level
                .parse::<HardnessLevel>()
                .map_err(|e| format!("'{spec}': {e}"))?;
            Ok(RecognizerBackend::Constant { level })
        } else if is_url(spec) {
            Ok(RecognizerBackend::Remote {
                endpoint: self.endpoint(spec),
            })
        } else {
            Err(format!(
                "'{spec}' is not oracle, constant:<level> or an http(s) URL"
            ))
        }
    }

    pub fn generator_backends(&self) -> Result<GeneratorBackends, String> {
        let mut map = BTreeMap::new();
        if let Some(spec) = self.generators.get("all") {
            for level in HardnessLevel::ALL {
                map.insert(level, self.generator_kind(spec)?);
            }
        }
        for (key, spec) in &self.generators {
            if key == "all" {
                continue;
            }
            let level = key
                .parse::<HardnessLevel>()
                .map_err(|_| format!("unknown level '{key}'"))?;
            map.insert(level, self.generator_kind(spec)?);
        }
        GeneratorBackends::from_map(map).map_err(|e| e.to_string())
    }

    /// `echo-gold`, `template:<sql>` or an http(s) URL.
    fn generator_kind(&self, spec: &str) -> Result<GeneratorKind, String> {
        let spec = spec.trim();
        if spec == "echo-gold" {
            Ok(GeneratorKind::EchoGold)
        } else if let Some(template) = spec.strip_prefix("template:") {
            Ok(GeneratorKind::FixedTemplate {
                template: template.to_string(),
            })
        } else if is_url(spec) {
            Ok(GeneratorKind::Remote {
                endpoint: self.endpoint(spec),
            })
        } else {
            Err(format!(
                "'{spec}' is not echo-gold, template:<sql> or an http(s) URL"
            ))
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| config_error(format!("{flag}: required by this command")))
    }

    /// Writes the resolved configuration as `config.toml` under `out`.
    pub fn write(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let text = toml::to_string_pretty(self)?;
        std::fs::write(self.out.join(CONFIG_FILE), text)?;
        Ok(())
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// Subcommand flags that also live in the config file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub recognizer: Option<String>,
    pub generators: Option<String>,
    pub scores: Option<PathBuf>,
}

/// Parses `all=echo-gold` or `easy=...,hard=...`.
fn parse_generator_list(spec: &str) -> anyhow::Result<BTreeMap<String, String>> {
    spec.split(',')
        .map(|part| {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                config_error(format!(
                    "generators: '{part}' should look like <level|all>=<backend>"
                ))
            })?;
            Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults_fill_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "k1 = 3\nk2 = 7\nrecognizer = \"constant:hard\"\n").unwrap();
        let flags = GlobalArgs {
            k1: Some(2),
            config: Some(path),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags, Overrides::default()).unwrap();
        assert_eq!((c.k1, c.k2), (2, 7));
        assert_eq!(c.profile, RuleProfile::SpiderCompat);
        assert_eq!(
            c.recognizer_backend().unwrap(),
            RecognizerBackend::Constant {
                level: HardnessLevel::Hard
            }
        );
    }

    #[test]
    fn invalid_fields_are_named() {
        let flags = GlobalArgs {
            k2: Some(0),
            ..Default::default()
        };
        let err = RunConfig::resolve(
            &flags,
            Overrides {
                generators: Some("easy=echo-gold".into()),
                ..Default::default()
            },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("k2:"), "{msg}");
        assert!(
            msg.contains("generators:") && msg.contains("medium"),
            "{msg}"
        );
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let flags = GlobalArgs {
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags, Overrides::default()).unwrap();
        c.write().unwrap();
        let text = std::fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
