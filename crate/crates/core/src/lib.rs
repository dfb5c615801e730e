//! Hardness-decoupled text-to-SQL toolkit: a Spider-dialect SQL parser,
//! hardness labeling, schema serialization and ranking, hardness-routed
//! generation, and EM/EX evaluation.

pub mod dataprep;
pub mod dataset;
pub mod evaluation;
pub mod hardness;
pub mod pipeline;
pub mod ranking;
pub mod schema;
pub mod sql;
pub mod util;
