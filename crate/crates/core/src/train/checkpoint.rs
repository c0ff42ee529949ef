//! Checkpoint directories.
//!
//! `params.txt` starts with a magic line and the model-config hash, then one
//! `name<TAB>shape<TAB>values` line per parameter. Shapes and values are
//! comma- and space-separated; values use Rust's shortest round-trip float
//! formatting, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{score, PreparedData, RunHistory, SplitName, TrainConfig};
use crate::autodiff::{ParamStore, Tensor};
use crate::config::KeyValues;
use crate::data::Dataset;
use crate::metrics::MetricReport;
use crate::model::{Model, Vocabularies};
use crate::{Error, Result};

pub const PARAMS_MAGIC: &str = "CALGNN1";

const PARAMS_FILE: &str = "params.txt";
const CONFIG_FILE: &str = "config.txt";
const HISTORY_FILE: &str = "history.jsonl";
const REPORT_FILE: &str = "report.txt";
const REPORT_CSV: &str = "report.csv";

pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub history: Option<RunHistory>,
}

fn fail(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn params_text(hash: &str, params: &ParamStore) -> String {
    let mut out = format!("{PARAMS_MAGIC}\n{hash}\n");
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{name}\t{}\t{}", shape.join(","), values.join(" "));
    }
    out
}

fn parse_params(path: &Path, text: &str) -> Result<(String, ParamStore)> {
    let mut lines = text.lines();
    if lines.next() != Some(PARAMS_MAGIC) {
        return Err(fail(path, format!("missing {PARAMS_MAGIC} header")));
    }
    let hash = lines.next().ok_or_else(|| fail(path, "missing config hash"))?.to_string();
    let mut store = ParamStore::new();
    for (n, line) in lines.enumerate() {
        let at = |msg: String| fail(path, format!("line {}: {msg}", n + 3));
        let mut cols = line.split('\t');
        let (Some(name), Some(shape), Some(values), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(at("expected name, shape and values".into()));
        };
        let shape: Vec<usize> = shape
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| at(format!("bad shape: {e}")))?;
        let values: Vec<f64> = values
            .split(' ')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| at(format!("bad value: {e}")))?;
        let tensor = Tensor::new(shape, values).map_err(|e| at(e.to_string()))?;
        store.add(name, tensor).map_err(|e| at(e.to_string()))?;
    }
    Ok((hash, store))
}

/// Writes parameters, config, vocabularies and (if given) the run history
/// and its test report into `dir`.
pub fn save_checkpoint(dir: &Path, config: &TrainConfig, model: &Model, history: Option<&RunHistory>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(PARAMS_FILE), params_text(&config.model_hash(), &model.params))?;
    fs::write(dir.join(CONFIG_FILE), config.to_key_values().to_text())?;
    model.vocabs.save(dir)?;
    if let Some(h) = history {
        fs::write(dir.join(HISTORY_FILE), h.to_jsonl()?)?;
        write_report(dir, &h.test)?;
    }
    Ok(())
}

pub fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    fs::write(dir.join(REPORT_FILE), report.to_key_values())?;
    fs::write(dir.join(REPORT_CSV), format!("{}\n{}\n", report.csv_header(), report.csv_row()))?;
    Ok(())
}

/// Loads a checkpoint, refusing parameters whose hash disagrees with the
/// stored config or with `expected` when given.
pub fn load_checkpoint(dir: &Path, expected: Option<&TrainConfig>) -> Result<Checkpoint> {
    let params_path: PathBuf = dir.join(PARAMS_FILE);
    let config = TrainConfig::from_key_values(&KeyValues::load(&dir.join(CONFIG_FILE))?)?;
    let (hash, store) = parse_params(&params_path, &fs::read_to_string(&params_path)?)?;
    if hash != config.model_hash() {
        return Err(fail(&params_path, "parameter hash does not match the stored config"));
    }
    if let Some(e) = expected {
        if e.model_hash() != hash {
            return Err(fail(&params_path, "checkpoint was trained with a different model config"));
        }
    }
    let vocabs = Vocabularies::load(dir)?;
    let model = Model::from_params(config.model, vocabs, &store).map_err(|e| fail(&params_path, e.to_string()))?;
    let history_path = dir.join(HISTORY_FILE);
    let history = if history_path.exists() {
        Some(RunHistory::from_jsonl(&fs::read_to_string(history_path)?)?)
    } else {
        None
    };
    Ok(Checkpoint { config, model, history })
}

/// Scores a saved model on one split of `dataset`, re-derived from the
/// stored split seed.
pub fn evaluate_checkpoint(
    dir: &Path,
    dataset: &Dataset,
    split: SplitName,
    expected: Option<&TrainConfig>,
) -> Result<MetricReport> {
    let ckpt = load_checkpoint(dir, expected)?;
    let data = PreparedData::new(dataset, ckpt.config.model.task, ckpt.config.split_seed)?;
    let features = ckpt.model.features(dataset)?;
    Ok(score(&ckpt.model, &data, &features, data.users(split))?.1)
}
