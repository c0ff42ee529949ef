//! The training protocol: minibatch Adam with early stopping on validation
//! loss, best-parameter restore, seed averaging and checkpoints.

mod checkpoint;
mod config;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{evaluate_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, PARAMS_MAGIC};
pub use config::TrainConfig;

use crate::autodiff::{adam_step, AdamState, ParamStore, Tape};
use crate::data::{split_dataset, BehaviorGraph, Dataset, DatasetSplit, Task, UserLabel};
use crate::metrics::{binary_metrics, mean_report, multiclass_metrics, regression_metrics, MetricReport};
use crate::model::{Features, Model, Prediction, Variant, Vocabularies};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Stops once validation loss has failed to decrease for `patience`
/// consecutive epochs, comparing each epoch with the one before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    previous: Option<f64>,
    streak: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            epoch: 0,
            previous: None,
            streak: 0,
            best: None,
        }
    }

    /// Records the next epoch's validation loss; returns true when training
    /// should stop after this epoch.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if let Some(prev) = self.previous {
            self.streak = if val_loss >= prev { self.streak + 1 } else { 0 };
        }
        self.previous = Some(val_loss);
        if self.best.is_none_or(|(_, b)| val_loss < b) {
            self.best = Some((self.epoch, val_loss));
        }
        self.streak >= self.patience
    }

    /// 1-based epoch with the lowest validation loss (earliest on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn improved_last(&self) -> bool {
        self.best.is_some_and(|(e, _)| e == self.epoch)
    }
}

/// One line of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: MetricReport,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HistoryLine {
    Epoch(EpochRecord),
    Summary { seed: u64, best_epoch: usize, test: MetricReport },
}

impl RunHistory {
    /// One JSON object per epoch, then a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&HistoryLine::Epoch(e.clone()))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&HistoryLine::Summary {
            seed: self.seed,
            best_epoch: self.best_epoch,
            test: self.test,
        })?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                HistoryLine::Epoch(e) => epochs.push(e),
                HistoryLine::Summary { seed, best_epoch, test } => {
                    return Ok(RunHistory {
                        seed,
                        epochs,
                        best_epoch,
                        test,
                    })
                }
            }
        }
        Err(Error::Config("run history has no summary line".into()))
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Which part of the user split to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

/// Users that carry a label for `task`, split 80/10/10.
pub struct PreparedData {
    pub graphs: Vec<BehaviorGraph>,
    pub split: DatasetSplit,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, task: Task, split_seed: u64) -> Result<Self> {
        let graphs: Vec<BehaviorGraph> =
            dataset.graphs().into_iter().filter(|g| g.label(task).is_some()).collect();
        let ids: Vec<String> = graphs.iter().map(|g| g.user_id.clone()).collect();
        let split = split_dataset(&ids, split_seed)?;
        let position: std::collections::HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let lookup = |users: &[String]| users.iter().map(|u| position[u.as_str()]).collect::<Vec<_>>();
        let (train, validation, test) = (lookup(&split.train), lookup(&split.validation), lookup(&split.test));
        Ok(PreparedData {
            graphs,
            train,
            validation,
            test,
            split,
        })
    }

    pub fn users(&self, split: SplitName) -> &[usize] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Mean loss and metrics of `model` over `users`, forward passes only.
pub fn score(model: &Model, data: &PreparedData, features: &Features, users: &[usize]) -> Result<(f64, MetricReport)> {
    if users.is_empty() {
        return Err(Error::Empty("score: no users"));
    }
    let task = model.config.task;
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(users.len());
    let mut classes = Vec::with_capacity(users.len());
    let mut values = Vec::with_capacity(users.len());
    let mut truth = Vec::with_capacity(users.len());
    let mut targets = Vec::with_capacity(users.len());
    for &u in users {
        let graph = &data.graphs[u];
        let label = graph.label(task).expect("prepared users are labeled");
        let mut tape = Tape::new(&model.params);
        let (loss, fwd) = model.user_loss(&mut tape, graph, features, label)?;
        total += tape.value(loss).data()[0];
        match model.output_prediction(tape.value(fwd.output).data()) {
            Prediction::Class { class, positive_score } => {
                classes.push(class);
                scores.push(positive_score);
            }
            Prediction::Value(v) => values.push(v),
        }
        match label {
            UserLabel::Binary(c) | UserLabel::Categorical(c) => truth.push(c),
            UserLabel::Numeric(v) => targets.push(v),
        }
    }
    let report = match task {
        Task::Gender => MetricReport::Binary(binary_metrics(&scores, &truth)?),
        Task::Income => MetricReport::Multiclass(multiclass_metrics(&classes, &truth, task.outputs())?),
        Task::Age => MetricReport::Regression(regression_metrics(&values, &targets)?),
    };
    Ok((total / users.len() as f64, report))
}

/// A trained model with its history.
pub struct TrainOutcome {
    pub model: Model,
    pub history: RunHistory,
}

/// Trains one model with `seed` for initialization and data order, restores
/// the best-validation parameters and scores the test split.
pub fn train(config: &TrainConfig, dataset: &Dataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let data = PreparedData::new(dataset, config.model.task, config.split_seed)?;
    let vocabs = Vocabularies::from_dataset(dataset);
    let mut model = Model::new(config.model, vocabs, seed)?;
    let features = model.features(dataset)?;
    let task = config.model.task;

    let mut adam = AdamState::new(&model.params);
    let mut order_rng = substream(seed, Stream::DataOrder);
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best_params: Option<ParamStore> = None;
    let mut epochs = Vec::new();
    let mut order = data.train.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut train_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let grads = {
                let mut tape = Tape::new(&model.params);
                let mut losses = Vec::with_capacity(batch.len());
                for &u in batch {
                    let graph = &data.graphs[u];
                    let label = graph.label(task).expect("prepared users are labeled");
                    losses.push(model.user_loss(&mut tape, graph, &features, label)?.0);
                }
                let loss = tape.mean(&losses)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                train_total += value * batch.len() as f64;
                tape.backward(loss)?
            };
            if !grads.all_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
        }
        let (val_loss, val_metrics) = score(&model, &data, &features, &data.validation)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_total / data.train.len() as f64,
            val_loss,
            val_metrics,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, validation loss {:.6}, {}",
            record.train_loss,
            val_loss,
            val_metrics.csv_row()
        );
        epochs.push(record);
        let stop = stopping.observe(val_loss);
        if stopping.improved_last() {
            best_params = Some(model.params.clone());
        }
        if stop {
            break;
        }
    }

    let best_epoch = stopping.best_epoch().expect("at least one epoch ran");
    model.params.copy_from(best_params.as_ref().expect("best epoch saved its parameters"))?;
    let (_, test) = score(&model, &data, &features, &data.test)?;
    Ok(TrainOutcome {
        model,
        history: RunHistory {
            seed,
            epochs,
            best_epoch,
            test,
        },
    })
}

/// Per-seed histories and their averaged test report.
pub struct SeedRuns {
    pub runs: Vec<RunHistory>,
    pub mean: MetricReport,
}

/// Trains with seeds `config.seed .. config.seed + config.seeds` and averages
/// the test reports.
pub fn run_seeds(config: &TrainConfig, dataset: &Dataset) -> Result<SeedRuns> {
    let mut runs = Vec::with_capacity(config.seeds);
    for k in 0..config.seeds as u64 {
        runs.push(train(config, dataset, config.seed + k)?.history);
    }
    let mean = mean_report(&runs.iter().map(|r| r.test).collect::<Vec<_>>())?;
    Ok(SeedRuns { runs, mean })
}

/// `run_seeds` for the full model and each of its ablations.
pub fn ablate(config: &TrainConfig, dataset: &Dataset) -> Result<Vec<(Variant, SeedRuns)>> {
    Variant::ABLATIONS
        .iter()
        .map(|&variant| {
            let mut c = *config;
            c.model.variant = variant;
            Ok((variant, run_seeds(&c, dataset)?))
        })
        .collect()
}

/// CSV comparison table, one row per variant.
pub fn ablation_table(rows: &[(Variant, SeedRuns)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut out = format!("variant,{}\n", first.mean.csv_header());
    for (variant, runs) in rows {
        out.push_str(&format!("{variant},{}\n", runs.mean.csv_row()));
    }
    out
}

#[cfg(test)]
mod tests;
