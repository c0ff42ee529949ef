use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::data::Task;
use crate::model::{ModelConfig, ModelDims, Variant};
use crate::{Error, Result};

/// Model layout plus the optimization protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving validation epochs tolerated.
    pub patience: usize,
    /// Users per Adam step.
    pub batch_size: usize,
    /// Number of runs averaged by `run_seeds`.
    pub seeds: usize,
    /// Initialization and data-order seed of the first run.
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::new(Task::Gender, Variant::Full, ModelDims::default()),
            lr: 1e-4,
            max_epochs: 100,
            patience: 3,
            batch_size: 32,
            seeds: 5,
            seed: 0,
            split_seed: 0,
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "task",
    "variant",
    "activation",
    "absent_units",
    "tz_offset_minutes",
    "dims.item",
    "dims.location",
    "dims.session",
    "dims.time_unit",
    "dims.location_unit",
    "dims.time_pattern",
    "dims.spatial_pattern",
    "dims.item_channels",
];

const PROTOCOL_KEYS: &[&str] = &["lr", "max_epochs", "patience", "batch_size", "seeds", "seed", "split_seed"];

impl TrainConfig {
    pub fn new(task: Task, variant: Variant) -> Self {
        let mut c = TrainConfig::default();
        c.model.task = task;
        c.model.variant = variant;
        c
    }

    /// Applies the keys present in `kv` on top of `self`. `dims.uniform = k`
    /// sets every width at once before the individual `dims.*` keys apply.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        let mut known: Vec<&str> = MODEL_KEYS.iter().chain(PROTOCOL_KEYS).copied().collect();
        known.push("dims.uniform");
        kv.ensure_known(&known)?;
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get($key)? {
                    $field = v;
                }
            };
        }
        let m = &mut self.model;
        take!("task", m.task);
        take!("variant", m.variant);
        take!("activation", m.activation);
        take!("absent_units", m.absent_units);
        take!("tz_offset_minutes", m.tz_offset_minutes);
        if let Some(k) = kv.get::<usize>("dims.uniform")? {
            m.dims = ModelDims::uniform(k);
        }
        take!("dims.item", m.dims.item);
        take!("dims.location", m.dims.location);
        take!("dims.session", m.dims.session);
        take!("dims.time_unit", m.dims.time_unit);
        take!("dims.location_unit", m.dims.location_unit);
        take!("dims.time_pattern", m.dims.time_pattern);
        take!("dims.spatial_pattern", m.dims.spatial_pattern);
        if let Some(v) = kv.get_str("dims.item_channels") {
            m.dims.item_channels = parse_channels(v)?;
        }
        take!("lr", self.lr);
        take!("max_epochs", self.max_epochs);
        take!("patience", self.patience);
        take!("batch_size", self.batch_size);
        take!("seeds", self.seeds);
        take!("seed", self.seed);
        take!("split_seed", self.split_seed);
        self.validate()?;
        Ok(self)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        TrainConfig::default().apply(kv)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.dims.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.seeds == 0 {
            return Err(Error::Config(
                "patience, max_epochs, batch_size and seeds must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn model_key_values(&self) -> KeyValues {
        let m = &self.model;
        let d = &m.dims;
        let mut kv = KeyValues::default();
        kv.set("task", m.task);
        kv.set("variant", m.variant);
        kv.set("activation", m.activation);
        kv.set("absent_units", m.absent_units);
        kv.set("tz_offset_minutes", m.tz_offset_minutes);
        kv.set("dims.item", d.item);
        kv.set("dims.location", d.location);
        kv.set("dims.session", d.session);
        kv.set("dims.time_unit", d.time_unit);
        kv.set("dims.location_unit", d.location_unit);
        kv.set("dims.time_pattern", d.time_pattern);
        kv.set("dims.spatial_pattern", d.spatial_pattern);
        let [a, b, c] = d.item_channel_sizes();
        kv.set("dims.item_channels", format!("{a},{b},{c}"));
        kv
    }

    /// Every setting, in canonical form.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.model_key_values();
        kv.set("lr", self.lr);
        kv.set("max_epochs", self.max_epochs);
        kv.set("patience", self.patience);
        kv.set("batch_size", self.batch_size);
        kv.set("seeds", self.seeds);
        kv.set("seed", self.seed);
        kv.set("split_seed", self.split_seed);
        kv
    }

    /// SHA-256 over the settings that fix the parameter layout and forward pass.
    pub fn model_hash(&self) -> String {
        hex::encode(Sha256::digest(self.model_key_values().to_text().as_bytes()))
    }
}

fn parse_channels(v: &str) -> Result<Option<[usize; 3]>> {
    if v == "auto" {
        return Ok(None);
    }
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("dims.item_channels = {v:?}: {e}")))?;
    match parts[..] {
        [a, b, c] => Ok(Some([a, b, c])),
        _ => Err(Error::Config(format!("dims.item_channels needs three widths, got {v:?}"))),
    }
}
