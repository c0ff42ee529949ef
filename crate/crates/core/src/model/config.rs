use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::{Error, Result};

/// Which fusion path a model uses, and which pattern (if any) it drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// All four patterns, fused by concatenation.
    Full,
    /// Interactive spatiotemporal attention.
    Attn,
    /// A GRU over chronologically ordered session embeddings only.
    SessionsOnly,
    MinusHour,
    MinusWeek,
    MinusWeekday,
    MinusSpatial,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::Attn,
        Variant::SessionsOnly,
        Variant::MinusHour,
        Variant::MinusWeek,
        Variant::MinusWeekday,
        Variant::MinusSpatial,
    ];

    /// The full model followed by its five ablations.
    pub const ABLATIONS: [Variant; 6] = [
        Variant::Full,
        Variant::SessionsOnly,
        Variant::MinusHour,
        Variant::MinusWeek,
        Variant::MinusWeekday,
        Variant::MinusSpatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Attn => "attn",
            Variant::SessionsOnly => "s-only",
            Variant::MinusHour => "minus-hour",
            Variant::MinusWeek => "minus-week",
            Variant::MinusWeekday => "minus-weekday",
            Variant::MinusSpatial => "minus-spatial",
        }
    }

    /// Which of the four patterns (hour, week, weekday, spatial) are computed.
    pub fn patterns(self) -> PatternMask {
        let mut mask = PatternMask {
            hour: true,
            week: true,
            weekday: true,
            spatial: true,
        };
        match self {
            Variant::Full | Variant::Attn => {}
            Variant::SessionsOnly => {
                mask = PatternMask {
                    hour: false,
                    week: false,
                    weekday: false,
                    spatial: false,
                }
            }
            Variant::MinusHour => mask.hour = false,
            Variant::MinusWeek => mask.week = false,
            Variant::MinusWeekday => mask.weekday = false,
            Variant::MinusSpatial => mask.spatial = false,
        }
        mask
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternMask {
    pub hour: bool,
    pub week: bool,
    pub weekday: bool,
    pub spatial: bool,
}

/// How calendar units without sessions enter the pattern-level GRU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbsentUnits {
    /// Every unit of the domain is a step; absent ones get a zero input.
    ZeroFill,
    /// Only units with sessions are steps.
    Skip,
}

impl FromStr for AbsentUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-fill" => Ok(AbsentUnits::ZeroFill),
            "skip" => Ok(AbsentUnits::Skip),
            other => Err(Error::Config(format!("unknown absent-unit policy {other:?}"))),
        }
    }
}

impl fmt::Display for AbsentUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbsentUnits::ZeroFill => "zero-fill",
            AbsentUnits::Skip => "skip",
        })
    }
}

/// Nonlinearity applied after every aggregation-site affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

/// Embedding and aggregation widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    /// Item embedding width.
    pub item: usize,
    /// Location embedding width, including the two coordinate slots.
    pub location: usize,
    pub session: usize,
    /// Hour, week and weekday unit width.
    pub time_unit: usize,
    pub location_unit: usize,
    /// Hour, week and weekday pattern width.
    pub time_pattern: usize,
    pub spatial_pattern: usize,
    /// Item channel widths (id, category, title); `None` splits into thirds.
    pub item_channels: Option<[usize; 3]>,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            item: 256,
            location: 256,
            session: 256,
            time_unit: 256,
            location_unit: 256,
            time_pattern: 128,
            spatial_pattern: 128,
            item_channels: None,
        }
    }
}

impl ModelDims {
    /// Every width set to `k`, patterns to `k / 2` (at least 1).
    pub fn uniform(k: usize) -> Self {
        ModelDims {
            item: k,
            location: k,
            session: k,
            time_unit: k,
            location_unit: k,
            time_pattern: (k / 2).max(1),
            spatial_pattern: (k / 2).max(1),
            item_channels: None,
        }
    }

    /// (id, category, title) widths; the title width is even.
    pub fn item_channel_sizes(&self) -> [usize; 3] {
        self.item_channels.unwrap_or_else(|| {
            let title = 2 * (self.item / 6);
            let category = self.item / 3;
            [self.item - title - category, category, title]
        })
    }

    /// (country, region, city) widths.
    pub fn location_level_sizes(&self) -> [usize; 3] {
        let levels = self.location - 2;
        let third = levels / 3;
        [levels - 2 * third, third, third]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.item,
            self.location,
            self.session,
            self.time_unit,
            self.location_unit,
            self.time_pattern,
            self.spatial_pattern,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.location < 5 {
            return Err(Error::Config("location width must leave room for 3 levels and 2 coordinates".into()));
        }
        let [id, category, title] = self.item_channel_sizes();
        if id + category + title != self.item {
            return Err(Error::Config(format!(
                "item channels {id}+{category}+{title} do not sum to {}",
                self.item
            )));
        }
        if id == 0 || category == 0 || title == 0 || title % 2 != 0 {
            return Err(Error::Config(format!(
                "item channels must be positive with an even title width, got {id}/{category}/{title}"
            )));
        }
        Ok(())
    }
}

/// Everything that determines a model's parameter layout and forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub variant: Variant,
    pub dims: ModelDims,
    pub activation: Activation,
    pub absent_units: AbsentUnits,
    pub tz_offset_minutes: i32,
}

impl ModelConfig {
    pub fn new(task: Task, variant: Variant, dims: ModelDims) -> Self {
        ModelConfig {
            task,
            variant,
            dims,
            activation: Activation::Relu,
            absent_units: AbsentUnits::ZeroFill,
            tz_offset_minutes: 0,
        }
    }

    /// Width of the user embedding fed to the prediction head.
    pub fn user_width(&self) -> usize {
        let d = &self.dims;
        match self.variant {
            Variant::SessionsOnly => d.session,
            Variant::Attn => 3 * (d.time_pattern + d.spatial_pattern),
            _ => {
                let mask = self.variant.patterns();
                [mask.hour, mask.week, mask.weekday]
                    .iter()
                    .filter(|&&on| on)
                    .count()
                    * d.time_pattern
                    + if mask.spatial { d.spatial_pattern } else { 0 }
            }
        }
    }
}
