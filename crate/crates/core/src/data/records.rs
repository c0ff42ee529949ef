use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub category: Option<String>,
    /// Space-tokenized title; `None` when the title field is empty.
    pub title: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub location_id: String,
    pub country: Option<String>,
    pub region: Option<String>,
    pub city: Option<String>,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
}

impl LocationRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(lon) = self.lon {
            if !(-180.0..=180.0).contains(&lon) {
                return Err(Error::OutOfRange(format!("longitude {lon} of location {}", self.location_id)));
            }
        }
        if let Some(lat) = self.lat {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(Error::OutOfRange(format!("latitude {lat} of location {}", self.location_id)));
            }
        }
        if self.lon.is_some() != self.lat.is_some() {
            return Err(Error::OutOfRange(format!(
                "location {} has only one of lon/lat",
                self.location_id
            )));
        }
        let has_admin = self.country.is_some() || self.region.is_some() || self.city.is_some();
        if !has_admin && self.lon.is_none() {
            return Err(Error::OutOfRange(format!(
                "location {} has neither an admin level nor coordinates",
                self.location_id
            )));
        }
        Ok(())
    }

    /// Normalized coordinates, or the map center when coordinates are absent.
    pub fn normalized_coordinates(&self) -> Result<(f64, f64)> {
        normalize_coordinates(self.lon.unwrap_or(0.0), self.lat.unwrap_or(0.0))
    }
}

/// Affine map of (longitude, latitude) onto the unit square.
pub fn normalize_coordinates(lon: f64, lat: f64) -> Result<(f64, f64)> {
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return Err(Error::OutOfRange(format!("coordinates ({lon}, {lat})")));
    }
    Ok((lon / 360.0 + 0.5, lat / 180.0 + 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Index into the dataset's item table.
    pub item: usize,
    /// Epoch seconds.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// Index into the dataset's user table.
    pub user: usize,
    /// Index into the dataset's location table.
    pub location: usize,
    /// Sorted ascending by timestamp.
    pub events: Vec<Event>,
}

impl SessionRecord {
    /// The leading (minimum) event timestamp.
    pub fn timestamp(&self) -> i64 {
        self.events.iter().map(|e| e.timestamp).min().expect("sessions are non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn class(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "f",
            Gender::Male => "m",
        }
    }
}

/// Every label a user may carry; each task reads one of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub gender: Option<Gender>,
    /// Income level 0..=9, where 0 means unknown.
    pub income: Option<u8>,
    pub age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub labels: Labels,
}

/// The demographic attribute a model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Binary gender classification.
    Gender,
    /// 10-class income level; class 0 ("unknown") is kept as a class.
    Income,
    /// Age regression.
    Age,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Income => "income",
            Task::Age => "age",
        }
    }

    /// Output width of the prediction head.
    pub fn outputs(self) -> usize {
        match self {
            Task::Gender => 2,
            Task::Income => 10,
            Task::Age => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Age)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Task::Gender),
            "income" => Ok(Task::Income),
            "age" => Ok(Task::Age),
            other => Err(Error::Config(format!("unknown task {other:?} (expected gender, income or age)"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Labels {
    pub fn for_task(&self, task: Task) -> Option<UserLabel> {
        match task {
            Task::Gender => self.gender.map(|g| UserLabel::Binary(g.class())),
            Task::Income => self.income.map(|i| UserLabel::Categorical(i as usize)),
            Task::Age => self.age.map(UserLabel::Numeric),
        }
    }
}

/// The target of one prediction task for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UserLabel {
    Binary(usize),
    Categorical(usize),
    Numeric(f64),
}

impl UserLabel {
    pub fn class(self) -> Option<usize> {
        match self {
            UserLabel::Binary(c) | UserLabel::Categorical(c) => Some(c),
            UserLabel::Numeric(_) => None,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            UserLabel::Binary(c) | UserLabel::Categorical(c) => c as f64,
            UserLabel::Numeric(v) => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_center_corner_and_example() {
        assert_eq!(normalize_coordinates(0.0, 0.0).unwrap(), (0.5, 0.5));
        assert_eq!(normalize_coordinates(-180.0, -90.0).unwrap(), (0.0, 0.0));
        let (x, y) = normalize_coordinates(-122.1359, 37.7591).unwrap();
        assert!((x - 0.160_733_611_111_111_1).abs() < 1e-12, "{x}");
        assert!((y - 0.709_772_777_777_777_8).abs() < 1e-12, "{y}");
        assert!(normalize_coordinates(181.0, 0.0).is_err());
        assert!(normalize_coordinates(0.0, -90.5).is_err());
    }

    #[test]
    fn location_validation() {
        let mut loc = LocationRecord {
            location_id: "x".into(),
            country: None,
            region: None,
            city: None,
            lon: None,
            lat: None,
        };
        assert!(loc.validate().is_err());
        loc.city = Some("Oakland".into());
        assert!(loc.validate().is_ok());
        loc.lon = Some(10.0);
        assert!(loc.validate().is_err());
        loc.lat = Some(95.0);
        assert!(loc.validate().is_err());
    }
}
