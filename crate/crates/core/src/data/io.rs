//! Reading and writing the four-file CSV log format.
//!
//! ```text
//! items.csv      item_id,category,title
//! locations.csv  location_id,country,region,city,lon,lat
//! sessions.csv   session_id,user_id,location_id,item_id,timestamp
//! users.csv      user_id,gender,income,age
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::calendar::{MAX_TIMESTAMP, MIN_TIMESTAMP};
use super::records::{Event, Gender, ItemRecord, Labels, LocationRecord, SessionRecord, UserRecord};
use super::Dataset;
use crate::{Error, Result};

pub const ITEMS_HEADER: [&str; 3] = ["item_id", "category", "title"];
pub const LOCATIONS_HEADER: [&str; 6] = ["location_id", "country", "region", "city", "lon", "lat"];
pub const SESSIONS_HEADER: [&str; 5] = ["session_id", "user_id", "location_id", "item_id", "timestamp"];
pub const USERS_HEADER: [&str; 4] = ["user_id", "gender", "income", "age"];

/// Locations of the four input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogPaths {
    pub items: PathBuf,
    pub locations: PathBuf,
    pub sessions: PathBuf,
    pub users: PathBuf,
}

impl LogPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        LogPaths {
            items: dir.join("items.csv"),
            locations: dir.join("locations.csv"),
            sessions: dir.join("sessions.csv"),
            users: dir.join("users.csv"),
        }
    }
}

struct Table {
    file: String,
    rows: Vec<(u64, StringRecord)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let file = path.display().to_string();
    let mut reader = ReaderBuilder::new().has_headers(true).from_path(path)?;
    let found: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != header {
        return Err(Error::Load {
            file,
            line: 1,
            msg: format!("expected header {header:?}, found {found:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok(Table { file, rows })
}

fn optional(field: &str) -> Option<String> {
    let f = field.trim();
    (!f.is_empty()).then(|| f.to_string())
}

fn load_err(file: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Load {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_optional_f64(file: &str, line: u64, name: &str, field: &str) -> Result<Option<f64>> {
    match optional(field) {
        None => Ok(None),
        Some(v) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(load_err(file, line, format!("malformed {name} {v:?}"))),
        },
    }
}

fn parse_items(table: &Table) -> Result<Vec<ItemRecord>> {
    table
        .rows
        .iter()
        .map(|(line, r)| {
            let item_id = optional(&r[0]).ok_or_else(|| load_err(&table.file, *line, "empty item_id"))?;
            let title = optional(&r[2]).map(|t| t.split_whitespace().map(str::to_string).collect());
            Ok(ItemRecord {
                item_id,
                category: optional(&r[1]),
                title,
            })
        })
        .collect()
}

fn parse_locations(table: &Table) -> Result<Vec<LocationRecord>> {
    table
        .rows
        .iter()
        .map(|(line, r)| {
            let location_id = optional(&r[0]).ok_or_else(|| load_err(&table.file, *line, "empty location_id"))?;
            let loc = LocationRecord {
                location_id,
                country: optional(&r[1]),
                region: optional(&r[2]),
                city: optional(&r[3]),
                lon: parse_optional_f64(&table.file, *line, "lon", &r[4])?,
                lat: parse_optional_f64(&table.file, *line, "lat", &r[5])?,
            };
            loc.validate().map_err(|e| load_err(&table.file, *line, e.to_string()))?;
            Ok(loc)
        })
        .collect()
}

fn parse_users(table: &Table) -> Result<Vec<UserRecord>> {
    table
        .rows
        .iter()
        .map(|(line, r)| {
            let user_id = optional(&r[0]).ok_or_else(|| load_err(&table.file, *line, "empty user_id"))?;
            let gender = match r[1].trim() {
                "" => None,
                "f" => Some(Gender::Female),
                "m" => Some(Gender::Male),
                other => return Err(load_err(&table.file, *line, format!("gender must be f, m or empty, got {other:?}"))),
            };
            let income = match optional(&r[2]) {
                None => None,
                Some(v) => match v.parse::<u8>() {
                    Ok(i) if i <= 9 => Some(i),
                    _ => return Err(load_err(&table.file, *line, format!("income must be 0..9, got {v:?}"))),
                },
            };
            let age = parse_optional_f64(&table.file, *line, "age", &r[3])?;
            Ok(UserRecord {
                user_id,
                labels: Labels { gender, income, age },
            })
        })
        .collect()
}

fn index_of<T>(rows: &[T], key: impl Fn(&T) -> &str, file: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if index.insert(key(row).to_string(), i).is_some() {
            return Err(load_err(file, i as u64 + 2, format!("duplicate id {:?}", key(row))));
        }
    }
    Ok(index)
}

/// Loads and cross-validates a behavior log.
pub fn parse_log(paths: &LogPaths) -> Result<Dataset> {
    let items_t = read_table(&paths.items, &ITEMS_HEADER)?;
    let locations_t = read_table(&paths.locations, &LOCATIONS_HEADER)?;
    let users_t = read_table(&paths.users, &USERS_HEADER)?;
    let sessions_t = read_table(&paths.sessions, &SESSIONS_HEADER)?;

    let items = parse_items(&items_t)?;
    let locations = parse_locations(&locations_t)?;
    let users = parse_users(&users_t)?;
    let item_index = index_of(&items, |r| &r.item_id, &items_t.file)?;
    let location_index = index_of(&locations, |r| &r.location_id, &locations_t.file)?;
    let user_index = index_of(&users, |r| &r.user_id, &users_t.file)?;

    let file = &sessions_t.file;
    let mut sessions: Vec<SessionRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (line, r) in &sessions_t.rows {
        let line = *line;
        let session_id = optional(&r[0]).ok_or_else(|| load_err(file, line, "empty session_id"))?;
        let user = *user_index
            .get(r[1].trim())
            .ok_or_else(|| load_err(file, line, format!("unknown user_id {:?}", &r[1])))?;
        let location = *location_index
            .get(r[2].trim())
            .ok_or_else(|| load_err(file, line, format!("unknown location_id {:?}", &r[2])))?;
        let item = *item_index
            .get(r[3].trim())
            .ok_or_else(|| load_err(file, line, format!("unknown item_id {:?}", &r[3])))?;
        let timestamp = match r[4].trim().parse::<i64>() {
            Ok(t) if (MIN_TIMESTAMP..=MAX_TIMESTAMP).contains(&t) => t,
            _ => return Err(load_err(file, line, format!("malformed timestamp {:?}", &r[4]))),
        };
        let slot = *by_id.entry(session_id.clone()).or_insert_with(|| {
            sessions.push(SessionRecord {
                session_id,
                user,
                location,
                events: Vec::new(),
            });
            sessions.len() - 1
        });
        let session = &mut sessions[slot];
        if session.user != user || session.location != location {
            return Err(load_err(
                file,
                line,
                format!("session {:?} changes user or location between rows", session.session_id),
            ));
        }
        session.events.push(Event { item, timestamp });
    }

    Dataset::from_parts(items, locations, users, sessions)
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut writer = WriterBuilder::new().from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn opt(v: &Option<String>) -> String {
    v.clone().unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a dataset in the format [`parse_log`] reads.
pub fn write_dataset(dataset: &Dataset, paths: &LogPaths) -> Result<()> {
    write_table(
        &paths.items,
        &ITEMS_HEADER,
        dataset.items.iter().map(|r| {
            vec![
                r.item_id.clone(),
                opt(&r.category),
                r.title.as_ref().map(|t| t.join(" ")).unwrap_or_default(),
            ]
        }),
    )?;
    write_table(
        &paths.locations,
        &LOCATIONS_HEADER,
        dataset.locations.iter().map(|r| {
            vec![
                r.location_id.clone(),
                opt(&r.country),
                opt(&r.region),
                opt(&r.city),
                opt_num(r.lon),
                opt_num(r.lat),
            ]
        }),
    )?;
    write_table(
        &paths.users,
        &USERS_HEADER,
        dataset.users.iter().map(|u| {
            vec![
                u.user_id.clone(),
                u.labels.gender.map(|g| g.code().to_string()).unwrap_or_default(),
                u.labels.income.map(|i| i.to_string()).unwrap_or_default(),
                opt_num(u.labels.age),
            ]
        }),
    )?;
    write_table(
        &paths.sessions,
        &SESSIONS_HEADER,
        dataset.sessions.iter().flat_map(|s| {
            s.events.iter().map(move |e| {
                vec![
                    s.session_id.clone(),
                    dataset.users[s.user].user_id.clone(),
                    dataset.locations[s.location].location_id.clone(),
                    dataset.items[e.item].item_id.clone(),
                    e.timestamp.to_string(),
                ]
            })
        }),
    )?;
    Ok(())
}
