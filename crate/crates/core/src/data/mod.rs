//! Behavior logs: records, CSV ingestion, per-user behavior graphs,
//! calendar units and dataset splits.

pub mod calendar;
mod graph;
mod io;
mod records;
mod split;

use std::collections::{HashMap, HashSet};

pub use calendar::{Calendar, TimeUnit, UnitKind};
pub use graph::{build_graph, BehaviorGraph, ItemEdge, LocationEdge, SessionNode};
pub use io::{parse_log, write_dataset, LogPaths};
pub use records::{
    normalize_coordinates, Event, Gender, ItemRecord, Labels, LocationRecord, SessionRecord, Task, UserLabel,
    UserRecord,
};
pub use split::{split_dataset, DatasetSplit};

use crate::{Error, Result};

/// A validated behavior log. Sessions reference items, locations and users by
/// index into the respective tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<ItemRecord>,
    pub locations: Vec<LocationRecord>,
    pub users: Vec<UserRecord>,
    pub sessions: Vec<SessionRecord>,
    /// Sessions discarded because they had no events.
    pub dropped_sessions: usize,
    item_index: HashMap<String, usize>,
    location_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

impl Dataset {
    /// Validates cross-references, drops empty sessions, removes exact
    /// duplicate events and sorts each session's events by timestamp.
    pub fn from_parts(
        items: Vec<ItemRecord>,
        locations: Vec<LocationRecord>,
        users: Vec<UserRecord>,
        sessions: Vec<SessionRecord>,
    ) -> Result<Self> {
        fn index<T>(rows: &[T], what: &str, key: impl Fn(&T) -> &str) -> Result<HashMap<String, usize>> {
            let mut map = HashMap::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                if key(r).is_empty() {
                    return Err(Error::OutOfRange(format!("empty {what} id at row {i}")));
                }
                if map.insert(key(r).to_string(), i).is_some() {
                    return Err(Error::OutOfRange(format!("duplicate {what} id {:?}", key(r))));
                }
            }
            Ok(map)
        }
        let item_index = index(&items, "item", |r| &r.item_id)?;
        let location_index = index(&locations, "location", |r| &r.location_id)?;
        let user_index = index(&users, "user", |r| &r.user_id)?;
        for loc in &locations {
            loc.validate()?;
        }

        let mut seen_sessions = HashSet::new();
        let mut kept = Vec::with_capacity(sessions.len());
        let mut dropped = 0;
        for mut s in sessions {
            if !seen_sessions.insert(s.session_id.clone()) {
                return Err(Error::OutOfRange(format!("duplicate session id {:?}", s.session_id)));
            }
            if s.user >= users.len() || s.location >= locations.len() || s.events.iter().any(|e| e.item >= items.len()) {
                return Err(Error::OutOfRange(format!("session {:?} has a dangling reference", s.session_id)));
            }
            let mut seen_events = HashSet::new();
            s.events.retain(|e| seen_events.insert(*e));
            if s.events.is_empty() {
                dropped += 1;
                continue;
            }
            s.events.sort_by_key(|e| e.timestamp);
            kept.push(s);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} sessions without events");
        }
        Ok(Dataset {
            items,
            locations,
            users,
            sessions: kept,
            dropped_sessions: dropped,
            item_index,
            location_index,
            user_index,
        })
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.location_index.get(id).copied()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn num_events(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    /// One behavior graph per user with at least one session, in user-table order.
    pub fn graphs(&self) -> Vec<BehaviorGraph> {
        let mut per_user: Vec<Vec<&SessionRecord>> = vec![Vec::new(); self.users.len()];
        for s in &self.sessions {
            per_user[s.user].push(s);
        }
        per_user
            .into_iter()
            .enumerate()
            .filter(|(_, sessions)| !sessions.is_empty())
            .map(|(u, sessions)| {
                build_graph(&self.users[u].user_id, &sessions, self.users[u].labels)
                    .expect("sessions grouped by user are consistent")
            })
            .collect()
    }
}
