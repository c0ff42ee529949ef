use std::collections::HashMap;

use super::records::{Event, Labels, SessionRecord, Task, UserLabel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionNode {
    pub session_id: String,
    /// Leading timestamp: the earliest event of the session.
    pub timestamp: i64,
    /// Index into [`BehaviorGraph::locations`].
    pub location: usize,
    /// Events ordered by timestamp; `item` is a dataset item index.
    pub events: Vec<Event>,
}

/// Timestamped session–item edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemEdge {
    pub session: usize,
    /// Index into [`BehaviorGraph::items`].
    pub item: usize,
    pub timestamp: i64,
}

/// Timestamped session–location edge; carries the session's leading timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocationEdge {
    pub session: usize,
    /// Index into [`BehaviorGraph::locations`].
    pub location: usize,
    pub timestamp: i64,
}

/// A user's tripartite graph of session, location and item nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorGraph {
    pub user_id: String,
    /// Session nodes in chronological order of their leading timestamps.
    pub sessions: Vec<SessionNode>,
    /// Location nodes as dataset location indices, ordered by first visit.
    pub locations: Vec<usize>,
    /// Item nodes as dataset item indices, in first-interaction order.
    pub items: Vec<usize>,
    pub item_edges: Vec<ItemEdge>,
    pub location_edges: Vec<LocationEdge>,
    pub labels: Labels,
}

impl BehaviorGraph {
    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn label(&self, task: Task) -> Option<UserLabel> {
        self.labels.for_task(task)
    }

    /// Sessions at location node `loc`, chronologically.
    pub fn sessions_at(&self, loc: usize) -> impl Iterator<Item = usize> + '_ {
        self.sessions.iter().enumerate().filter(move |(_, s)| s.location == loc).map(|(i, _)| i)
    }
}

/// Builds the behavior graph of one user from their sessions.
///
/// Sessions are ordered by leading timestamp (ties by session id), so the
/// result does not depend on the order of `sessions`. Sessions without events
/// are skipped.
pub fn build_graph(user_id: &str, sessions: &[&SessionRecord], labels: Labels) -> Result<BehaviorGraph> {
    if let Some(first) = sessions.first() {
        if sessions.iter().any(|s| s.user != first.user) {
            return Err(Error::OutOfRange(format!("sessions of user {user_id:?} belong to several users")));
        }
    }
    let mut ordered: Vec<(i64, &SessionRecord)> = sessions
        .iter()
        .filter(|s| !s.events.is_empty())
        .map(|s| (s.timestamp(), *s))
        .collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.session_id.cmp(&b.1.session_id)));

    let mut location_nodes: HashMap<usize, usize> = HashMap::new();
    let mut locations = Vec::new();
    let mut item_nodes: HashMap<usize, usize> = HashMap::new();
    let mut items = Vec::new();
    let mut nodes = Vec::with_capacity(ordered.len());
    let mut item_edges = Vec::new();
    let mut location_edges = Vec::with_capacity(ordered.len());

    for (i, (t, s)) in ordered.into_iter().enumerate() {
        let loc = *location_nodes.entry(s.location).or_insert_with(|| {
            locations.push(s.location);
            locations.len() - 1
        });
        let mut events = s.events.clone();
        events.sort_by_key(|e| e.timestamp);
        for e in &events {
            let item = *item_nodes.entry(e.item).or_insert_with(|| {
                items.push(e.item);
                items.len() - 1
            });
            item_edges.push(ItemEdge {
                session: i,
                item,
                timestamp: e.timestamp,
            });
        }
        location_edges.push(LocationEdge {
            session: i,
            location: loc,
            timestamp: t,
        });
        nodes.push(SessionNode {
            session_id: s.session_id.clone(),
            timestamp: t,
            location: loc,
            events,
        });
    }

    Ok(BehaviorGraph {
        user_id: user_id.to_string(),
        sessions: nodes,
        locations,
        items,
        item_edges,
        location_edges,
        labels,
    })
}
