//! Synthetic behavior logs with a planted, recoverable label rule.
//!
//! Every user gets a preferred hour block, a preferred weekday and a home
//! location cluster. A fixed share of their sessions falls inside each
//! preference. The configured [`PlantedRule`] ties the binary label to one of
//! the three; the other two are independent of it.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::config::KeyValues;
use crate::data::{Dataset, Event, Gender, ItemRecord, Labels, LocationRecord, SessionRecord, UserRecord};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Which user trait decides the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlantedRule {
    /// Label 1 iff the preferred hour block starts before noon.
    Hour,
    /// Label 1 iff the preferred weekday is Saturday or Sunday.
    Weekday,
    /// Label 1 iff the home cluster is in the first half of the clusters.
    Location,
}

impl FromStr for PlantedRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hour" => Ok(PlantedRule::Hour),
            "weekday" => Ok(PlantedRule::Weekday),
            "location" => Ok(PlantedRule::Location),
            other => Err(Error::Config(format!("unknown planted rule {other:?}"))),
        }
    }
}

impl fmt::Display for PlantedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlantedRule::Hour => "hour",
            PlantedRule::Weekday => "weekday",
            PlantedRule::Location => "location",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    /// Inclusive range of sessions per user.
    pub sessions: (usize, usize),
    /// Inclusive range of events per session.
    pub events: (usize, usize),
    pub start: NaiveDate,
    pub days: u32,
    pub seed: u64,
    pub items: usize,
    pub categories: usize,
    pub clusters: usize,
    pub locations_per_cluster: usize,
    pub rule: PlantedRule,
    /// Probability of flipping each label after the rule assigns it.
    pub noise: f64,
    /// Hours per preferred block; divides 12.
    pub band_width: u32,
    /// Share of a user's sessions inside each of their preferences.
    pub concentration: f64,
    pub titles: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 1000,
            sessions: (20, 20),
            events: (1, 4),
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            days: 84,
            seed: 0,
            items: 60,
            categories: 6,
            clusters: 4,
            locations_per_cluster: 3,
            rule: PlantedRule::Hour,
            noise: 0.0,
            band_width: 4,
            concentration: 0.85,
            titles: false,
        }
    }
}

const KEYS: &[&str] = &[
    "users",
    "sessions.min",
    "sessions.max",
    "events.min",
    "events.max",
    "start",
    "days",
    "seed",
    "items",
    "categories",
    "clusters",
    "locations_per_cluster",
    "rule",
    "noise",
    "band_width",
    "concentration",
    "titles",
];

impl SynthConfig {
    /// Overrides defaults with the keys present in `kv`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(KEYS)?;
        let mut c = SynthConfig::default();
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get($key)? {
                    $field = v;
                }
            };
        }
        take!("users", c.users);
        take!("sessions.min", c.sessions.0);
        take!("sessions.max", c.sessions.1);
        take!("events.min", c.events.0);
        take!("events.max", c.events.1);
        take!("start", c.start);
        take!("days", c.days);
        take!("seed", c.seed);
        take!("items", c.items);
        take!("categories", c.categories);
        take!("clusters", c.clusters);
        take!("locations_per_cluster", c.locations_per_cluster);
        take!("rule", c.rule);
        take!("noise", c.noise);
        take!("band_width", c.band_width);
        take!("concentration", c.concentration);
        take!("titles", c.titles);
        c.validate()?;
        Ok(c)
    }

    fn blocks(&self) -> u32 {
        24 / self.band_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.users == 0 || self.items == 0 || self.categories == 0 || self.locations_per_cluster == 0 {
            return bad("users, items, categories and locations_per_cluster must be positive".into());
        }
        if self.sessions.0 == 0 || self.sessions.0 > self.sessions.1 {
            return bad(format!("invalid sessions range {:?}", self.sessions));
        }
        if self.events.0 == 0 || self.events.0 > self.events.1 {
            return bad(format!("invalid events range {:?}", self.events));
        }
        if self.days < 7 {
            return bad("date range must cover at least one full week".into());
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.concentration) {
            return bad("noise and concentration must lie in [0, 1]".into());
        }
        if self.band_width == 0 || 12 % self.band_width != 0 {
            return bad(format!("band_width {} must divide 12", self.band_width));
        }
        if self.clusters < 2 || self.clusters % 2 != 0 {
            return bad(format!("clusters must be even and at least 2, got {}", self.clusters));
        }
        // The planted trait must be the user's mode: even if every
        // out-of-preference session lands on one unit, some preferred unit
        // must still hold more.
        let band = match self.rule {
            PlantedRule::Hour => self.band_width as usize,
            PlantedRule::Weekday => 1,
            PlantedRule::Location => self.locations_per_cluster,
        };
        for n in self.sessions.0..=self.sessions.1 {
            let inside = self.inside(n);
            if n - inside >= inside.div_ceil(band) {
                return Err(Error::Config(format!(
                    "infeasible: with {n} sessions, {inside} inside a preference of width {band} cannot \
                     guarantee that the planted trait is the mode; raise concentration"
                )));
            }
        }
        Ok(())
    }

    fn inside(&self, sessions: usize) -> usize {
        (self.concentration * sessions as f64).round() as usize
    }
}

/// The generator's own record of what it planted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedUser {
    pub user_id: String,
    /// Preferred hour block index (block `b` covers hours `b·w .. (b+1)·w`).
    pub hour_block: u32,
    /// Preferred weekday, 0 = Sunday.
    pub weekday: u32,
    pub cluster: usize,
    /// Label from the rule, before noise.
    pub rule_label: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthLedger {
    pub rule: PlantedRule,
    pub users: usize,
    pub sessions: usize,
    pub events: usize,
    pub planted: Vec<PlantedUser>,
}

impl SynthLedger {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Label the rule assigns to a planted trait value.
pub fn rule_label(config: &SynthConfig, rule: PlantedRule, value: usize) -> usize {
    let hit = match rule {
        PlantedRule::Hour => (value as u32) * config.band_width < 12,
        PlantedRule::Weekday => value == 0 || value == 6,
        PlantedRule::Location => value < config.clusters / 2,
    };
    usize::from(hit)
}

fn draw_trait<R: Rng>(rng: &mut R, domain: usize, wanted: Option<(usize, &dyn Fn(usize) -> usize)>) -> usize {
    match wanted {
        Some((label, rule)) => {
            let pool: Vec<usize> = (0..domain).filter(|&v| rule(v) == label).collect();
            *pool.choose(rng).expect("both labels are reachable")
        }
        None => rng.gen_range(0..domain),
    }
}

/// `n` draws, the first `inside` from `preferred` and the rest from the
/// complement of `preferred` in `0..domain`, shuffled.
fn spread<R: Rng>(rng: &mut R, n: usize, inside: usize, domain: usize, preferred: &[usize]) -> Vec<usize> {
    let others: Vec<usize> = (0..domain).filter(|v| !preferred.contains(v)).collect();
    let mut out: Vec<usize> = (0..n)
        .map(|k| {
            if k < inside || others.is_empty() {
                *preferred.choose(rng).expect("non-empty preference")
            } else {
                *others.choose(rng).expect("non-empty complement")
            }
        })
        .collect();
    out.shuffle(rng);
    out
}

pub fn generate(config: &SynthConfig) -> Result<(Dataset, SynthLedger)> {
    config.validate()?;
    let mut rng = substream(config.seed, Stream::Generator);

    let words: Vec<String> = (0..24).map(|k| format!("w{k}")).collect();
    let items: Vec<ItemRecord> = (0..config.items)
        .map(|k| ItemRecord {
            item_id: format!("it{k}"),
            category: Some(format!("cat{}", k % config.categories)),
            title: config
                .titles
                .then(|| (0..rng.gen_range(1..=3)).map(|_| words.choose(&mut rng).unwrap().clone()).collect()),
        })
        .collect();

    let mut locations = Vec::new();
    for c in 0..config.clusters {
        let (lon0, lat0) = (-150.0 + 300.0 * c as f64 / config.clusters as f64, -40.0 + 20.0 * (c % 4) as f64);
        for j in 0..config.locations_per_cluster {
            locations.push(LocationRecord {
                location_id: format!("loc{c}_{j}"),
                country: Some(format!("C{c}")),
                region: Some(format!("R{c}_{j}")),
                city: Some(format!("City{c}_{j}")),
                lon: Some(lon0 + rng.gen_range(-2.0..2.0)),
                lat: Some(lat0 + rng.gen_range(-2.0..2.0)),
            });
        }
    }

    let start_weekday = config.start.weekday().num_days_from_sunday() as usize;
    let epoch0 = config.start.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp();
    let days_by_weekday: Vec<Vec<i64>> = (0..7)
        .map(|w| {
            (0..config.days as i64)
                .filter(|d| (start_weekday + *d as usize) % 7 == w)
                .collect()
        })
        .collect();

    let mut users = Vec::with_capacity(config.users);
    let mut sessions = Vec::new();
    let mut planted = Vec::with_capacity(config.users);
    let blocks = config.blocks() as usize;
    for u in 0..config.users {
        let label = rng.gen_range(0..2usize);
        let pick = |rule: PlantedRule| -> Option<(usize, PlantedRule)> { (config.rule == rule).then_some((label, rule)) };
        let mut trait_value = |rule: PlantedRule, domain: usize| {
            let f = |v: usize| rule_label(config, rule, v);
            draw_trait(&mut rng, domain, pick(rule).map(|(l, _)| (l, &f as &dyn Fn(usize) -> usize)))
        };
        let hour_block = trait_value(PlantedRule::Hour, blocks);
        let weekday = trait_value(PlantedRule::Weekday, 7);
        let cluster = trait_value(PlantedRule::Location, config.clusters);

        let n = rng.gen_range(config.sessions.0..=config.sessions.1);
        let inside = config.inside(n);
        let band = config.band_width as usize;
        let hours = spread(&mut rng, n, inside, 24, &(hour_block * band..(hour_block + 1) * band).collect::<Vec<_>>());
        let weekdays = spread(&mut rng, n, inside, 7, &[weekday]);
        let per = config.locations_per_cluster;
        let locs = spread(&mut rng, n, inside, locations.len(), &(cluster * per..(cluster + 1) * per).collect::<Vec<_>>());

        for k in 0..n {
            let day = *days_by_weekday[weekdays[k]].choose(&mut rng).expect("every weekday occurs");
            let t0 = epoch0 + day * 86_400 + hours[k] as i64 * 3600 + rng.gen_range(0..3000);
            let mut t = t0;
            let events = (0..rng.gen_range(config.events.0..=config.events.1))
                .map(|_| {
                    let e = Event {
                        item: rng.gen_range(0..config.items),
                        timestamp: t,
                    };
                    t += rng.gen_range(1..60);
                    e
                })
                .collect();
            sessions.push(SessionRecord {
                session_id: format!("u{u}_s{k}"),
                user: u,
                location: locs[k],
                events,
            });
        }

        let value = match config.rule {
            PlantedRule::Hour => hour_block,
            PlantedRule::Weekday => weekday,
            PlantedRule::Location => cluster,
        };
        let noisy = if rng.gen_bool(config.noise) { 1 - label } else { label };
        let user_id = format!("u{u}");
        users.push(UserRecord {
            user_id: user_id.clone(),
            labels: Labels {
                gender: Some(if noisy == 1 { Gender::Male } else { Gender::Female }),
                income: Some((value % 10) as u8),
                age: Some(20.0 + 2.5 * value as f64),
            },
        });
        planted.push(PlantedUser {
            user_id,
            hour_block: hour_block as u32,
            weekday: weekday as u32,
            cluster,
            rule_label: label,
            label: noisy,
        });
    }

    let dataset = Dataset::from_parts(items, locations, users, sessions)?;
    let ledger = SynthLedger {
        rule: config.rule,
        users: config.users,
        sessions: dataset.sessions.len(),
        events: dataset.num_events(),
        planted,
    };
    Ok((dataset, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{calendar::Calendar, write_dataset, LogPaths};
    use std::collections::BTreeMap;

    /// Applies `rule` to every mode of `values`; ties must agree.
    fn modal_label<K: Ord + Copy>(values: impl Iterator<Item = K>, rule: impl Fn(K) -> usize) -> usize {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0usize) += 1;
        }
        let best = *counts.values().max().unwrap();
        let labels: Vec<usize> = counts.into_iter().filter(|(_, c)| *c == best).map(|(k, _)| rule(k)).collect();
        assert!(labels.iter().all(|&l| l == labels[0]), "tied modes disagree");
        labels[0]
    }

    fn small(rule: PlantedRule) -> SynthConfig {
        SynthConfig {
            users: 200,
            sessions: (10, 14),
            rule,
            seed: 9,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn modal_trait_recovers_every_label() {
        for rule in [PlantedRule::Hour, PlantedRule::Weekday, PlantedRule::Location] {
            let config = small(rule);
            let (dataset, ledger) = generate(&config).unwrap();
            let calendar = Calendar::new(0);
            let mut ones = 0;
            for (u, user) in dataset.users.iter().enumerate() {
                let mine = dataset.sessions.iter().filter(|s| s.user == u);
                let label = match rule {
                    PlantedRule::Hour => {
                        modal_label(mine.map(|s| calendar.hour(s.timestamp()).value()), |h| usize::from(h < 12))
                    }
                    PlantedRule::Weekday => modal_label(mine.map(|s| calendar.weekday(s.timestamp()).value()), |d| {
                        usize::from(d == 0 || d == 6)
                    }),
                    PlantedRule::Location => modal_label(mine.map(|s| s.location), |loc| {
                        let country = dataset.locations[loc].country.clone().unwrap();
                        let cluster: usize = country[1..].parse().unwrap();
                        usize::from(cluster < config.clusters / 2)
                    }),
                };
                assert_eq!(Some(label), user.labels.gender.map(|g| g.class()), "{rule} {}", user.user_id);
                assert_eq!(label, ledger.planted[u].label);
                ones += label;
            }
            assert!((60..140).contains(&ones), "{rule}: {ones} positives");
        }
    }

    #[test]
    fn counts_match_the_ledger() {
        let config = SynthConfig {
            users: 100,
            sessions: (10, 10),
            ..SynthConfig::default()
        };
        let (dataset, ledger) = generate(&config).unwrap();
        assert_eq!(ledger.sessions, 1000);
        assert_eq!(dataset.sessions.len(), 1000);
        assert_eq!(dataset.num_events(), ledger.events);
        let dir = tempfile::tempdir().unwrap();
        let paths = LogPaths::in_dir(dir.path());
        write_dataset(&dataset, &paths).unwrap();
        let rows = std::fs::read_to_string(&paths.sessions).unwrap().lines().count();
        assert_eq!(rows, 1 + ledger.events);
    }

    #[test]
    fn same_seed_same_files() {
        let write = |config: &SynthConfig| {
            let dir = tempfile::tempdir().unwrap();
            let paths = LogPaths::in_dir(dir.path());
            write_dataset(&generate(config).unwrap().0, &paths).unwrap();
            [&paths.items, &paths.locations, &paths.sessions, &paths.users]
                .map(|p| std::fs::read(p).unwrap())
        };
        let config = SynthConfig {
            users: 30,
            titles: true,
            ..SynthConfig::default()
        };
        assert_eq!(write(&config), write(&config));
        assert_ne!(write(&config), write(&SynthConfig { seed: 1, ..config.clone() }));
    }

    #[test]
    fn noise_flips_labels() {
        let config = SynthConfig {
            users: 400,
            noise: 0.25,
            ..small(PlantedRule::Hour)
        };
        let (_, ledger) = generate(&config).unwrap();
        let flipped = ledger.planted.iter().filter(|p| p.label != p.rule_label).count();
        assert!((60..140).contains(&flipped), "{flipped}");
    }

    #[test]
    fn infeasible_and_malformed_configs_are_rejected() {
        let low = SynthConfig {
            concentration: 0.5,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&low), Err(Error::Config(m)) if m.contains("infeasible")));
        assert!(SynthConfig { band_width: 5, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { days: 3, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { noise: 1.5, ..SynthConfig::default() }.validate().is_err());
        let kv = KeyValues::parse("users = 5\nrule = weekday\nstart = 2019-03-01\n").unwrap();
        let c = SynthConfig::from_key_values(&kv).unwrap();
        assert_eq!((c.users, c.rule), (5, PlantedRule::Weekday));
        assert!(SynthConfig::from_key_values(&KeyValues::parse("userz = 5").unwrap()).is_err());
    }
}
