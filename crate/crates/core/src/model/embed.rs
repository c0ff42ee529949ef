//! Item and location embedding layers.

use std::path::Path;

use rand::Rng;

use super::vocab::Vocabulary;
use crate::autodiff::recurrent::init_bilstm;
use crate::autodiff::{bilstm_encode, BiLstmIds, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Dataset, ItemRecord, LocationRecord};
use crate::Result;

/// A categorical feature: a learned lookup row followed by a dense tanh layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelIds {
    pub table: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
}

fn init_channel<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    rows: usize,
    width: usize,
    rng: &mut R,
) -> Result<ChannelIds> {
    Ok(ChannelIds {
        table: store.add_uniform(format!("{prefix}.table"), &[rows, width], 1, rng)?,
        weight: store.add_uniform(format!("{prefix}.W"), &[width, width], width, rng)?,
        bias: store.add_uniform(format!("{prefix}.b"), &[width], width, rng)?,
    })
}

fn channel(tape: &mut Tape<'_>, ids: &ChannelIds, row: usize) -> Result<Var> {
    let x = tape.param_row(ids.table, row)?;
    let a = tape.affine(ids.weight, x, ids.bias)?;
    Ok(tape.tanh(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemEmbedderIds {
    pub id: ChannelIds,
    pub category: ChannelIds,
    pub words: ParamId,
    pub title: BiLstmIds,
    /// Stand-in for the title channel when an item has no title.
    pub absent_title: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocationEmbedderIds {
    /// Country, region and city channels.
    pub levels: [ChannelIds; 3],
}

/// Vocabulary indices of one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFeatures {
    pub id: usize,
    pub category: usize,
    pub title: Option<Vec<usize>>,
}

/// Vocabulary indices and normalized coordinates of one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationFeatures {
    pub levels: [usize; 3],
    pub coordinates: (f64, f64),
}

/// Every vocabulary the embedders read.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabularies {
    pub items: Vocabulary,
    pub categories: Vocabulary,
    pub words: Vocabulary,
    pub countries: Vocabulary,
    pub regions: Vocabulary,
    pub cities: Vocabulary,
}

const VOCAB_FILES: [&str; 6] = [
    "vocab_items.tsv",
    "vocab_categories.tsv",
    "vocab_words.tsv",
    "vocab_countries.tsv",
    "vocab_regions.tsv",
    "vocab_cities.tsv",
];

impl Vocabularies {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let items = &dataset.items;
        let locs = &dataset.locations;
        Vocabularies {
            items: Vocabulary::from_tokens(items.iter().map(|i| i.item_id.as_str())),
            categories: Vocabulary::from_tokens(items.iter().filter_map(|i| i.category.as_deref())),
            words: Vocabulary::from_tokens(items.iter().flat_map(|i| i.title.iter().flatten().map(String::as_str))),
            countries: Vocabulary::from_tokens(locs.iter().filter_map(|l| l.country.as_deref())),
            regions: Vocabulary::from_tokens(locs.iter().filter_map(|l| l.region.as_deref())),
            cities: Vocabulary::from_tokens(locs.iter().filter_map(|l| l.city.as_deref())),
        }
    }

    fn all(&self) -> [&Vocabulary; 6] {
        [
            &self.items,
            &self.categories,
            &self.words,
            &self.countries,
            &self.regions,
            &self.cities,
        ]
    }

    pub fn item_features(&self, item: &ItemRecord) -> ItemFeatures {
        ItemFeatures {
            id: self.items.lookup(&item.item_id),
            category: self.categories.lookup_optional(item.category.as_deref()),
            title: item
                .title
                .as_ref()
                .filter(|t| !t.is_empty())
                .map(|t| t.iter().map(|w| self.words.lookup(w)).collect()),
        }
    }

    pub fn location_features(&self, loc: &LocationRecord) -> Result<LocationFeatures> {
        Ok(LocationFeatures {
            levels: [
                self.countries.lookup_optional(loc.country.as_deref()),
                self.regions.lookup_optional(loc.region.as_deref()),
                self.cities.lookup_optional(loc.city.as_deref()),
            ],
            coordinates: loc.normalized_coordinates()?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (vocab, file) in self.all().into_iter().zip(VOCAB_FILES) {
            vocab.save(&dir.join(file))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut loaded = VOCAB_FILES
            .iter()
            .map(|f| Vocabulary::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || loaded.next().expect("six vocabularies");
        Ok(Vocabularies {
            items: next(),
            categories: next(),
            words: next(),
            countries: next(),
            regions: next(),
            cities: next(),
        })
    }
}

/// Allocates the item embedder; `channels` are the (id, category, title) widths.
pub fn init_item_embedder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    vocabs: &Vocabularies,
    channels: [usize; 3],
    rng: &mut R,
) -> Result<ItemEmbedderIds> {
    let [id, category, title] = channels;
    let hidden = title / 2;
    Ok(ItemEmbedderIds {
        id: init_channel(store, "item.id", vocabs.items.len(), id, rng)?,
        category: init_channel(store, "item.category", vocabs.categories.len(), category, rng)?,
        words: store.add_uniform("item.title.words", &[vocabs.words.len(), hidden], 1, rng)?,
        title: init_bilstm(store, "item.title", hidden, hidden, rng)?,
        absent_title: store.add_uniform("item.title.absent", &[title], 1, rng)?,
    })
}

/// Allocates the location embedder; `levels` are the country/region/city widths.
pub fn init_location_embedder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    vocabs: &Vocabularies,
    levels: [usize; 3],
    rng: &mut R,
) -> Result<LocationEmbedderIds> {
    Ok(LocationEmbedderIds {
        levels: [
            init_channel(store, "location.country", vocabs.countries.len(), levels[0], rng)?,
            init_channel(store, "location.region", vocabs.regions.len(), levels[1], rng)?,
            init_channel(store, "location.city", vocabs.cities.len(), levels[2], rng)?,
        ],
    })
}

/// `id ⊕ category ⊕ title` channel embeddings of one item.
pub fn embed_item(tape: &mut Tape<'_>, item: &ItemFeatures, ids: &ItemEmbedderIds) -> Result<Var> {
    let id = channel(tape, &ids.id, item.id)?;
    let category = channel(tape, &ids.category, item.category)?;
    let title = match &item.title {
        Some(words) => {
            let tokens = words
                .iter()
                .map(|&w| tape.param_row(ids.words, w))
                .collect::<Result<Vec<_>>>()?;
            bilstm_encode(tape, &tokens, &ids.title)?
        }
        None => tape.param(ids.absent_title),
    };
    tape.concat(&[id, category, title], 0)
}

/// `country ⊕ region ⊕ city ⊕ (x, y)` of one location.
pub fn embed_location(tape: &mut Tape<'_>, loc: &LocationFeatures, ids: &LocationEmbedderIds) -> Result<Var> {
    let mut parts = Vec::with_capacity(4);
    for (level, row) in ids.levels.iter().zip(loc.levels) {
        parts.push(channel(tape, level, row)?);
    }
    let (x, y) = loc.coordinates;
    parts.push(tape.constant(Tensor::vector(vec![x, y])));
    tape.concat(&parts, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::model::vocab::EMPTY;
    use crate::rng::{substream, Stream};

    fn toy() -> (Vocabularies, Vec<ItemRecord>, Vec<LocationRecord>) {
        let items = vec![
            ItemRecord {
                item_id: "a".into(),
                category: Some("news".into()),
                title: Some(vec!["big".into(), "game".into(), "today".into()]),
            },
            ItemRecord {
                item_id: "b".into(),
                category: None,
                title: None,
            },
        ];
        let locations = vec![
            LocationRecord {
                location_id: "oak".into(),
                country: Some("US".into()),
                region: Some("California".into()),
                city: Some("Oakland".into()),
                lon: Some(-122.1359),
                lat: Some(37.7591),
            },
            LocationRecord {
                location_id: "nowhere".into(),
                country: None,
                region: None,
                city: None,
                lon: Some(0.0),
                lat: Some(0.0),
            },
        ];
        let vocabs = Vocabularies {
            items: Vocabulary::from_tokens(["a", "b"]),
            categories: Vocabulary::from_tokens(["news"]),
            words: Vocabulary::from_tokens(["big", "game", "today"]),
            countries: Vocabulary::from_tokens(["US"]),
            regions: Vocabulary::from_tokens(["California"]),
            cities: Vocabulary::from_tokens(["Oakland"]),
        };
        (vocabs, items, locations)
    }

    #[test]
    fn item_width_matches_channel_sum() {
        let (vocabs, items, _) = toy();
        let mut store = ParamStore::new();
        let mut rng = substream(1, Stream::Init);
        let ids = init_item_embedder(&mut store, &vocabs, [128, 64, 64], &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        for item in &items {
            let v = embed_item(&mut tape, &vocabs.item_features(item), &ids).unwrap();
            assert_eq!(tape.value(v).len(), 256);
        }
        let a = embed_item(&mut tape, &vocabs.item_features(&items[0]), &ids).unwrap();
        let b = embed_item(&mut tape, &vocabs.item_features(&items[0]), &ids).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn title_order_matters() {
        let (vocabs, items, _) = toy();
        let mut store = ParamStore::new();
        let mut rng = substream(2, Stream::Init);
        let ids = init_item_embedder(&mut store, &vocabs, [4, 4, 6], &mut rng).unwrap();
        let mut reversed = items[0].clone();
        reversed.title.as_mut().unwrap().reverse();
        let mut tape = Tape::new(&store);
        let a = embed_item(&mut tape, &vocabs.item_features(&items[0]), &ids).unwrap();
        let b = embed_item(&mut tape, &vocabs.item_features(&reversed), &ids).unwrap();
        assert_ne!(tape.value(a), tape.value(b));
    }

    #[test]
    fn oakland_location_embedding() {
        let (vocabs, _, locations) = toy();
        let mut store = ParamStore::new();
        let mut rng = substream(3, Stream::Init);
        let ids = init_location_embedder(&mut store, &vocabs, [86, 84, 84], &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let feats = vocabs.location_features(&locations[0]).unwrap();
        let l = embed_location(&mut tape, &feats, &ids).unwrap();
        let v = tape.value(l);
        assert_eq!(v.len(), 256);
        assert!(v.all_finite());
        assert!((v.data()[254] - 0.160_733_611_111_111_1).abs() < 1e-12);
    }

    #[test]
    fn empty_admin_levels_use_empty_rows() {
        let (vocabs, _, locations) = toy();
        let mut store = ParamStore::new();
        let mut rng = substream(4, Stream::Init);
        let ids = init_location_embedder(&mut store, &vocabs, [3, 2, 2], &mut rng).unwrap();
        let feats = vocabs.location_features(&locations[1]).unwrap();
        assert_eq!(feats.levels, [EMPTY; 3]);
        let mut tape = Tape::new(&store);
        let l = embed_location(&mut tape, &feats, &ids).unwrap();
        let got = tape.value(l).data().to_vec();

        // Direct evaluation: tanh(W · table[EMPTY] + b) per level, then (0.5, 0.5).
        let mut expected = Vec::new();
        for level in &ids.levels {
            let table = store.get(level.table);
            let w = store.get(level.weight);
            let b = store.get(level.bias);
            let x = table.row(EMPTY);
            for i in 0..w.rows() {
                let dot: f64 = w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                expected.push((dot + b.data()[i]).tanh());
            }
        }
        expected.extend([0.5, 0.5]);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_through_all_channels() {
        let (vocabs, items, locations) = toy();
        let mut store = ParamStore::new();
        let mut rng = substream(5, Stream::Init);
        let item_ids = init_item_embedder(&mut store, &vocabs, [3, 3, 4], &mut rng).unwrap();
        let loc_ids = init_location_embedder(&mut store, &vocabs, [2, 2, 2], &mut rng).unwrap();
        let item_feats: Vec<_> = items.iter().map(|i| vocabs.item_features(i)).collect();
        let loc_feats = vocabs.location_features(&locations[0]).unwrap();
        let report = grad_check(
            &store,
            |tape| {
                let mut parts = Vec::new();
                for f in &item_feats {
                    parts.push(embed_item(tape, f, &item_ids)?);
                }
                parts.push(embed_location(tape, &loc_feats, &loc_ids)?);
                let all = tape.concat(&parts, 0)?;
                let sq = tape.mul(all, all)?;
                let n = tape.value(sq).len();
                let w = tape.constant(Tensor::vector((0..n).map(|i| 0.3 + 0.1 * i as f64).collect()));
                tape.dot(sq, w)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
