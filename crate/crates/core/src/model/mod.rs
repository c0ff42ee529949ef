//! The calendar-structured user model: embedding layers, the aggregation
//! hierarchy, pattern fusion and the prediction head.

pub mod aggregate;
pub mod config;
pub mod embed;
pub mod fusion;
pub mod vocab;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::Serialize;

pub use aggregate::{
    aggregate_location_unit, aggregate_session, aggregate_spatial_pattern, aggregate_temporal_pattern,
    aggregate_time_unit, bucket_sessions, canonical_units, Affine, Site,
};
pub use config::{AbsentUnits, Activation, ModelConfig, ModelDims, PatternMask, Variant};
pub use embed::{embed_item, embed_location, ItemFeatures, LocationFeatures, Vocabularies};
pub use fusion::{
    argmax, attend, bilinear_score, fuse_concat, fuse_interactive, interactive_pattern, loss, mean_query, predict,
    user_loss, Bilinear, InteractiveMaps,
};
pub use vocab::Vocabulary;

use crate::autodiff::recurrent::init_gru;
use crate::autodiff::{gru_sequence, softmax, GruIds, ParamId, ParamStore, Tape, Var};
use crate::data::calendar::{Calendar, TimeUnit, UnitKind};
use crate::data::{BehaviorGraph, Dataset, UserLabel};
use crate::rng::{substream, Stream};
use crate::{Error, Result};
use embed::{init_item_embedder, init_location_embedder, ItemEmbedderIds, LocationEmbedderIds};

/// Vocabulary-encoded features of every item and location in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub items: Vec<ItemFeatures>,
    pub locations: Vec<LocationFeatures>,
    pub location_ids: Vec<String>,
}

impl Features {
    pub fn encode(vocabs: &Vocabularies, dataset: &Dataset) -> Result<Self> {
        Ok(Features {
            items: dataset.items.iter().map(|i| vocabs.item_features(i)).collect(),
            locations: dataset
                .locations
                .iter()
                .map(|l| vocabs.location_features(l))
                .collect::<Result<_>>()?,
            location_ids: dataset.locations.iter().map(|l| l.location_id.clone()).collect(),
        })
    }
}

/// Attention path of one calendar kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AttentionIds {
    projection: Affine,
    maps: InteractiveMaps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ModelIds {
    item: ItemEmbedderIds,
    location: Option<LocationEmbedderIds>,
    session: Site,
    /// Indexed by [`UnitKind::ALL`] order.
    time_units: [Option<Site>; 3],
    time_patterns: [Option<Site>; 3],
    location_unit: Option<Site>,
    spatial: Option<Site>,
    /// Location-unit projection shared by the three attention paths.
    location_projection: Option<Affine>,
    attention: [Option<AttentionIds>; 3],
    sessions_only: Option<GruIds>,
    head: ParamId,
}

fn kind_index(kind: UnitKind) -> usize {
    UnitKind::ALL.iter().position(|&k| k == kind).expect("kind in ALL")
}

fn kind_enabled(mask: PatternMask, kind: UnitKind) -> bool {
    match kind {
        UnitKind::Hour => mask.hour,
        UnitKind::Week => mask.week,
        UnitKind::Weekday => mask.weekday,
    }
}

/// Attention weights of one interactive pattern, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindTrace {
    pub kind: UnitKind,
    pub time_units: Vec<TimeUnit>,
    pub time_weights: Vec<f64>,
    /// Location ids in first-visit order.
    pub locations: Vec<String>,
    pub location_weights: Vec<f64>,
    pub location_query: Vec<f64>,
    pub time_query: Vec<f64>,
}

/// Per-kind attention weights and queries of one user's forward pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionTrace {
    pub kinds: Vec<KindTrace>,
}

impl AttentionTrace {
    /// `kind,direction,unit,weight` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,direction,unit,weight\n");
        for k in &self.kinds {
            for (u, w) in k.time_units.iter().zip(&k.time_weights) {
                out.push_str(&format!("{},time,{},{}\n", k.kind.name(), u.value(), w));
            }
            for (l, w) in k.locations.iter().zip(&k.location_weights) {
                out.push_str(&format!("{},location,{},{}\n", k.kind.name(), l, w));
            }
        }
        out
    }
}

/// Handles of the pattern vectors a variant computes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatternSet {
    pub hour: Option<Var>,
    pub week: Option<Var>,
    pub weekday: Option<Var>,
    pub spatial: Option<Var>,
}

impl PatternSet {
    pub fn present(&self) -> Vec<Var> {
        [self.hour, self.week, self.weekday, self.spatial].into_iter().flatten().collect()
    }
}

/// Result of one user's forward pass.
#[derive(Debug, Clone)]
pub struct UserForward {
    pub embedding: Var,
    /// Logits or the regression output.
    pub output: Var,
    pub patterns: PatternSet,
    pub trace: Option<AttentionTrace>,
}

/// What a model predicts for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    /// Class probabilities (softmax of the logits) and the argmax class.
    Class { class: usize, positive_score: f64 },
    Value(f64),
}

/// Parameters, vocabularies and wiring of one model variant.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocabs: Vocabularies,
    ids: ModelIds,
}

impl Model {
    /// Allocates and initializes every parameter the variant uses.
    pub fn new(config: ModelConfig, vocabs: Vocabularies, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Stream::Init);
        let mut params = ParamStore::new();
        let ids = Self::allocate(&config, &vocabs, &mut params, &mut rng)?;
        Ok(Model {
            config,
            params,
            vocabs,
            ids,
        })
    }

    /// Rebuilds the wiring for `config` and adopts stored parameter values.
    pub fn from_params(config: ModelConfig, vocabs: Vocabularies, params: &ParamStore) -> Result<Self> {
        let mut model = Model::new(config, vocabs, 0)?;
        model.params.copy_from(params)?;
        Ok(model)
    }

    fn allocate<R: Rng + ?Sized>(
        config: &ModelConfig,
        vocabs: &Vocabularies,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<ModelIds> {
        let d = config.dims;
        d.validate()?;
        let mask = config.variant.patterns();
        let attn = config.variant == Variant::Attn;
        let item = init_item_embedder(store, vocabs, d.item_channel_sizes(), rng)?;
        let session = Site::init(store, "S", d.item, d.session, rng)?;

        let mut time_units = [None; 3];
        let mut time_patterns = [None; 3];
        let mut attention = [None; 3];
        for kind in UnitKind::ALL {
            if !kind_enabled(mask, kind) {
                continue;
            }
            let k = kind_index(kind);
            let sym = kind.symbol();
            time_units[k] = Some(Site::init(store, sym, d.session, d.time_unit, rng)?);
            if !attn {
                time_patterns[k] = Some(Site::init(store, &format!("T_{sym}"), d.time_unit, d.time_pattern, rng)?);
            }
        }

        let (location, location_unit, spatial, location_projection) = if mask.spatial {
            let location = init_location_embedder(store, vocabs, d.location_level_sizes(), rng)?;
            let unit = Site::init(store, "SxL", d.session + d.location, d.location_unit, rng)?;
            if attn {
                let proj = Affine::init(store, "W_L", "b_L", d.location_unit, d.spatial_pattern, rng)?;
                (Some(location), Some(unit), None, Some(proj))
            } else {
                let spatial = Site::init(store, "L", d.location_unit, d.spatial_pattern, rng)?;
                (Some(location), Some(unit), Some(spatial), None)
            }
        } else {
            (None, None, None, None)
        };

        if attn {
            for kind in UnitKind::ALL {
                let sym = kind.symbol();
                let projection = Affine::init(
                    store,
                    &format!("W_T_{sym}"),
                    &format!("b_T_{sym}"),
                    d.time_unit,
                    d.time_pattern,
                    rng,
                )?;
                let maps = InteractiveMaps {
                    time_by_location: Bilinear::init(
                        store,
                        &format!("(L,T_{sym})"),
                        d.time_pattern,
                        d.spatial_pattern,
                        rng,
                    )?,
                    location_by_time: Bilinear::init(
                        store,
                        &format!("(T_{sym},L)"),
                        d.spatial_pattern,
                        d.time_pattern,
                        rng,
                    )?,
                };
                attention[kind_index(kind)] = Some(AttentionIds { projection, maps });
            }
        }

        let sessions_only = if config.variant == Variant::SessionsOnly {
            Some(init_gru(store, "gru_U", d.session, d.session, rng)?)
        } else {
            None
        };
        let head = fusion::init_head(store, config.task, config.user_width(), rng)?;
        Ok(ModelIds {
            item,
            location,
            session,
            time_units,
            time_patterns,
            location_unit,
            spatial,
            location_projection,
            attention,
            sessions_only,
            head,
        })
    }

    pub fn features(&self, dataset: &Dataset) -> Result<Features> {
        Features::encode(&self.vocabs, dataset)
    }

    /// Runs the full forward pass for one user on `tape`. Parameters are read
    /// only through the tape, so the same wiring works on perturbed copies.
    pub fn forward(&self, tape: &mut Tape<'_>, graph: &BehaviorGraph, features: &Features) -> Result<UserForward> {
        if graph.sessions.is_empty() {
            return Err(Error::Empty("forward: user without sessions"));
        }
        let act = self.config.activation;
        let calendar = Calendar::new(self.config.tz_offset_minutes);
        let ids = &self.ids;

        let mut item_cache: HashMap<usize, Var> = HashMap::new();
        let mut sessions = Vec::with_capacity(graph.sessions.len());
        for s in &graph.sessions {
            let mut items = Vec::with_capacity(s.events.len());
            for e in &s.events {
                let v = match item_cache.get(&e.item) {
                    Some(&v) => v,
                    None => {
                        let f = features.items.get(e.item).ok_or_else(|| {
                            Error::OutOfRange(format!("item index {} outside feature table", e.item))
                        })?;
                        let v = embed_item(tape, f, &ids.item)?;
                        item_cache.insert(e.item, v);
                        v
                    }
                };
                items.push(v);
            }
            sessions.push(aggregate_session(tape, &items, &ids.session, act)?);
        }

        if let Some(gru) = &ids.sessions_only {
            let embedding = gru_sequence(tape, &sessions, gru)?;
            let output = predict(tape, embedding, ids.head)?;
            return Ok(UserForward {
                embedding,
                output,
                patterns: PatternSet::default(),
                trace: None,
            });
        }

        let timestamps: Vec<i64> = graph.sessions.iter().map(|s| s.timestamp).collect();
        let mut time_units: [BTreeMap<TimeUnit, Var>; 3] = Default::default();
        for kind in UnitKind::ALL {
            let k = kind_index(kind);
            let Some(site) = &ids.time_units[k] else { continue };
            for (unit, members) in bucket_sessions(&timestamps, &calendar, kind) {
                let bucket: Vec<Var> = members.iter().map(|&i| sessions[i]).collect();
                time_units[k].insert(unit, aggregate_time_unit(tape, &bucket, site, act)?);
            }
        }

        let mut location_units = Vec::new();
        if let (Some(embedder), Some(site)) = (&ids.location, &ids.location_unit) {
            for (node, &loc) in graph.locations.iter().enumerate() {
                let f = features
                    .locations
                    .get(loc)
                    .ok_or_else(|| Error::OutOfRange(format!("location index {loc} outside feature table")))?;
                let l = embed_location(tape, f, embedder)?;
                let members: Vec<Var> = graph.sessions_at(node).map(|i| sessions[i]).collect();
                location_units.push(aggregate_location_unit(tape, &members, l, site, act)?);
            }
        }

        if self.config.variant == Variant::Attn {
            return self.fuse_attention(tape, graph, features, &time_units, &location_units);
        }

        let mut patterns = PatternSet::default();
        for kind in UnitKind::ALL {
            let k = kind_index(kind);
            let Some(site) = &ids.time_patterns[k] else { continue };
            let units = canonical_units(kind, &time_units[k], self.config.absent_units);
            let p = aggregate_temporal_pattern(tape, &units, site, act)?;
            match kind {
                UnitKind::Hour => patterns.hour = Some(p),
                UnitKind::Week => patterns.week = Some(p),
                UnitKind::Weekday => patterns.weekday = Some(p),
            }
        }
        if let Some(site) = &ids.spatial {
            patterns.spatial = Some(aggregate_spatial_pattern(tape, &location_units, site, act)?);
        }
        let embedding = fuse_concat(tape, &patterns.present())?;
        let output = predict(tape, embedding, ids.head)?;
        Ok(UserForward {
            embedding,
            output,
            patterns,
            trace: None,
        })
    }

    fn fuse_attention(
        &self,
        tape: &mut Tape<'_>,
        graph: &BehaviorGraph,
        features: &Features,
        time_units: &[BTreeMap<TimeUnit, Var>; 3],
        location_units: &[Var],
    ) -> Result<UserForward> {
        let act = self.config.activation;
        let loc_proj = self.ids.location_projection.as_ref().expect("attention wires the location path");
        let locations = location_units
            .iter()
            .map(|&e| loc_proj.apply(tape, e, act))
            .collect::<Result<Vec<_>>>()?;
        let mut blocks = Vec::with_capacity(3);
        let mut kinds = Vec::with_capacity(3);
        for kind in UnitKind::ALL {
            let k = kind_index(kind);
            let attn = self.ids.attention[k].as_ref().expect("attention wires every kind");
            let units: Vec<TimeUnit> = time_units[k].keys().copied().collect();
            let projected = time_units[k]
                .values()
                .map(|&e| attn.projection.apply(tape, e, act))
                .collect::<Result<Vec<_>>>()?;
            let out = interactive_pattern(tape, &projected, &locations, &attn.maps)?;
            blocks.push(out.pattern);
            kinds.push(KindTrace {
                kind,
                time_units: units,
                time_weights: tape.value(out.time_weights).data().to_vec(),
                locations: graph.locations.iter().map(|&l| features.location_ids[l].clone()).collect(),
                location_weights: tape.value(out.location_weights).data().to_vec(),
                location_query: tape.value(out.location_query).data().to_vec(),
                time_query: tape.value(out.time_query).data().to_vec(),
            });
        }
        let embedding = fuse_interactive(tape, &blocks)?;
        let output = predict(tape, embedding, self.ids.head)?;
        Ok(UserForward {
            embedding,
            output,
            patterns: PatternSet::default(),
            trace: Some(AttentionTrace { kinds }),
        })
    }

    /// Forward pass plus this user's loss; returns (loss, forward).
    pub fn user_loss(
        &self,
        tape: &mut Tape<'_>,
        graph: &BehaviorGraph,
        features: &Features,
        label: UserLabel,
    ) -> Result<(Var, UserForward)> {
        let fwd = self.forward(tape, graph, features)?;
        let loss = user_loss(tape, fwd.output, label)?;
        Ok((loss, fwd))
    }

    /// Inference on the current parameters.
    pub fn predict_user(&self, graph: &BehaviorGraph, features: &Features) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, graph, features)?;
        Ok(self.output_prediction(tape.value(fwd.output).data()))
    }

    /// Maps head outputs (logits or the regression value) to a prediction.
    pub fn output_prediction(&self, out: &[f64]) -> Prediction {
        if self.config.task.is_classification() {
            let probs = softmax(out);
            Prediction::Class {
                class: argmax(out),
                positive_score: probs.get(1).copied().unwrap_or(0.0),
            }
        } else {
            Prediction::Value(out[0])
        }
    }

    pub fn attention_trace(&self, graph: &BehaviorGraph, features: &Features) -> Result<Option<AttentionTrace>> {
        let mut tape = Tape::new(&self.params);
        Ok(self.forward(&mut tape, graph, features)?.trace)
    }

    pub fn head(&self) -> ParamId {
        self.ids.head
    }
}
