//! The gradient-check suite: every layer in isolation and both composed
//! models on toy users, compared against central finite differences.

use crate::autodiff::recurrent::{init_bilstm, init_gru};
use crate::autodiff::{
    bilstm_encode, grad_check, gru_sequence, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var,
};
use crate::data::{Dataset, Event, Gender, ItemRecord, Labels, LocationRecord, SessionRecord, Task, UserLabel, UserRecord};
use crate::model::fusion::init_head;
use crate::model::{Affine, Activation, Bilinear, InteractiveMaps, Model, ModelConfig, ModelDims, Variant, Vocabularies};
use crate::rng::{substream, Stream};
use crate::Result;

/// Relative-error bound for the suite.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

const MONDAY_2018: i64 = 1_514_764_800;

/// Two users with at most five sessions each, over mixed item and location
/// features (titles, missing categories, partially empty admin levels).
pub fn toy_dataset() -> Dataset {
    let item = |id: &str, category: Option<&str>, title: Option<&str>| ItemRecord {
        item_id: id.into(),
        category: category.map(Into::into),
        title: title.map(|t| t.split_whitespace().map(String::from).collect()),
    };
    let items = vec![
        item("i0", Some("news"), Some("red fox")),
        item("i1", Some("sports"), None),
        item("i2", None, Some("blue")),
        item("i3", None, None),
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
            location_id: "nyc".into(),
            country: Some("US".into()),
            region: Some("New York".into()),
            city: Some("New York".into()),
            lon: Some(-74.0),
            lat: Some(40.7),
        },
        LocationRecord {
            location_id: "fr".into(),
            country: Some("FR".into()),
            region: None,
            city: None,
            lon: None,
            lat: None,
        },
    ];
    let users = vec![
        UserRecord {
            user_id: "u0".into(),
            labels: Labels {
                gender: Some(Gender::Female),
                income: Some(3),
                age: Some(31.0),
            },
        },
        UserRecord {
            user_id: "u1".into(),
            labels: Labels {
                gender: Some(Gender::Male),
                income: Some(7),
                age: Some(45.0),
            },
        },
    ];
    let h = 3600;
    let d = 86_400;
    let session = |id: &str, user, location, events: &[(usize, i64)]| SessionRecord {
        session_id: id.into(),
        user,
        location,
        events: events
            .iter()
            .map(|&(item, t)| Event {
                item,
                timestamp: MONDAY_2018 + t,
            })
            .collect(),
    };
    let sessions = vec![
        session("a", 0, 0, &[(0, 9 * h), (1, 9 * h + 60)]),
        session("b", 0, 1, &[(2, d + 20 * h)]),
        session("c", 0, 0, &[(3, 8 * d + 9 * h), (0, 8 * d + 9 * h + 30)]),
        session("d", 1, 2, &[(1, 2 * d + 7 * h)]),
        session("e", 1, 2, &[(3, 2 * d + 7 * h + 600), (2, 2 * d + 7 * h + 700)]),
        session("f", 1, 1, &[(0, 5 * d + 22 * h)]),
        session("g", 1, 0, &[(1, 6 * d + 3 * h)]),
        session("h", 1, 2, &[(2, 15 * d + 12 * h)]),
    ];
    Dataset::from_parts(items, locations, users, sessions).expect("toy dataset is consistent")
}

/// Dimensions small enough for exhaustive finite differences.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        item: 6,
        location: 8,
        session: 4,
        time_unit: 3,
        location_unit: 3,
        time_pattern: 2,
        spatial_pattern: 2,
        item_channels: Some([2, 2, 2]),
    }
}

fn weighted_square_sum(tape: &mut Tape<'_>, v: Var) -> Result<Var> {
    let sq = tape.mul(v, v)?;
    let n = tape.value(sq).len();
    let w = tape.constant(Tensor::vector((0..n).map(|i| 0.7 + 0.13 * i as f64).collect()));
    tape.dot(sq, w)
}

fn constants(tape: &mut Tape<'_>, n: usize, dim: usize, seed: u64) -> Vec<Var> {
    let mut rng = substream(seed, Stream::GradCheck);
    (0..n).map(|_| tape.constant(Tensor::uniform(&[dim], 1.0, &mut rng))).collect()
}

fn layer_checks(cfg: &GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut rng = substream(cfg.seed, Stream::Init);

    let mut store = ParamStore::new();
    let layer = Affine::init(&mut store, "W_mlp", "b_mlp", 5, 4, &mut rng)?;
    let report = grad_check(
        &store,
        |tape| {
            let x = constants(tape, 1, 5, 1)[0];
            let y = layer.apply(tape, x, Activation::Tanh)?;
            let z = layer.apply(tape, x, Activation::Sigmoid)?;
            let both = tape.concat(&[y, z], 0)?;
            weighted_square_sum(tape, both)
        },
        cfg,
    )?;
    out.push(SuiteEntry { name: "mlp".into(), report });

    let mut store = ParamStore::new();
    let gru = init_gru(&mut store, "gru", 3, 4, &mut rng)?;
    let report = grad_check(
        &store,
        |tape| {
            let xs = constants(tape, 5, 3, 2);
            let h = gru_sequence(tape, &xs, &gru)?;
            weighted_square_sum(tape, h)
        },
        cfg,
    )?;
    out.push(SuiteEntry { name: "gru".into(), report });

    let mut store = ParamStore::new();
    let lstm = init_bilstm(&mut store, "bilstm", 3, 3, &mut rng)?;
    let report = grad_check(
        &store,
        |tape| {
            let xs = constants(tape, 4, 3, 3);
            let h = bilstm_encode(tape, &xs, &lstm)?;
            weighted_square_sum(tape, h)
        },
        cfg,
    )?;
    out.push(SuiteEntry { name: "bilstm".into(), report });

    let mut store = ParamStore::new();
    let maps = InteractiveMaps {
        time_by_location: Bilinear::init(&mut store, "(L,T)", 3, 2, &mut rng)?,
        location_by_time: Bilinear::init(&mut store, "(T,L)", 2, 3, &mut rng)?,
    };
    let time = store.add_uniform("time_units", &[3, 3], 1, &mut rng)?;
    let locs = store.add_uniform("location_units", &[2, 2], 1, &mut rng)?;
    let report = grad_check(
        &store,
        |tape| {
            let t = (0..3).map(|r| tape.param_row(time, r)).collect::<Result<Vec<_>>>()?;
            let l = (0..2).map(|r| tape.param_row(locs, r)).collect::<Result<Vec<_>>>()?;
            let p = crate::model::interactive_pattern(tape, &t, &l, &maps)?;
            weighted_square_sum(tape, p.pattern)
        },
        cfg,
    )?;
    out.push(SuiteEntry {
        name: "bilinear-attention".into(),
        report,
    });

    for task in [Task::Income, Task::Age] {
        let mut store = ParamStore::new();
        let head = init_head(&mut store, task, 4, &mut rng)?;
        let label = if task == Task::Age {
            UserLabel::Numeric(0.4)
        } else {
            UserLabel::Categorical(6)
        };
        let report = grad_check(
            &store,
            |tape| {
                let u = constants(tape, 2, 4, 4);
                let outs = [
                    crate::model::predict(tape, u[0], head)?,
                    crate::model::predict(tape, u[1], head)?,
                ];
                crate::model::loss(tape, &outs, &[label, label])
            },
            cfg,
        )?;
        let name = if task == Task::Age { "squared-error" } else { "cross-entropy" };
        out.push(SuiteEntry { name: name.into(), report });
    }
    Ok(out)
}

/// Gradient check of a whole model on every toy user's loss.
pub fn check_model(model: &Model, dataset: &Dataset, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let features = model.features(dataset)?;
    let graphs = dataset.graphs();
    let task = model.config.task;
    grad_check(
        &model.params,
        |tape| {
            let mut losses = Vec::new();
            for g in &graphs {
                let label = g.label(task).expect("toy users are fully labeled");
                losses.push(model.user_loss(tape, g, &features, label)?.0);
            }
            tape.mean(&losses)
        },
        cfg,
    )
}

fn model_checks(cfg: &GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let dataset = toy_dataset();
    let vocabs = Vocabularies::from_dataset(&dataset);
    let mut out = Vec::new();
    for (variant, task) in [
        (Variant::Full, Task::Gender),
        (Variant::Full, Task::Age),
        (Variant::Attn, Task::Gender),
        (Variant::Attn, Task::Income),
    ] {
        let config = ModelConfig::new(task, variant, toy_dims());
        let model = Model::new(config, vocabs.clone(), cfg.seed + 17)?;
        // Raw ages put the loss near 1e3, where a 1e-6 step loses too many
        // digits to rounding.
        let step = if task == Task::Age { cfg.eps.max(1e-5) } else { cfg.eps };
        let report = check_model(&model, &dataset, &GradCheckConfig { eps: step, ..cfg.clone() })?;
        out.push(SuiteEntry {
            name: format!("model-{variant}-{task}"),
            report,
        });
    }
    Ok(out)
}

/// Runs the whole suite.
pub fn gradient_suite(cfg: &GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut entries = layer_checks(cfg)?;
    entries.extend(model_checks(cfg)?);
    Ok(entries)
}
