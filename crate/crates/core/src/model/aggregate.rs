//! Session, calendar-unit, location-unit and pattern aggregation.
//!
//! Every aggregation site has the same shape: a GRU over an ordered input
//! sequence whose last hidden state goes through an affine map and the
//! configured nonlinearity.

use std::collections::BTreeMap;

use rand::Rng;

use super::config::{AbsentUnits, Activation};
use crate::autodiff::recurrent::init_gru;
use crate::autodiff::{gru_sequence_masked, GruIds, ParamId, ParamStore, Tape, Var};
use crate::data::calendar::{Calendar, TimeUnit, UnitKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        weight: &str,
        bias: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Affine {
            weight: store.add_uniform(weight, &[output, input], input, rng)?,
            bias: store.add_uniform(bias, &[output], input, rng)?,
        })
    }

    /// `act(W · x + b)`.
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
        let a = tape.affine(self.weight, x, self.bias)?;
        Ok(activate(tape, a, act))
    }
}

pub fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// A GRU whose hidden width equals its input width, followed by an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub gru: GruIds,
    pub out: Affine,
}

impl Site {
    /// Parameters are named `gru_{symbol}.*`, `W_{symbol}` and `b_{symbol}`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        symbol: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Site {
            gru: init_gru(store, &format!("gru_{symbol}"), input, input, rng)?,
            out: Affine::init(store, &format!("W_{symbol}"), &format!("b_{symbol}"), input, output, rng)?,
        })
    }

    /// `act(W · GRU(inputs) + b)`; `None` inputs are zero steps.
    pub fn apply(&self, tape: &mut Tape<'_>, inputs: &[Option<Var>], act: Activation) -> Result<Var> {
        let h = gru_sequence_masked(tape, inputs, &self.gru)?;
        self.out.apply(tape, h, act)
    }

    fn apply_all(&self, tape: &mut Tape<'_>, inputs: &[Var], act: Activation) -> Result<Var> {
        let masked: Vec<Option<Var>> = inputs.iter().copied().map(Some).collect();
        self.apply(tape, &masked, act)
    }
}

/// Session embedding from its item embeddings in interaction order.
pub fn aggregate_session(tape: &mut Tape<'_>, items: &[Var], site: &Site, act: Activation) -> Result<Var> {
    site.apply_all(tape, items, act)
}

/// Groups session indices by the calendar unit of their timestamps.
/// Within a bucket, sessions are ordered by timestamp (ties by index).
pub fn bucket_sessions(timestamps: &[i64], calendar: &Calendar, kind: UnitKind) -> BTreeMap<TimeUnit, Vec<usize>> {
    let mut order: Vec<usize> = (0..timestamps.len()).collect();
    order.sort_by_key(|&i| (timestamps[i], i));
    let mut buckets: BTreeMap<TimeUnit, Vec<usize>> = BTreeMap::new();
    for i in order {
        buckets.entry(calendar.unit(kind, timestamps[i])).or_default().push(i);
    }
    buckets
}

/// Unit embedding from the session embeddings of one bucket.
pub fn aggregate_time_unit(tape: &mut Tape<'_>, bucket: &[Var], site: &Site, act: Activation) -> Result<Var> {
    site.apply_all(tape, bucket, act)
}

/// Lays out present units along the canonical domain of `kind`.
pub fn canonical_units(kind: UnitKind, units: &BTreeMap<TimeUnit, Var>, policy: AbsentUnits) -> Vec<Option<Var>> {
    match policy {
        AbsentUnits::ZeroFill => kind
            .domain()
            .map(|v| {
                let unit = match kind {
                    UnitKind::Hour => TimeUnit::Hour(v),
                    UnitKind::Week => TimeUnit::WeekOfYear(v),
                    UnitKind::Weekday => TimeUnit::Weekday(v),
                };
                units.get(&unit).copied()
            })
            .collect(),
        AbsentUnits::Skip => units
            .iter()
            .filter(|(u, _)| u.kind() == kind)
            .map(|(_, &v)| Some(v))
            .collect(),
    }
}

/// Temporal pattern from unit embeddings in canonical order; `None` marks
/// an absent unit.
pub fn aggregate_temporal_pattern(tape: &mut Tape<'_>, units: &[Option<Var>], site: &Site, act: Activation) -> Result<Var> {
    if units.iter().all(Option::is_none) {
        return Err(Error::EmptyAggregation("temporal pattern"));
    }
    site.apply(tape, units, act)
}

/// Location unit embedding from `s_i ⊕ l` over the sessions at one location.
pub fn aggregate_location_unit(
    tape: &mut Tape<'_>,
    sessions: &[Var],
    location: Var,
    site: &Site,
    act: Activation,
) -> Result<Var> {
    if sessions.is_empty() {
        return Err(Error::EmptyAggregation("location unit"));
    }
    let joined = sessions
        .iter()
        .map(|&s| tape.concat(&[s, location], 0))
        .collect::<Result<Vec<_>>>()?;
    site.apply_all(tape, &joined, act)
}

/// Spatial pattern from location unit embeddings in first-visit order.
pub fn aggregate_spatial_pattern(tape: &mut Tape<'_>, units: &[Var], site: &Site, act: Activation) -> Result<Var> {
    site.apply_all(tape, units, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig, Tensor};
    use crate::rng::{substream, Stream};

    fn random_inputs(tape: &mut Tape<'_>, n: usize, dim: usize, seed: u64) -> Vec<Var> {
        let mut rng = substream(seed, Stream::GradCheck);
        (0..n)
            .map(|_| tape.constant(Tensor::uniform(&[dim], 1.0, &mut rng)))
            .collect()
    }

    fn zero_gru(store: &mut ParamStore, site: &Site) {
        for gate in [site.gru.update, site.gru.reset, site.gru.candidate] {
            for id in [gate.input, gate.recurrent, gate.bias] {
                store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn sum_of_squares(tape: &mut Tape<'_>, v: Var) -> Result<Var> {
        let sq = tape.mul(v, v)?;
        let n = tape.value(sq).len();
        let w = tape.constant(Tensor::vector((0..n).map(|i| 1.0 + 0.05 * i as f64).collect()));
        tape.dot(sq, w)
    }

    #[test]
    fn zero_recurrence_gives_relu_of_bias() {
        let mut store = ParamStore::new();
        let mut rng = substream(1, Stream::Init);
        let site = Site::init(&mut store, "S", 4, 3, &mut rng).unwrap();
        zero_gru(&mut store, &site);
        let tape_store = store.clone();
        let mut tape = Tape::new(&tape_store);
        let items = random_inputs(&mut tape, 1, 4, 9);
        let s = aggregate_session(&mut tape, &items, &site, Activation::Relu).unwrap();
        let bias = store.get(site.out.bias).data();
        let expected: Vec<f64> = bias.iter().map(|b| b.max(0.0)).collect();
        assert_eq!(tape.value(s).data(), &expected[..]);

        let units = vec![None, Some(items[0]), None];
        let p = aggregate_temporal_pattern(&mut tape, &units, &site, Activation::Relu).unwrap();
        assert_eq!(tape.value(p).data(), &expected[..]);
    }

    #[test]
    fn session_order_matters() {
        let mut store = ParamStore::new();
        let mut rng = substream(2, Stream::Init);
        let site = Site::init(&mut store, "S", 5, 5, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let items = random_inputs(&mut tape, 2, 5, 3);
        let a = aggregate_session(&mut tape, &items, &site, Activation::Tanh).unwrap();
        let b = aggregate_session(&mut tape, &[items[1], items[0]], &site, Activation::Tanh).unwrap();
        assert_ne!(tape.value(a), tape.value(b));
    }

    #[test]
    fn all_absent_units_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = substream(2, Stream::Init);
        let site = Site::init(&mut store, "T_h", 3, 2, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        assert!(matches!(
            aggregate_temporal_pattern(&mut tape, &[None, None], &site, Activation::Relu),
            Err(Error::EmptyAggregation(_))
        ));
        let loc = tape.constant(Tensor::zeros(&[1]));
        assert!(aggregate_location_unit(&mut tape, &[], loc, &site, Activation::Relu).is_err());
    }

    #[test]
    fn buckets_by_hour() {
        let cal = Calendar::default();
        let day = 1_514_764_800; // 2018-01-01T00:00Z
        let t = [day + 9 * 3600 + 50 * 60, day + 9 * 3600 + 10 * 60];
        let buckets = bucket_sessions(&t, &cal, UnitKind::Hour);
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[&TimeUnit::Hour(9)], vec![1, 0]);

        let hourly: Vec<i64> = (0..24).map(|h| day + h * 3600 + 60).collect();
        let buckets = bucket_sessions(&hourly, &cal, UnitKind::Hour);
        assert_eq!(buckets.len(), 24);
        assert!(buckets.values().all(|b| b.len() == 1));
    }

    #[test]
    fn seven_session_fixture_matches_hand_count() {
        let cal = Calendar::default();
        let monday = 1_514_764_800; // 2018-01-01, Monday, ISO week 1
        let h = 3600;
        let d = 86_400;
        let t = [
            monday + 8 * h,          // Mon 08, week 1
            monday + 8 * h + 1200,   // Mon 08, week 1
            monday + d + 20 * h,     // Tue 20, week 1
            monday + 6 * d + 8 * h,  // Sun 08, week 1
            monday + 7 * d + 23 * h, // Mon 23, week 2
            monday + 9 * d + 20 * h, // Wed 20, week 2
            monday + 14 * d,         // Mon 00, week 3
        ];
        let sizes = |kind| {
            bucket_sessions(&t, &cal, kind)
                .into_iter()
                .map(|(u, b)| (u.value(), b.len()))
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(UnitKind::Hour), vec![(0, 1), (8, 3), (20, 2), (23, 1)]);
        assert_eq!(sizes(UnitKind::Week), vec![(1, 4), (2, 2), (3, 1)]);
        assert_eq!(sizes(UnitKind::Weekday), vec![(0, 1), (1, 4), (2, 1), (3, 1)]);
    }

    #[test]
    fn canonical_layout() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = random_inputs(&mut tape, 2, 1, 0);
        let units: BTreeMap<TimeUnit, Var> = [(TimeUnit::Weekday(6), v[0]), (TimeUnit::Weekday(2), v[1])].into();
        let filled = canonical_units(UnitKind::Weekday, &units, AbsentUnits::ZeroFill);
        assert_eq!(filled, vec![None, None, Some(v[1]), None, None, None, Some(v[0])]);
        let skipped = canonical_units(UnitKind::Weekday, &units, AbsentUnits::Skip);
        assert_eq!(skipped, vec![Some(v[1]), Some(v[0])]);
        assert_eq!(canonical_units(UnitKind::Week, &BTreeMap::new(), AbsentUnits::ZeroFill).len(), 53);
    }

    #[test]
    fn gradients_through_each_site() {
        let mut store = ParamStore::new();
        let mut rng = substream(7, Stream::Init);
        let session = Site::init(&mut store, "S", 3, 4, &mut rng).unwrap();
        let hour = Site::init(&mut store, "h", 4, 4, &mut rng).unwrap();
        let hour_pattern = Site::init(&mut store, "T_h", 4, 3, &mut rng).unwrap();
        let loc_unit = Site::init(&mut store, "SxL", 6, 4, &mut rng).unwrap();
        let spatial = Site::init(&mut store, "L", 4, 3, &mut rng).unwrap();
        let cfg = GradCheckConfig::default();
        for act in [Activation::Tanh, Activation::Relu] {
            let report = grad_check(
                &store,
                |tape| {
                    let items = random_inputs(tape, 5, 3, 11);
                    let s0 = aggregate_session(tape, &items[..2], &session, act)?;
                    let s1 = aggregate_session(tape, &items[2..], &session, act)?;
                    let u0 = aggregate_time_unit(tape, &[s0, s1], &hour, act)?;
                    let u1 = aggregate_time_unit(tape, &[s1], &hour, act)?;
                    let p = aggregate_temporal_pattern(tape, &[Some(u0), None, Some(u1)], &hour_pattern, act)?;
                    let loc = tape.constant(Tensor::vector(vec![0.3, -0.6]));
                    let e = aggregate_location_unit(tape, &[s0, s1], loc, &loc_unit, act)?;
                    let q = aggregate_spatial_pattern(tape, &[e, u1], &spatial, act)?;
                    let both = tape.concat(&[p, q], 0)?;
                    sum_of_squares(tape, both)
                },
                &cfg,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "{act}: {report:?}");
        }
    }
}
