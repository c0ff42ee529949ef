//! Pattern fusion, interactive spatiotemporal attention and the prediction head.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{Task, UserLabel};
use crate::{Error, Result};

/// `u = p_1 ⊕ … ⊕ p_n` over the patterns a variant computes.
pub fn fuse_concat(tape: &mut Tape<'_>, patterns: &[Var]) -> Result<Var> {
    if patterns.is_empty() {
        return Err(Error::Empty("fuse_concat: no patterns present"));
    }
    tape.concat(patterns, 0)
}

/// Mean of a user's own unit embeddings.
pub fn mean_query(tape: &mut Tape<'_>, units: &[Var]) -> Result<Var> {
    tape.mean(units)
}

/// Bilinear map `W` (units × queries) with a scalar bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bilinear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Bilinear {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        unit: usize,
        query: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Bilinear {
            weight: store.add_uniform(format!("W_{name}"), &[unit, query], query, rng)?,
            bias: store.add_uniform(format!("b_{name}"), &[1], query, rng)?,
        })
    }
}

fn score_with(tape: &mut Tape<'_>, e: Var, projected_query: Var, map: &Bilinear) -> Result<Var> {
    let raw = tape.dot(e, projected_query)?;
    let shifted = tape.add_bias(raw, map.bias)?;
    Ok(tape.tanh(shifted))
}

/// `tanh(e · W · q + b)`.
pub fn bilinear_score(tape: &mut Tape<'_>, e: Var, query: Var, map: &Bilinear) -> Result<Var> {
    let wq = tape.linear(map.weight, query)?;
    score_with(tape, e, wq, map)
}

/// Softmax attention of `query` over `units`: returns (weights, pooled).
pub fn attend(tape: &mut Tape<'_>, units: &[Var], query: Var, map: &Bilinear) -> Result<(Var, Var)> {
    if units.is_empty() {
        return Err(Error::Empty("attend: no units"));
    }
    let wq = tape.linear(map.weight, query)?;
    let scores = units
        .iter()
        .map(|&e| score_with(tape, e, wq, map))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat(&scores, 0)?;
    let weights = tape.softmax(scores);
    let pooled = tape.weighted_sum(weights, units)?;
    Ok((weights, pooled))
}

/// The two bilinear maps of one interactive pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractiveMaps {
    /// Scores time units against the location query.
    pub time_by_location: Bilinear,
    /// Scores location units against the temporal query.
    pub location_by_time: Bilinear,
}

/// Tape handles of one interactive pattern's intermediate values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractiveVars {
    pub pattern: Var,
    pub time_weights: Var,
    pub location_weights: Var,
    pub location_query: Var,
    pub time_query: Var,
}

/// Time units pooled under the location query, concatenated with location
/// units pooled under the temporal query.
pub fn interactive_pattern(
    tape: &mut Tape<'_>,
    time_units: &[Var],
    location_units: &[Var],
    maps: &InteractiveMaps,
) -> Result<InteractiveVars> {
    let location_query = mean_query(tape, location_units)?;
    let time_query = mean_query(tape, time_units)?;
    let (time_weights, time_pooled) = attend(tape, time_units, location_query, &maps.time_by_location)?;
    let (location_weights, location_pooled) = attend(tape, location_units, time_query, &maps.location_by_time)?;
    let pattern = tape.concat(&[time_pooled, location_pooled], 0)?;
    Ok(InteractiveVars {
        pattern,
        time_weights,
        location_weights,
        location_query,
        time_query,
    })
}

/// `u = p_{L,T_h} ⊕ p_{L,T_w} ⊕ p_{L,T_y}`.
pub fn fuse_interactive(tape: &mut Tape<'_>, patterns: &[Var]) -> Result<Var> {
    if patterns.len() != 3 {
        return Err(Error::Empty("fuse_interactive needs hour, week and weekday patterns"));
    }
    tape.concat(patterns, 0)
}

/// Allocates the bias-free head: `W_a` (classes × width) or `W` (1 × width).
pub fn init_head<R: Rng + ?Sized>(store: &mut ParamStore, task: Task, width: usize, rng: &mut R) -> Result<ParamId> {
    let name = if task.is_classification() { "W_a" } else { "W" };
    store.add_uniform(name, &[task.outputs(), width], width, rng)
}

/// Logits (classification) or the scalar prediction (regression).
pub fn predict(tape: &mut Tape<'_>, u: Var, head: ParamId) -> Result<Var> {
    tape.linear(head, u)
}

/// Loss of one user's output against their label.
pub fn user_loss(tape: &mut Tape<'_>, output: Var, label: UserLabel) -> Result<Var> {
    match label {
        UserLabel::Binary(c) | UserLabel::Categorical(c) => tape.softmax_cross_entropy(output, c),
        UserLabel::Numeric(v) => tape.squared_error(output, v),
    }
}

/// Batch-mean loss.
pub fn loss(tape: &mut Tape<'_>, outputs: &[Var], labels: &[UserLabel]) -> Result<Var> {
    if outputs.is_empty() {
        return Err(Error::Empty("loss: empty batch"));
    }
    if outputs.len() != labels.len() {
        return Err(Error::shape("loss", &[outputs.len()], &[labels.len()]));
    }
    let per_user = outputs
        .iter()
        .zip(labels)
        .map(|(&o, &l)| user_loss(tape, o, l))
        .collect::<Result<Vec<_>>>()?;
    tape.mean(&per_user)
}

/// Index of the largest logit; ties go to the higher class.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z >= logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, softmax, GradCheckConfig, Tensor};
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn vecs(tape: &mut Tape<'_>, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect()
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = substream(seed, Stream::GradCheck);
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn maps(store: &mut ParamStore, unit: usize, query: usize, seed: u64) -> InteractiveMaps {
        let mut rng = substream(seed, Stream::Init);
        InteractiveMaps {
            time_by_location: Bilinear::init(store, "(L,T_h)", unit, query, &mut rng).unwrap(),
            location_by_time: Bilinear::init(store, "(T_h,L)", query, unit, &mut rng).unwrap(),
        }
    }

    #[test]
    fn concat_widths() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = vecs(&mut tape, &vec![vec![0.5; 128]; 4]);
        let u = fuse_concat(&mut tape, &p).unwrap();
        assert_eq!(tape.value(u).len(), 512);
        let u = fuse_concat(&mut tape, &p[..3]).unwrap();
        assert_eq!(tape.value(u).len(), 384);
        let u = fuse_concat(&mut tape, &p[..1]).unwrap();
        assert_eq!(tape.value(u), tape.value(p[0]));
        assert!(fuse_concat(&mut tape, &[]).is_err());
    }

    #[test]
    fn interactive_fusion_is_768_with_recoverable_blocks() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let rows = random_rows(3, 256, 4);
        let p = vecs(&mut tape, &rows);
        let u = fuse_interactive(&mut tape, &p).unwrap();
        let data = tape.value(u).data();
        assert_eq!(data.len(), 768);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(&data[k * 256..(k + 1) * 256], &row[..]);
        }
        assert!(fuse_interactive(&mut tape, &p[..2]).is_err());
    }

    #[test]
    fn queries() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let one = vecs(&mut tape, &[vec![1.0, -2.0]]);
        let q = mean_query(&mut tape, &one).unwrap();
        assert_eq!(tape.value(q).data(), &[1.0, -2.0]);
        let pair = vecs(&mut tape, &[vec![1.0, -2.0], vec![-1.0, 2.0]]);
        let q = mean_query(&mut tape, &pair).unwrap();
        assert_eq!(tape.value(q).data(), &[0.0, 0.0]);
        let rows = random_rows(3, 5, 2);
        let three = vecs(&mut tape, &rows);
        let q = mean_query(&mut tape, &three).unwrap();
        for (j, got) in tape.value(q).data().iter().enumerate() {
            let hand = (rows[0][j] + rows[1][j] + rows[2][j]) / 3.0;
            assert!((got - hand).abs() < 1e-15);
        }
        assert!(mean_query(&mut tape, &[]).is_err());
    }

    #[test]
    fn bilinear_score_matches_triple_product() {
        let mut store = ParamStore::new();
        let m = maps(&mut store, 4, 4, 1).time_by_location;
        let rows = random_rows(2, 4, 3);
        let mut tape = Tape::new(&store);
        let v = vecs(&mut tape, &rows);
        let s = bilinear_score(&mut tape, v[0], v[1], &m).unwrap();
        let w = store.get(m.weight);
        let mut direct = store.get(m.bias).item();
        for i in 0..4 {
            for j in 0..4 {
                direct += rows[0][i] * w.data()[i * 4 + j] * rows[1][j];
            }
        }
        assert!((tape.value(s).item() - direct.tanh()).abs() < 1e-12);

        let mut zero = store.clone();
        zero.get_mut(m.weight).data_mut().iter_mut().for_each(|x| *x = 0.0);
        zero.get_mut(m.bias).data_mut()[0] = 0.0;
        let mut tape = Tape::new(&zero);
        let v = vecs(&mut tape, &rows);
        let s = bilinear_score(&mut tape, v[0], v[1], &m).unwrap();
        assert_eq!(tape.value(s).item(), 0.0);
    }

    #[test]
    fn attend_matches_direct_formula() {
        let mut store = ParamStore::new();
        let m = maps(&mut store, 8, 8, 5).time_by_location;
        let rows = random_rows(4, 8, 6);
        let mut tape = Tape::new(&store);
        let v = vecs(&mut tape, &rows);
        let (weights, pooled) = attend(&mut tape, &v[..3], v[3], &m).unwrap();

        let w = store.get(m.weight);
        let b = store.get(m.bias).item();
        let scores: Vec<f64> = rows[..3]
            .iter()
            .map(|e| {
                let mut s = b;
                for i in 0..8 {
                    for j in 0..8 {
                        s += e[i] * w.data()[i * 8 + j] * rows[3][j];
                    }
                }
                s.tanh()
            })
            .collect();
        let alpha = softmax(&scores);
        for (a, g) in alpha.iter().zip(tape.value(weights).data()) {
            assert!((a - g).abs() < 1e-12);
        }
        for j in 0..8 {
            let direct: f64 = (0..3).map(|k| alpha[k] * rows[k][j]).sum();
            assert!((direct - tape.value(pooled).data()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_degenerate_cases() {
        let mut store = ParamStore::new();
        let m = maps(&mut store, 3, 3, 7).time_by_location;
        let mut tape = Tape::new(&store);
        let same = vecs(&mut tape, &vec![vec![0.2, -0.4, 0.9]; 5]);
        let (weights, _) = attend(&mut tape, &same[..4], same[4], &m).unwrap();
        for w in tape.value(weights).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        let (weights, pooled) = attend(&mut tape, &same[..1], same[4], &m).unwrap();
        assert_eq!(tape.value(weights).data(), &[1.0]);
        assert_eq!(tape.value(pooled), tape.value(same[0]));
        assert!(attend(&mut tape, &[], same[0], &m).is_err());
    }

    #[test]
    fn interactive_pattern_shapes() {
        let mut store = ParamStore::new();
        let m = maps(&mut store, 256, 256, 8);
        let mut tape = Tape::new(&store);
        let t = vecs(&mut tape, &random_rows(3, 256, 9));
        let l = vecs(&mut tape, &random_rows(2, 256, 10));
        let out = interactive_pattern(&mut tape, &t, &l, &m).unwrap();
        assert_eq!(tape.value(out.pattern).len(), 512);

        let out = interactive_pattern(&mut tape, &t[..1], &l[..1], &m).unwrap();
        let mut expected = tape.value(t[0]).data().to_vec();
        expected.extend_from_slice(tape.value(l[0]).data());
        assert_eq!(tape.value(out.pattern).data(), &expected[..]);
    }

    #[test]
    fn gradients_through_both_directions() {
        let mut store = ParamStore::new();
        let mut rng = substream(11, Stream::Init);
        let m = maps(&mut store, 4, 3, 12);
        let time = store.add_uniform("time_units", &[3, 4], 1, &mut rng).unwrap();
        let loc = store.add_uniform("loc_units", &[2, 3], 1, &mut rng).unwrap();
        let head = init_head(&mut store, Task::Income, 7, &mut rng).unwrap();
        let report = grad_check(
            &store,
            |tape| {
                let t = (0..3).map(|r| tape.param_row(time, r)).collect::<Result<Vec<_>>>()?;
                let l = (0..2).map(|r| tape.param_row(loc, r)).collect::<Result<Vec<_>>>()?;
                let out = interactive_pattern(tape, &t, &l, &m)?;
                let logits = predict(tape, out.pattern, head)?;
                loss(tape, &[logits], &[UserLabel::Categorical(4)])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn head_predictions_and_losses() {
        let mut store = ParamStore::new();
        let mut rng = substream(13, Stream::Init);
        let head = init_head(&mut store, Task::Income, 4, &mut rng).unwrap();
        assert_eq!(store.get(head).shape(), &[10, 4]);
        assert_eq!(store.name(head), "W_a");

        // One-hot selector rows: argmax picks u's largest coordinate.
        let mut selector = ParamStore::new();
        let mut rows = vec![0.0; 3 * 3];
        for i in 0..3 {
            rows[i * 3 + i] = 1.0;
        }
        let sel = selector.add("W_a", Tensor::new(vec![3, 3], rows).unwrap()).unwrap();
        let mut tape = Tape::new(&selector);
        let u = tape.constant(Tensor::vector(vec![0.1, 0.7, -0.3]));
        let logits = predict(&mut tape, u, sel).unwrap();
        assert_eq!(argmax(tape.value(logits).data()), 1);

        let mut zero = ParamStore::new();
        let z = zero.add("W_a", Tensor::zeros(&[10, 3])).unwrap();
        let mut tape = Tape::new(&zero);
        let u = tape.constant(Tensor::vector(vec![0.1, 0.7, -0.3]));
        let logits = predict(&mut tape, u, z).unwrap();
        let l = loss(&mut tape, &[logits], &[UserLabel::Categorical(0)]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_losses_match_direct_formula() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let logits = [[0.3, -1.2, 2.0], [1.0, 1.0, 0.0], [-0.5, 0.25, 0.1], [4.0, -4.0, 0.0]];
        let targets = [2usize, 0, 1, 1];
        let outs = vecs(&mut tape, &logits.iter().map(|l| l.to_vec()).collect::<Vec<_>>());
        let labels: Vec<UserLabel> = targets.iter().map(|&t| UserLabel::Categorical(t)).collect();
        let l = loss(&mut tape, &outs, &labels).unwrap();
        let direct: f64 = logits
            .iter()
            .zip(targets)
            .map(|(z, t)| z.iter().map(|v| v.exp()).sum::<f64>().ln() - z[t])
            .sum::<f64>()
            / 4.0;
        assert!((tape.value(l).item() - direct).abs() < 1e-12);

        let preds = vecs(&mut tape, &[vec![3.0], vec![1.0], vec![-2.0], vec![0.5]]);
        let labels = [1.0, 1.0, 0.0, 0.5].map(UserLabel::Numeric);
        let l = loss(&mut tape, &preds, &labels).unwrap();
        assert!((tape.value(l).item() - (4.0 + 0.0 + 4.0 + 0.0) / 4.0).abs() < 1e-12);
        let exact = vecs(&mut tape, &[vec![1.5]]);
        let l = loss(&mut tape, &exact, &[UserLabel::Numeric(1.5)]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let confident = vecs(&mut tape, &[vec![60.0, -60.0]]);
        let l = loss(&mut tape, &confident, &[UserLabel::Binary(0)]).unwrap();
        assert!(tape.value(l).item() < 1e-40);
        assert!(loss(&mut tape, &[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn attention_is_a_distribution_inside_the_envelope(seed in 0u64..10_000, n in 1usize..6, shift in -3.0f64..3.0) {
            let mut store = ParamStore::new();
            let m = maps(&mut store, 4, 4, seed).time_by_location;
            let rows = random_rows(n + 1, 4, seed);
            let mut tape = Tape::new(&store);
            let v = vecs(&mut tape, &rows);
            let (weights, pooled) = attend(&mut tape, &v[..n], v[n], &m).unwrap();
            let w = tape.value(weights).data().to_vec();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            for j in 0..4 {
                let lo = rows[..n].iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows[..n].iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                let p = tape.value(pooled).data()[j];
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }

            // Shifting the bias moves every score by the same amount before
            // tanh; shifting raw scores after tanh leaves the softmax unchanged.
            let scores: Vec<f64> = w.iter().map(|x| x.ln()).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            for (a, b) in softmax(&scores).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
