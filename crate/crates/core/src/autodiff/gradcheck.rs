//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;

use super::tape::{Tape, Var};
use super::ParamStore;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per parameter tensor; larger tensors are sampled.
    pub max_coords_per_param: usize,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is ~0 are judged by absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            max_coords_per_param: 24,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(params: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    Ok(value)
}

/// Compares the tape gradient of `build`'s scalar output against central
/// differences for every parameter in `params`.
pub fn grad_check<F>(params: &ParamStore, build: F, config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    grad_check_with(params, build, config, |_| {})
}

/// As [`grad_check`], with a hook applied to the analytic tape before its
/// backward pass.
#[doc(hidden)]
pub fn grad_check_with<F, H>(params: &ParamStore, build: F, config: &GradCheckConfig, prepare: H) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
    H: Fn(&mut Tape<'_>),
{
    if config.eps <= 0.0 {
        return Err(Error::Config("grad_check eps must be positive".into()));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        prepare(&mut tape);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };

    let mut rng = substream(config.seed, Stream::GradCheck);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= config.max_coords_per_param {
            (0..n).collect()
        } else {
            let mut picked = sample(&mut rng, n, config.max_coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        for k in coords {
            let original = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + config.eps;
            let plus = eval(&probe, &build)?;
            probe.get_mut(id).data_mut()[k] = original - config.eps;
            let minus = eval(&probe, &build)?;
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(a, numeric, config.floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
