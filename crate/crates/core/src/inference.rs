//! MAP grasp planning: maximize `ln p(Y=1 | q, z) + gain · ln p(q | z)` over the
//! configuration box, starting from a prior sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Bounds, GraspConfig};
use crate::error::{Error, Result};
use crate::model::ObjectContext;
use crate::net::{log_sigmoid, sigmoid};
use crate::optim::{solve_bounded, SolveReport, SolverOpts, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOpts {
    pub prior_gain: f64,
    /// Independent prior-sampled starts; the best optimum is kept.
    pub n_restarts: usize,
    /// Extra prior-sampled starts tried when a solve ends in a failed line search.
    pub retries: usize,
    pub solver: SolverOpts,
}

impl Default for InferenceOpts {
    fn default() -> Self {
        InferenceOpts {
            prior_gain: 0.5,
            n_restarts: 1,
            retries: 0,
            solver: SolverOpts::default(),
        }
    }
}

impl InferenceOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_gain >= 0.0 && self.prior_gain.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior gain must be >= 0, got {}", self.prior_gain)));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument("at least one restart is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MapGrasp {
    pub config: GraspConfig,
    /// Log-objective at `config`.
    pub value: f64,
    pub start: Vec<f64>,
    pub report: SolveReport,
}

/// Log-objective and its gradient at `q`. A classifier error turns into NaN so
/// the solver treats the point as infeasible.
pub fn log_posterior_grad(ctx: &ObjectContext<'_>, gain: f64, q: &[f64], grad: &mut [f64]) -> f64 {
    let Ok((logit, gl)) = ctx.logit_grad(q) else {
        return f64::NAN;
    };
    let (lp, gp) = ctx.log_prior_grad(q);
    // d/dl log σ(l) = 1 − σ(l)
    let s = 1.0 - sigmoid(logit);
    for i in 0..grad.len() {
        grad[i] = s * gl[i] + gain * gp[i];
    }
    log_sigmoid(logit) + gain * lp
}

pub fn log_posterior(ctx: &ObjectContext<'_>, gain: f64, q: &[f64]) -> Result<f64> {
    Ok(ctx.log_success(q)? + gain * ctx.log_prior(q))
}

/// A prior draw clamped into the box, or a uniform draw when the prior sample
/// is unusable.
pub(crate) fn prior_start<R: Rng + ?Sized>(ctx: &ObjectContext<'_>, bounds: &Bounds, rng: &mut R) -> Result<Vec<f64>> {
    let mut q = ctx.mixture.sample(rng);
    if q.iter().all(|v| v.is_finite()) {
        bounds.project(&mut q)?;
        Ok(q)
    } else {
        log::warn!("prior sample not finite; starting from a uniform draw");
        Ok(uniform_start(bounds, rng))
    }
}

pub(crate) fn uniform_start<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    (0..bounds.dim())
        .map(|i| rng.gen_range(bounds.lower()[i]..=bounds.upper()[i]))
        .collect()
}

/// Maximizes the objective from a start; falls back to a uniform start once
/// when the objective is not finite at `start`.
pub(crate) fn solve_from<R, F>(
    mut objective: F,
    start: Vec<f64>,
    bounds: &Bounds,
    solver: &SolverOpts,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, SolveReport, Vec<f64>)>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    match solve_bounded(&mut objective, &start, bounds, solver) {
        Ok((q, v, r)) => Ok((q, v, r, start)),
        Err(Error::NonFinite(_)) => {
            log::warn!("objective not finite at prior start; retrying from a uniform draw");
            let start = uniform_start(bounds, rng);
            let (q, v, r) = solve_bounded(&mut objective, &start, bounds, solver)?;
            Ok((q, v, r, start))
        }
        Err(e) => Err(e),
    }
}

/// MAP grasp for the object behind `ctx`.
pub fn map_grasp<R: Rng + ?Sized>(
    ctx: &ObjectContext<'_>,
    bounds: &Bounds,
    opts: &InferenceOpts,
    rng: &mut R,
) -> Result<MapGrasp> {
    opts.validate()?;
    if ctx.dim() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.dim(),
            actual: bounds.dim(),
        });
    }
    let gain = opts.prior_gain;
    let mut best: Option<MapGrasp> = None;
    let mut attempts = opts.n_restarts;
    let mut retries_left = opts.retries;
    while attempts > 0 {
        attempts -= 1;
        let start = prior_start(ctx, bounds, rng)?;
        let (q, value, report, start) =
            solve_from(|q: &[f64], g: &mut [f64]| log_posterior_grad(ctx, gain, q, g), start, bounds, &opts.solver, rng)?;
        if report.termination == Termination::LineSearchFail && retries_left > 0 {
            retries_left -= 1;
            attempts += 1;
            log::debug!("line search failed; restarting from a new prior sample");
        }
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(MapGrasp {
                config: GraspConfig::new(q)?,
                value,
                start,
                report,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no inference attempt was made".into()))
}
