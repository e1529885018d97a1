//! Query-synthesis strategies used as bandit arms.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Bounds, GraspConfig, Source};
use crate::error::{Error, Result};
use crate::inference::{map_grasp, prior_start, solve_from, InferenceOpts};
use crate::model::ObjectContext;
use crate::net::sigmoid;
use crate::optim::SolveReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Success,
    Uncertainty,
    Explore,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Success, Arm::Uncertainty, Arm::Explore];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Arm> {
        Arm::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Success => "success",
            Arm::Uncertainty => "uncertainty",
            Arm::Explore => "explore",
        }
    }

    pub fn source(self) -> Source {
        match self {
            Arm::Success => Source::ArmSuccess,
            Arm::Uncertainty => Source::ArmUncertainty,
            Arm::Explore => Source::ArmExplore,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct ArmQuery {
    pub arm: Arm,
    pub config: GraspConfig,
    /// Reward in `[0, 1]` before any bandit offset.
    pub raw_reward: f64,
    /// The arm's objective at `config`.
    pub objective: f64,
    pub report: Option<SolveReport>,
}

/// `½ · logistic(log_p)`: classification uncertainty term driven by the prior.
pub fn f_uncertainty(log_p: f64) -> f64 {
    0.5 * sigmoid(log_p)
}

/// `min(p, 1 − p)`.
pub fn g_regularizer(p: f64) -> f64 {
    if p <= 0.5 {
        p
    } else {
        1.0 - p
    }
}

/// `f(q) + g(q)` and its gradient. At `p = 0.5` the `p ≤ 0.5` branch supplies
/// the derivative.
pub fn uncertainty_objective(ctx: &ObjectContext<'_>, q: &[f64], grad: &mut [f64]) -> f64 {
    let Ok((logit, gl)) = ctx.logit_grad(q) else {
        return f64::NAN;
    };
    let (lp, gp) = ctx.log_prior_grad(q);
    let p = sigmoid(logit);
    let sp = sigmoid(lp);
    let df = 0.5 * sp * (1.0 - sp);
    let dg = if p <= 0.5 { p * (1.0 - p) } else { -p * (1.0 - p) };
    for i in 0..grad.len() {
        grad[i] = df * gp[i] + dg * gl[i];
    }
    f_uncertainty(lp) + g_regularizer(p)
}

pub fn uncertainty_query<R: Rng + ?Sized>(
    ctx: &ObjectContext<'_>,
    bounds: &Bounds,
    opts: &InferenceOpts,
    rng: &mut R,
) -> Result<ArmQuery> {
    let start = prior_start(ctx, bounds, rng)?;
    let (q, value, report, _) =
        solve_from(|q: &[f64], g: &mut [f64]| uncertainty_objective(ctx, q, g), start, bounds, &opts.solver, rng)?;
    if report.termination == crate::optim::Termination::LineSearchFail {
        log::debug!("uncertainty arm line search failed; keeping best iterate");
    }
    Ok(ArmQuery {
        arm: Arm::Uncertainty,
        config: GraspConfig::new(q)?,
        raw_reward: value.clamp(0.0, 1.0),
        objective: value,
        report: Some(report),
    })
}

pub fn success_query<R: Rng + ?Sized>(
    ctx: &ObjectContext<'_>,
    bounds: &Bounds,
    opts: &InferenceOpts,
    rng: &mut R,
) -> Result<ArmQuery> {
    let m = map_grasp(ctx, bounds, opts, rng)?;
    Ok(ArmQuery {
        arm: Arm::Success,
        raw_reward: sigmoid(m.value),
        objective: m.value,
        config: m.config,
        report: Some(m.report),
    })
}

/// Lowest-density candidate among `n_cand` clamped prior samples.
pub fn explore_query<R: Rng + ?Sized>(
    ctx: &ObjectContext<'_>,
    bounds: &Bounds,
    n_cand: usize,
    rng: &mut R,
) -> Result<ArmQuery> {
    if n_cand == 0 {
        return Err(Error::InvalidArgument("explore arm needs at least one candidate".into()));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n_cand {
        let q = prior_start(ctx, bounds, rng)?;
        let lp = ctx.log_prior(&q);
        if best.as_ref().is_none_or(|(_, b)| lp < *b) {
            best = Some((q, lp));
        }
    }
    let (q, lp) = best.expect("n_cand > 0");
    Ok(ArmQuery {
        arm: Arm::Explore,
        config: GraspConfig::new(q)?,
        raw_reward: sigmoid(-lp),
        objective: lp,
        report: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmOpts {
    pub inference: InferenceOpts,
    pub n_cand: usize,
}

impl Default for ArmOpts {
    fn default() -> Self {
        ArmOpts {
            inference: InferenceOpts::default(),
            n_cand: 50,
        }
    }
}

pub fn run_arm<R: Rng + ?Sized>(
    arm: Arm,
    ctx: &ObjectContext<'_>,
    bounds: &Bounds,
    opts: &ArmOpts,
    rng: &mut R,
) -> Result<ArmQuery> {
    match arm {
        Arm::Success => success_query(ctx, bounds, &opts.inference, rng),
        Arm::Uncertainty => uncertainty_query(ctx, bounds, &opts.inference, rng),
        Arm::Explore => explore_query(ctx, bounds, opts.n_cand, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_values() {
        assert_eq!(f_uncertainty(0.0), 0.25);
        assert!((f_uncertainty(3f64.ln()) - 0.375).abs() < 1e-12);
        assert_eq!(f_uncertainty(800.0), 0.5);
    }

    #[test]
    fn g_values() {
        assert_eq!(g_regularizer(0.5), 0.5);
        assert!((g_regularizer(0.9) - 0.1).abs() < 1e-12);
        assert_eq!(g_regularizer(0.1), 0.1);
    }

    #[test]
    fn arm_indices_round_trip() {
        for a in Arm::ALL {
            assert_eq!(Arm::from_index(a.index()), Some(a));
        }
        assert_eq!(Arm::from_index(3), None);
    }
}
