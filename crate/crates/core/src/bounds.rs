//! Continuity moduli, the accumulated disturbance bound and its Monte Carlo
//! check.
//!
//! With moduli `a_x`, `a_u` of the dynamics and a disturbance bound `d̄`,
//! the per-step perturbation bounds obey
//!
//! ```text
//! β_0 = a_u(d̄)
//! β_k = a_u(d̄) + a_x(β_{k-1})
//! ```
//!
//! and the terminal distance of the relaxed closed loop stays below
//! `β(d̄) = β_0 + … + β_{k_f-1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{run_algorithm, Algorithm, ClosedLoop};
use crate::dynamics::{weighted_inf_norm, DoubleIntegrator, InputValue, Model, State};
use crate::error::{arg_error, Result};

/// Safety factor applied to sampled Lipschitz ratios.
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.2;

/// Minimum sample count for [`estimate_moduli`].
pub const MIN_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum KFunction {
    /// `a(s) = K s`.
    Linear(f64),
    /// Piecewise-linear through `(s, a)` points starting at `(0, 0)`,
    /// extended past the last point with the last slope.
    Tabulated(Vec<(f64, f64)>),
}

impl KFunction {
    pub fn linear(gain: f64) -> Result<Self> {
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(arg_error("gain", format!("must be finite and >= 0, got {gain}")));
        }
        Ok(KFunction::Linear(gain))
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 || points[0] != (0.0, 0.0) {
            return Err(arg_error("points", "need at least two points, the first at (0, 0)"));
        }
        let increasing = points.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        if !increasing || points.iter().any(|(s, a)| !s.is_finite() || !a.is_finite()) {
            return Err(arg_error("points", "must be finite and strictly increasing in both coordinates"));
        }
        Ok(KFunction::Tabulated(points))
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            KFunction::Linear(k) => k * s,
            KFunction::Tabulated(points) => {
                let i = points.partition_point(|p| p.0 <= s).clamp(1, points.len() - 1);
                let ((s0, a0), (s1, a1)) = (points[i - 1], points[i]);
                a0 + (a1 - a0) * (s - s0) / (s1 - s0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuliPair {
    pub a_x: KFunction,
    pub a_u: KFunction,
}

impl ModuliPair {
    pub fn linear(k_x: f64, k_u: f64) -> Result<Self> {
        Ok(ModuliPair { a_x: KFunction::linear(k_x)?, a_u: KFunction::linear(k_u)? })
    }
}

fn check_bound_args(d_bar: f64, steps: usize) -> Result<()> {
    if !(d_bar >= 0.0) {
        return Err(arg_error("d_bar", format!("must be >= 0, got {d_bar}")));
    }
    if steps == 0 {
        return Err(arg_error("k_f", "must be >= 1"));
    }
    Ok(())
}

/// `β_0, …, β_{k_f-1}`.
pub fn beta_sequence(moduli: &ModuliPair, d_bar: f64, k_f: usize) -> Result<Vec<f64>> {
    check_bound_args(d_bar, k_f)?;
    let au = moduli.a_u.eval(d_bar);
    let mut out = Vec::with_capacity(k_f);
    let mut beta = au;
    out.push(beta);
    for _ in 1..k_f {
        beta = au + moduli.a_x.eval(beta);
        out.push(beta);
    }
    Ok(out)
}

/// `β(d̄)`, the bound on the terminal distance of the relaxed loop.
pub fn cumulative_bound(moduli: &ModuliPair, d_bar: f64, k_f: usize) -> Result<f64> {
    Ok(beta_sequence(moduli, d_bar, k_f)?.iter().sum())
}

/// Worst-case deviation of a trajectory after `steps` disturbed moves.
pub fn propagate_perturbation_bound(moduli: &ModuliPair, d_bar: f64, steps: usize) -> Result<f64> {
    Ok(*beta_sequence(moduli, d_bar, steps)?.last().expect("steps >= 1"))
}

/// Exact linear moduli of the double integrator under the weighted infinity
/// norm with state weights `weights`; inputs use the plain infinity norm.
pub fn integrator_moduli(model: &DoubleIntegrator, weights: &[f64]) -> Result<ModuliPair> {
    let [w1, w2] = weights else {
        return Err(arg_error("weights", "the integrator has two state components"));
    };
    let ts = model.sampling_time;
    ModuliPair::linear(1.0 + ts * w1 / w2, ts * w2)
}

/// Axis-aligned sampling region.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(arg_error("box", "lower and upper corners must have the same nonzero length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return Err(arg_error("box", "every side must have positive finite width"));
        }
        Ok(SamplingBox { lower, upper })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| rng.gen_range(*l..*u)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuliEstimate {
    /// Largest sampled ratio for the state argument.
    pub k_x_raw: f64,
    /// Largest sampled ratio for the input argument.
    pub k_u_raw: f64,
    pub safety_factor: f64,
    /// Linear moduli with the safety factor applied.
    pub moduli: ModuliPair,
}

/// Sampled Lipschitz ratios of `f` over the given boxes.
///
/// States are compared in the weighted infinity norm given by `weights`,
/// inputs in the plain infinity norm. The sampled maximum under-estimates the
/// true constant; the safety factor compensates. Pairs whose evaluation fails
/// are skipped.
pub fn estimate_moduli(
    model: &dyn Model,
    state_box: &SamplingBox,
    input_box: &SamplingBox,
    weights: &[f64],
    samples: usize,
    seed: u64,
    safety_factor: f64,
) -> Result<ModuliEstimate> {
    if samples < MIN_SAMPLES {
        return Err(arg_error("samples", format!("need at least {MIN_SAMPLES}, got {samples}")));
    }
    if state_box.lower.len() != model.state_dim() || input_box.lower.len() != model.input_dim() {
        return Err(arg_error("box", "box dimensions do not match the model"));
    }
    if weights.len() != model.state_dim() {
        return Err(arg_error("weights", "one weight per state component"));
    }
    if !(safety_factor >= 1.0) {
        return Err(arg_error("safety_factor", format!("must be >= 1, got {safety_factor}")));
    }
    let uniform = vec![1.0; model.input_dim()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kx, mut ku) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let x1 = State::from(state_box.sample(&mut rng));
        let x2 = State::from(state_box.sample(&mut rng));
        let u1 = InputValue::from(input_box.sample(&mut rng));
        let u2 = InputValue::from(input_box.sample(&mut rng));

        if let (Ok(a), Ok(b)) = (model.step(&x1, &u1), model.step(&x2, &u1)) {
            let num = weighted_inf_norm(&diff(&a, &b), weights);
            let den = weighted_inf_norm(&diff(&x1, &x2), weights);
            if den > 0.0 {
                kx = kx.max(num / den);
            }
        }
        if let (Ok(a), Ok(b)) = (model.step(&x1, &u1), model.step(&x1, &u2)) {
            let num = weighted_inf_norm(&diff(&a, &b), weights);
            let den = weighted_inf_norm(&diff(&u1, &u2), &uniform);
            if den > 0.0 {
                ku = ku.max(num / den);
            }
        }
    }
    Ok(ModuliEstimate {
        k_x_raw: kx,
        k_u_raw: ku,
        safety_factor,
        moduli: ModuliPair::linear(kx * safety_factor, ku * safety_factor)?,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub d_bar: f64,
    pub k_f: usize,
    pub beta_total: f64,
    pub max_delta_observed: f64,
    pub violations: usize,
    /// Runs that ended early on hard infeasibility.
    pub aborted: usize,
    pub runs: usize,
}

impl BoundReport {
    pub fn margin(&self) -> f64 {
        self.beta_total - self.max_delta_observed
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.aborted == 0
    }
}

/// Monte Carlo check of `Δ(x̃(k_f), X_f) <= scale · β(d̄)` over `runs`
/// independent closed-loop runs, executed in parallel.
///
/// `scale` is 1 in normal use; values below 1 exercise the detector.
pub fn verify_bound(
    cl: &ClosedLoop<'_>,
    algorithm: Algorithm,
    omega: f64,
    runs: usize,
    moduli: &ModuliPair,
    scale: f64,
) -> Result<BoundReport> {
    if algorithm == Algorithm::Nominal {
        return Err(arg_error("algorithm", "bound verification needs a relaxed loop"));
    }
    let d_bar = cl.disturbance.bound();
    let k_f = cl.policy.horizon();
    let beta_total = scale * cumulative_bound(moduli, d_bar, k_f)?;
    let deltas = (0..runs as u64)
        .into_par_iter()
        .map(|run| run_algorithm(cl, algorithm, omega, run).map(|log| log.summary.terminal_delta))
        .collect::<Result<Vec<f64>>>()?;
    let finite = deltas.iter().copied().filter(|d| d.is_finite());
    Ok(BoundReport {
        d_bar,
        k_f,
        beta_total,
        max_delta_observed: finite.fold(0.0, f64::max),
        violations: deltas.iter().filter(|d| d.is_finite() && **d > beta_total).count(),
        aborted: deltas.iter().filter(|d| !d.is_finite()).count(),
        runs,
    })
}
