//! Closed-loop shrinking-horizon control with move blocking.
//!
//! Each step measures the plant state, solves the finite-horizon problem that
//! ends at the fixed terminal step, applies the first input of the optimal
//! blocked sequence and advances the plant with the disturbed input
//! `u + d`. Every solve is warm-started with the tail of the previous
//! solution.
//!
//! ```
//! use sbpc::controller::{run_nominal, ClosedLoop, DisturbanceSpec};
//! use sbpc::blocking::{BlockingPolicy, BlockingVariant};
//! use sbpc::dynamics::{DoubleIntegrator, State, TerminalSet};
//! use sbpc::ocp::{InputSpec, SolverSettings};
//!
//! let model = DoubleIntegrator::new(1.0).unwrap();
//! let input = InputSpec::alphabet(&[-1.0, 0.0, 1.0]);
//! let terminal = TerminalSet::point(State::from([4.0, 0.0]));
//! let settings = SolverSettings::default();
//! let cl = ClosedLoop {
//!     model: &model,
//!     policy: BlockingPolicy::new(2, 4, BlockingVariant::ShrinkingN).unwrap(),
//!     input: &input,
//!     terminal: &terminal,
//!     settings: &settings,
//!     x0: State::from([0.0, 0.0]),
//!     disturbance: DisturbanceSpec::none(),
//!     timing: false,
//! };
//! let log = run_nominal(&cl, 0).unwrap();
//! assert_eq!(log.summary.terminal_delta, 0.0);
//! assert_eq!(log.final_state(), &State::from([4.0, 0.0]));
//! ```

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocking::{BlockedSequence, BlockingPolicy};
use crate::dynamics::{InputValue, Model, State, TerminalSet};
use crate::error::{arg_error, Error, Result};
use crate::ocp::{
    solve_min_gamma, solve_multiobjective, solve_nominal, solve_relaxed, InputSpec, OcpProblem, SolveResult,
    SolverSettings, Variant,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Independent uniform draws on `[-d̄, d̄]` per input component.
    Uniform,
    /// `±d̄` per component with a random sign.
    Extreme,
    /// Scalar sequence indexed by `k`, broadcast to every input component.
    /// Steps beyond the sequence draw zero.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSpec {
    bound: f64,
    distribution: Distribution,
    seed: u64,
}

impl DisturbanceSpec {
    pub fn new(bound: f64, distribution: Distribution, seed: u64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(arg_error("d_bar", format!("must be finite and >= 0, got {bound}")));
        }
        if let Distribution::Fixed(seq) = &distribution {
            if let Some(d) = seq.iter().find(|d| !(d.abs() <= bound)) {
                return Err(arg_error("sequence", format!("entry {d} exceeds the bound {bound}")));
            }
        }
        Ok(DisturbanceSpec { bound, distribution, seed })
    }

    pub fn none() -> Self {
        DisturbanceSpec { bound: 0.0, distribution: Distribution::Uniform, seed: 0 }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn distribution(&self) -> &Distribution {
        &self.distribution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_bound(&self, bound: f64) -> Result<Self> {
        DisturbanceSpec::new(bound, self.distribution.clone(), self.seed)
    }
}

/// Disturbance `d(k)` of Monte Carlo run `run`, with `dim` components.
///
/// The draw depends only on `(seed, run, k)`.
pub fn sample_disturbance(spec: &DisturbanceSpec, run: u64, k: usize, dim: usize) -> InputValue {
    let b = spec.bound;
    if b == 0.0 {
        return InputValue::zeros(dim);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(run);
    rng.set_word_pos(k as u128 * 64);
    let entries: Vec<f64> = match &spec.distribution {
        Distribution::Uniform => (0..dim).map(|_| rng.gen_range(-b..=b)).collect(),
        Distribution::Extreme => (0..dim).map(|_| if rng.gen_bool(0.5) { b } else { -b }).collect(),
        Distribution::Fixed(seq) => vec![seq.get(k).copied().unwrap_or(0.0); dim],
    };
    InputValue::from(entries)
}

/// Everything a closed-loop run needs, borrowed from the caller.
#[derive(Clone, Debug)]
pub struct ClosedLoop<'a> {
    pub model: &'a dyn Model,
    pub policy: BlockingPolicy,
    pub input: &'a InputSpec,
    pub terminal: &'a TerminalSet,
    pub settings: &'a SolverSettings,
    pub x0: State,
    pub disturbance: DisturbanceSpec,
    /// Record per-step wall time. Off by default so logs are reproducible.
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nominal,
    Relaxed,
    MultiObjective,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub state: State,
    /// Input commands; `None` on the terminal record.
    pub u_cmd: Option<InputValue>,
    pub u_applied: Option<InputValue>,
    pub d: Option<InputValue>,
    /// Achievable terminal distance; realized `γ` for the multi-objective loop.
    pub gamma_lb: f64,
    /// Predicted cost of the applied solution.
    pub solve_cost: f64,
    pub nodes: u64,
    pub wall: Option<Duration>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Abort {
    pub k: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// `Δ(x̃(k_f), X_f)`; infinite if the run aborted.
    pub terminal_delta: f64,
    /// Realized stage cost along the applied inputs.
    pub total_cost: f64,
    pub feasible_steps: usize,
    pub steps: usize,
    pub aborted: Option<Abort>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopLog {
    pub algorithm: Algorithm,
    pub run: u64,
    /// One record per visited state; the last one carries no input.
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

impl ClosedLoopLog {
    pub fn final_state(&self) -> &State {
        &self.records.last().expect("a log holds at least the initial state").state
    }

    pub fn completed(&self) -> bool {
        self.summary.aborted.is_none()
    }

    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.records.iter().map(|r| &r.state)
    }
}

/// Per-step solve strategy of a loop.
type StepSolver<'s> = dyn Fn(&OcpProblem<'_>) -> Result<Step> + 's;

struct Step {
    result: SolveResult,
    gamma_lb: f64,
    nodes: u64,
}

/// Shared driver: solve, apply the first input, step the plant.
fn drive(cl: &ClosedLoop<'_>, algorithm: Algorithm, run: u64, solver: &StepSolver<'_>) -> Result<ClosedLoopLog> {
    let kf = cl.policy.horizon();
    let m = cl.model.input_dim();
    let mut x = cl.x0.clone();
    let mut records = Vec::with_capacity(kf + 1);
    let mut total_cost = 0.0;
    let mut warm: Option<BlockedSequence> = None;
    let mut aborted = None;

    for k in 0..kf {
        let started = Instant::now();
        let p = OcpProblem::new(
            cl.model,
            k,
            x.clone(),
            cl.policy,
            cl.input,
            cl.terminal,
            Variant::Nominal,
            cl.settings,
        )?
        .with_warm_start(warm.take());
        let step = match solver(&p) {
            Ok(step) if step.result.feasible => step,
            Ok(_) => {
                aborted = Some(Abort { k, reason: format!("problem infeasible at k = {k}") });
                break;
            }
            Err(Error::HardInfeasible { k }) => {
                aborted = Some(Abort { k, reason: format!("state constraints cannot be met from k = {k}") });
                break;
            }
            Err(e) => return Err(e),
        };
        let v = step.result.v_opt.as_ref().expect("feasible results carry a sequence");
        let u_cmd = cl.model.resolve(v.first(), &x)?;
        let d = sample_disturbance(&cl.disturbance, run, k, m);
        let u_applied = InputValue::from(u_cmd.iter().zip(d.iter()).map(|(u, d)| u + d).collect::<Vec<f64>>());
        let next = cl.model.step(&x, &u_applied)?;
        total_cost += cl.model.stage_cost(&x, &u_applied);
        warm = if k + 1 < kf { Some(v.warm_start_tail()?) } else { None };
        records.push(StepRecord {
            k,
            state: x,
            u_cmd: Some(u_cmd),
            u_applied: Some(u_applied),
            d: Some(d),
            gamma_lb: step.gamma_lb,
            solve_cost: step.result.cost,
            nodes: step.nodes,
            wall: cl.timing.then(|| started.elapsed()),
        });
        x = next;
    }

    let steps = records.len();
    let terminal_delta = if aborted.is_none() {
        crate::ocp::distance_to_set(&x, cl.terminal, &crate::ocp::DistanceSpec { weights: cl.terminal.weights.clone() })
    } else {
        f64::INFINITY
    };
    records.push(StepRecord {
        k: steps,
        state: x,
        u_cmd: None,
        u_applied: None,
        d: None,
        gamma_lb: f64::NAN,
        solve_cost: f64::NAN,
        nodes: 0,
        wall: None,
    });
    Ok(ClosedLoopLog {
        algorithm,
        run,
        records,
        summary: Summary { terminal_delta, total_cost, feasible_steps: steps, steps: kf, aborted },
    })
}

/// Nominal loop: hard terminal constraint at every step.
///
/// Infeasibility at any step, including `k = 0`, ends the run with an
/// [`Abort`] record rather than an error.
pub fn run_nominal(cl: &ClosedLoop<'_>, run: u64) -> Result<ClosedLoopLog> {
    drive(cl, Algorithm::Nominal, run, &|p| {
        let result = solve_nominal(p)?;
        let nodes = result.stats.nodes_explored;
        Ok(Step { gamma_lb: if result.feasible { 0.0 } else { f64::INFINITY }, result, nodes })
    })
}

/// Two-stage relaxed loop: smallest achievable terminal distance first, then
/// the cheapest sequence that attains it.
pub fn run_relaxed(cl: &ClosedLoop<'_>, run: u64) -> Result<ClosedLoopLog> {
    drive(cl, Algorithm::Relaxed, run, &|p| {
        let lower = solve_min_gamma(&p.with_variant(Variant::MinGamma))?;
        let gamma_lb = lower.gamma;
        let result = solve_relaxed(p, gamma_lb)?;
        let nodes = lower.stats.nodes_explored + result.stats.nodes_explored;
        Ok(Step { result, gamma_lb, nodes })
    })
}

/// Relaxed loop with the single scalarized solve `cost + ω γ`.
pub fn run_multiobjective(cl: &ClosedLoop<'_>, omega: f64, run: u64) -> Result<ClosedLoopLog> {
    if !(omega > 0.0) {
        return Err(arg_error("omega", format!("must be > 0, got {omega}")));
    }
    drive(cl, Algorithm::MultiObjective, run, &|p| {
        let result = solve_multiobjective(p, omega)?;
        let nodes = result.stats.nodes_explored;
        Ok(Step { gamma_lb: result.gamma, result, nodes })
    })
}

/// Dispatches to the loop named by `algorithm`; `omega` is read only by the
/// multi-objective loop.
pub fn run_algorithm(cl: &ClosedLoop<'_>, algorithm: Algorithm, omega: f64, run: u64) -> Result<ClosedLoopLog> {
    match algorithm {
        Algorithm::Nominal => run_nominal(cl, run),
        Algorithm::Relaxed => run_relaxed(cl, run),
        Algorithm::MultiObjective => run_multiobjective(cl, omega, run),
    }
}
