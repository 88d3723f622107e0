//! Finite-horizon optimal control over blocked inputs.
//!
//! An [`OcpProblem`] fixes the plant, the current step `k` and measured state,
//! the blocking policy, the admissible inputs and the terminal set. Its
//! [`Variant`] selects what is optimized:
//!
//! | variant | objective | terminal condition |
//! |---|---|---|
//! | `Nominal` | stage cost | `Δ = 0` |
//! | `MinGamma` | `Δ` | none |
//! | `Relaxed { gamma_bar }` | stage cost | `Δ <= gamma_bar` (+ [`GAMMA_TOL`]) |
//! | `MultiObjective { omega }` | stage cost `+ omega Δ` | none |
//!
//! where `Δ` is the weighted distance of the predicted terminal state to the
//! terminal set. State constraints are always hard.
//!
//! Discrete alphabets are solved exactly by depth-first branch-and-bound
//! ([`Backend::Exact`]); continuous input boxes use a multi-start projected
//! coordinate descent ([`Backend::Continuous`]) that only claims local
//! optimality.

mod continuous;
mod enumerate;

use crate::blocking::{BlockedSequence, BlockingPolicy};
use crate::dynamics::{weighted_inf_norm, Action, InputValue, Model, State, TerminalSet};
use crate::error::{arg_error, Error, Result};

pub use continuous::ContinuousSettings;
pub use enumerate::exhaustive;

/// Inflation of the relaxed terminal bound so that the minimizer of the
/// distance problem stays admissible.
pub const GAMMA_TOL: f64 = 1e-9;

/// Default cap on `|alphabet|^N` for the exact backend.
pub const DEFAULT_CANDIDATE_CAP: u64 = 1_000_000;

/// Admissible inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSpec {
    /// Box `lower <= u <= upper`.
    Continuous { lower: InputValue, upper: InputValue },
    /// Finite alphabet; entries may include [`Action::Cruise`].
    Discrete { alphabet: Vec<Action> },
}

impl InputSpec {
    /// Scalar alphabet without cruise.
    pub fn alphabet(values: &[f64]) -> Self {
        InputSpec::Discrete { alphabet: values.iter().map(|&v| Action::scalar(v)).collect() }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, InputSpec::Discrete { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Nominal,
    MinGamma,
    Relaxed { gamma_bar: f64 },
    MultiObjective { omega: f64 },
}

impl Variant {
    /// Objective of a state-feasible candidate, or `None` when it violates
    /// the terminal condition of this variant.
    pub fn score(&self, cost: f64, delta: f64) -> Option<f64> {
        match *self {
            Variant::Nominal => (delta <= 0.0).then_some(cost),
            Variant::MinGamma => Some(delta),
            Variant::Relaxed { gamma_bar } => (delta <= gamma_bar + GAMMA_TOL).then_some(cost),
            Variant::MultiObjective { omega } => Some(cost + omega * delta),
        }
    }

    /// Whether the prefix stage cost lower-bounds the objective.
    pub(crate) fn cost_bounded(&self) -> bool {
        !matches!(self, Variant::MinGamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Exact,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub backend: Backend,
    pub candidate_cap: u64,
    pub continuous: ContinuousSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            backend: Backend::Exact,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            continuous: ContinuousSettings::default(),
        }
    }
}

/// Weights of the weighted infinity norm used for point-to-set distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSpec {
    pub weights: Vec<f64>,
}

impl DistanceSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(arg_error("weights", "entries must be finite and > 0"));
        }
        Ok(DistanceSpec { weights })
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        weighted_inf_norm(v, &self.weights)
    }
}

impl From<&TerminalSet> for DistanceSpec {
    fn from(set: &TerminalSet) -> Self {
        DistanceSpec { weights: set.weights.clone() }
    }
}

/// `Δ(x, X_f) = max_i w_i max(0, |x_i - c_i| - h_i)`, the weighted
/// infinity-norm distance from `x` to the box.
pub fn distance_to_set(x: &State, set: &TerminalSet, spec: &DistanceSpec) -> f64 {
    x.iter()
        .zip(set.center.iter())
        .zip(&set.half_widths)
        .zip(&spec.weights)
        .fold(0.0, |acc, (((xi, ci), hi), wi)| acc.max(wi * ((xi - ci).abs() - hi).max(0.0)))
}

/// One finite-horizon problem at step `k`.
#[derive(Clone, Debug)]
pub struct OcpProblem<'a> {
    pub model: &'a dyn Model,
    pub k: usize,
    pub x_init: State,
    pub policy: BlockingPolicy,
    pub input: &'a InputSpec,
    pub terminal: &'a TerminalSet,
    pub variant: Variant,
    pub settings: &'a SolverSettings,
    /// Optional initial guess (typically the previous solution's tail).
    pub warm_start: Option<BlockedSequence>,
}

impl<'a> OcpProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a dyn Model,
        k: usize,
        x_init: State,
        policy: BlockingPolicy,
        input: &'a InputSpec,
        terminal: &'a TerminalSet,
        variant: Variant,
        settings: &'a SolverSettings,
    ) -> Result<Self> {
        let p = OcpProblem { model, k, x_init, policy, input, terminal, variant, settings, warm_start: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        OcpProblem { variant, ..self.clone() }
    }

    pub fn with_warm_start(mut self, warm: Option<BlockedSequence>) -> Self {
        self.warm_start = warm.filter(|w| w.k_origin == self.k && w.policy == self.policy);
        self
    }

    fn validate(&self) -> Result<()> {
        self.policy.num_blocks(self.k)?;
        let n = self.model.state_dim();
        if self.x_init.len() != n || !self.x_init.is_finite() {
            return Err(arg_error("x_init", format!("expected {n} finite entries, got {:?}", self.x_init)));
        }
        if self.terminal.center.len() != n {
            return Err(arg_error("terminal", format!("center must have {n} entries")));
        }
        match self.variant {
            Variant::Relaxed { gamma_bar } if !(gamma_bar >= 0.0) => {
                return Err(arg_error("gamma_bar", "must be >= 0"));
            }
            Variant::MultiObjective { omega } if !(omega > 0.0) => {
                return Err(arg_error("omega", "must be > 0"));
            }
            _ => {}
        }
        let (lo, hi) = self.model.input_bounds();
        let within = |u: &InputValue| {
            u.len() == lo.len() && u.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| l <= v && v <= h)
        };
        match self.input {
            InputSpec::Discrete { alphabet } => {
                if alphabet.is_empty() {
                    return Err(arg_error("alphabet", "must be nonempty"));
                }
                for a in alphabet {
                    match a {
                        Action::Input(u) if !within(u) => {
                            return Err(arg_error("alphabet", format!("{u:?} outside the input bounds")));
                        }
                        Action::Cruise if !self.model.supports_cruise() => {
                            return Err(arg_error("alphabet", "cruise is not available for this model"));
                        }
                        _ => {}
                    }
                }
            }
            InputSpec::Continuous { lower, upper } => {
                if !within(lower) || !within(upper) || lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return Err(arg_error("input", "continuous box must satisfy bounds.lower <= lower <= upper <= bounds.upper"));
                }
            }
        }
        Ok(())
    }

    /// Number of predicted moves `k_f - k`.
    pub fn remaining(&self) -> usize {
        self.policy.horizon() - self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.policy.num_blocks(self.k).expect("validated at construction")
    }

    pub fn distance_spec(&self) -> DistanceSpec {
        DistanceSpec::from(self.terminal)
    }

    pub fn delta(&self, x: &State) -> f64 {
        distance_to_set(x, self.terminal, &self.distance_spec())
    }

    /// Stage cost of the terminal summand, evaluated with a zero input.
    pub(crate) fn terminal_cost(&self, x: &State) -> f64 {
        self.model.stage_cost(x, &InputValue::zeros(self.model.input_dim()))
    }
}

/// Full evaluation of one blocked candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateReport {
    /// `x(0|k) .. x(k_f-k|k)`; shorter if the rollout failed.
    pub x_traj: Vec<State>,
    pub u_traj: Vec<InputValue>,
    pub cost: f64,
    /// Terminal distance `Δ(x(k_f-k|k), X_f)`.
    pub delta: f64,
    /// `(j, excess)` for every predicted state `x(j|k)`, `j >= 1`, outside `X`.
    pub state_violations: Vec<(usize, f64)>,
    /// `(j, excess)` for every input outside the model's input box.
    pub input_violations: Vec<(usize, f64)>,
    pub error: Option<Error>,
}

impl CandidateReport {
    pub fn constraints_ok(&self) -> bool {
        self.error.is_none() && self.state_violations.is_empty() && self.input_violations.is_empty()
    }

    pub fn all_clear(&self) -> bool {
        self.constraints_ok() && self.delta == 0.0
    }
}

/// Rolls the dynamics under `v` and evaluates cost, terminal distance and
/// every constraint.
pub fn check_candidate(p: &OcpProblem<'_>, v: &BlockedSequence) -> CandidateReport {
    let mut report = CandidateReport {
        x_traj: vec![p.x_init.clone()],
        u_traj: Vec::with_capacity(p.remaining()),
        cost: f64::INFINITY,
        delta: f64::INFINITY,
        state_violations: Vec::new(),
        input_violations: Vec::new(),
        error: None,
    };
    let actions = match v.expand(p.k) {
        Ok(a) => a,
        Err(e) => {
            report.error = Some(e);
            return report;
        }
    };
    let (lo, hi) = p.model.input_bounds();
    let mut cost = 0.0;
    let mut x = p.x_init.clone();
    for (j, action) in actions.iter().enumerate() {
        let step = p.model.resolve(action, &x).and_then(|u| {
            let next = p.model.step(&x, &u)?;
            Ok((u, next))
        });
        let (u, next) = match step {
            Ok(pair) => pair,
            Err(e) => {
                report.error = Some(e);
                return report;
            }
        };
        let excess = u
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .map(|(v, (l, h))| (l - v).max(v - h))
            .fold(0.0, f64::max);
        if excess > 0.0 {
            report.input_violations.push((j, excess));
        }
        cost += p.model.stage_cost(&x, &u);
        let check = p.model.check_state_constraints(&next);
        if !check.satisfied {
            report.state_violations.push((j + 1, check.violation));
        }
        report.u_traj.push(u);
        report.x_traj.push(next.clone());
        x = next;
    }
    cost += p.terminal_cost(&x);
    report.cost = cost;
    report.delta = p.delta(&x);
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimality {
    /// Global optimum over the discrete candidate set.
    Exact,
    /// Best local solution found.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverStats {
    /// Tree nodes visited (exact) or objective evaluations (continuous).
    pub nodes_explored: u64,
    /// Complete candidates scored.
    pub leaves: u64,
    pub restarts: usize,
    pub optimality: Optimality,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub v_opt: Option<BlockedSequence>,
    /// Alphabet indices of `v_opt` (exact backend only).
    pub v_indices: Option<Vec<usize>>,
    pub u_traj: Vec<InputValue>,
    pub x_traj: Vec<State>,
    pub cost: f64,
    /// Terminal distance of the returned candidate.
    pub gamma: f64,
    /// Value of the variant's objective.
    pub objective: f64,
    pub feasible: bool,
    pub stats: SolverStats,
}

impl SolveResult {
    pub(crate) fn infeasible(stats: SolverStats) -> Self {
        SolveResult {
            v_opt: None,
            v_indices: None,
            u_traj: Vec::new(),
            x_traj: Vec::new(),
            cost: f64::INFINITY,
            gamma: f64::INFINITY,
            objective: f64::INFINITY,
            feasible: false,
            stats,
        }
    }

    pub(crate) fn from_report(
        v: BlockedSequence,
        indices: Option<Vec<usize>>,
        report: CandidateReport,
        objective: f64,
        stats: SolverStats,
    ) -> Self {
        SolveResult {
            v_opt: Some(v),
            v_indices: indices,
            u_traj: report.u_traj,
            x_traj: report.x_traj,
            cost: report.cost,
            gamma: report.delta,
            objective,
            feasible: true,
            stats,
        }
    }

    /// Input to apply now, `u*(0|k)`.
    pub fn first_input(&self) -> Option<&InputValue> {
        self.u_traj.first()
    }
}

/// Solves `p` with the configured backend.
pub fn solve(p: &OcpProblem<'_>) -> Result<SolveResult> {
    let result = match (p.settings.backend, p.input) {
        (Backend::Exact, InputSpec::Discrete { .. }) => enumerate::branch_and_bound(p)?,
        (_, InputSpec::Continuous { .. }) => continuous::solve(p)?,
        (Backend::Continuous, InputSpec::Discrete { .. }) => {
            return Err(Error::Unsupported("the continuous backend needs a continuous input box".into()));
        }
    };
    if matches!(p.variant, Variant::MinGamma) && !result.feasible {
        return Err(Error::HardInfeasible { k: p.k });
    }
    Ok(result)
}

fn expect_variant(p: &OcpProblem<'_>, ok: bool, name: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(arg_error("variant", format!("{name} called with {:?}", p.variant)))
    }
}

/// Minimum-cost blocked sequence reaching the terminal set exactly.
pub fn solve_nominal(p: &OcpProblem<'_>) -> Result<SolveResult> {
    expect_variant(p, matches!(p.variant, Variant::Nominal), "solve_nominal")?;
    solve(p)
}

/// Smallest achievable terminal distance `γ̲`, returned in
/// [`SolveResult::gamma`].
pub fn solve_min_gamma(p: &OcpProblem<'_>) -> Result<SolveResult> {
    expect_variant(p, matches!(p.variant, Variant::MinGamma), "solve_min_gamma")?;
    solve(p)
}

/// Minimum-cost blocked sequence with terminal distance at most `gamma_bar`.
pub fn solve_relaxed(p: &OcpProblem<'_>, gamma_bar: f64) -> Result<SolveResult> {
    let q = p.with_variant(Variant::Relaxed { gamma_bar });
    q.validate()?;
    solve(&q)
}

/// Minimizer of `cost + omega Δ`.
pub fn solve_multiobjective(p: &OcpProblem<'_>, omega: f64) -> Result<SolveResult> {
    let q = p.with_variant(Variant::MultiObjective { omega });
    q.validate()?;
    solve(&q)
}

/// Exact solve of a discrete problem, regardless of the configured backend.
pub fn enumerate_backend(p: &OcpProblem<'_>) -> Result<SolveResult> {
    enumerate::branch_and_bound(p)
}

/// Continuous solve, regardless of the configured backend.
pub fn continuous_backend(p: &OcpProblem<'_>) -> Result<SolveResult> {
    continuous::solve(p)
}

#[cfg(test)]
mod tests;
