//! Multi-start projected coordinate descent for continuous input boxes.
//!
//! Constraints enter as quadratic penalties on their excess, tightened over a
//! schedule of penalty weights. The distance slack `γ` of the `MinGamma` and
//! `MultiObjective` variants is an extra decision variable, which keeps the
//! penalized objective continuously differentiable away from the stage-cost
//! kinks. Each coordinate moves along the negative finite-difference
//! derivative with an adaptive step, projected onto its box.
//!
//! The result is a local solution only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

use super::{check_candidate, InputSpec, OcpProblem, Optimality, SolveResult, SolverStats, Variant, GAMMA_TOL};
use crate::blocking::BlockedSequence;
use crate::dynamics::{Action, InputValue};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSettings {
    /// Random starts, in addition to the warm start and the box midpoint.
    pub starts: usize,
    pub seed: u64,
    /// Coordinate sweeps per penalty stage.
    pub max_sweeps: usize,
    pub penalty_schedule: Vec<f64>,
    /// Smallest trial step before a coordinate is considered converged.
    pub step_tol: f64,
    /// Constraint excess accepted as feasible.
    pub feasibility_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for ContinuousSettings {
    fn default() -> Self {
        ContinuousSettings {
            starts: 4,
            seed: 0,
            max_sweeps: 400,
            penalty_schedule: vec![1e2, 1e4, 1e6, 1e8],
            step_tol: 1e-12,
            feasibility_tol: 1e-6,
            fd_step: 1e-7,
        }
    }
}

struct Eval {
    cost: f64,
    delta: f64,
    /// Sum of squared state-constraint excesses.
    state_penalty: f64,
    /// Weighted per-coordinate terminal excess.
    excess: SmallVec<[f64; 4]>,
}

struct Problem<'p, 'a> {
    p: &'p OcpProblem<'a>,
    lengths: Vec<usize>,
    m: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Whether the last coordinate is the slack `γ`.
    has_gamma: bool,
    scale: f64,
    evaluations: u64,
}

impl Problem<'_, '_> {
    fn inputs(&self) -> usize {
        self.lengths.len() * self.m
    }

    fn evaluate(&mut self, z: &[f64]) -> Result<Eval> {
        self.evaluations += 1;
        let p = self.p;
        let mut x = p.x_init.clone();
        let mut cost = 0.0;
        let mut state_penalty = 0.0;
        for (b, &len) in self.lengths.iter().enumerate() {
            let u = InputValue::from_slice_unchecked(&z[b * self.m..(b + 1) * self.m]);
            for _ in 0..len {
                let next = p.model.step(&x, &u)?;
                cost += p.model.stage_cost(&x, &u);
                let v = p.model.check_state_constraints(&next).violation;
                state_penalty += v * v;
                x = next;
            }
        }
        cost += p.terminal_cost(&x);
        let t = p.terminal;
        let excess = x
            .iter()
            .zip(t.center.iter())
            .zip(&t.half_widths)
            .zip(&t.weights)
            .map(|(((xi, ci), hi), wi)| wi * ((xi - ci).abs() - hi).max(0.0))
            .collect::<SmallVec<[f64; 4]>>();
        let delta = excess.iter().copied().fold(0.0, f64::max);
        Ok(Eval { cost, delta, state_penalty, excess })
    }

    fn penalized(&mut self, z: &[f64], rho: f64) -> f64 {
        let Ok(e) = self.evaluate(z) else {
            return f64::INFINITY;
        };
        let gamma = if self.has_gamma { z[self.inputs()] } else { 0.0 };
        let slack_sq = |allow: f64| e.excess.iter().map(|x| (x - allow).max(0.0).powi(2)).sum::<f64>();
        let (base, terminal) = match self.p.variant {
            Variant::Nominal => (e.cost / self.scale, slack_sq(0.0)),
            Variant::Relaxed { gamma_bar } => (e.cost / self.scale, slack_sq(gamma_bar)),
            Variant::MinGamma => (gamma, slack_sq(gamma)),
            Variant::MultiObjective { omega } => ((e.cost + omega * gamma) / self.scale, slack_sq(gamma)),
        };
        base + rho * (e.state_penalty + terminal)
    }

    fn coordinate_box(&self, i: usize) -> (f64, f64) {
        if i < self.inputs() {
            (self.lower[i % self.m], self.upper[i % self.m])
        } else {
            (0.0, f64::INFINITY)
        }
    }

    fn derivative(&mut self, z: &mut [f64], i: usize, rho: f64, f0: f64) -> f64 {
        let (lo, hi) = self.coordinate_box(i);
        let zi = z[i];
        let h = self.p.settings.continuous.fd_step * zi.abs().max(1.0);
        let up = (zi + h).min(hi);
        let down = (zi - h).max(lo);
        z[i] = up;
        let fu = if up > zi { self.penalized(z, rho) } else { f0 };
        z[i] = down;
        let fd = if down < zi { self.penalized(z, rho) } else { f0 };
        z[i] = zi;
        if up > down {
            (fu - fd) / (up - down)
        } else {
            0.0
        }
    }

    /// Runs every penalty stage from `z`; returns the final point.
    fn descend(&mut self, mut z: Vec<f64>) -> Vec<f64> {
        let settings = &self.p.settings.continuous;
        let (schedule, max_sweeps, step_tol) = (settings.penalty_schedule.clone(), settings.max_sweeps, settings.step_tol);
        let mut steps: Vec<f64> = (0..z.len())
            .map(|i| {
                let (lo, hi) = self.coordinate_box(i);
                if hi.is_finite() { 0.1 * (hi - lo).max(1e-3) } else { 0.1 * z[i].max(1e-2) }
            })
            .collect();
        for &rho in &schedule {
            let mut f = self.penalized(&z, rho);
            if !f.is_finite() {
                return z;
            }
            for _ in 0..max_sweeps {
                let mut improved = false;
                for i in 0..z.len() {
                    let g = self.derivative(&mut z, i, rho, f);
                    let dirs: SmallVec<[f64; 2]> = if g > 0.0 {
                        smallvec::smallvec![-1.0]
                    } else if g < 0.0 {
                        smallvec::smallvec![1.0]
                    } else {
                        smallvec::smallvec![-1.0, 1.0]
                    };
                    let (lo, hi) = self.coordinate_box(i);
                    let zi = z[i];
                    'dirs: for d in dirs {
                        let mut t = steps[i];
                        while t >= step_tol {
                            let cand = (zi + d * t).clamp(lo, hi);
                            if cand != zi {
                                z[i] = cand;
                                let fc = self.penalized(&z, rho);
                                if fc < f {
                                    f = fc;
                                    improved = true;
                                    steps[i] = (2.0 * t).min(if hi.is_finite() { hi - lo } else { f64::MAX });
                                    break 'dirs;
                                }
                                z[i] = zi;
                            }
                            t *= 0.5;
                        }
                        steps[i] = (4.0 * step_tol).max(t);
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        z
    }
}

pub(crate) fn solve(p: &OcpProblem<'_>) -> Result<SolveResult> {
    let InputSpec::Continuous { lower, upper } = p.input else {
        return Err(Error::Unsupported("the continuous backend needs a continuous input box".into()));
    };
    let settings = &p.settings.continuous;
    let lengths = p.policy.block_lengths(p.k)?;
    let n = lengths.len();
    let has_gamma = matches!(p.variant, Variant::MinGamma | Variant::MultiObjective { .. });
    let mut prob = Problem {
        p,
        m: lower.len(),
        lengths,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        has_gamma,
        scale: 1.0,
        evaluations: 0,
    };
    let nm = prob.inputs();

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &p.warm_start {
        let flat: Vec<f64> = w
            .values
            .iter()
            .filter_map(|a| match a {
                Action::Input(u) => Some(u.to_vec()),
                Action::Cruise => None,
            })
            .flatten()
            .collect();
        if flat.len() == nm {
            starts.push(flat);
        }
    }
    starts.push((0..nm).map(|i| 0.5 * (prob.lower[i % prob.m] + prob.upper[i % prob.m])).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for _ in 0..settings.starts {
        starts.push((0..nm).map(|i| rng.gen_range(prob.lower[i % prob.m]..=prob.upper[i % prob.m])).collect());
    }

    let mut first_error = None;
    let mut best: Option<(bool, f64, BlockedSequence, super::CandidateReport)> = None;
    for start in &starts {
        let initial = match prob.evaluate(start) {
            Ok(e) => e,
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        prob.scale = initial.cost.abs().max(1.0);
        let mut z = start.clone();
        if has_gamma {
            z.push(initial.delta);
        }
        let z = prob.descend(z);
        let values = (0..n).map(|b| Action::Input(InputValue::from_slice_unchecked(&z[b * prob.m..(b + 1) * prob.m]))).collect();
        let v = BlockedSequence::new(values, p.k, p.policy)?;
        let report = check_candidate(p, &v);
        if let Some(e) = &report.error {
            first_error.get_or_insert(e.clone());
            continue;
        }
        let (feasible, objective) = judge(p, &report);
        let better = match &best {
            None => true,
            Some((bf, bo, _, _)) => (feasible && !bf) || (feasible == *bf && objective < *bo),
        };
        if better {
            best = Some((feasible, objective, v, report));
        }
    }

    let stats = SolverStats {
        nodes_explored: prob.evaluations,
        leaves: starts.len() as u64,
        restarts: starts.len(),
        optimality: Optimality::Local,
    };
    match best {
        Some((true, objective, v, report)) => Ok(SolveResult::from_report(v, None, report, objective, stats)),
        Some(_) => Ok(SolveResult::infeasible(stats)),
        None => Err(first_error.unwrap_or_else(|| Error::Unsupported("no start could be evaluated".into()))),
    }
}

/// Feasibility within tolerance and objective value of a local solution.
fn judge(p: &OcpProblem<'_>, r: &super::CandidateReport) -> (bool, f64) {
    let tol = p.settings.continuous.feasibility_tol;
    let states_ok = r.state_violations.iter().all(|&(_, v)| v <= tol) && r.input_violations.is_empty();
    let (terminal_ok, objective) = match p.variant {
        Variant::Nominal => (r.delta <= tol, r.cost),
        Variant::MinGamma => (true, r.delta),
        Variant::Relaxed { gamma_bar } => (r.delta <= gamma_bar + tol.max(GAMMA_TOL), r.cost),
        Variant::MultiObjective { omega } => (true, r.cost + omega * r.delta),
    };
    (states_ok && terminal_ok, objective)
}
