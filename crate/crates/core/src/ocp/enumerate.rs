//! Exact solvers for discrete alphabets.
//!
//! Candidates are ordered lexicographically by alphabet index; among equal
//! objectives the lexicographically smallest candidate wins.

use super::{
    check_candidate, InputSpec, OcpProblem, Optimality, SolveResult, SolverStats, Variant,
};
use crate::blocking::BlockedSequence;
use crate::dynamics::{Action, State};
use crate::error::{Error, Result};

fn alphabet<'p>(p: &'p OcpProblem<'_>) -> Result<&'p [Action]> {
    match p.input {
        InputSpec::Discrete { alphabet } => Ok(alphabet),
        InputSpec::Continuous { .. } => {
            Err(Error::Unsupported("exact enumeration needs a discrete alphabet".into()))
        }
    }
}

fn check_cap(p: &OcpProblem<'_>, size: usize, blocks: usize) -> Result<()> {
    let candidates = (size as u128).checked_pow(blocks as u32).unwrap_or(u128::MAX);
    if candidates > p.settings.candidate_cap as u128 {
        return Err(Error::CandidateCap { candidates, cap: p.settings.candidate_cap });
    }
    Ok(())
}

fn finish(
    p: &OcpProblem<'_>,
    alphabet: &[Action],
    best: Option<(f64, Vec<usize>)>,
    stats: SolverStats,
) -> Result<SolveResult> {
    match best {
        Some((objective, indices)) => {
            let values = indices.iter().map(|&i| alphabet[i].clone()).collect();
            let v = BlockedSequence::new(values, p.k, p.policy)?;
            let report = check_candidate(p, &v);
            Ok(SolveResult::from_report(v, Some(indices), report, objective, stats))
        }
        None => Ok(SolveResult::infeasible(stats)),
    }
}

/// Naive enumeration: scores every candidate through [`check_candidate`].
/// Candidates whose rollout fails to evaluate count as infeasible.
///
/// This is the reference the branch-and-bound search is tested against; it
/// shares no rollout code with it.
pub fn exhaustive(p: &OcpProblem<'_>) -> Result<SolveResult> {
    let alphabet = alphabet(p)?;
    let n = p.num_blocks();
    check_cap(p, alphabet.len(), n)?;
    let mut indices = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stats = SolverStats { nodes_explored: 0, leaves: 0, restarts: 0, optimality: Optimality::Exact };
    loop {
        let values = indices.iter().map(|&i| alphabet[i].clone()).collect();
        let v = BlockedSequence::new(values, p.k, p.policy)?;
        let report = check_candidate(p, &v);
        stats.nodes_explored += 1;
        stats.leaves += 1;
        if report.constraints_ok() {
            if let Some(obj) = p.variant.score(report.cost, report.delta) {
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, indices.clone()));
                }
            }
        }
        // Odometer increment, last block fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return finish(p, alphabet, best, stats);
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < alphabet.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

struct Search<'p, 'a> {
    p: &'p OcpProblem<'a>,
    alphabet: &'p [Action],
    lengths: Vec<usize>,
    prefix: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    /// Objective of the warm start, if it is admissible.
    warm_bound: f64,
    cost_bounded: bool,
    stats: SolverStats,
    done: bool,
}

impl Search<'_, '_> {
    fn threshold(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(b, _)| *b).min(self.warm_bound)
    }

    /// Rolls one block from `x`; `None` when a move fails or leaves `X`.
    fn roll_block(&self, action: &Action, len: usize, x: &State, cost: f64) -> Option<(State, f64)> {
        let model = self.p.model;
        let mut x = x.clone();
        let mut cost = cost;
        for _ in 0..len {
            let next = model.resolve(action, &x).and_then(|u| {
                let next = model.step(&x, &u)?;
                Ok((model.stage_cost(&x, &u), next))
            });
            let (stage, next) = next.ok()?;
            cost += stage;
            if !model.check_state_constraints(&next).satisfied {
                return None;
            }
            x = next;
        }
        Some((x, cost))
    }

    fn dfs(&mut self, block: usize, x: &State, cost: f64) {
        let len = self.lengths[block];
        let last = block + 1 == self.lengths.len();
        for a in 0..self.alphabet.len() {
            self.stats.nodes_explored += 1;
            let action = &self.alphabet[a];
            let Some((next, cost)) = self.roll_block(action, len, x, cost) else {
                continue;
            };
            // Stage costs are nonnegative, so the prefix cost bounds every
            // completion. Strict comparison keeps lexicographic tie-breaking.
            if self.cost_bounded && cost > self.threshold() {
                continue;
            }
            self.prefix.push(a);
            if last {
                self.stats.leaves += 1;
                let total = cost + self.p.terminal_cost(&next);
                let delta = self.p.delta(&next);
                if let Some(obj) = self.p.variant.score(total, delta) {
                    if self.best.as_ref().is_none_or(|(b, _)| obj < *b) {
                        self.best = Some((obj, self.prefix.clone()));
                        if matches!(self.p.variant, Variant::MinGamma) && obj == 0.0 {
                            self.done = true;
                        }
                    }
                }
            } else {
                self.dfs(block + 1, &next, cost);
            }
            self.prefix.pop();
            if self.done {
                return;
            }
        }
    }
}

/// Depth-first branch-and-bound over blocks with incremental rollouts.
///
/// Prunes on hard state-constraint violations and, for cost-based variants,
/// on the accumulated stage cost. Returns the same optimum and argmin as
/// [`exhaustive`].
pub(crate) fn branch_and_bound(p: &OcpProblem<'_>) -> Result<SolveResult> {
    let alphabet = alphabet(p)?;
    let lengths = p.policy.block_lengths(p.k)?;
    check_cap(p, alphabet.len(), lengths.len())?;

    let warm_bound = p
        .warm_start
        .as_ref()
        .map(|w| check_candidate(p, w))
        .filter(|r| r.constraints_ok())
        .and_then(|r| p.variant.score(r.cost, r.delta))
        .unwrap_or(f64::INFINITY);

    let mut search = Search {
        p,
        alphabet,
        prefix: Vec::with_capacity(lengths.len()),
        lengths,
        best: None,
        warm_bound,
        cost_bounded: p.variant.cost_bounded(),
        stats: SolverStats { nodes_explored: 0, leaves: 0, restarts: 0, optimality: Optimality::Exact },
        done: false,
    };
    search.dfs(0, &p.x_init, 0.0);
    let Search { best, stats, .. } = search;
    finish(p, alphabet, best, stats)
}
