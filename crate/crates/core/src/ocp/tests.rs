use super::*;
use crate::blocking::{BlockingPolicy, BlockingVariant};
use crate::dynamics::{Breakpoint, DoubleIntegrator, TrackProfile, Train, TrainParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn integrator() -> DoubleIntegrator {
    DoubleIntegrator::new(1.0).unwrap()
}

fn policy(l: usize, kf: usize) -> BlockingPolicy {
    BlockingPolicy::new(l, kf, BlockingVariant::ShrinkingN).unwrap()
}

/// Independent oracle: simulate the unit-step integrator under a blocked
/// sequence given as scalars, with the terminal index using a zero input.
/// Returns (cost, terminal state).
fn simulate(x0: (f64, f64), blocks: &[(f64, usize)]) -> (f64, (f64, f64)) {
    let (mut p, mut v) = x0;
    let mut cost = 0.0;
    for &(u, len) in blocks {
        for _ in 0..len {
            cost += f64::abs(u);
            p += v;
            v += u;
        }
    }
    (cost, (p, v))
}

fn inf_dist(x: (f64, f64), c: (f64, f64)) -> f64 {
    (x.0 - c.0).abs().max((x.1 - c.1).abs())
}

/// Block values, cost and final state.
type Candidate = ((f64, f64), f64, (f64, f64));

/// All 9 blocked sequences of the 4-step, L = 2 desk instance.
fn desk_candidates() -> Vec<Candidate> {
    let mut out = Vec::new();
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            let (cost, xf) = simulate((0.0, 0.0), &[(a, 2), (b, 2)]);
            out.push(((a, b), cost, xf));
        }
    }
    out
}

struct Desk {
    model: DoubleIntegrator,
    input: InputSpec,
    terminal: TerminalSet,
    settings: SolverSettings,
}

impl Desk {
    fn new(target: (f64, f64)) -> Self {
        Desk {
            model: integrator(),
            input: InputSpec::alphabet(&[-1.0, 0.0, 1.0]),
            terminal: TerminalSet::point(State::from([target.0, target.1])),
            settings: SolverSettings::default(),
        }
    }

    fn problem(&self, k: usize, x: State, variant: Variant) -> OcpProblem<'_> {
        OcpProblem::new(&self.model, k, x, policy(2, 4), &self.input, &self.terminal, variant, &self.settings).unwrap()
    }
}

fn scalars(r: &SolveResult) -> Vec<f64> {
    r.v_opt
        .as_ref()
        .unwrap()
        .values
        .iter()
        .map(|a| match a {
            Action::Input(u) => u[0],
            Action::Cruise => f64::NAN,
        })
        .collect()
}

#[test]
fn distance_examples() {
    let spec = DistanceSpec::new(vec![1.0, 1.0]).unwrap();
    let xf = TerminalSet::point(State::from([10.0, 0.0]));
    assert_eq!(distance_to_set(&State::from([9.5, 0.2]), &xf, &spec), 0.5);
    assert_eq!(distance_to_set(&State::from([10.0, 0.0]), &xf, &spec), 0.0);
    let bx = TerminalSet::new(State::from([0.0, 0.0]), vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
    assert_eq!(distance_to_set(&State::from([1.5, 0.0]), &bx, &spec), 1.0);
    assert_eq!(distance_to_set(&State::from([0.4, -0.5]), &bx, &spec), 0.0);
    assert!(DistanceSpec::new(vec![0.0]).is_err());
}

#[test]
fn nominal_desk_instance() {
    // Oracle: the cheapest of the 9 candidates that hits (4, 0).
    let oracle = desk_candidates()
        .into_iter()
        .filter(|(_, _, xf)| inf_dist(*xf, (4.0, 0.0)) == 0.0)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert_eq!(oracle.0, (1.0, -1.0));
    assert_eq!(oracle.1, 4.0);

    let desk = Desk::new((4.0, 0.0));
    let r = solve_nominal(&desk.problem(0, State::from([0.0, 0.0]), Variant::Nominal)).unwrap();
    assert!(r.feasible);
    assert_eq!(scalars(&r), vec![1.0, -1.0]);
    assert_eq!(r.cost, 4.0);
    assert_eq!(r.gamma, 0.0);
    assert_eq!(r.x_traj.len(), 5);
    assert_eq!(r.x_traj[4], State::from([4.0, 0.0]));
    for j in 0..4 {
        assert_eq!(desk.model.step(&r.x_traj[j], &r.u_traj[j]).unwrap(), r.x_traj[j + 1]);
    }
}

#[test]
fn nominal_zero_input_and_unreachable() {
    let desk = Desk::new((0.0, 0.0));
    let r = solve_nominal(&desk.problem(0, State::from([0.0, 0.0]), Variant::Nominal)).unwrap();
    assert!(r.feasible);
    assert_eq!(r.cost, 0.0);
    assert_eq!(scalars(&r), vec![0.0, 0.0]);

    assert!(desk_candidates().iter().all(|(_, _, xf)| inf_dist(*xf, (100.0, 0.0)) > 0.0));
    let far = Desk::new((100.0, 0.0));
    let r = solve_nominal(&far.problem(0, State::from([0.0, 0.0]), Variant::Nominal)).unwrap();
    assert!(!r.feasible);
    assert!(r.v_opt.is_none() && r.x_traj.is_empty());
}

#[test]
fn min_gamma_examples() {
    let desk = Desk::new((4.0, 0.0));
    let r = solve_min_gamma(&desk.problem(0, State::from([0.0, 0.0]), Variant::MinGamma)).unwrap();
    assert_eq!(r.gamma, 0.0);

    let oracle = desk_candidates().iter().map(|(_, _, xf)| inf_dist(*xf, (100.0, 0.0))).fold(f64::INFINITY, f64::min);
    let far = Desk::new((100.0, 0.0));
    let r = solve_min_gamma(&far.problem(0, State::from([0.0, 0.0]), Variant::MinGamma)).unwrap();
    assert_eq!(r.gamma, oracle);

    // Single remaining move: minimum over the alphabet of Δ(f(x, u)).
    let x = State::from([96.5, 3.0]);
    let single = desk_candidates_single(&x, (100.0, 0.0));
    let r = solve_min_gamma(&far.problem(3, x, Variant::MinGamma)).unwrap();
    assert_eq!(r.gamma, single);
}

fn desk_candidates_single(x: &State, target: (f64, f64)) -> f64 {
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|u| inf_dist((x[0] + x[1], x[1] + u), target))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn relaxed_examples() {
    let desk = Desk::new((4.0, 0.0));
    let base = desk.problem(0, State::from([0.0, 0.0]), Variant::Nominal);
    let nominal = solve_nominal(&base).unwrap();
    let gamma = solve_min_gamma(&base.with_variant(Variant::MinGamma)).unwrap().gamma;
    let relaxed = solve_relaxed(&base, gamma).unwrap();
    assert_eq!(relaxed.v_opt, nominal.v_opt);
    assert_eq!(relaxed.cost, nominal.cost);

    // γ̄ = ∞: cheapest candidate ignoring the terminal set (all-zero input).
    let oracle = desk_candidates().iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let free = solve_relaxed(&base, f64::INFINITY).unwrap();
    assert_eq!(free.cost, oracle);
    assert_eq!(scalars(&free), vec![0.0, 0.0]);

    let forced_input = InputSpec::alphabet(&[1.0]);
    let p = OcpProblem::new(&desk.model, 0, State::from([0.0, 0.0]), policy(2, 4), &forced_input, &desk.terminal, Variant::Nominal, &desk.settings).unwrap();
    let forced = solve_relaxed(&p, 0.0).unwrap();
    assert!(!forced.feasible);
    let gamma = solve_min_gamma(&p.with_variant(Variant::MinGamma)).unwrap().gamma;
    let forced = solve_relaxed(&p, gamma).unwrap();
    assert!(forced.feasible);
    assert_eq!(scalars(&forced), vec![1.0, 1.0]);
    let (_, xf) = simulate((0.0, 0.0), &[(1.0, 4)]);
    assert_eq!(forced.gamma, inf_dist(xf, (4.0, 0.0)));

    assert!(solve_relaxed(&base, -1.0).is_err());
}

#[test]
fn multiobjective_examples() {
    let far = Desk::new((100.0, 0.0));
    let base = far.problem(0, State::from([0.0, 0.0]), Variant::Nominal);
    let lb = solve_min_gamma(&base.with_variant(Variant::MinGamma)).unwrap().gamma;
    let heavy = solve_multiobjective(&base, 1e9).unwrap();
    assert!((heavy.gamma - lb).abs() <= 1e-6);

    let light = solve_multiobjective(&base, 1e-12).unwrap();
    let free = solve_relaxed(&base, f64::INFINITY).unwrap();
    assert_eq!(light.cost, free.cost);

    for omega in [0.01, 0.3, 1.0, 7.0] {
        let r = solve_multiobjective(&base, omega).unwrap();
        let oracle = desk_candidates()
            .iter()
            .map(|(_, c, xf)| c + omega * inf_dist(*xf, (100.0, 0.0)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.objective, oracle, "omega = {omega}");
    }
    assert!(solve_multiobjective(&base, 0.0).is_err());
}

#[test]
fn variant_guard() {
    let desk = Desk::new((4.0, 0.0));
    let p = desk.problem(0, State::from([0.0, 0.0]), Variant::MinGamma);
    assert!(solve_nominal(&p).is_err());
    assert!(solve_min_gamma(&p.with_variant(Variant::Nominal)).is_err());
}

#[test]
fn enumeration_counts_and_cap() {
    let model = integrator();
    let input = InputSpec::alphabet(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
    let terminal = TerminalSet::point(State::from([3.0, 0.0]));
    let settings = SolverSettings::default();
    let single = OcpProblem::new(&model, 0, State::from([0.0, 0.0]), policy(3, 3), &input, &terminal, Variant::MinGamma, &settings).unwrap();
    let r = exhaustive(&single).unwrap();
    assert_eq!(r.stats.leaves, 5);
    let bb = enumerate_backend(&single).unwrap();
    assert!(bb.stats.leaves <= 5);

    let three = OcpProblem::new(&model, 0, State::from([0.0, 0.0]), policy(2, 6), &input, &terminal, Variant::Relaxed { gamma_bar: 0.5 }, &settings).unwrap();
    // Naive loop oracle over the 125 candidates.
    let mut best = f64::INFINITY;
    for a in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for b in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            for c in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let (cost, xf) = simulate((0.0, 0.0), &[(a, 2), (b, 2), (c, 2)]);
                if inf_dist(xf, (3.0, 0.0)) <= 0.5 + GAMMA_TOL {
                    best = best.min(cost);
                }
            }
        }
    }
    let naive = exhaustive(&three).unwrap();
    assert_eq!(naive.stats.leaves, 125);
    assert_eq!(naive.cost, best);
    assert_eq!(enumerate_backend(&three).unwrap().cost, best);

    let tight = SolverSettings { candidate_cap: 100, ..SolverSettings::default() };
    let capped = OcpProblem::new(&model, 0, State::from([0.0, 0.0]), policy(2, 6), &input, &terminal, Variant::Nominal, &tight).unwrap();
    assert!(matches!(solve(&capped), Err(Error::CandidateCap { candidates: 125, cap: 100 })));
}

fn random_instance(rng: &mut ChaCha8Rng) -> (DoubleIntegrator, InputSpec, TerminalSet, BlockingPolicy, usize, State, Variant) {
    let size = rng.gen_range(1..=5);
    let mut values: Vec<f64> = (0..size).map(|_| (rng.gen_range(-4..=4) as f64) * 0.25).collect();
    values.dedup();
    let kf = rng.gen_range(1..=10);
    let l = rng.gen_range(1..=kf);
    let p = policy(l, kf);
    let k = rng.gen_range(0..kf);
    let mut model = integrator();
    if rng.gen_bool(0.5) {
        model = model.with_velocity_bounds(-1.5, 1.5);
    }
    let x0 = State::from([rng.gen_range(-3..=3) as f64 * 0.5, rng.gen_range(-2..=2) as f64 * 0.5]);
    let half = if rng.gen_bool(0.5) { vec![0.0, 0.0] } else { vec![0.5, 0.25] };
    let terminal = TerminalSet::new(State::from([rng.gen_range(-4..=4) as f64 * 0.5, 0.0]), half, vec![1.0, 2.0]).unwrap();
    let variant = match rng.gen_range(0..4) {
        0 => Variant::Nominal,
        1 => Variant::MinGamma,
        2 => Variant::Relaxed { gamma_bar: rng.gen_range(0..4) as f64 * 0.5 },
        _ => Variant::MultiObjective { omega: [0.1, 1.0, 10.0][rng.gen_range(0..3)] },
    };
    (model, InputSpec::alphabet(&values), terminal, p, k, x0, variant)
}

#[test]
fn branch_and_bound_matches_naive_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let settings = SolverSettings::default();
    for _ in 0..200 {
        let (model, input, terminal, pol, k, x0, variant) = random_instance(&mut rng);
        let p = OcpProblem::new(&model, k, x0, pol, &input, &terminal, variant, &settings).unwrap();
        let naive = exhaustive(&p).unwrap();
        let bb = enumerate_backend(&p).unwrap();
        assert_eq!(naive.feasible, bb.feasible);
        if naive.feasible {
            assert_eq!(naive.objective, bb.objective);
            assert_eq!(naive.v_indices, bb.v_indices);
        }
        assert!(bb.stats.leaves <= naive.stats.leaves);
    }
}

#[test]
fn relaxation_is_monotone_in_gamma_bar() {
    let far = Desk::new((5.0, 0.5));
    let base = far.problem(0, State::from([0.0, 0.0]), Variant::Nominal);
    let mut last = f64::INFINITY;
    for i in 0..=20 {
        let r = solve_relaxed(&base, i as f64 * 0.25).unwrap();
        let c = if r.feasible { r.cost } else { f64::INFINITY };
        assert!(c <= last);
        last = c;
    }
}

#[test]
fn min_gamma_bounded_by_warm_start_tail() {
    let far = Desk::new((9.0, 0.0));
    let p0 = far.problem(0, State::from([0.0, 0.0]), Variant::Relaxed { gamma_bar: f64::INFINITY });
    let r0 = solve(&p0).unwrap();
    let tail = r0.v_opt.unwrap().warm_start_tail().unwrap();
    let x1 = r0.x_traj[1].clone();
    let p1 = far.problem(1, x1, Variant::MinGamma).with_warm_start(Some(tail.clone()));
    let gamma = solve_min_gamma(&p1).unwrap().gamma;
    assert!(gamma <= check_candidate(&p1, &tail).delta);
}

#[test]
fn warm_start_does_not_change_exact_result() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = SolverSettings::default();
    for _ in 0..100 {
        let (model, input, terminal, pol, k, x0, variant) = random_instance(&mut rng);
        let p = OcpProblem::new(&model, k, x0, pol, &input, &terminal, variant, &settings).unwrap();
        let cold = enumerate_backend(&p).unwrap();
        let InputSpec::Discrete { alphabet } = &input else { unreachable!() };
        let n = p.num_blocks();
        let warm_values = (0..n).map(|i| alphabet[(i * 7 + 3) % alphabet.len()].clone()).collect();
        let warm = BlockedSequence::new(warm_values, k, pol).unwrap();
        let hot = enumerate_backend(&p.clone().with_warm_start(Some(warm))).unwrap();
        assert_eq!(cold.v_indices, hot.v_indices);
        assert_eq!(cold.objective, hot.objective);
    }
}

fn speed_limited_train() -> Train {
    let params = TrainParams {
        mass: 1e5,
        static_mass: 1e5,
        a: 1000.0,
        b: 10.0,
        c: 1.0,
        d: 0.0,
        gravity: 9.81,
        sampling_time: 1.0,
        max_traction_force: 1e5,
        max_traction_power: 2e6,
        max_braking_force: 1e5,
    };
    let track = TrackProfile::new(vec![
        Breakpoint { start_pos_m: 0.0, slope_rad: 0.0, curve_radius_m: 1e12, speed_limit_mps: 20.0 },
        Breakpoint { start_pos_m: 30.0, slope_rad: 0.0, curve_radius_m: 1e12, speed_limit_mps: 2.0 },
    ])
    .unwrap();
    Train::new(params, track).unwrap()
}

#[test]
fn check_candidate_reports() {
    let train = speed_limited_train();
    let input = InputSpec::alphabet(&[-1.0, 0.0, 1.0]);
    let settings = SolverSettings::default();
    let terminal = TerminalSet::new(State::from([0.0, 0.0]), vec![1e6, 1e6], vec![1.0, 1.0]).unwrap();
    let p = OcpProblem::new(&train, 0, State::from([0.0, 5.0]), policy(4, 4), &input, &terminal, Variant::Nominal, &settings).unwrap();
    let coast = BlockedSequence::new(vec![Action::scalar(0.0)], 0, p.policy).unwrap();
    let r = check_candidate(&p, &coast);
    assert!(r.all_clear());
    assert_eq!(r.x_traj.len(), 5);

    // Full traction from 28 m crosses into the 2 m/s zone at 30 m.
    let p = OcpProblem::new(&train, 0, State::from([28.0, 1.0]), policy(4, 4), &input, &terminal, Variant::Nominal, &settings).unwrap();
    let push = BlockedSequence::new(vec![Action::scalar(1.0)], 0, p.policy).unwrap();
    let r = check_candidate(&p, &push);
    let offending: Vec<usize> = r.state_violations.iter().map(|(j, _)| *j).collect();
    assert!(!offending.is_empty());
    for (j, x) in r.x_traj.iter().enumerate().skip(1) {
        let limit = train.track.at(x[0]).speed_limit_mps;
        assert_eq!(offending.contains(&j), x[1] > limit || x[1] < 0.0, "j = {j}");
    }

    let far = TerminalSet::point(State::from([500.0, 0.0]));
    let p = OcpProblem::new(&train, 0, State::from([0.0, 5.0]), policy(4, 4), &input, &far, Variant::Nominal, &settings).unwrap();
    let r = check_candidate(&p, &coast);
    assert!(r.constraints_ok());
    let last = r.x_traj.last().unwrap();
    assert_eq!(r.delta, (500.0 - last[0]).max(last[1].abs()));
}

#[test]
fn cruise_alphabet_resolves_per_step() {
    let train = speed_limited_train();
    let input = InputSpec::Discrete { alphabet: vec![Action::scalar(0.0), Action::Cruise] };
    let settings = SolverSettings::default();
    let terminal = TerminalSet::new(State::from([0.0, 0.0]), vec![1e6, 1e6], vec![1.0, 1.0]).unwrap();
    let p = OcpProblem::new(&train, 0, State::from([0.0, 1.0]), policy(3, 3), &input, &terminal, Variant::Nominal, &settings).unwrap();
    let cruise = BlockedSequence::new(vec![Action::Cruise], 0, p.policy).unwrap();
    let r = check_candidate(&p, &cruise);
    for x in &r.x_traj {
        assert!((x[1] - 1.0).abs() < 1e-9);
    }
    let int = integrator();
    assert!(OcpProblem::new(&int, 0, State::from([0.0, 1.0]), policy(3, 3), &input, &terminal, Variant::Nominal, &settings).is_err());
}

fn continuous_setup() -> (DoubleIntegrator, InputSpec, SolverSettings) {
    let input = InputSpec::Continuous { lower: InputValue::scalar(-1.0), upper: InputValue::scalar(1.0) };
    let settings = SolverSettings { backend: Backend::Continuous, ..SolverSettings::default() };
    (integrator(), input, settings)
}

#[test]
fn continuous_matches_two_block_closed_form() {
    // Blocks (v, v, w, w): vel 2v + 2w = 0 and pos 4v = target.
    let (model, input, settings) = continuous_setup();
    let terminal = TerminalSet::point(State::from([2.0, 0.0]));
    let p = OcpProblem::new(&model, 0, State::from([0.0, 0.0]), policy(2, 4), &input, &terminal, Variant::Nominal, &settings).unwrap();
    let r = solve_nominal(&p).unwrap();
    assert!(r.feasible);
    assert_eq!(r.stats.optimality, Optimality::Local);
    let v = scalars(&r);
    assert!((v[0] - 0.5).abs() < 1e-3, "{v:?}");
    assert!((v[1] + 0.5).abs() < 1e-3, "{v:?}");

    // Re-solving from the optimum finds nothing better.
    let again = solve_nominal(&p.clone().with_warm_start(r.v_opt.clone())).unwrap();
    assert!(again.objective >= r.objective - 1e-9);
}

/// Golden-section search on a unimodal scalar function.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn continuous_scalar_instance_matches_golden_section() {
    // N = 1 over three moves: terminal velocity 3u, position 3u. Terminal
    // weights make the velocity error dominate.
    let (model, input, settings) = continuous_setup();
    let terminal = TerminalSet::new(State::from([0.0, 0.3]), vec![0.0, 0.0], vec![1e-3, 1.0]).unwrap();
    let p = OcpProblem::new(&model, 0, State::from([0.0, 0.0]), policy(3, 3), &input, &terminal, Variant::MinGamma, &settings).unwrap();
    let delta = |u: f64| (1e-3 * (3.0 * u).abs()).max((3.0 * u - 0.3).abs());
    let oracle = golden_section(delta, -1.0, 1.0);
    let r = solve_min_gamma(&p).unwrap();
    assert!((scalars(&r)[0] - oracle).abs() < 1e-6, "{} vs {oracle}", scalars(&r)[0]);
}

#[test]
fn continuous_model_errors_propagate() {
    let (model, input, settings) = continuous_setup();
    let terminal = TerminalSet::point(State::from([0.0, 0.0]));
    let p = OcpProblem::new(&model, 0, State::from([f64::MAX, f64::MAX]), policy(2, 2), &input, &terminal, Variant::Nominal, &settings).unwrap();
    assert!(matches!(solve(&p), Err(Error::ModelEvaluation { .. })));
}
