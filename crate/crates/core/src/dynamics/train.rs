use serde::{Deserialize, Serialize};

use super::{finite_or_error, ConstraintCheck, InputValue, Model, State, TrackProfile};
use crate::error::{arg_error, Error, Result};

/// Speed floor used inside the power-limited traction branch.
pub const MIN_TRACTION_SPEED: f64 = 0.1;

const CRUISE_MAX_BISECTIONS: usize = 200;
const CRUISE_INPUT_TOL: f64 = 1e-9;

/// Physical parameters of the train and its synthetic traction envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Total mass including rotating inertia, kg.
    pub mass: f64,
    /// Static mass, kg.
    pub static_mass: f64,
    /// Constant resistance term, N.
    pub a: f64,
    /// Linear resistance term, N s/m.
    pub b: f64,
    /// Quadratic resistance term, N s^2/m^2.
    pub c: f64,
    /// Curvature resistance coefficient, divided by the curve radius.
    pub d: f64,
    /// Gravity acceleration, m/s^2.
    pub gravity: f64,
    /// Sampling period, s.
    pub sampling_time: f64,
    /// Traction force available at low speed, N.
    pub max_traction_force: f64,
    /// Traction power limit, W.
    pub max_traction_power: f64,
    /// Braking force at full brake command, N.
    pub max_braking_force: f64,
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("static_mass", self.static_mass),
            ("a", self.a),
            ("gravity", self.gravity),
            ("sampling_time", self.sampling_time),
            ("max_traction_force", self.max_traction_force),
            ("max_traction_power", self.max_traction_power),
            ("max_braking_force", self.max_braking_force),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(arg_error("train", format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("b", self.b), ("c", self.c), ("d", self.d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(arg_error("train", format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.mass < self.static_mass {
            return Err(arg_error("train", "mass must be >= static_mass"));
        }
        Ok(())
    }

    /// Traction force: constant force at low speed, constant power above
    /// `max_traction_power / max_traction_force`, scaled by the positive part
    /// of the command.
    pub fn traction_force(&self, x: &State, u: &InputValue) -> f64 {
        let command = u[0].max(0.0);
        let speed = x[1].max(MIN_TRACTION_SPEED);
        command * self.max_traction_force.min(self.max_traction_power / speed)
    }

    /// Braking force, linear in the negative part of the command. Zero at
    /// standstill.
    pub fn braking_force(&self, x: &State, u: &InputValue) -> f64 {
        if x[1] <= 0.0 {
            return 0.0;
        }
        (-u[0]).max(0.0) * self.max_braking_force
    }

    /// Velocity-dependent resistance `A + B v + C v^2`.
    pub fn velocity_resistance(&self, speed: f64) -> f64 {
        self.a + self.b * speed + self.c * speed * speed
    }
}

/// Longitudinal train model on a known track.
#[derive(Clone, Debug, PartialEq)]
pub struct Train {
    pub params: TrainParams,
    pub track: TrackProfile,
}

impl Train {
    pub fn new(params: TrainParams, track: TrackProfile) -> Result<Self> {
        params.validate()?;
        Ok(Train { params, track })
    }

    /// Slope and curvature resistance at the given position.
    pub fn grade_resistance(&self, position: f64) -> f64 {
        let seg = self.track.at(position);
        self.params.static_mass
            * (self.params.gravity * seg.slope_rad.tan() + self.params.d / seg.curve_radius_m)
    }

    /// Total resistive force `R_v(x2) + R_g(x1)`, N.
    pub fn resistive_force(&self, x: &State) -> f64 {
        self.params.velocity_resistance(x[1]) + self.grade_resistance(x[0])
    }

    pub fn traction_force(&self, x: &State, u: &InputValue) -> f64 {
        self.params.traction_force(x, u)
    }

    pub fn braking_force(&self, x: &State, u: &InputValue) -> f64 {
        self.params.braking_force(x, u)
    }

    fn bisect(mut lo: f64, mut hi: f64, target: f64, force: impl Fn(f64) -> f64) -> f64 {
        // `force` is nondecreasing on [lo, hi] and brackets `target`.
        let tol = 1e-9 * target.abs().max(1.0);
        for _ in 0..CRUISE_MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let residual = force(mid) - target;
            if (hi - lo) <= CRUISE_INPUT_TOL && residual.abs() <= tol {
                return mid;
            }
            if residual < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Model for Train {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn sampling_time(&self) -> f64 {
        self.params.sampling_time
    }

    fn input_bounds(&self) -> (InputValue, InputValue) {
        (InputValue::scalar(-1.0), InputValue::scalar(1.0))
    }

    fn step(&self, x: &State, u: &InputValue) -> Result<State> {
        let p = &self.params;
        let net = self.traction_force(x, u) - self.braking_force(x, u) - self.resistive_force(x);
        let next = State::from([
            x[0] + p.sampling_time * x[1],
            x[1] + p.sampling_time * net / p.mass,
        ]);
        finite_or_error(next, x, u)
    }

    /// Absolute traction power `|F_T v|`.
    fn stage_cost(&self, x: &State, u: &InputValue) -> f64 {
        (self.traction_force(x, u) * x[1]).abs()
    }

    fn check_state_constraints(&self, x: &State) -> ConstraintCheck {
        let limit = self.track.at(x[0]).speed_limit_mps;
        ConstraintCheck::from_violation((-x[1]).max(x[1] - limit))
    }

    /// Input that balances resistance: traction on resistive (e.g. uphill)
    /// segments, braking on assisting (downhill) ones. Saturates at the
    /// input bounds when the balance is unattainable.
    fn cruise_input(&self, x: &State) -> Result<InputValue> {
        if !(x[1] > 0.0) {
            return Err(Error::CruiseUndefined(format!("speed {} is not positive", x[1])));
        }
        let resistance = self.resistive_force(x);
        let u = if resistance >= 0.0 {
            let traction = |u: f64| self.traction_force(x, &InputValue::scalar(u));
            if traction(1.0) < resistance {
                1.0
            } else {
                Self::bisect(0.0, 1.0, resistance, traction)
            }
        } else {
            // Braking force decreases as u goes from -1 to 0; bisect on -u.
            let braking = |s: f64| self.braking_force(x, &InputValue::scalar(-s));
            if braking(1.0) < -resistance {
                -1.0
            } else {
                -Self::bisect(0.0, 1.0, -resistance, braking)
            }
        };
        Ok(InputValue::scalar(u))
    }

    fn supports_cruise(&self) -> bool {
        true
    }

    fn speed_limit(&self, x: &State) -> Option<f64> {
        Some(self.track.at(x[0]).speed_limit_mps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Breakpoint;
    use proptest::prelude::*;

    fn params() -> TrainParams {
        TrainParams {
            mass: 1e5,
            static_mass: 1e5,
            a: 1000.0,
            b: 10.0,
            c: 1.0,
            d: 0.0,
            gravity: 9.81,
            sampling_time: 1.0,
            max_traction_force: 2e5,
            max_traction_power: 2e6,
            max_braking_force: 1.5e5,
        }
    }

    fn flat() -> Train {
        Train::new(params(), TrackProfile::flat(30.0)).unwrap()
    }

    fn sloped(slope: f64) -> Train {
        let track = TrackProfile::new(vec![Breakpoint {
            start_pos_m: 0.0,
            slope_rad: slope,
            curve_radius_m: 1e12,
            speed_limit_mps: 30.0,
        }])
        .unwrap();
        Train::new(params(), track).unwrap()
    }

    #[test]
    fn coasting_step_matches_hand_evaluation() {
        let next = flat().step(&State::from([100.0, 10.0]), &InputValue::scalar(0.0)).unwrap();
        assert_eq!(next[0], 110.0);
        assert!((next[1] - 9.988).abs() < 1e-12);
    }

    #[test]
    fn step_applies_net_acceleration() {
        // Choose a command whose traction gives net force 0.5 M at x2 = 10.
        let train = flat();
        let x = State::from([100.0, 10.0]);
        let needed = 0.5 * train.params.mass + train.resistive_force(&x);
        let available = train.traction_force(&x, &InputValue::scalar(1.0));
        let u = InputValue::scalar(needed / available);
        let next = train.step(&x, &u).unwrap();
        assert_eq!(next[0], 110.0);
        assert!((next[1] - 10.5).abs() < 1e-12);
    }

    #[test]
    fn resistive_force_examples() {
        let train = flat();
        assert!((train.resistive_force(&State::from([0.0, 10.0])) - 1200.0).abs() < 1e-6);
        assert_eq!(train.params.velocity_resistance(0.0), 1000.0);
        let hill = sloped(0.01);
        let rg = hill.grade_resistance(5.0);
        // M_s g tan(0.01) with M_s = 1e5.
        assert!((rg - 1e5 * 9.81 * 0.01f64.tan()).abs() < 1e-9);
        assert!((rg - 9810.33).abs() < 0.01);
    }

    #[test]
    fn traction_and_braking_examples() {
        let p = params();
        let u = InputValue::scalar;
        assert_eq!(p.traction_force(&State::from([0.0, 5.0]), &u(0.0)), 0.0);
        assert_eq!(p.traction_force(&State::from([0.0, 0.5]), &u(1.0)), p.max_traction_force);
        let corner = 2.0 * p.max_traction_power / p.max_traction_force;
        let f = p.traction_force(&State::from([0.0, corner]), &u(1.0));
        assert!((f - p.max_traction_force / 2.0).abs() < 1e-9);
        assert_eq!(p.traction_force(&State::from([0.0, 5.0]), &u(-1.0)), 0.0);

        assert_eq!(p.braking_force(&State::from([0.0, 5.0]), &u(0.0)), 0.0);
        assert_eq!(p.braking_force(&State::from([0.0, 5.0]), &u(-1.0)), p.max_braking_force);
        assert_eq!(p.braking_force(&State::from([0.0, 5.0]), &u(-0.5)), p.max_braking_force / 2.0);
        assert_eq!(p.braking_force(&State::from([0.0, 0.0]), &u(-1.0)), 0.0);
    }

    #[test]
    fn stage_cost_examples() {
        let train = flat();
        assert_eq!(train.stage_cost(&State::from([0.0, 10.0]), &InputValue::scalar(-1.0)), 0.0);
        assert_eq!(train.stage_cost(&State::from([0.0, 0.0]), &InputValue::scalar(1.0)), 0.0);
        // F_T = min(2e5, 2e6/10) = 2e5 at x2 = 10; halve via the command.
        let c = train.stage_cost(&State::from([0.0, 10.0]), &InputValue::scalar(0.25));
        assert!((c - 5e5).abs() < 1e-6);
    }

    #[test]
    fn state_constraint_examples() {
        let train = flat();
        let c = train.check_state_constraints(&State::from([0.0, -0.1]));
        assert!(!c.satisfied);
        assert!((c.violation - 0.1).abs() < 1e-15);
        assert_eq!(
            train.check_state_constraints(&State::from([0.0, 30.0])),
            ConstraintCheck { satisfied: true, violation: 0.0 }
        );
        let c = train.check_state_constraints(&State::from([0.0, 32.0]));
        assert!(!c.satisfied);
        assert_eq!(c.violation, 2.0);
    }

    #[test]
    fn cruise_examples() {
        // Zero net resistance: a downhill slope that cancels R_v exactly.
        let mut p = params();
        p.b = 0.0;
        p.c = 0.0;
        let slope = (-p.a / (p.static_mass * p.gravity)).atan();
        let track = TrackProfile::new(vec![Breakpoint {
            start_pos_m: 0.0,
            slope_rad: slope,
            curve_radius_m: 1e12,
            speed_limit_mps: 30.0,
        }])
        .unwrap();
        let balanced = Train::new(p, track).unwrap();
        let x = State::from([0.0, 10.0]);
        assert!(balanced.resistive_force(&x).abs() < 1e-6);
        assert!(balanced.cruise_input(&x).unwrap()[0].abs() < 1e-9);

        // Downhill with F_R = -F_B_max / 2.
        let target = -params().max_braking_force / 2.0;
        let rg = target - params().velocity_resistance(10.0);
        let slope = (rg / (params().static_mass * params().gravity)).atan();
        let downhill = sloped(slope);
        assert!((downhill.resistive_force(&x) - target).abs() < 1e-6);
        assert!((downhill.cruise_input(&x).unwrap()[0] + 0.5).abs() < 1e-9);

        // Steep climb beyond the traction envelope saturates.
        assert_eq!(sloped(0.5).cruise_input(&x).unwrap()[0], 1.0);

        assert!(matches!(flat().cruise_input(&State::from([0.0, 0.0])), Err(Error::CruiseUndefined(_))));
    }

    proptest! {
        #[test]
        fn step_is_pure(x1 in 0.0..2000.0f64, x2 in 0.0..30.0f64, u in -1.0..1.0f64) {
            let train = sloped(0.005);
            let x = State::from([x1, x2]);
            let a = train.step(&x, &InputValue::scalar(u)).unwrap();
            let b = train.step(&x, &InputValue::scalar(u)).unwrap();
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }

        #[test]
        fn forces_are_monotone_in_command(x2 in 0.0..40.0f64, u1 in -1.0..1.0f64, u2 in -1.0..1.0f64) {
            let p = params();
            let x = State::from([0.0, x2]);
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(p.traction_force(&x, &InputValue::scalar(lo)) <= p.traction_force(&x, &InputValue::scalar(hi)));
            prop_assert!(p.braking_force(&x, &InputValue::scalar(lo)) >= p.braking_force(&x, &InputValue::scalar(hi)));
        }

        #[test]
        fn cruise_balances_resistance(x2 in 0.5..30.0f64, slope in -0.05..0.05f64) {
            let train = sloped(slope);
            let x = State::from([0.0, x2]);
            let u = train.cruise_input(&x).unwrap();
            let fr = train.resistive_force(&x);
            if u[0].abs() < 1.0 {
                let residual = if fr >= 0.0 {
                    train.traction_force(&x, &u) - fr
                } else {
                    train.braking_force(&x, &u) + fr
                };
                prop_assert!(residual.abs() <= 1e-6 * fr.abs().max(1.0), "residual {}", residual);
            }
        }
    }

    #[test]
    fn velocity_resistance_nondecreasing_on_grid() {
        let p = params();
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        assert!(grid.windows(2).all(|w| p.velocity_resistance(w[0]) <= p.velocity_resistance(w[1])));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.static_mass = 2e5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.b = -1.0;
        assert!(p.validate().is_err());
    }
}
