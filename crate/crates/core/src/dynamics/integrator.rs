use super::{finite_or_error, ConstraintCheck, InputValue, Model, State};
use crate::error::{arg_error, Result};

/// `pos(k+1) = pos(k) + T vel(k)`, `vel(k+1) = vel(k) + T u(k)`, stage cost
/// `|u|`. With integer inputs and `T = 1` every trajectory is exact, which
/// makes this model a convenient oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleIntegrator {
    pub sampling_time: f64,
    pub input_limit: f64,
    /// Optional `[min, max]` velocity constraint.
    pub velocity_bounds: Option<(f64, f64)>,
}

impl DoubleIntegrator {
    pub fn new(sampling_time: f64) -> Result<Self> {
        if !(sampling_time > 0.0 && sampling_time.is_finite()) {
            return Err(arg_error("sampling_time", "must be finite and > 0"));
        }
        Ok(DoubleIntegrator { sampling_time, input_limit: 1.0, velocity_bounds: None })
    }

    pub fn with_input_limit(mut self, limit: f64) -> Self {
        self.input_limit = limit;
        self
    }

    pub fn with_velocity_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.velocity_bounds = Some((lo, hi));
        self
    }
}

impl Model for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn sampling_time(&self) -> f64 {
        self.sampling_time
    }

    fn input_bounds(&self) -> (InputValue, InputValue) {
        (InputValue::scalar(-self.input_limit), InputValue::scalar(self.input_limit))
    }

    fn step(&self, x: &State, u: &InputValue) -> Result<State> {
        let t = self.sampling_time;
        finite_or_error(State::from([x[0] + t * x[1], x[1] + t * u[0]]), x, u)
    }

    fn stage_cost(&self, _x: &State, u: &InputValue) -> f64 {
        u.iter().map(|v| v.abs()).sum()
    }

    fn check_state_constraints(&self, x: &State) -> ConstraintCheck {
        match self.velocity_bounds {
            Some((lo, hi)) => ConstraintCheck::from_violation((lo - x[1]).max(x[1] - hi)),
            None => ConstraintCheck::from_violation(0.0),
        }
    }
}
