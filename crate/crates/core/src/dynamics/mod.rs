//! Discrete-time plant models, stage costs and constraint sets.
//!
//! Two models ship with the crate:
//!
//! * [`Train`]: forward-Euler longitudinal train dynamics with velocity,
//!   slope and curvature resistance, a synthetic traction/braking envelope and
//!   a position-dependent speed limit.
//! * [`DoubleIntegrator`]: a linear model whose trajectories are exact in
//!   integer arithmetic, used as an oracle throughout the test-suite.
//!
//! Both implement [`Model`], which is all the optimizer and the closed loop
//! need to know about a plant.

mod integrator;
mod track;
mod train;

use std::fmt;
use std::ops::{Deref, DerefMut};

use smallvec::SmallVec;

use crate::error::{arg_error, Error, Result};

pub use integrator::DoubleIntegrator;
pub use track::{Breakpoint, TrackProfile};
pub use train::{Train, TrainParams, MIN_TRACTION_SPEED};

type Entries = SmallVec<[f64; 4]>;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Default)]
        pub struct $name(Entries);

        impl $name {
            /// Builds the vector, rejecting non-finite entries.
            pub fn new(entries: &[f64]) -> Result<Self> {
                if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
                    return Err(arg_error(
                        stringify!($name),
                        format!("non-finite entry {bad} in {entries:?}"),
                    ));
                }
                Ok(Self(Entries::from_slice(entries)))
            }

            /// Builds the vector without the finiteness check.
            pub fn from_slice_unchecked(entries: &[f64]) -> Self {
                Self(Entries::from_slice(entries))
            }

            pub fn scalar(value: f64) -> Self {
                Self(smallvec::smallvec![value])
            }

            pub fn zeros(len: usize) -> Self {
                Self(smallvec::smallvec![0.0; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn to_vec(&self) -> Vec<f64> {
                self.0.to_vec()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(Entries::from_vec(v))
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self(Entries::from_slice(&v))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_list().entries(self.0.iter()).finish()
            }
        }
    };
}

real_vector!(
    /// Plant state. For the train: `[position m, speed m/s]`.
    State
);
real_vector!(
    /// A concrete input vector. For the train: normalized traction in `[-1, 1]`.
    InputValue
);

/// One entry of an input alphabet, or one free value of a blocked sequence.
#[derive(Clone, PartialEq, Debug)]
pub enum Action {
    /// A fixed input vector.
    Input(InputValue),
    /// Engage the inner speed-holding loop; the input is computed from the
    /// state at each step by [`Model::cruise_input`].
    Cruise,
}

impl Action {
    pub fn scalar(value: f64) -> Self {
        Action::Input(InputValue::scalar(value))
    }
}

impl From<InputValue> for Action {
    fn from(u: InputValue) -> Self {
        Action::Input(u)
    }
}

/// Result of a state-constraint check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    /// Largest constraint excess, zero when satisfied.
    pub violation: f64,
}

impl ConstraintCheck {
    pub fn from_violation(violation: f64) -> Self {
        let violation = violation.max(0.0);
        ConstraintCheck { satisfied: violation == 0.0, violation }
    }
}

/// A discrete-time plant `x(k+1) = f(x(k), u(k))` with its stage cost and
/// state constraint set.
pub trait Model: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn sampling_time(&self) -> f64;

    /// Lower and upper corners of the input constraint box `U`.
    fn input_bounds(&self) -> (InputValue, InputValue);

    /// One step of the dynamics. Applied inputs may leave `U` by the
    /// disturbance amplitude; only finiteness is required.
    fn step(&self, x: &State, u: &InputValue) -> Result<State>;

    fn stage_cost(&self, x: &State, u: &InputValue) -> f64;

    fn check_state_constraints(&self, x: &State) -> ConstraintCheck;

    /// Input that holds the current speed. Only meaningful for models with a
    /// cruise loop.
    fn cruise_input(&self, _x: &State) -> Result<InputValue> {
        Err(Error::CruiseUndefined(format!("{self:?} has no cruise loop")))
    }

    fn supports_cruise(&self) -> bool {
        false
    }

    /// Speed limit at the given state, for plot overlays.
    fn speed_limit(&self, _x: &State) -> Option<f64> {
        None
    }

    /// Concrete input produced by `action` at state `x`.
    fn resolve(&self, action: &Action, x: &State) -> Result<InputValue> {
        match action {
            Action::Input(u) => Ok(u.clone()),
            Action::Cruise => self.cruise_input(x),
        }
    }
}

pub(crate) fn finite_or_error(next: State, x: &State, u: &InputValue) -> Result<State> {
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::ModelEvaluation { state: x.to_vec(), input: u.to_vec() })
    }
}

/// Weighted infinity norm `max_i w_i |v_i|`.
pub fn weighted_inf_norm(v: &[f64], weights: &[f64]) -> f64 {
    v.iter().zip(weights).fold(0.0, |acc, (x, w)| acc.max(w * x.abs()))
}

/// Box-shaped terminal set `{x : |x_i - c_i| <= h_i}`; zero half-widths
/// encode an equality constraint. The weights define the norm used for the
/// point-to-set distance.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSet {
    pub center: State,
    pub half_widths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TerminalSet {
    pub fn new(center: State, half_widths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = center.len();
        if half_widths.len() != n || weights.len() != n {
            return Err(arg_error(
                "terminal",
                format!(
                    "center has {n} entries but half_widths has {} and weights {}",
                    half_widths.len(),
                    weights.len()
                ),
            ));
        }
        if half_widths.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(arg_error("terminal.half_widths", "entries must be finite and >= 0"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(arg_error("terminal.weights", "entries must be finite and > 0"));
        }
        Ok(TerminalSet { center, half_widths, weights })
    }

    /// Singleton `{center}` with unit weights.
    pub fn point(center: State) -> Self {
        let n = center.len();
        TerminalSet { center, half_widths: vec![0.0; n], weights: vec![1.0; n] }
    }

    pub fn contains(&self, x: &State) -> bool {
        x.iter()
            .zip(self.center.iter())
            .zip(&self.half_widths)
            .all(|((xi, ci), hi)| (xi - ci).abs() <= *hi)
    }
}
