//! Scenario files.
//!
//! A scenario is a TOML document describing the plant, the blocking policy,
//! the input set, the terminal set, the disturbance and the solver. Parsing
//! reports every problem it finds, each prefixed with its field path.
//!
//! ```toml
//! model = "integrator"
//! sampling_time = 1.0
//! horizon = 12
//! block_length = 3
//! algorithm = "relaxed"
//! initial_state = [0.0, 0.0]
//!
//! [input]
//! mode = "discrete"
//! alphabet = "{-1, 0, 1}"
//!
//! [terminal]
//! center = [18.0, 0.0]
//!
//! [disturbance]
//! d_bar = 0.05
//! distribution = "uniform"
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::blocking::{BlockingPolicy, BlockingVariant};
use crate::bounds::{estimate_moduli, integrator_moduli, ModuliPair, SamplingBox, DEFAULT_SAFETY_FACTOR};
use crate::controller::{Algorithm, ClosedLoop, DisturbanceSpec, Distribution};
use crate::dynamics::{Action, DoubleIntegrator, InputValue, Model, State, TerminalSet, TrackProfile, Train, TrainParams};
use crate::error::{io_error, Error, Result};
use crate::ocp::{Backend, ContinuousSettings, InputSpec, SolverSettings};

#[derive(Clone, Debug, PartialEq)]
pub enum PlantConfig {
    Integrator(DoubleIntegrator),
    Train {
        train: Train,
        /// Track file as written in the scenario, relative to its directory.
        track_file: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateConfig {
    /// Defaults to a box spanning the initial state, the terminal set and the
    /// speed limits.
    pub state_box: Option<SamplingBox>,
    /// Defaults to the model input bounds.
    pub input_box: Option<SamplingBox>,
    pub samples: usize,
    pub seed: u64,
    pub safety_factor: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig { state_box: None, input_box: None, samples: 5000, seed: 0, safety_factor: DEFAULT_SAFETY_FACTOR }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModuliConfig {
    Linear { k_x: f64, k_u: f64 },
    Estimate(EstimateConfig),
}

/// Where the moduli used for a bound came from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModuliSource {
    Supplied,
    Analytic,
    Estimated { k_x_raw: f64, k_u_raw: f64, safety_factor: f64, samples: usize },
}

impl ModuliSource {
    pub fn describe(&self) -> String {
        match self {
            ModuliSource::Supplied => "supplied".into(),
            ModuliSource::Analytic => "analytic".into(),
            ModuliSource::Estimated { safety_factor, samples, .. } => format!(
                "estimated from {samples} samples, inflated by {safety_factor}; a statistical estimate, not a proven Lipschitz constant"
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub plant: PlantConfig,
    pub horizon: usize,
    pub block_length: usize,
    pub blocking: BlockingVariant,
    pub algorithm: Algorithm,
    pub omega: Option<f64>,
    pub runs: usize,
    pub initial_state: State,
    pub input: InputSpec,
    pub terminal: TerminalSet,
    pub disturbance: DisturbanceSpec,
    pub solver: SolverSettings,
    pub moduli: Option<ModuliConfig>,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses scenario text; relative track paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Scenario(vec![e.message().to_string()]))?;
        let mut errors = Vec::new();
        let scenario = parse_table(&table, base_dir, &mut errors);
        match scenario {
            Some(s) if errors.is_empty() => Ok(s),
            _ => Err(Error::Scenario(errors)),
        }
    }

    pub fn model(&self) -> &dyn Model {
        match &self.plant {
            PlantConfig::Integrator(m) => m,
            PlantConfig::Train { train, .. } => train,
        }
    }

    pub fn policy(&self) -> BlockingPolicy {
        BlockingPolicy::new(self.block_length, self.horizon, self.blocking).expect("validated at parse time")
    }

    pub fn omega_or_default(&self) -> f64 {
        self.omega.unwrap_or(1.0)
    }

    pub fn closed_loop(&self) -> ClosedLoop<'_> {
        ClosedLoop {
            model: self.model(),
            policy: self.policy(),
            input: &self.input,
            terminal: &self.terminal,
            settings: &self.solver,
            x0: self.initial_state.clone(),
            disturbance: self.disturbance.clone(),
            timing: false,
        }
    }

    /// Moduli for the bound, with their provenance.
    ///
    /// Without a `[moduli]` section the integrator uses its exact constants
    /// and the train a sampled estimate.
    pub fn moduli(&self) -> Result<(ModuliPair, ModuliSource)> {
        let weights = &self.terminal.weights;
        match (&self.moduli, &self.plant) {
            (Some(ModuliConfig::Linear { k_x, k_u }), _) => Ok((ModuliPair::linear(*k_x, *k_u)?, ModuliSource::Supplied)),
            (None, PlantConfig::Integrator(m)) => Ok((integrator_moduli(m, weights)?, ModuliSource::Analytic)),
            (Some(ModuliConfig::Estimate(cfg)), _) => self.estimate(cfg),
            (None, PlantConfig::Train { .. }) => self.estimate(&EstimateConfig::default()),
        }
    }

    fn estimate(&self, cfg: &EstimateConfig) -> Result<(ModuliPair, ModuliSource)> {
        let model = self.model();
        let state_box = match &cfg.state_box {
            Some(b) => b.clone(),
            None => self.default_state_box()?,
        };
        let input_box = match &cfg.input_box {
            Some(b) => b.clone(),
            None => {
                let (lo, hi) = model.input_bounds();
                SamplingBox::new(lo.to_vec(), hi.to_vec())?
            }
        };
        let est = estimate_moduli(model, &state_box, &input_box, &self.terminal.weights, cfg.samples, cfg.seed, cfg.safety_factor)?;
        let source = ModuliSource::Estimated {
            k_x_raw: est.k_x_raw,
            k_u_raw: est.k_u_raw,
            safety_factor: est.safety_factor,
            samples: cfg.samples,
        };
        Ok((est.moduli, source))
    }

    fn default_state_box(&self) -> Result<SamplingBox> {
        let t = &self.terminal;
        let (mut lower, mut upper): (Vec<f64>, Vec<f64>) = self
            .initial_state
            .iter()
            .zip(t.center.iter().zip(&t.half_widths))
            .map(|(x, (c, h))| (x.min(c - h), x.max(c + h)))
            .unzip();
        if let PlantConfig::Train { train, .. } = &self.plant {
            lower[1] = 0.0;
            upper[1] = train.track.max_speed_limit();
        }
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            let pad = 0.05 * (*u - *l).abs().max(1.0);
            *l -= pad;
            *u += pad;
        }
        SamplingBox::new(lower, upper)
    }

    /// Serializes to scenario text that parses back to an equal value.
    pub fn to_toml_string(&self) -> String {
        let mut root = Table::new();
        let floats = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());
        let int = |n: usize| Value::Integer(n as i64);

        root.insert(
            "model".into(),
            Value::String(match self.plant {
                PlantConfig::Integrator(_) => "integrator".into(),
                PlantConfig::Train { .. } => "train".into(),
            }),
        );
        root.insert("sampling_time".into(), Value::Float(self.model().sampling_time()));
        root.insert("horizon".into(), int(self.horizon));
        root.insert("block_length".into(), int(self.block_length));
        root.insert(
            "blocking".into(),
            Value::String(match self.blocking {
                BlockingVariant::ShrinkingN => "shrinking".into(),
                BlockingVariant::ConstantN => "constant".into(),
            }),
        );
        root.insert("algorithm".into(), Value::String(algorithm_name(self.algorithm).into()));
        if let Some(omega) = self.omega {
            root.insert("omega".into(), Value::Float(omega));
        }
        root.insert("runs".into(), int(self.runs));
        root.insert("initial_state".into(), floats(&self.initial_state));

        let mut input = Table::new();
        match &self.input {
            InputSpec::Continuous { lower, upper } => {
                input.insert("mode".into(), Value::String("continuous".into()));
                input.insert("lower".into(), floats(lower));
                input.insert("upper".into(), floats(upper));
            }
            InputSpec::Discrete { alphabet } => {
                let cruise = alphabet.iter().any(|a| matches!(a, Action::Cruise));
                let mode = if cruise { "discrete+cruise" } else { "discrete" };
                input.insert("mode".into(), Value::String(mode.into()));
                input.insert("alphabet".into(), Value::String(format_alphabet(alphabet)));
            }
        }
        root.insert("input".into(), Value::Table(input));

        let mut terminal = Table::new();
        terminal.insert("center".into(), floats(&self.terminal.center));
        terminal.insert("half_widths".into(), floats(&self.terminal.half_widths));
        terminal.insert("weights".into(), floats(&self.terminal.weights));
        root.insert("terminal".into(), Value::Table(terminal));

        let mut dist = Table::new();
        dist.insert("d_bar".into(), Value::Float(self.disturbance.bound()));
        let name = match self.disturbance.distribution() {
            Distribution::Uniform => "uniform",
            Distribution::Extreme => "extreme",
            Distribution::Fixed(seq) => {
                dist.insert("sequence".into(), floats(seq));
                "fixed"
            }
        };
        dist.insert("distribution".into(), Value::String(name.into()));
        dist.insert("seed".into(), Value::Integer(self.disturbance.seed() as i64));
        root.insert("disturbance".into(), Value::Table(dist));

        let mut solver = Table::new();
        let backend = match self.solver.backend {
            Backend::Exact => "exact",
            Backend::Continuous => "continuous",
        };
        solver.insert("backend".into(), Value::String(backend.into()));
        solver.insert("candidate_cap".into(), Value::Integer(self.solver.candidate_cap as i64));
        let c = &self.solver.continuous;
        solver.insert("starts".into(), int(c.starts));
        solver.insert("seed".into(), Value::Integer(c.seed as i64));
        solver.insert("max_sweeps".into(), int(c.max_sweeps));
        solver.insert("feasibility_tol".into(), Value::Float(c.feasibility_tol));
        root.insert("solver".into(), Value::Table(solver));

        match &self.plant {
            PlantConfig::Integrator(m) => {
                let mut t = Table::new();
                t.insert("input_limit".into(), Value::Float(m.input_limit));
                if let Some((lo, hi)) = m.velocity_bounds {
                    t.insert("velocity_bounds".into(), floats(&[lo, hi]));
                }
                root.insert("integrator".into(), Value::Table(t));
            }
            PlantConfig::Train { train, track_file } => {
                let p = &train.params;
                let mut t = Table::new();
                t.insert("track".into(), Value::String(track_file.clone()));
                for (key, v) in [
                    ("mass", p.mass),
                    ("static_mass", p.static_mass),
                    ("a", p.a),
                    ("b", p.b),
                    ("c", p.c),
                    ("d", p.d),
                    ("gravity", p.gravity),
                    ("max_traction_force", p.max_traction_force),
                    ("max_traction_power", p.max_traction_power),
                    ("max_braking_force", p.max_braking_force),
                ] {
                    t.insert(key.into(), Value::Float(v));
                }
                root.insert("train".into(), Value::Table(t));
            }
        }

        if let Some(m) = &self.moduli {
            let mut t = Table::new();
            match m {
                ModuliConfig::Linear { k_x, k_u } => {
                    t.insert("k_x".into(), Value::Float(*k_x));
                    t.insert("k_u".into(), Value::Float(*k_u));
                }
                ModuliConfig::Estimate(cfg) => {
                    if let Some(b) = &cfg.state_box {
                        t.insert("state_lower".into(), floats(&b.lower));
                        t.insert("state_upper".into(), floats(&b.upper));
                    }
                    if let Some(b) = &cfg.input_box {
                        t.insert("input_lower".into(), floats(&b.lower));
                        t.insert("input_upper".into(), floats(&b.upper));
                    }
                    t.insert("samples".into(), int(cfg.samples));
                    t.insert("seed".into(), Value::Integer(cfg.seed as i64));
                    t.insert("safety_factor".into(), Value::Float(cfg.safety_factor));
                }
            }
            root.insert("moduli".into(), Value::Table(t));
        }
        toml::to_string(&root).expect("scenario tables serialize")
    }
}

pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Nominal => "nominal",
        Algorithm::Relaxed => "relaxed",
        Algorithm::MultiObjective => "multiobjective",
    }
}

/// Parses an alphabet written as `{-1, 0, 0.5}`; the Unicode minus sign and
/// the token `cruise` are accepted.
pub fn parse_alphabet(text: &str) -> std::result::Result<Vec<Action>, String> {
    let inner = text.trim();
    let inner = inner.strip_prefix('{').and_then(|s| s.strip_suffix('}')).unwrap_or(inner);
    inner.split(',').map(|tok| parse_token(tok.trim())).collect()
}

fn parse_token(tok: &str) -> std::result::Result<Action, String> {
    if tok.eq_ignore_ascii_case("cruise") {
        return Ok(Action::Cruise);
    }
    let ascii = tok.replace('\u{2212}', "-");
    match ascii.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Action::scalar(v)),
        _ => Err(format!("`{tok}` is neither a number nor `cruise`")),
    }
}

pub fn format_alphabet(alphabet: &[Action]) -> String {
    let items: Vec<String> = alphabet
        .iter()
        .map(|a| match a {
            Action::Cruise => "cruise".to_string(),
            Action::Input(u) if u.len() == 1 => format!("{}", u[0]),
            Action::Input(u) => format!("{:?}", u.as_slice()),
        })
        .collect();
    format!("{{{}}}", items.join(", "))
}

/// Typed field access over one TOML table, recording errors by path.
struct Fields<'t> {
    table: &'t Table,
    prefix: &'static str,
    known: Vec<&'static str>,
    errors: Vec<String>,
}

impl<'t> Fields<'t> {
    fn new(table: &'t Table, prefix: &'static str) -> Self {
        Fields { table, prefix, known: Vec::new(), errors: Vec::new() }
    }

    fn path(&self, key: &str) -> String {
        format!("{}{key}", self.prefix)
    }

    fn err(&mut self, key: &str, msg: impl std::fmt::Display) {
        let path = self.path(key);
        self.errors.push(format!("{path}: {msg}"));
    }

    fn raw(&mut self, key: &'static str) -> Option<&'t Value> {
        self.known.push(key);
        self.table.get(key)
    }

    fn required<T>(&mut self, key: &'static str, v: Option<T>) -> Option<T> {
        if v.is_none() && !self.table.contains_key(key) {
            self.err(key, "missing required field");
        }
        v
    }

    fn opt_f64(&mut self, key: &'static str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(key, format!("expected a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, key: &'static str) -> Option<f64> {
        let v = self.opt_f64(key);
        self.required(key, v)
    }

    fn opt_int(&mut self, key: &'static str) -> Option<i64> {
        match self.raw(key)? {
            Value::Integer(i) => Some(*i),
            other => {
                self.err(key, format!("expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_count(&mut self, key: &'static str, min: i64, label: &str) -> Option<usize> {
        let v = self.opt_int(key)?;
        if v < min {
            self.err(key, format!("{label}must be >= {min}, got {v}"));
            return None;
        }
        Some(v as usize)
    }

    fn count(&mut self, key: &'static str, min: i64, label: &str) -> Option<usize> {
        let v = self.opt_count(key, min, label);
        self.required(key, v)
    }

    fn opt_str(&mut self, key: &'static str) -> Option<&'t str> {
        match self.raw(key)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                self.err(key, format!("expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_f64s(&mut self, key: &'static str) -> Option<Vec<f64>> {
        let value = self.raw(key)?;
        let Value::Array(items) = value else {
            self.err(key, format!("expected an array of numbers, found {}", value.type_str()));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    self.err(key, format!("expected numbers, found {}", other.type_str()));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn f64s(&mut self, key: &'static str) -> Option<Vec<f64>> {
        let v = self.opt_f64s(key);
        self.required(key, v)
    }

    fn opt_table(&mut self, key: &'static str) -> Option<&'t Table> {
        match self.raw(key)? {
            Value::Table(t) => Some(t),
            other => {
                self.err(key, format!("expected a section, found {}", other.type_str()));
                None
            }
        }
    }

    /// Moves recorded errors and unknown-key errors into `sink`.
    fn finish(mut self, sink: &mut Vec<String>) {
        let mut unknown: Vec<&String> = self.table.keys().filter(|k| !self.known.contains(&k.as_str())).collect();
        unknown.sort();
        for key in unknown {
            self.errors.push(format!("{}{key}: unknown field", self.prefix));
        }
        sink.append(&mut self.errors);
    }
}

fn parse_table(root: &Table, base_dir: &Path, errors: &mut Vec<String>) -> Option<Scenario> {
    let mut f = Fields::new(root, "");
    let model_name = f.opt_str("model");
    let model_name = f.required("model", model_name);
    let ts = f.f64("sampling_time");
    if ts.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
        f.err("sampling_time", "must be finite and > 0");
    }
    let horizon = f.count("horizon", 1, "");
    let block_length = f.count("block_length", 1, "(L) ");
    if let (Some(l), Some(h)) = (block_length, horizon) {
        if l > h {
            f.err("block_length", format!("(L) must not exceed horizon {h}, got {l}"));
        }
    }
    let blocking = match f.opt_str("blocking").unwrap_or("shrinking") {
        "shrinking" => Some(BlockingVariant::ShrinkingN),
        "constant" => Some(BlockingVariant::ConstantN),
        other => {
            f.err("blocking", format!("expected `shrinking` or `constant`, got `{other}`"));
            None
        }
    };
    let algorithm = match f.opt_str("algorithm").unwrap_or("nominal") {
        "nominal" => Some(Algorithm::Nominal),
        "relaxed" => Some(Algorithm::Relaxed),
        "multiobjective" => Some(Algorithm::MultiObjective),
        other => {
            f.err("algorithm", format!("expected `nominal`, `relaxed` or `multiobjective`, got `{other}`"));
            None
        }
    };
    let omega = f.opt_f64("omega");
    if omega.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
        f.err("omega", "must be finite and > 0");
    }
    if algorithm == Some(Algorithm::MultiObjective) && omega.is_none() && !root.contains_key("omega") {
        f.err("omega", "required by the multiobjective algorithm");
    }
    let runs = f.opt_count("runs", 1, "").unwrap_or(1);
    let initial_state = f.f64s("initial_state");

    let input_t = f.opt_table("input");
    let input_t = f.required("input", input_t);
    let terminal_t = f.opt_table("terminal");
    let terminal_t = f.required("terminal", terminal_t);
    let disturbance_t = f.opt_table("disturbance");
    let solver_t = f.opt_table("solver");
    let integrator_t = f.opt_table("integrator");
    let train_t = f.opt_table("train");
    let moduli_t = f.opt_table("moduli");
    f.finish(errors);

    let plant = match model_name {
        Some("integrator") => {
            if train_t.is_some() {
                errors.push("train: section only valid for model = \"train\"".into());
            }
            ts.and_then(|ts| parse_integrator(ts, integrator_t, errors)).map(PlantConfig::Integrator)
        }
        Some("train") => {
            if integrator_t.is_some() {
                errors.push("integrator: section only valid for model = \"integrator\"".into());
            }
            match train_t {
                Some(t) => ts.and_then(|ts| parse_train(ts, t, base_dir, errors)),
                None => {
                    errors.push("train: missing required section for model = \"train\"".into());
                    None
                }
            }
        }
        Some(other) => {
            errors.push(format!("model: expected `integrator` or `train`, got `{other}`"));
            None
        }
        None => None,
    };
    let model: Option<&dyn Model> = plant.as_ref().map(|p| match p {
        PlantConfig::Integrator(m) => m as &dyn Model,
        PlantConfig::Train { train, .. } => train as &dyn Model,
    });

    if let (Some(x0), Some(m)) = (&initial_state, model) {
        if x0.len() != m.state_dim() || x0.iter().any(|x| !x.is_finite()) {
            errors.push(format!("initial_state: expected {} finite entries, got {x0:?}", m.state_dim()));
        }
    }
    let input = input_t.and_then(|t| parse_input(t, model, errors));
    let terminal = terminal_t.and_then(|t| parse_terminal(t, model, errors));
    let disturbance = parse_disturbance(disturbance_t, horizon, errors);
    let solver = parse_solver(solver_t, input.as_ref(), errors);
    let moduli = moduli_t.and_then(|t| parse_moduli(t, errors));

    Some(Scenario {
        plant: plant?,
        horizon: horizon?,
        block_length: block_length?,
        blocking: blocking?,
        algorithm: algorithm?,
        omega,
        runs,
        initial_state: State::new(&initial_state?).ok()?,
        input: input?,
        terminal: terminal?,
        disturbance: disturbance?,
        solver: solver?,
        moduli,
    })
}

fn parse_integrator(ts: f64, t: Option<&Table>, errors: &mut Vec<String>) -> Option<DoubleIntegrator> {
    let mut model = DoubleIntegrator::new(ts).ok()?;
    let Some(t) = t else { return Some(model) };
    let mut f = Fields::new(t, "integrator.");
    if let Some(limit) = f.opt_f64("input_limit") {
        if limit > 0.0 && limit.is_finite() {
            model = model.with_input_limit(limit);
        } else {
            f.err("input_limit", "must be finite and > 0");
        }
    }
    if let Some(b) = f.opt_f64s("velocity_bounds") {
        if b.len() == 2 && b[0] < b[1] {
            model = model.with_velocity_bounds(b[0], b[1]);
        } else {
            f.err("velocity_bounds", "expected [min, max] with min < max");
        }
    }
    let ok = f.errors.is_empty();
    f.finish(errors);
    ok.then_some(model)
}

fn parse_train(ts: f64, t: &Table, base_dir: &Path, errors: &mut Vec<String>) -> Option<PlantConfig> {
    let mut f = Fields::new(t, "train.");
    let track_file = f.opt_str("track").map(str::to_string);
    let track_file = f.required("track", track_file);
    let mass = f.f64("mass");
    let static_mass = f.f64("static_mass");
    let a = f.f64("a");
    let b = f.f64("b");
    let c = f.f64("c");
    let d = f.opt_f64("d").unwrap_or(0.0);
    let gravity = f.opt_f64("gravity").unwrap_or(9.81);
    let max_traction_force = f.f64("max_traction_force");
    let max_traction_power = f.f64("max_traction_power");
    let max_braking_force = f.f64("max_braking_force");
    let track = track_file.as_ref().and_then(|file| {
        let path: PathBuf = base_dir.join(file);
        match TrackProfile::from_path(&path) {
            Ok(track) => Some(track),
            Err(e) => {
                f.err("track", e);
                None
            }
        }
    });
    let params = (|| {
        Some(TrainParams {
            mass: mass?,
            static_mass: static_mass?,
            a: a?,
            b: b?,
            c: c?,
            d,
            gravity,
            sampling_time: ts,
            max_traction_force: max_traction_force?,
            max_traction_power: max_traction_power?,
            max_braking_force: max_braking_force?,
        })
    })();
    let train = match (params, track) {
        (Some(params), Some(track)) => match Train::new(params, track) {
            Ok(train) => Some(train),
            Err(e) => {
                f.errors.push(format!("train: {e}"));
                None
            }
        },
        _ => None,
    };
    f.finish(errors);
    Some(PlantConfig::Train { train: train?, track_file: track_file? })
}

fn parse_input(t: &Table, model: Option<&dyn Model>, errors: &mut Vec<String>) -> Option<InputSpec> {
    let mut f = Fields::new(t, "input.");
    let mode = f.opt_str("mode");
    let mode = f.required("mode", mode);
    let spec = match mode {
        Some("continuous") => {
            let bounds = model.map(|m| m.input_bounds());
            let lower = f.opt_f64s("lower").or_else(|| bounds.as_ref().map(|b| b.0.to_vec()));
            let upper = f.opt_f64s("upper").or_else(|| bounds.as_ref().map(|b| b.1.to_vec()));
            match (lower, upper) {
                (Some(lo), Some(hi)) => {
                    let dims_ok = model.is_none_or(|m| lo.len() == m.input_dim() && hi.len() == m.input_dim());
                    if !dims_ok || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
                        f.err("lower", "lower/upper must match the input dimension with lower <= upper");
                        None
                    } else {
                        Some(InputSpec::Continuous { lower: InputValue::from(lo), upper: InputValue::from(hi) })
                    }
                }
                _ => None,
            }
        }
        Some(mode @ ("discrete" | "discrete+cruise")) => {
            let with_cruise = mode == "discrete+cruise";
            let raw = f.raw("alphabet");
            let parsed = match raw {
                None => {
                    f.err("alphabet", "missing required field for discrete modes");
                    None
                }
                Some(Value::String(s)) => parse_alphabet(s).map_err(|e| f.err("alphabet", e)).ok(),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|v| match v {
                        Value::Float(x) => Ok(Action::scalar(*x)),
                        Value::Integer(i) => Ok(Action::scalar(*i as f64)),
                        Value::String(s) => parse_token(s.trim()),
                        other => Err(format!("unexpected {}", other.type_str())),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| f.err("alphabet", e))
                    .ok(),
                Some(other) => {
                    f.err("alphabet", format!("expected a string or an array, found {}", other.type_str()));
                    None
                }
            };
            parsed.and_then(|mut alphabet| {
                let has_cruise = alphabet.iter().any(|a| matches!(a, Action::Cruise));
                if has_cruise && !with_cruise {
                    f.err("alphabet", "`cruise` needs mode = \"discrete+cruise\"");
                    return None;
                }
                if with_cruise && !has_cruise {
                    alphabet.push(Action::Cruise);
                }
                if alphabet.iter().filter(|a| matches!(a, Action::Input(_))).count() == 0 && !with_cruise {
                    f.err("alphabet", "must not be empty");
                    return None;
                }
                if let Some(m) = model {
                    let (lo, hi) = m.input_bounds();
                    for a in &alphabet {
                        if let Action::Input(u) = a {
                            let inside = u.len() == m.input_dim()
                                && u.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| l <= v && v <= h);
                            if !inside {
                                f.err("alphabet", format!("value {:?} lies outside the input bounds", u.as_slice()));
                                return None;
                            }
                        }
                    }
                    if with_cruise && !m.supports_cruise() {
                        f.err("mode", "this model has no cruise input");
                        return None;
                    }
                }
                Some(InputSpec::Discrete { alphabet })
            })
        }
        Some(other) => {
            f.err("mode", format!("expected `continuous`, `discrete` or `discrete+cruise`, got `{other}`"));
            None
        }
        None => None,
    };
    f.finish(errors);
    spec
}

fn parse_terminal(t: &Table, model: Option<&dyn Model>, errors: &mut Vec<String>) -> Option<TerminalSet> {
    let mut f = Fields::new(t, "terminal.");
    let center = f.f64s("center");
    let n = center.as_ref().map_or(0, Vec::len);
    let half_widths = f.opt_f64s("half_widths").unwrap_or_else(|| vec![0.0; n]);
    let weights = f.opt_f64s("weights").unwrap_or_else(|| vec![1.0; n]);
    if let (Some(c), Some(m)) = (&center, model) {
        if c.len() != m.state_dim() {
            f.err("center", format!("expected {} entries, got {}", m.state_dim(), c.len()));
        }
    }
    let set = center.and_then(|c| match State::new(&c).and_then(|c| TerminalSet::new(c, half_widths, weights)) {
        Ok(set) => Some(set),
        Err(e) => {
            f.errors.push(format!("terminal: {e}"));
            None
        }
    });
    let ok = f.errors.is_empty();
    f.finish(errors);
    set.filter(|_| ok)
}

fn parse_disturbance(t: Option<&Table>, horizon: Option<usize>, errors: &mut Vec<String>) -> Option<DisturbanceSpec> {
    let Some(t) = t else { return Some(DisturbanceSpec::none()) };
    let mut f = Fields::new(t, "disturbance.");
    let bound = f.opt_f64("d_bar").unwrap_or(0.0);
    let seed = f.opt_int("seed").unwrap_or(0);
    if seed < 0 {
        f.err("seed", "must be >= 0");
    }
    let sequence = f.opt_f64s("sequence");
    let distribution = match f.opt_str("distribution").unwrap_or("uniform") {
        "uniform" => Some(Distribution::Uniform),
        "extreme" => Some(Distribution::Extreme),
        "fixed" => match sequence {
            Some(seq) => {
                if horizon.is_some_and(|h| seq.len() < h) {
                    f.err("sequence", "shorter than the horizon; missing steps draw zero");
                }
                Some(Distribution::Fixed(seq))
            }
            None => {
                f.err("sequence", "required by distribution = \"fixed\"");
                None
            }
        },
        other => {
            f.err("distribution", format!("expected `uniform`, `extreme` or `fixed`, got `{other}`"));
            None
        }
    };
    let spec = distribution.and_then(|d| match DisturbanceSpec::new(bound, d, seed.max(0) as u64) {
        Ok(s) => Some(s),
        Err(e) => {
            f.errors.push(format!("disturbance: {e}"));
            None
        }
    });
    let ok = f.errors.is_empty();
    f.finish(errors);
    spec.filter(|_| ok)
}

fn parse_solver(t: Option<&Table>, input: Option<&InputSpec>, errors: &mut Vec<String>) -> Option<SolverSettings> {
    let mut s = SolverSettings::default();
    if matches!(input, Some(InputSpec::Continuous { .. })) {
        s.backend = Backend::Continuous;
    }
    let Some(t) = t else { return Some(s) };
    let mut f = Fields::new(t, "solver.");
    match f.opt_str("backend") {
        Some("exact") => s.backend = Backend::Exact,
        Some("continuous") => s.backend = Backend::Continuous,
        Some(other) => f.err("backend", format!("expected `exact` or `continuous`, got `{other}`")),
        None => {}
    }
    let defaults = ContinuousSettings::default();
    if let Some(cap) = f.opt_count("candidate_cap", 1, "") {
        s.candidate_cap = cap as u64;
    }
    s.continuous.starts = f.opt_count("starts", 0, "").unwrap_or(defaults.starts);
    s.continuous.seed = f.opt_count("seed", 0, "").map_or(defaults.seed, |v| v as u64);
    s.continuous.max_sweeps = f.opt_count("max_sweeps", 1, "").unwrap_or(defaults.max_sweeps);
    if let Some(tol) = f.opt_f64("feasibility_tol") {
        if tol > 0.0 {
            s.continuous.feasibility_tol = tol;
        } else {
            f.err("feasibility_tol", "must be > 0");
        }
    }
    let ok = f.errors.is_empty();
    f.finish(errors);
    ok.then_some(s)
}

fn parse_moduli(t: &Table, errors: &mut Vec<String>) -> Option<ModuliConfig> {
    let mut f = Fields::new(t, "moduli.");
    let k_x = f.opt_f64("k_x");
    let k_u = f.opt_f64("k_u");
    let state_lower = f.opt_f64s("state_lower");
    let state_upper = f.opt_f64s("state_upper");
    let input_lower = f.opt_f64s("input_lower");
    let input_upper = f.opt_f64s("input_upper");
    let samples = f.opt_count("samples", 1000, "");
    let seed = f.opt_count("seed", 0, "");
    let safety_factor = f.opt_f64("safety_factor");

    let boxed = |lo: Option<Vec<f64>>, hi: Option<Vec<f64>>, key: &'static str, f: &mut Fields<'_>| match (lo, hi) {
        (None, None) => None,
        (Some(lo), Some(hi)) => SamplingBox::new(lo, hi).map_err(|e| f.err(key, e)).ok(),
        _ => {
            f.err(key, "give both the lower and the upper corner");
            None
        }
    };
    let config = match (k_x, k_u) {
        (Some(k_x), Some(k_u)) if k_x >= 0.0 && k_u >= 0.0 => Some(ModuliConfig::Linear { k_x, k_u }),
        (Some(_), Some(_)) => {
            f.err("k_x", "moduli gains must be >= 0");
            None
        }
        (None, None) => {
            let defaults = EstimateConfig::default();
            let state_box = boxed(state_lower, state_upper, "state_lower", &mut f);
            let input_box = boxed(input_lower, input_upper, "input_lower", &mut f);
            let safety_factor = safety_factor.unwrap_or(defaults.safety_factor);
            if safety_factor < 1.0 {
                f.err("safety_factor", "must be >= 1");
            }
            Some(ModuliConfig::Estimate(EstimateConfig {
                state_box,
                input_box,
                samples: samples.unwrap_or(defaults.samples),
                seed: seed.map_or(defaults.seed, |s| s as u64),
                safety_factor,
            }))
        }
        _ => {
            f.err("k_x", "give both k_x and k_u, or neither to estimate them");
            None
        }
    };
    let ok = f.errors.is_empty();
    f.finish(errors);
    config.filter(|_| ok)
}
