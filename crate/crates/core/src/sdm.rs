//! Stock-and-flow simulation.
//!
//! Models hold stocks, signed flows into them, auxiliaries, constants and
//! first-order exponential delays. `simulate` integrates with explicit Euler on
//! a fixed grid. `compile` turns a scorecard strategy map into such a model on
//! a 0-100 performance-index scale.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use petgraph::algo::{tarjan_scc, toposort};
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorecard::{kpi_status, Polarity, Scorecard};

/// |denominator| below this trips the division guard.
pub const DIVISION_GUARD: f64 = 1e-12;
pub const INDEX_MIN: f64 = 0.0;
pub const INDEX_MAX: f64 = 100.0;
pub const DEFAULT_DT: f64 = 0.0625;
pub const DEFAULT_K_GAIN: f64 = 0.5;
pub const DEFAULT_K_DECAY: f64 = 0.1;
/// Initial level of a compiled stock whose objective has no KPI data.
pub const NO_DATA_LEVEL: f64 = 50.0;
/// Slack when counting grid steps so that e.g. 0.3 / 0.1 yields 3 steps.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdmError {
    #[error("name resolution failed: {0}")]
    NameResolution(String),
    #[error("name {0:?} is not bound")]
    UnboundName(String),
    #[error("division by |x| < 1e-12{}", match (.step, .time) {
        (Some(s), Some(t)) => format!(" at step {s} (t = {t})"),
        _ => String::new(),
    })]
    DivisionByZeroGuardTripped { step: Option<usize>, time: Option<f64> },
    #[error("auxiliaries depend on each other in a cycle: {}", .0.join(" -> "))]
    CyclicAuxiliaries(Vec<String>),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario exceeds limits: {0}")]
    ScenarioLimitExceeded(String),
    #[error("scorecard cannot be compiled: {0}")]
    InvalidScorecard(String),
}

/// Arithmetic expression tree. JSON form is externally tagged, e.g.
/// `{"mul": [{"const": 0.5}, {"name": "x"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    Const(f64),
    Name(String),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Min(Box<Expression>, Box<Expression>),
    Max(Box<Expression>, Box<Expression>),
    Clamp(Box<Expression>, Box<Expression>, Box<Expression>),
}

#[allow(clippy::should_implement_trait)]
impl Expression {
    pub fn c(v: f64) -> Self {
        Expression::Const(v)
    }

    pub fn name(n: impl Into<String>) -> Self {
        Expression::Name(n.into())
    }

    pub fn add(a: Expression, b: Expression) -> Self {
        Expression::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expression, b: Expression) -> Self {
        Expression::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expression, b: Expression) -> Self {
        Expression::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expression, b: Expression) -> Self {
        Expression::Div(Box::new(a), Box::new(b))
    }

    pub fn min(a: Expression, b: Expression) -> Self {
        Expression::Min(Box::new(a), Box::new(b))
    }

    pub fn max(a: Expression, b: Expression) -> Self {
        Expression::Max(Box::new(a), Box::new(b))
    }

    pub fn clamp(x: Expression, lo: Expression, hi: Expression) -> Self {
        Expression::Clamp(Box::new(x), Box::new(lo), Box::new(hi))
    }

    /// Every name referenced, in first-seen order.
    pub fn names(&self) -> Vec<&str> {
        fn walk<'a>(e: &'a Expression, out: &mut Vec<&'a str>) {
            match e {
                Expression::Const(_) => {}
                Expression::Name(n) => {
                    if !out.contains(&n.as_str()) {
                        out.push(n);
                    }
                }
                Expression::Add(a, b)
                | Expression::Sub(a, b)
                | Expression::Mul(a, b)
                | Expression::Div(a, b)
                | Expression::Min(a, b)
                | Expression::Max(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Expression::Clamp(x, lo, hi) => {
                    walk(x, out);
                    walk(lo, out);
                    walk(hi, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

/// Evaluates `e` with names looked up in `env`.
pub fn evaluate(e: &Expression, env: &HashMap<String, f64>) -> Result<f64, SdmError> {
    let bin =
        |a: &Expression, b: &Expression| -> Result<(f64, f64), SdmError> { Ok((evaluate(a, env)?, evaluate(b, env)?)) };
    Ok(match e {
        Expression::Const(v) => *v,
        Expression::Name(n) => *env.get(n).ok_or_else(|| SdmError::UnboundName(n.clone()))?,
        Expression::Add(a, b) => {
            let (x, y) = bin(a, b)?;
            x + y
        }
        Expression::Sub(a, b) => {
            let (x, y) = bin(a, b)?;
            x - y
        }
        Expression::Mul(a, b) => {
            let (x, y) = bin(a, b)?;
            x * y
        }
        Expression::Div(a, b) => {
            let (x, y) = bin(a, b)?;
            if y.abs() < DIVISION_GUARD {
                return Err(SdmError::DivisionByZeroGuardTripped { step: None, time: None });
            }
            x / y
        }
        Expression::Min(a, b) => {
            let (x, y) = bin(a, b)?;
            x.min(y)
        }
        Expression::Max(a, b) => {
            let (x, y) = bin(a, b)?;
            x.max(y)
        }
        Expression::Clamp(x, lo, hi) => {
            let x = evaluate(x, env)?;
            let (lo, hi) = bin(lo, hi)?;
            x.max(lo).min(hi)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stock {
    pub name: String,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub name: String,
    /// Stock the flow feeds (positive sign) or drains (negative sign).
    pub stock: String,
    pub sign: Polarity,
    pub rate: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auxiliary {
    pub name: String,
    pub expression: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub name: String,
    pub value: f64,
}

/// First-order exponential delay: `state' = (input - state) / tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delay {
    pub name: String,
    pub input: Expression,
    pub tau: f64,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SdmModel {
    #[serde(default)]
    pub stocks: Vec<Stock>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    #[serde(default)]
    pub auxiliaries: Vec<Auxiliary>,
    #[serde(default)]
    pub constants: Vec<Constant>,
    #[serde(default)]
    pub delays: Vec<Delay>,
    /// Keep every stock within [0, 100] after each step.
    #[serde(default)]
    pub clamp: bool,
}

impl SdmModel {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.name == name).map(|c| c.value)
    }

    /// Checks names, references, delay constants and auxiliary ordering.
    /// Returns auxiliary indices in evaluation order.
    pub fn validate(&self) -> Result<Vec<usize>, SdmError> {
        let mut declared = BTreeSet::new();
        let names = self
            .stocks
            .iter()
            .map(|s| &s.name)
            .chain(self.flows.iter().map(|f| &f.name))
            .chain(self.auxiliaries.iter().map(|a| &a.name))
            .chain(self.constants.iter().map(|c| &c.name))
            .chain(self.delays.iter().map(|d| &d.name));
        for name in names {
            if name.is_empty() {
                return Err(SdmError::InvalidModel("empty name".into()));
            }
            if !declared.insert(name.as_str()) {
                return Err(SdmError::InvalidModel(format!("name {name:?} declared twice")));
            }
        }
        // flows are rates, not values other expressions may read
        let readable: BTreeSet<&str> = self
            .stocks
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.auxiliaries.iter().map(|a| a.name.as_str()))
            .chain(self.constants.iter().map(|c| c.name.as_str()))
            .chain(self.delays.iter().map(|d| d.name.as_str()))
            .collect();
        let check = |owner: &str, e: &Expression| -> Result<(), SdmError> {
            match e.names().into_iter().find(|n| !readable.contains(n)) {
                Some(n) => Err(SdmError::NameResolution(format!(
                    "{owner} references undeclared name {n:?}"
                ))),
                None => Ok(()),
            }
        };
        for f in &self.flows {
            check(&f.name, &f.rate)?;
            if !self.stocks.iter().any(|s| s.name == f.stock) {
                return Err(SdmError::NameResolution(format!(
                    "flow {} targets undeclared stock {:?}",
                    f.name, f.stock
                )));
            }
        }
        for a in &self.auxiliaries {
            check(&a.name, &a.expression)?;
        }
        for d in &self.delays {
            check(&d.name, &d.input)?;
            if !(d.tau > 0.0 && d.tau.is_finite()) {
                return Err(SdmError::InvalidModel(format!(
                    "delay {} has time constant {}",
                    d.name, d.tau
                )));
            }
        }
        let values = self
            .stocks
            .iter()
            .map(|s| (&s.name, s.initial))
            .chain(self.constants.iter().map(|c| (&c.name, c.value)))
            .chain(self.delays.iter().map(|d| (&d.name, d.initial)));
        for (name, v) in values {
            if !v.is_finite() {
                return Err(SdmError::InvalidModel(format!("{name} has a non-finite value")));
            }
        }
        if self.clamp {
            if let Some(s) = self
                .stocks
                .iter()
                .find(|s| !(INDEX_MIN..=INDEX_MAX).contains(&s.initial))
            {
                return Err(SdmError::InvalidModel(format!(
                    "stock {} starts at {} outside the clamped range",
                    s.name, s.initial
                )));
            }
        }
        self.auxiliary_order()
    }

    fn auxiliary_order(&self) -> Result<Vec<usize>, SdmError> {
        let index: BTreeMap<&str, usize> = self
            .auxiliaries
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.as_str(), i))
            .collect();
        let mut graph: DiGraphMap<usize, ()> = DiGraphMap::new();
        for (i, a) in self.auxiliaries.iter().enumerate() {
            graph.add_node(i);
            for dep in a.expression.names() {
                if let Some(&j) = index.get(dep) {
                    graph.add_edge(j, i, ());
                }
            }
        }
        toposort(&graph, None).map_err(|_| {
            let mut members: Vec<usize> = tarjan_scc(&graph)
                .into_iter()
                .find(|c| c.len() > 1 || graph.contains_edge(c[0], c[0]))
                .unwrap_or_default();
            members.sort_unstable();
            let mut path: Vec<String> = members.iter().map(|&i| self.auxiliaries[i].name.clone()).collect();
            if let Some(first) = path.first().cloned() {
                path.push(first);
            }
            SdmError::CyclicAuxiliaries(path)
        })
    }
}

/// What-if run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl Scenario {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            overrides: BTreeMap::new(),
            horizon,
            dt,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + GRID_SLACK).floor() as usize
    }

    pub fn validate(&self, model: &SdmModel) -> Result<(), SdmError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdmError::InvalidScenario(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon + GRID_SLACK >= self.dt) {
            return Err(SdmError::InvalidScenario(format!(
                "horizon {} must be at least dt {}",
                self.horizon, self.dt
            )));
        }
        for (name, value) in &self.overrides {
            if model.constant(name).is_none() {
                return Err(SdmError::InvalidScenario(format!(
                    "override {name:?} is not a declared constant"
                )));
            }
            if !value.is_finite() {
                return Err(SdmError::InvalidScenario(format!("override {name:?} is not finite")));
            }
        }
        Ok(())
    }
}

/// Caps that keep a synchronous run bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioLimits {
    pub max_horizon: f64,
    pub min_dt: f64,
}

impl Default for ScenarioLimits {
    fn default() -> Self {
        Self {
            max_horizon: 100.0,
            min_dt: 1e-3,
        }
    }
}

impl ScenarioLimits {
    pub fn check(&self, sc: &Scenario) -> Result<(), SdmError> {
        if sc.horizon > self.max_horizon {
            return Err(SdmError::ScenarioLimitExceeded(format!(
                "horizon {} exceeds {}",
                sc.horizon, self.max_horizon
            )));
        }
        if sc.dt < self.min_dt {
            return Err(SdmError::ScenarioLimitExceeded(format!(
                "dt {} is below {}",
                sc.dt, self.min_dt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub stocks: Vec<Series>,
    pub auxiliaries: Vec<Series>,
    pub delays: Vec<Series>,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.stocks
            .iter()
            .chain(&self.auxiliaries)
            .chain(&self.delays)
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    /// Wide CSV: `time` then one column per stock, auxiliary and delay.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut csv = csv::Writer::from_writer(writer);
        let columns: Vec<&Series> = self
            .stocks
            .iter()
            .chain(&self.auxiliaries)
            .chain(&self.delays)
            .collect();
        let mut header = vec!["time".to_string()];
        header.extend(columns.iter().map(|s| s.name.clone()));
        csv.write_record(&header)?;
        for (k, t) in self.time.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(columns.iter().map(|s| s.values[k].to_string()));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Explicit Euler over `floor(horizon / dt) + 1` grid points.
pub fn simulate(m: &SdmModel, sc: &Scenario) -> Result<Trajectory, SdmError> {
    let aux_order = m.validate()?;
    sc.validate(m)?;
    let steps = sc.steps();

    let mut env: HashMap<String, f64> = HashMap::new();
    for c in &m.constants {
        env.insert(c.name.clone(), sc.overrides.get(&c.name).copied().unwrap_or(c.value));
    }
    let mut levels: Vec<f64> = m.stocks.iter().map(|s| s.initial).collect();
    let mut states: Vec<f64> = m.delays.iter().map(|d| d.initial).collect();

    let mut out = Trajectory {
        time: Vec::with_capacity(steps + 1),
        stocks: m.stocks.iter().map(|s| series(&s.name, steps)).collect(),
        auxiliaries: m.auxiliaries.iter().map(|a| series(&a.name, steps)).collect(),
        delays: m.delays.iter().map(|d| series(&d.name, steps)).collect(),
    };
    let stock_index: HashMap<&str, usize> = m.stocks.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let guard = |step: usize, t: f64| {
        move |e: SdmError| match e {
            SdmError::DivisionByZeroGuardTripped { .. } => SdmError::DivisionByZeroGuardTripped {
                step: Some(step),
                time: Some(t),
            },
            other => other,
        }
    };

    let mut net = vec![0.0; levels.len()];
    let mut inputs = vec![0.0; states.len()];
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        for (s, &v) in m.stocks.iter().zip(&levels) {
            env.insert(s.name.clone(), v);
        }
        for (d, &v) in m.delays.iter().zip(&states) {
            env.insert(d.name.clone(), v);
        }
        for &i in &aux_order {
            let a = &m.auxiliaries[i];
            let v = evaluate(&a.expression, &env).map_err(guard(k, t))?;
            env.insert(a.name.clone(), v);
        }

        out.time.push(t);
        for (series, &v) in out.stocks.iter_mut().zip(&levels) {
            series.values.push(v);
        }
        for (series, &v) in out.delays.iter_mut().zip(&states) {
            series.values.push(v);
        }
        for (series, a) in out.auxiliaries.iter_mut().zip(&m.auxiliaries) {
            series.values.push(env[&a.name]);
        }
        if k == steps {
            break;
        }

        net.iter_mut().for_each(|v| *v = 0.0);
        for f in &m.flows {
            let rate = evaluate(&f.rate, &env).map_err(guard(k, t))?;
            net[stock_index[f.stock.as_str()]] += f.sign.sign() * rate;
        }
        for (input, d) in inputs.iter_mut().zip(&m.delays) {
            *input = evaluate(&d.input, &env).map_err(guard(k, t))?;
        }
        for (level, rate) in levels.iter_mut().zip(&net) {
            *level += sc.dt * rate;
            if m.clamp {
                *level = level.clamp(INDEX_MIN, INDEX_MAX);
            }
        }
        for ((state, input), d) in states.iter_mut().zip(&inputs).zip(&m.delays) {
            *state += sc.dt * (input - *state) / d.tau;
        }
    }
    Ok(out)
}

fn series(name: &str, steps: usize) -> Series {
    Series {
        name: name.to_string(),
        values: Vec::with_capacity(steps + 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileOptions {
    pub k_gain: f64,
    pub k_decay: f64,
    /// Per-objective baseline; the stock's initial level when absent.
    #[serde(default)]
    pub baselines: BTreeMap<String, f64>,
    pub clamp: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            k_gain: DEFAULT_K_GAIN,
            k_decay: DEFAULT_K_DECAY,
            baselines: BTreeMap::new(),
            clamp: true,
        }
    }
}

/// Initial level of an objective's stock: mean KPI attainment x 100 over KPIs
/// with data, limited to the index range; [`NO_DATA_LEVEL`] without data.
pub fn initial_level(s: &Scorecard, objective_id: &str) -> f64 {
    let Some(o) = s.objective(objective_id) else {
        return NO_DATA_LEVEL;
    };
    let attainments: Vec<f64> = s.kpis_of(o).filter_map(|k| kpi_status(k).attainment).collect();
    if attainments.is_empty() {
        NO_DATA_LEVEL
    } else {
        let mean = attainments.iter().sum::<f64>() / attainments.len() as f64;
        (mean * 100.0).clamp(INDEX_MIN, INDEX_MAX)
    }
}

/// One stock per objective, a decay flow per stock toward its baseline, and a
/// flow per causal link with rate `w * k_gain * (L(u) - L(v))`, signed by the
/// link polarity. Links with a positive lag read `L(u)` through a delay.
///
/// Generated names: `k_gain`, `k_decay`, `baseline_<id>`, `w_<from>_<to>`,
/// `lag_<from>_<to>`, `link_<from>_<to>`, `decay_<id>`.
pub fn compile(s: &Scorecard, cfg: &CompileOptions) -> Result<SdmModel, SdmError> {
    let report = s.validate();
    if !report.is_valid() {
        let messages: Vec<String> = report.errors.into_iter().map(|e| e.message).collect();
        return Err(SdmError::InvalidScorecard(messages.join("; ")));
    }
    if let Some(unknown) = cfg.baselines.keys().find(|k| s.objective(k).is_none()) {
        return Err(SdmError::InvalidScorecard(format!(
            "baseline given for unknown objective {unknown}"
        )));
    }
    let mut m = SdmModel {
        clamp: cfg.clamp,
        ..SdmModel::default()
    };
    m.constants.push(Constant {
        name: "k_gain".into(),
        value: cfg.k_gain,
    });
    m.constants.push(Constant {
        name: "k_decay".into(),
        value: cfg.k_decay,
    });
    let mut initial = BTreeMap::new();
    for o in &s.objectives {
        let level = initial_level(s, &o.id);
        initial.insert(o.id.as_str(), level);
        m.stocks.push(Stock {
            name: o.id.clone(),
            initial: level,
        });
        let baseline = format!("baseline_{}", o.id);
        m.constants.push(Constant {
            name: baseline.clone(),
            value: cfg.baselines.get(&o.id).copied().unwrap_or(level),
        });
        m.flows.push(Flow {
            name: format!("decay_{}", o.id),
            stock: o.id.clone(),
            sign: Polarity::Negative,
            rate: Expression::mul(
                Expression::name("k_decay"),
                Expression::sub(Expression::name(&o.id), Expression::name(baseline)),
            ),
        });
    }
    for l in &s.links {
        let (u, v) = (&l.from_objective, &l.to_objective);
        let w = format!("w_{u}_{v}");
        m.constants.push(Constant {
            name: w.clone(),
            value: l.strength,
        });
        let source = if l.lag > 0.0 {
            let lag = format!("lag_{u}_{v}");
            m.delays.push(Delay {
                name: lag.clone(),
                input: Expression::name(u),
                tau: l.lag,
                initial: initial[u.as_str()],
            });
            lag
        } else {
            u.clone()
        };
        m.flows.push(Flow {
            name: format!("link_{u}_{v}"),
            stock: v.clone(),
            sign: l.polarity,
            rate: Expression::mul(
                Expression::mul(Expression::name(w), Expression::name("k_gain")),
                Expression::sub(Expression::name(source), Expression::name(v)),
            ),
        });
    }
    m.validate()?;
    Ok(m)
}
