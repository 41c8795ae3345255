//! Run configurations: one JSON document per command, optionally layered on
//! a shipped preset, validated before anything runs.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;

const PRESETS: &[(&str, &str)] = &[
    ("paper-phase1", include_str!("../presets/paper-phase1.json")),
    ("self-similar", include_str!("../presets/self-similar.json")),
    ("dirac", include_str!("../presets/dirac.json")),
    ("small-clusters", include_str!("../presets/small-clusters.json")),
    ("steady", include_str!("../presets/steady.json")),
    ("phase3-linear", include_str!("../presets/phase3-linear.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

/// A preset is `{"command": ..., "config": {...}}`.
fn preset(name: &str, command: &str) -> Result<Value, String> {
    let (_, text) = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .ok_or_else(|| format!("unknown preset '{name}' (available: {})", preset_names().collect::<Vec<_>>().join(", ")))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| format!("preset '{name}' is malformed: {e}"))?;
    let owner = doc["command"].as_str().unwrap_or_default();
    if owner != command {
        return Err(format!("preset '{name}' belongs to the '{owner}' command, not '{command}'"));
    }
    Ok(doc["config"].clone())
}

/// Later layers override earlier ones key by key.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn layered(command: &str, preset_name: Option<&str>, path: Option<&Path>) -> Result<Value, String> {
    let mut v = Value::Object(Map::new());
    if let Some(name) = preset_name {
        merge(&mut v, preset(name, command)?);
    }
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        merge(&mut v, doc);
    }
    Ok(v)
}

pub fn parse<T: DeserializeOwned + Validate>(v: Value) -> Result<T, String> {
    let cfg: T = serde_json::from_value(v).map_err(|e| format!("invalid config: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_eps(eps: f64, hi: f64) -> Result<(), String> {
    check(eps > 0.0 && eps < hi, || format!("epsilon must lie in (0, {hi}), got {eps}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    SelfSimilar,
    PaperPhase1,
    Dirac,
    SmallClusters,
    Steady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial: Initial,
    pub epsilon: f64,
    pub n_max: usize,
    /// Dirac position R = a/ε.
    pub dirac_a: f64,
    pub max_cycles: usize,
    pub t_end: f64,
    pub sample_dt: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            initial: Initial::SelfSimilar,
            epsilon: 0.02,
            n_max: 1000,
            dirac_a: 0.5,
            max_cycles: 50,
            t_end: 1e6,
            sample_dt: 100.0,
            abs_tol: 1e-14,
            rel_tol: 1e-12,
        }
    }
}

impl Validate for SimulateConfig {
    fn validate(&self) -> Result<(), String> {
        if self.initial != Initial::PaperPhase1 {
            check_eps(self.epsilon, 0.5)?;
        }
        check(self.n_max >= 2 && self.n_max <= 1_000_000, || format!("n_max must lie in [2, 1e6], got {}", self.n_max))?;
        check(self.t_end > 0.0 && self.t_end.is_finite(), || format!("t_end must be positive, got {}", self.t_end))?;
        check(self.sample_dt >= 0.0, || "sample_dt must be nonnegative".into())?;
        check(self.dirac_a > 0.0, || "dirac_a must be positive".into())?;
        check(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.rel_tol < 1e-3, || "tolerances must be positive and rel_tol < 1e-3".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LvConfig {
    pub energy: f64,
    pub epsilon: f64,
    /// Optional ε values for the stage-asymptotics table.
    pub asymptotics: Vec<f64>,
}

impl Default for LvConfig {
    fn default() -> Self {
        Self { energy: 1.0, epsilon: 0.01, asymptotics: Vec::new() }
    }
}

impl Validate for LvConfig {
    fn validate(&self) -> Result<(), String> {
        check_eps(self.epsilon, 1.0)?;
        check(self.energy > 0.0 && self.energy.is_finite(), || format!("energy must be positive, got {}", self.energy))?;
        self.asymptotics.iter().try_for_each(|&e| check_eps(e, 0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub l_domain: f64,
    pub dj: f64,
    pub dt: f64,
    /// Half-Gaussian amplitude μ and variance σ.
    pub mu: f64,
    pub sigma: f64,
    pub v0: f64,
    pub w0: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            l_domain: 250.0,
            dj: 0.5,
            dt: 0.05,
            mu: 0.02,
            sigma: 10.0,
            v0: 0.6,
            w0: 0.6,
            t_end: 3000.0,
            snapshot_times: vec![0.0, 191.0, 2541.0, 2729.0],
        }
    }
}

impl Validate for PdeConfig {
    fn validate(&self) -> Result<(), String> {
        check(self.l_domain > 0.0 && self.dj > 0.0 && self.dt > 0.0 && self.l_domain > 4.0 * self.dj, || {
            "grid needs l_domain > 4 dj > 0 and dt > 0".into()
        })?;
        check(self.mu > 0.0 && self.sigma > 0.0, || "mu and sigma must be positive".into())?;
        check(self.v0 > 0.0 && self.w0 > 0.0, || "v0 and w0 must be positive".into())?;
        check(self.t_end > 0.0 && self.t_end <= 1e7, || format!("t_end must lie in (0, 1e7], got {}", self.t_end))?;
        check(self.snapshot_times.iter().all(|&t| (0.0..=self.t_end).contains(&t)), || {
            "snapshot times must lie in [0, t_end]".into()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileStart {
    Dirac,
    HalfGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupConfig {
    pub sigma2: f64,
    pub start: ProfileStart,
    pub tol: f64,
    pub max_iter: usize,
    /// A used for the Phase II envelope table.
    pub envelope_a: f64,
    pub envelope_s_max: f64,
    pub envelope_points: usize,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            sigma2: 1e-3,
            start: ProfileStart::Dirac,
            tol: 1e-9,
            max_iter: 100_000,
            envelope_a: 2.0 / std::f64::consts::PI,
            envelope_s_max: 10.0,
            envelope_points: 200,
        }
    }
}

impl Validate for SemigroupConfig {
    fn validate(&self) -> Result<(), String> {
        check(self.sigma2 > 0.0 && self.sigma2 <= 1.0, || format!("sigma2 must lie in (0, 1], got {}", self.sigma2))?;
        check(self.tol > 0.0 && self.max_iter > 0, || "tol and max_iter must be positive".into())?;
        check(self.envelope_a > 0.0 && self.envelope_s_max > 0.0 && self.envelope_points >= 2, || {
            "envelope needs a > 0, s_max > 0 and at least 2 points".into()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlayerConfig {
    pub xi_max: f64,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BlayerConfig {
    fn default() -> Self {
        Self { xi_max: 12.0, nodes: 1201, tol: 1e-9, max_iter: 20_000 }
    }
}

impl Validate for BlayerConfig {
    fn validate(&self) -> Result<(), String> {
        check(self.xi_max >= 12.0, || format!("xi_max must be at least 12, got {}", self.xi_max))?;
        check((16..=20_000).contains(&self.nodes), || format!("nodes must lie in [16, 20000], got {}", self.nodes))?;
        check(self.tol > 0.0 && self.max_iter > 0, || "tol and max_iter must be positive".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase3Config {
    pub e_tilde: f64,
    pub epsilon: f64,
    pub n_cycles: usize,
    pub model: Model,
}

impl Default for Phase3Config {
    fn default() -> Self {
        Self { e_tilde: 1e-3, epsilon: 0.01, n_cycles: 30, model: Model::Reduced }
    }
}

impl Validate for Phase3Config {
    fn validate(&self) -> Result<(), String> {
        check_eps(self.epsilon, 1.0)?;
        check(
            self.e_tilde == 0.0 || (self.e_tilde > self.epsilon * self.epsilon && self.e_tilde <= 10.0),
            || format!("e_tilde must be 0 or lie in (eps^2, 10], got {}", self.e_tilde),
        )?;
        check((1..=100_000).contains(&self.n_cycles), || "n_cycles must lie in [1, 1e5]".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase4Start {
    Psi,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase4Config {
    pub initial: Phase4Start,
    pub tau_end: f64,
    pub x_max: f64,
    pub h: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for Phase4Config {
    fn default() -> Self {
        Self { initial: Phase4Start::Psi, tau_end: 20.0, x_max: 40.0, h: 0.02, dt: 0.01, record_every: 100 }
    }
}

impl Validate for Phase4Config {
    fn validate(&self) -> Result<(), String> {
        check(self.h > 0.0 && self.dt > 0.0 && self.x_max > 10.0 * self.h, || "need h, dt > 0 and x_max > 10 h".into())?;
        check(self.x_max >= 20.0, || "x_max below 20 truncates the unit-mass profile".into())?;
        check(self.tau_end >= 0.0 && self.tau_end <= 1e4, || format!("tau_end must lie in [0, 1e4], got {}", self.tau_end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub epsilon: f64,
    /// Truncation for the Jacobian spectrum; 0 skips it.
    pub n_max: usize,
    /// Relative perturbation of the damping run; 0 skips it.
    pub delta: f64,
    pub band_points: usize,
    pub profile_len: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { epsilon: 0.02, n_max: 400, delta: 1e-3, band_points: 65, profile_len: 40 }
    }
}

impl Validate for StabilityConfig {
    fn validate(&self) -> Result<(), String> {
        check_eps(self.epsilon, 0.5)?;
        check(self.delta == 0.0 || self.epsilon <= 0.05, || "the damping run needs epsilon <= 0.05".into())?;
        check((0.0..0.1).contains(&self.delta), || format!("delta must lie in [0, 0.1), got {}", self.delta))?;
        check(self.n_max == 0 || (10..=3000).contains(&self.n_max), || "n_max must be 0 or lie in [10, 3000]".into())?;
        check(self.band_points >= 2, || "band_points must be at least 2".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// One of simulate, lv, phase3, stability.
    pub command: String,
    #[serde(default)]
    pub base: Value,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub workers: usize,
}

pub const SWEEPABLE: &[&str] = &["simulate", "lv", "phase3", "stability"];

impl Validate for SweepConfig {
    fn validate(&self) -> Result<(), String> {
        check(SWEEPABLE.contains(&self.command.as_str()), || {
            format!("sweep command must be one of {}, got '{}'", SWEEPABLE.join(", "), self.command)
        })?;
        check(!self.epsilons.is_empty(), || "sweep needs at least one epsilon".into())?;
        check(self.base.is_null() || self.base.is_object(), || "sweep base must be an object".into())
    }
}

impl SweepConfig {
    /// The base config with ε replaced, as the target command's document.
    pub fn member(&self, eps: f64) -> Value {
        let mut v = if self.base.is_null() { Value::Object(Map::new()) } else { self.base.clone() };
        v["epsilon"] = Value::from(eps);
        v
    }
}
