//! Experiment configs, seeded multi-run orchestration and the files a run
//! leaves on disk.
//!
//! Layout of `output_dir`:
//!
//! ```text
//! config.json                      resolved config
//! traces/T{T}_seed{seed}.csv       per-step trace
//! summaries/T{T}_seed{seed}.json   RunSummary
//! checkpoints/T{T}_seed{seed}.json final (mdp, features, θ, φ, ω)
//! report.json                      aggregate Report
//! plot_{key}.csv                   per-horizon means and stds
//! aborts.json                      only when some run aborted
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::actor_critic::{
    auto_critic_radius, run_acer, Cadence, CriticRadius, RunInit, RunSettings, RunSummary,
    RunTrace, StepSchedule,
};
use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, FiniteMdp, MdpGenerator};
use crate::metrics::{summarize, Report};
use crate::oracle;
use crate::policy::PolicyParams;
use crate::reward::{OracleConfig, OracleDocument, RewardOracle, RewardParams};

/// Largest accepted `|S|` and feature dimension `d`.
pub const MAX_DIM: usize = 512;

/// Environment variable that sets the worker count.
pub const THREADS_ENV: &str = "EVOLVING_AC_THREADS";

/// An inline MDP or a generator spec. A JSON object with a `transition`
/// field is read as inline.
#[derive(Clone, Debug, PartialEq)]
pub enum MdpSource {
    Inline(FiniteMdp),
    Generator(MdpGenerator),
}

impl MdpSource {
    pub fn n_states(&self) -> usize {
        match self {
            MdpSource::Inline(mdp) => mdp.n_states(),
            MdpSource::Generator(g) => g.n_states,
        }
    }

    pub fn resolve(&self) -> Result<FiniteMdp> {
        match self {
            MdpSource::Inline(mdp) => Ok(mdp.clone()),
            MdpSource::Generator(g) => g.generate(),
        }
    }
}

impl<'de> Deserialize<'de> for MdpSource {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(de)?;
        if value.get("transition").is_some() {
            FiniteMdp::deserialize(value)
                .map(MdpSource::Inline)
                .map_err(D::Error::custom)
        } else {
            MdpGenerator::deserialize(value)
                .map(MdpSource::Generator)
                .map_err(D::Error::custom)
        }
    }
}

impl Serialize for MdpSource {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MdpSource::Inline(mdp) => mdp.serialize(ser),
            MdpSource::Generator(g) => g.serialize(ser),
        }
    }
}

/// `"tabular"`, an inline `|S| × d` matrix, or
/// `{"kind": "random_projection", "d", "seed"}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum FeatureSpec {
    #[default]
    Tabular,
    Matrix(Vec<Vec<f64>>),
    RandomProjection {
        d: usize,
        seed: u64,
    },
}

impl FeatureSpec {
    pub fn dim(&self, n_states: usize) -> usize {
        match self {
            FeatureSpec::Tabular => n_states,
            FeatureSpec::Matrix(rows) => rows.first().map_or(0, Vec::len),
            FeatureSpec::RandomProjection { d, .. } => *d,
        }
    }

    pub fn resolve(&self, n_states: usize) -> Result<FeatureMap> {
        match self {
            FeatureSpec::Tabular => Ok(FeatureMap::tabular(n_states)),
            FeatureSpec::Matrix(rows) => FeatureMap::from_rows(rows),
            FeatureSpec::RandomProjection { d, seed } => {
                FeatureMap::random_projection(n_states, *d, *seed)
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionDocument {
    kind: String,
    d: usize,
    #[serde(default)]
    seed: u64,
}

impl<'de> Deserialize<'de> for FeatureSpec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(de)? {
            Value::String(s) if s == "tabular" => Ok(FeatureSpec::Tabular),
            Value::String(s) => Err(D::Error::custom(format!(
                "unknown feature kind `{s}`, expected \"tabular\""
            ))),
            v @ Value::Array(_) => Vec::<Vec<f64>>::deserialize(v)
                .map(FeatureSpec::Matrix)
                .map_err(D::Error::custom),
            v @ Value::Object(_) => {
                let doc = ProjectionDocument::deserialize(v).map_err(D::Error::custom)?;
                if doc.kind != "random_projection" {
                    return Err(D::Error::custom(format!(
                        "unknown feature kind `{}`, expected \"random_projection\"",
                        doc.kind
                    )));
                }
                Ok(FeatureSpec::RandomProjection {
                    d: doc.d,
                    seed: doc.seed,
                })
            }
            other => Err(D::Error::custom(format!("unexpected feature spec {other}"))),
        }
    }
}

impl Serialize for FeatureSpec {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FeatureSpec::Tabular => ser.serialize_str("tabular"),
            FeatureSpec::Matrix(rows) => rows.serialize(ser),
            FeatureSpec::RandomProjection { d, seed } => {
                serde_json::json!({ "kind": "random_projection", "d": d, "seed": seed })
                    .serialize(ser)
            }
        }
    }
}

/// `"auto"` or an explicit value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Setting<T> {
    #[default]
    Auto,
    Value(T),
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Setting<T> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(de)? {
            Value::String(s) if s == "auto" => Ok(Setting::Auto),
            v => T::deserialize(v)
                .map(Setting::Value)
                .map_err(|e| D::Error::custom(format!("expected \"auto\" or a value: {e}"))),
        }
    }
}

impl<T: Serialize> Serialize for Setting<T> {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Setting::Auto => ser.serialize_str("auto"),
            Setting::Value(v) => v.serialize(ser),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub c_theta: f64,
    pub c_omega: f64,
    /// Upper bound on `c_θ/c_ω`, enforced at load.
    pub ratio_cap: f64,
    pub t_offset: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = StepSchedule::default();
        Self {
            c_theta: s.c_theta,
            c_omega: s.c_omega,
            ratio_cap: 0.1,
            t_offset: s.t_offset,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    #[serde(rename = "C_omega")]
    pub c_omega: Setting<f64>,
}

fn default_alpha0() -> f64 {
    0.01
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Group key in the report; defaults to the oracle kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub mdp: MdpSource,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub reward_oracle: OracleConfig,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(rename = "T_sweep", default, skip_serializing_if = "Option::is_none")]
    pub horizon_sweep: Option<Vec<usize>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub oracle_cadence: Setting<usize>,
    #[serde(default = "default_true")]
    pub track_mismatch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_limit: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Reads a config file, applies `key=value` overrides and validates.
pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    ExperimentConfig::from_value(value)
}

/// Applies `key=value` to a JSON document. Dotted keys reach nested
/// fields; the value is parsed as JSON and falls back to a string.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let item = item.strip_prefix("--").unwrap_or(item);
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    if key.is_empty() {
        return Err(Error::config(item, "empty override key"));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn deserialize_at<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = match (prefix.is_empty(), path == ".") {
            (true, true) => "<root>".to_string(),
            (true, false) => path,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{path}"),
        };
        Error::config(field, e.into_inner().to_string())
    })
}

impl ExperimentConfig {
    pub fn from_value(mut value: Value) -> Result<Self> {
        let oracle = value
            .as_object_mut()
            .and_then(|m| m.remove("reward_oracle"));
        let mut config: Self = deserialize_at(value, "")?;
        if let Some(oracle) = oracle {
            let doc: OracleDocument = deserialize_at(oracle, "reward_oracle")?;
            config.reward_oracle = OracleConfig::try_from(doc)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn key(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{:?}", self.reward_oracle.kind()))
    }

    /// `T_sweep` if given, else `[T]`.
    pub fn horizons(&self) -> Vec<usize> {
        match (&self.horizon_sweep, self.horizon) {
            (Some(sweep), _) => sweep.clone(),
            (None, Some(t)) => vec![t],
            (None, None) => Vec::new(),
        }
    }

    pub fn step_schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(
            self.schedule.c_theta,
            self.schedule.c_omega,
            self.schedule.t_offset,
        )
    }

    pub fn cadence(&self, horizon: usize) -> Cadence {
        match self.oracle_cadence {
            Setting::Auto => Cadence::auto(horizon),
            Setting::Value(every) => Cadence::every(every),
        }
    }

    /// Non-fatal remarks about the config.
    pub fn warnings(&self) -> Vec<String> {
        self.horizons()
            .into_iter()
            .filter(|t| !t.is_power_of_two())
            .map(|t| format!("T = {t} is not a power of two"))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n_states = self.mdp.n_states();
        if n_states > MAX_DIM {
            return Err(Error::config(
                "mdp.n_states",
                format!("{n_states} exceeds {MAX_DIM}"),
            ));
        }
        let d = self.features.dim(n_states);
        if d > MAX_DIM {
            let field = match self.features {
                FeatureSpec::RandomProjection { .. } => "features.d",
                _ => "features",
            };
            return Err(Error::config(
                field,
                format!("dimension {d} exceeds {MAX_DIM}"),
            ));
        }
        let schedule = self.step_schedule()?;
        let cap = self.schedule.ratio_cap;
        if !(cap >= 0.0 && cap.is_finite()) {
            return Err(Error::config(
                "schedule.ratio_cap",
                "must be finite and ≥ 0",
            ));
        }
        let ratio = if schedule.c_theta == 0.0 {
            0.0
        } else {
            schedule.ratio()
        };
        if !(ratio <= cap) {
            return Err(Error::config(
                "schedule.ratio",
                format!("c_theta/c_omega = {ratio} exceeds ratio_cap = {cap}"),
            ));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(Error::config("alpha0", "must be finite and ≥ 0"));
        }
        if let Setting::Value(c) = self.critic.c_omega {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("critic.C_omega", "must be finite and > 0"));
            }
        }
        if let Some(limit) = self.logit_limit {
            if !(limit > 0.0 && limit.is_finite()) {
                return Err(Error::config("logit_limit", "must be finite and > 0"));
            }
        }
        if self.oracle_cadence == Setting::Value(0) {
            return Err(Error::config("oracle_cadence", "must be ≥ 1"));
        }
        let field = if self.horizon_sweep.is_some() {
            "T_sweep"
        } else {
            "T"
        };
        let horizons = self.horizons();
        if horizons.is_empty() {
            return Err(Error::config(field, "give T or a nonempty T_sweep"));
        }
        if horizons.iter().collect::<BTreeSet<_>>().len() != horizons.len() {
            return Err(Error::config(field, "duplicate horizon"));
        }
        for &t in &horizons {
            let cadence = self.cadence(t);
            let in_window = (t / 2..t).filter(|&s| cadence.is_snapshot(s, t)).count();
            if in_window < 2 {
                return Err(Error::config(
                    field,
                    format!(
                        "T = {t} leaves {in_window} oracle snapshots in the second half, need 2"
                    ),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds", "duplicate seed"));
        }
        let mdp = self
            .mdp
            .resolve()
            .map_err(|e| Error::config("mdp", e.to_string()))?;
        let features = self
            .features
            .resolve(n_states)
            .map_err(|e| Error::config("features", e.to_string()))?;
        if features.n_states() != n_states {
            return Err(Error::config(
                "features",
                format!("{} rows for {n_states} states", features.n_states()),
            ));
        }
        RewardOracle::new(
            &self.reward_oracle,
            &RewardParams::from_mdp(&mdp, self.alpha0)?,
            0,
        )
        .map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("reward_oracle", other.to_string()),
        })?;
        Ok(())
    }

    /// Builds the MDP, features and critic radius shared by every run.
    pub fn prepare(&self) -> Result<Prepared> {
        let mdp = self
            .mdp
            .resolve()
            .map_err(|e| Error::config("mdp", e.to_string()))?;
        let features = self
            .features
            .resolve(mdp.n_states())
            .map_err(|e| Error::config("features", e.to_string()))?;
        let init = RunInit::defaults(&mdp, self.alpha0)?;
        let critic_radius = match self.critic.c_omega {
            Setting::Value(c) => c,
            Setting::Auto => auto_critic_radius(&mdp, &features, &init.theta, &init.phi)
                .map_err(|e| Error::config("critic.C_omega", e.to_string()))?,
        };
        Ok(Prepared {
            schedule: self.step_schedule()?,
            mdp,
            features,
            init,
            critic_radius,
        })
    }

    pub fn run_settings(&self, prepared: &Prepared, horizon: usize, seed: u64) -> RunSettings {
        RunSettings {
            schedule: prepared.schedule,
            critic_radius: CriticRadius::Fixed(prepared.critic_radius),
            cadence: self.cadence(horizon),
            track_mismatch: self.track_mismatch,
            logit_limit: self.logit_limit,
            ..RunSettings::new(horizon, seed)
        }
    }

    /// `(T, seed)` pairs, horizons outermost.
    pub fn jobs(&self) -> Vec<(usize, u64)> {
        self.horizons()
            .into_iter()
            .flat_map(|t| self.seeds.iter().map(move |&s| (t, s)))
            .collect()
    }

    /// One run of the experiment, in memory.
    pub fn run_one(&self, prepared: &Prepared, horizon: usize, seed: u64) -> Result<RunTrace> {
        let oracle = RewardOracle::new(&self.reward_oracle, &prepared.init.phi, seed)?;
        let settings = self.run_settings(prepared, horizon, seed);
        Ok(run_acer(
            &prepared.mdp,
            &prepared.features,
            &prepared.init,
            oracle,
            &settings,
        )?
        .with_label(self.key()))
    }
}

/// Resolved inputs shared by every run of an experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub mdp: FiniteMdp,
    pub features: FeatureMap,
    pub init: RunInit,
    pub schedule: StepSchedule,
    pub critic_radius: f64,
}

/// Everything needed to re-evaluate the oracles at a run's end point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub mdp: FiniteMdp,
    pub features: Vec<Vec<f64>>,
    pub theta: PolicyParams,
    pub phi: RewardParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(rename = "C_omega", default, skip_serializing_if = "Option::is_none")]
    pub critic_radius: Option<f64>,
}

impl Checkpoint {
    pub fn from_trace(mdp: &FiniteMdp, features: &FeatureMap, trace: &RunTrace) -> Self {
        Self {
            mdp: mdp.clone(),
            features: features.to_rows(),
            theta: trace.final_theta.clone(),
            phi: trace.final_phi.clone(),
            omega: Some(trace.final_omega.iter().copied().collect()),
            critic_radius: Some(trace.critic_radius),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config("checkpoint", e.to_string()))
    }
}

/// The exact oracles at a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `‖Ā ω* − b‖∞`.
    pub residual: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub grad_norm: f64,
    #[serde(rename = "J")]
    pub objective: f64,
    /// Present when the checkpoint records `C_ω`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_delta: Option<f64>,
    pub omega_star: Vec<f64>,
    /// `‖ω − ω*‖²` when the checkpoint carries `ω`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_err_sq: Option<f64>,
    pub visitation: Vec<f64>,
}

pub fn probe_checkpoint(checkpoint: &Checkpoint) -> Result<ProbeReport> {
    let features = FeatureMap::from_rows(&checkpoint.features)?;
    let snap = oracle::snapshot(
        &checkpoint.mdp,
        &features,
        &checkpoint.theta,
        &checkpoint.phi,
        checkpoint.critic_radius.unwrap_or(0.0),
    )?;
    let critic_err_sq = match &checkpoint.omega {
        Some(w) if w.len() != features.dim() => {
            return Err(Error::DimensionMismatch {
                what: "checkpoint omega",
                expected: features.dim(),
                found: w.len(),
            })
        }
        Some(w) => Some(snap.critic_error_sq(&nalgebra::DVector::from_column_slice(w))),
        None => None,
    };
    Ok(ProbeReport {
        residual: snap.residual,
        lambda: snap.lambda,
        epsilon: snap.epsilon,
        grad_norm: snap.grad_norm_sq().sqrt(),
        objective: snap.objective,
        c_delta: checkpoint.critic_radius.map(|_| snap.c_delta),
        omega_star: snap.omega_star.iter().copied().collect(),
        critic_err_sq,
        visitation: snap.visitation.probs().to_vec(),
    })
}

pub fn probe(checkpoint_path: impl AsRef<Path>) -> Result<ProbeReport> {
    probe_checkpoint(&Checkpoint::load(checkpoint_path)?)
}

/// Reads a generator spec and builds the MDP.
pub fn gen_mdp(spec_path: impl AsRef<Path>) -> Result<FiniteMdp> {
    let text = fs::read_to_string(spec_path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let generator: MdpGenerator = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::config(e.path().to_string(), e.into_inner().to_string()))?;
    if generator.n_states > MAX_DIM {
        return Err(Error::config(
            "n_states",
            format!("{} exceeds {MAX_DIM}", generator.n_states),
        ));
    }
    generator.generate()
}

/// The worker count from [`THREADS_ENV`], else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config(
                THREADS_ENV,
                format!("expected a positive integer, got `{raw}`"),
            )),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAbort {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    /// One entry per completed run, in `(T, seed)` order.
    pub summaries: Vec<RunSummary>,
    pub aborts: Vec<RunAbort>,
    /// `None` when every run aborted.
    pub report: Option<Report>,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.aborts.is_empty())
    }
}

fn run_stem(horizon: usize, seed: u64) -> String {
    format!("T{horizon}_seed{seed}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// A `(T, seed)` pair and its run.
pub type JobResult = ((usize, u64), Result<RunTrace>);

/// Runs every `(T, seed)` pair without touching the disk. Results come
/// back in [`ExperimentConfig::jobs`] order whatever the thread count.
pub fn run_in_memory(config: &ExperimentConfig, threads: usize) -> Result<Vec<JobResult>> {
    let prepared = config.prepare()?;
    let jobs = config.jobs();
    let results: Vec<Result<RunTrace>> = thread_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(horizon, seed)| config.run_one(&prepared, horizon, seed))
            .collect()
    });
    Ok(jobs.into_iter().zip(results).collect())
}

/// Runs every `(T, seed)` pair with [`worker_count`] workers.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with_threads(config, worker_count()?)
}

pub fn run_experiment_with_threads(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentOutcome> {
    let prepared = config.prepare()?;
    let out = &config.output_dir;
    for sub in ["traces", "summaries", "checkpoints"] {
        fs::create_dir_all(out.join(sub))?;
    }
    write_json(&out.join("config.json"), config)?;

    let jobs = config.jobs();
    let results: Vec<Result<(RunTrace, RunSummary)>> = thread_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(horizon, seed)| {
                let trace = config.run_one(&prepared, horizon, seed)?;
                let summary = trace.summary()?;
                let stem = run_stem(horizon, seed);
                trace.save_csv(out.join("traces").join(format!("{stem}.csv")))?;
                write_json(
                    &out.join("summaries").join(format!("{stem}.json")),
                    &summary,
                )?;
                let checkpoint = Checkpoint::from_trace(&prepared.mdp, &prepared.features, &trace);
                write_json(
                    &out.join("checkpoints").join(format!("{stem}.json")),
                    &checkpoint,
                )?;
                Ok((trace, summary))
            })
            .collect()
    });

    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    let mut aborts = Vec::new();
    for (&(horizon, seed), result) in jobs.iter().zip(results) {
        match result {
            Ok((trace, summary)) => {
                traces.push(trace);
                summaries.push(summary);
            }
            Err(e @ Error::Io(_)) => return Err(e),
            Err(e) => aborts.push(RunAbort {
                seed,
                horizon,
                error: e.to_string(),
            }),
        }
    }
    let report = if traces.is_empty() {
        None
    } else {
        Some(summarize(&traces)?)
    };
    if let Some(report) = &report {
        write_json(&out.join("report.json"), report)?;
        for group in &report.groups {
            let file = fs::File::create(out.join(format!("plot_{}.csv", group.key)))?;
            group.write_plot_csv(std::io::BufWriter::new(file))?;
        }
    }
    let aborts_path = out.join("aborts.json");
    if aborts.is_empty() {
        if aborts_path.exists() {
            fs::remove_file(&aborts_path)?;
        }
    } else {
        write_json(&aborts_path, &aborts)?;
    }
    Ok(ExperimentOutcome {
        summaries,
        aborts,
        report,
        output_dir: out.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Value {
        serde_json::json!({
            "mdp": { "n_states": 5, "n_actions": 3, "seed": 1, "min_transition_mass": 0.05 },
            "T": 4096,
            "seeds": [1]
        })
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config = ExperimentConfig::from_value(minimal()).unwrap();
        assert_eq!(config.features, FeatureSpec::Tabular);
        assert_eq!(config.reward_oracle, OracleConfig::fixed());
        assert_eq!(config.schedule.c_theta, 0.05);
        assert_eq!(config.schedule.c_omega, 0.5);
        assert_eq!(config.schedule.t_offset, 1);
        assert_eq!(config.critic.c_omega, Setting::Auto);
        assert_eq!(config.alpha0, 0.01);
        assert_eq!(config.horizons(), vec![4096]);
        assert!(config.track_mismatch);
        assert!(config.warnings().is_empty());
        match &config.mdp {
            MdpSource::Generator(g) => assert_eq!(g.gamma, 0.95),
            other => panic!("expected a generator, got {other:?}"),
        }
    }

    #[test]
    fn ratio_cap_names_the_field() {
        let mut doc = minimal();
        doc["schedule"] = serde_json::json!({ "c_theta": 1.0, "c_omega": 1.0, "ratio_cap": 0.1 });
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "schedule.ratio"
        );
    }

    #[test]
    fn inline_gamma_one_is_rejected() {
        let mut doc = minimal();
        doc["mdp"] = serde_json::json!({
            "n_states": 1, "n_actions": 1, "gamma": 1.0, "rho": [1.0],
            "transition": [[[1.0]]], "base_reward": [[0.0]]
        });
        let err = ExperimentConfig::from_value(doc).unwrap_err();
        assert_eq!(field_of(err), "mdp");
    }

    #[test]
    fn type_errors_carry_the_path() {
        let mut doc = minimal();
        doc["schedule"] = serde_json::json!({ "c_theta": "fast" });
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "schedule.c_theta"
        );
        let mut doc = minimal();
        doc["schedule"] = serde_json::json!({ "c_thetta": 0.1 });
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "schedule.c_thetta"
        );
    }

    #[test]
    fn size_caps() {
        let mut doc = minimal();
        doc["mdp"]["n_states"] = 513.into();
        doc["mdp"]["min_transition_mass"] = 0.0.into();
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "mdp.n_states"
        );
        let mut doc = minimal();
        doc["features"] = serde_json::json!({ "kind": "random_projection", "d": 600, "seed": 1 });
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "features.d"
        );
    }

    #[test]
    fn feature_rows_must_match_states() {
        let mut doc = minimal();
        doc["features"] = serde_json::json!([[1.0], [1.0]]);
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "features"
        );
    }

    #[test]
    fn other_validations() {
        let cases: Vec<(&str, Value, &str)> = vec![
            ("alpha0", (-1.0).into(), "alpha0"),
            ("seeds", serde_json::json!([]), "seeds"),
            ("seeds", serde_json::json!([1, 1]), "seeds"),
            ("T", 2.into(), "T"),
            ("T_sweep", serde_json::json!([64, 64]), "T_sweep"),
            ("oracle_cadence", 0.into(), "oracle_cadence"),
            ("logit_limit", (-1.0).into(), "logit_limit"),
            ("oracle_cadence", "sometimes".into(), "oracle_cadence"),
            (
                "critic",
                serde_json::json!({ "C_omega": -1.0 }),
                "critic.C_omega",
            ),
        ];
        for (key, value, field) in cases {
            let mut doc = minimal();
            doc[key] = value;
            assert_eq!(
                field_of(ExperimentConfig::from_value(doc).unwrap_err()),
                field,
                "{key}"
            );
        }
        let mut doc = minimal();
        doc["reward_oracle"] = serde_json::json!({ "kind": "Sometimes" });
        assert_eq!(
            field_of(ExperimentConfig::from_value(doc).unwrap_err()),
            "reward_oracle.kind"
        );
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut doc = minimal();
        apply_override(&mut doc, "--schedule.c_omega=2").unwrap();
        apply_override(&mut doc, "T=1000").unwrap();
        apply_override(&mut doc, "seeds=[3,4]").unwrap();
        apply_override(&mut doc, "label=sweep").unwrap();
        apply_override(&mut doc, "critic.C_omega=auto").unwrap();
        let config = ExperimentConfig::from_value(doc).unwrap();
        assert_eq!(config.schedule.c_omega, 2.0);
        assert_eq!(config.seeds, vec![3, 4]);
        assert_eq!(config.key(), "sweep");
        assert_eq!(
            config.warnings(),
            vec!["T = 1000 is not a power of two".to_string()]
        );

        let mut doc = minimal();
        assert_eq!(field_of(apply_override(&mut doc, "T").unwrap_err()), "T");
        assert_eq!(
            field_of(apply_override(&mut doc, "T.x=1").unwrap_err()),
            "T"
        );
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut doc = minimal();
        doc["features"] = serde_json::json!({ "kind": "random_projection", "d": 3, "seed": 2 });
        doc["oracle_cadence"] = 8.into();
        doc["critic"] = serde_json::json!({ "C_omega": 10.0 });
        doc["reward_oracle"] =
            serde_json::json!({ "kind": "ConstantDrift", "params": { "eta": 0.01 } });
        let config = ExperimentConfig::from_value(doc).unwrap();
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), config);
    }

    #[test]
    fn probe_of_uniform_tabular_checkpoint() {
        let mdp = MdpGenerator::default_fixture().generate().unwrap();
        let checkpoint = Checkpoint {
            features: FeatureMap::tabular(mdp.n_states()).to_rows(),
            theta: PolicyParams::zeros(mdp.n_states(), mdp.n_actions()),
            phi: RewardParams::from_mdp(&mdp, 0.01).unwrap(),
            omega: None,
            critic_radius: None,
            mdp,
        };
        let report = probe_checkpoint(&checkpoint).unwrap();
        assert!(report.lambda > 0.0);
        assert!(report.epsilon <= 1e-8);
        assert!(report.residual <= 1e-9);
        assert_eq!(report.c_delta, None);
        let again = probe_checkpoint(&checkpoint).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
