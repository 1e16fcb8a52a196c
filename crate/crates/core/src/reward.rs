//! The evolving reward parameter `φ = (base table, α)` and the rules that
//! move it between actor-critic steps.
//!
//! Every rule except [`OracleKind::ConstantDrift`] moves `φ` by at most
//! `c_φ·C_φ/t` at step `t`, so the squared increments are summable and the
//! second-half reward variation is `O(1/T²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams};

/// Reward parameters: a base reward table in `[s][a]` order plus the
/// entropy coefficient α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    #[serde(with = "table")]
    base_weights: (usize, Vec<f64>),
    alpha: f64,
}

mod table {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(value: &(usize, Vec<f64>), ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = value.1.chunks(value.0.max(1)).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<(usize, Vec<f64>), D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(serde::de::Error::custom(
                "base_weights must be a non-empty rectangular table",
            ));
        }
        Ok((width, rows.into_iter().flatten().collect()))
    }
}

impl RewardParams {
    pub fn new(n_actions: usize, base_weights: Vec<f64>, alpha: f64) -> Result<Self> {
        if n_actions == 0
            || !base_weights.len().is_multiple_of(n_actions)
            || base_weights.is_empty()
        {
            return Err(Error::InvalidArgument(format!(
                "base table of length {} is not a multiple of n_actions = {n_actions}",
                base_weights.len()
            )));
        }
        if base_weights.iter().any(|w| !w.is_finite()) || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(
                "reward parameters must be finite with alpha ≥ 0".into(),
            ));
        }
        Ok(Self {
            base_weights: (n_actions, base_weights),
            alpha,
        })
    }

    /// Starts from an MDP's base reward table.
    pub fn from_mdp(mdp: &crate::mdp::FiniteMdp, alpha: f64) -> Result<Self> {
        Self::new(mdp.n_actions(), mdp.base_rewards().to_vec(), alpha)
    }

    pub fn n_actions(&self) -> usize {
        self.base_weights.0
    }

    pub fn n_states(&self) -> usize {
        self.base_weights.1.len() / self.base_weights.0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self, s: usize, a: usize) -> f64 {
        self.base_weights.1[s * self.base_weights.0 + a]
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base_weights.1
    }

    pub fn max_abs_base(&self) -> f64 {
        self.base_weights.1.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Flattened base table followed by α.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.base_weights.1.clone();
        v.push(self.alpha);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.base_weights.1.iter().all(|w| w.is_finite())
    }

    /// `‖φ − other‖₂` over the joint (base, α) vector.
    pub fn distance(&self, other: &RewardParams) -> f64 {
        let base: f64 = self
            .base_weights
            .1
            .iter()
            .zip(&other.base_weights.1)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        (base + (self.alpha - other.alpha).powi(2)).sqrt()
    }

    fn shifted(&self, base_step: Option<&[f64]>, alpha_step: f64) -> RewardParams {
        let mut next = self.clone();
        if let Some(step) = base_step {
            next.base_weights
                .1
                .iter_mut()
                .zip(step)
                .for_each(|(w, d)| *w += d);
        }
        next.alpha = (self.alpha + alpha_step).max(0.0);
        next
    }
}

/// `r̃(s, a) = r(s, a) − α log π(a|s)`.
pub fn regularized_reward(phi: &RewardParams, theta: &PolicyParams, s: usize, a: usize) -> f64 {
    phi.base(s, a) - phi.alpha * policy::log_prob(theta, s, a)
}

/// `E_{a∼π}[r̃(s, a)] = Σ_a π(a|s) r(s, a) + α H(π(·|s))`.
pub fn expected_regularized_reward(phi: &RewardParams, theta: &PolicyParams, s: usize) -> f64 {
    let probs = policy::action_probs(theta, s);
    let base: f64 = probs
        .iter()
        .enumerate()
        .map(|(a, p)| p * phi.base(s, a))
        .sum();
    base + phi.alpha * policy::policy_entropy(theta, s)
}

/// Rescales `h` onto the ball of radius `cap` when it lies outside.
pub fn clip_update(h: &[f64], cap: f64) -> Vec<f64> {
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= cap {
        h.to_vec()
    } else {
        let scale = cap / norm;
        h.iter().map(|x| x * scale).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    Static,
    GradientBased,
    EntropyAnneal,
    ShapingBlend,
    ConstantDrift,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Static" => Ok(OracleKind::Static),
            "GradientBased" => Ok(OracleKind::GradientBased),
            "EntropyAnneal" => Ok(OracleKind::EntropyAnneal),
            "ShapingBlend" => Ok(OracleKind::ShapingBlend),
            "ConstantDrift" => Ok(OracleKind::ConstantDrift),
            other => Err(Error::config(
                "reward_oracle.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

/// Per-kind schedule parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleSchedule {
    Static,
    /// Synthetic direction `h = magnitude·u` with `u` uniform on the unit
    /// sphere, drawn fresh each step from a seeded stream.
    GradientBased {
        magnitude: f64,
        seed: u64,
        include_alpha: bool,
    },
    /// Tracks `α_target + (α_start − α_target)·exp(−t/τ)`.
    EntropyAnneal {
        alpha_start: Option<f64>,
        alpha_target: f64,
        tau: f64,
    },
    /// Moves the base table toward `endpoint`.
    ShapingBlend {
        endpoint: Vec<f64>,
    },
    /// `φ ← φ + eta·direction` with a unit direction; ignores the `c_φ/t`
    /// budget. Stress mode only. A direction one longer than the base table
    /// also moves α. A random direction has a nonnegative α component.
    ConstantDrift {
        eta: f64,
        direction: Option<Vec<f64>>,
        seed: u64,
        include_alpha: bool,
    },
}

impl OracleSchedule {
    pub fn kind(&self) -> OracleKind {
        match self {
            OracleSchedule::Static => OracleKind::Static,
            OracleSchedule::GradientBased { .. } => OracleKind::GradientBased,
            OracleSchedule::EntropyAnneal { .. } => OracleKind::EntropyAnneal,
            OracleSchedule::ShapingBlend { .. } => OracleKind::ShapingBlend,
            OracleSchedule::ConstantDrift { .. } => OracleKind::ConstantDrift,
        }
    }
}

/// Reward-update rule as configured: `{"kind", "c_phi", "clip", "params"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OracleDocument", into = "OracleDocument")]
pub struct OracleConfig {
    pub schedule: OracleSchedule,
    /// `c_φ` in `η_t^φ = c_φ/t`.
    pub c_phi: f64,
    /// `C_φ`, the cap on the update direction.
    pub clip: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::fixed()
    }
}

impl OracleConfig {
    pub fn fixed() -> Self {
        Self {
            schedule: OracleSchedule::Static,
            c_phi: 0.0,
            clip: 0.0,
        }
    }

    pub fn gradient_based(c_phi: f64, clip: f64, magnitude: f64, seed: u64) -> Self {
        Self {
            schedule: OracleSchedule::GradientBased {
                magnitude,
                seed,
                include_alpha: false,
            },
            c_phi,
            clip,
        }
    }

    pub fn constant_drift(eta: f64, seed: u64) -> Self {
        Self {
            schedule: OracleSchedule::ConstantDrift {
                eta,
                direction: None,
                seed,
                include_alpha: true,
            },
            c_phi: 0.0,
            clip: 0.0,
        }
    }

    pub fn kind(&self) -> OracleKind {
        self.schedule.kind()
    }

    /// The per-step budget `c_φ·C_φ/t`, or `None` for the drift stress mode.
    pub fn step_budget(&self, t: usize) -> Option<f64> {
        match self.schedule {
            OracleSchedule::ConstantDrift { .. } => None,
            _ => Some(self.c_phi * self.clip / t as f64),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleDocument {
    pub kind: String,
    #[serde(default)]
    pub c_phi: f64,
    #[serde(default)]
    pub clip: f64,
    #[serde(default)]
    pub params: Value,
}

fn param_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| {
            Error::config(format!("reward_oracle.params.{key}"), "expected a number")
        }),
    }
}

fn param_u64(params: &Value, key: &str) -> Result<Option<u64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| {
            Error::config(
                format!("reward_oracle.params.{key}"),
                "expected a nonnegative integer",
            )
        }),
    }
}

fn param_table(params: &Value, key: &str) -> Result<Option<Vec<f64>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            if let Ok(flat) = serde_json::from_value::<Vec<f64>>(v.clone()) {
                return Ok(Some(flat));
            }
            let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
                .map_err(|e| Error::config(format!("reward_oracle.params.{key}"), e.to_string()))?;
            Ok(Some(rows.into_iter().flatten().collect()))
        }
    }
}

impl TryFrom<OracleDocument> for OracleConfig {
    type Error = Error;

    fn try_from(doc: OracleDocument) -> Result<Self> {
        let kind: OracleKind = doc.kind.parse()?;
        if !(doc.c_phi >= 0.0) {
            return Err(Error::config("reward_oracle.c_phi", "must be ≥ 0"));
        }
        if !(doc.clip >= 0.0) {
            return Err(Error::config("reward_oracle.clip", "must be ≥ 0"));
        }
        let p = &doc.params;
        let schedule = match kind {
            OracleKind::Static => OracleSchedule::Static,
            OracleKind::GradientBased => OracleSchedule::GradientBased {
                magnitude: param_f64(p, "magnitude")?.unwrap_or(2.0 * doc.clip),
                seed: param_u64(p, "seed")?.unwrap_or(0),
                include_alpha: p
                    .get("include_alpha")
                    .and_then(Value::as_bool)
                    .unwrap_or(false),
            },
            OracleKind::EntropyAnneal => {
                let tau = param_f64(p, "tau")?.unwrap_or(1000.0);
                if !(tau > 0.0) {
                    return Err(Error::config("reward_oracle.params.tau", "must be > 0"));
                }
                OracleSchedule::EntropyAnneal {
                    alpha_start: param_f64(p, "alpha_start")?,
                    alpha_target: param_f64(p, "alpha_target")?.unwrap_or(0.0).max(0.0),
                    tau,
                }
            }
            OracleKind::ShapingBlend => OracleSchedule::ShapingBlend {
                endpoint: param_table(p, "endpoint")?.ok_or_else(|| {
                    Error::config("reward_oracle.params.endpoint", "required for ShapingBlend")
                })?,
            },
            OracleKind::ConstantDrift => OracleSchedule::ConstantDrift {
                eta: param_f64(p, "eta")?.unwrap_or(0.01),
                direction: param_table(p, "direction")?,
                seed: param_u64(p, "seed")?.unwrap_or(0),
                include_alpha: p
                    .get("include_alpha")
                    .and_then(Value::as_bool)
                    .unwrap_or(true),
            },
        };
        Ok(OracleConfig {
            schedule,
            c_phi: doc.c_phi,
            clip: doc.clip,
        })
    }
}

impl From<OracleConfig> for OracleDocument {
    fn from(config: OracleConfig) -> Self {
        let params = match &config.schedule {
            OracleSchedule::Static => serde_json::json!({}),
            OracleSchedule::GradientBased {
                magnitude,
                seed,
                include_alpha,
            } => {
                serde_json::json!({ "magnitude": magnitude, "seed": seed, "include_alpha": include_alpha })
            }
            OracleSchedule::EntropyAnneal {
                alpha_start,
                alpha_target,
                tau,
            } => {
                serde_json::json!({ "alpha_start": alpha_start, "alpha_target": alpha_target, "tau": tau })
            }
            OracleSchedule::ShapingBlend { endpoint } => {
                serde_json::json!({ "endpoint": endpoint })
            }
            OracleSchedule::ConstantDrift {
                eta,
                direction,
                seed,
                include_alpha,
            } => {
                serde_json::json!({
                    "eta": eta,
                    "direction": direction,
                    "seed": seed,
                    "include_alpha": include_alpha,
                })
            }
        };
        OracleDocument {
            kind: format!("{:?}", config.kind()),
            c_phi: config.c_phi,
            clip: config.clip,
            params,
        }
    }
}

/// A configured rule bound to one run: owns its random stream and
/// whatever it resolved from the initial parameters.
#[derive(Clone, Debug)]
pub struct RewardOracle {
    config: OracleConfig,
    rng: ChaCha8Rng,
    alpha_start: f64,
    drift_direction: Vec<f64>,
}

impl RewardOracle {
    /// `stream` separates runs that share an oracle seed.
    pub fn new(config: &OracleConfig, initial: &RewardParams, stream: u64) -> Result<Self> {
        let base_len = initial.base_weights().len();
        let mut drift_direction = Vec::new();
        match &config.schedule {
            OracleSchedule::ShapingBlend { endpoint } if endpoint.len() != base_len => {
                return Err(Error::DimensionMismatch {
                    what: "ShapingBlend endpoint",
                    expected: base_len,
                    found: endpoint.len(),
                });
            }
            OracleSchedule::ConstantDrift {
                direction,
                seed,
                include_alpha,
                ..
            } => {
                let raw = match direction {
                    Some(d) if d.len() != base_len && d.len() != base_len + 1 => {
                        return Err(Error::DimensionMismatch {
                            what: "ConstantDrift direction",
                            expected: base_len,
                            found: d.len(),
                        });
                    }
                    Some(d) => d.clone(),
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        rng.set_stream(stream);
                        let dim = base_len + usize::from(*include_alpha);
                        let mut d: Vec<f64> =
                            (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                        if *include_alpha {
                            d[base_len] = d[base_len].abs();
                        }
                        d
                    }
                };
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::config(
                        "reward_oracle.params.direction",
                        "drift direction must be nonzero",
                    ));
                }
                drift_direction = raw.into_iter().map(|x| x / norm).collect();
            }
            _ => {}
        }
        let seed = match config.schedule {
            OracleSchedule::GradientBased { seed, .. } => seed,
            _ => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let alpha_start = match config.schedule {
            OracleSchedule::EntropyAnneal {
                alpha_start: Some(a),
                ..
            } => a,
            _ => initial.alpha(),
        };
        Ok(Self {
            config: config.clone(),
            rng,
            alpha_start,
            drift_direction,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn kind(&self) -> OracleKind {
        self.config.kind()
    }

    /// Produces `φ_{t+1}` from `φ_t` at step `t ≥ 1` and returns it with
    /// `‖φ_{t+1} − φ_t‖₂`.
    pub fn update_reward(&mut self, phi: &RewardParams, t: usize) -> Result<(RewardParams, f64)> {
        if t == 0 {
            return Err(Error::InvalidArgument(
                "reward updates are indexed from t = 1".into(),
            ));
        }
        let step_scale = self.config.c_phi / t as f64;
        let budget = step_scale * self.config.clip;
        let next = match &self.config.schedule {
            OracleSchedule::Static => phi.clone(),
            OracleSchedule::GradientBased {
                magnitude,
                include_alpha,
                ..
            } => {
                let dim = phi.base_weights().len() + usize::from(*include_alpha);
                let mut u: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
                let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                u.iter_mut().for_each(|x| *x *= magnitude / norm);
                let step: Vec<f64> = clip_update(&u, self.config.clip)
                    .into_iter()
                    .map(|x| x * step_scale)
                    .collect();
                let (base, alpha) = if *include_alpha {
                    (&step[..dim - 1], step[dim - 1])
                } else {
                    (&step[..], 0.0)
                };
                phi.shifted(Some(base), alpha)
            }
            OracleSchedule::EntropyAnneal {
                alpha_target, tau, ..
            } => {
                let scheduled =
                    alpha_target + (self.alpha_start - alpha_target) * (-(t as f64) / tau).exp();
                let step = clip_update(&[scheduled - phi.alpha()], budget)[0];
                phi.shifted(None, step)
            }
            OracleSchedule::ShapingBlend { endpoint } => {
                let desired: Vec<f64> = endpoint
                    .iter()
                    .zip(phi.base_weights())
                    .map(|(e, w)| e - w)
                    .collect();
                phi.shifted(Some(&clip_update(&desired, budget)), 0.0)
            }
            OracleSchedule::ConstantDrift { eta, .. } => {
                let step: Vec<f64> = self.drift_direction.iter().map(|d| eta * d).collect();
                let base_len = phi.base_weights().len();
                let alpha_step = step.get(base_len).copied().unwrap_or(0.0);
                phi.shifted(Some(&step[..base_len]), alpha_step)
            }
        };
        let delta = next.distance(phi);
        Ok((next, delta))
    }
}
