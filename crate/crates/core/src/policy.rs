//! Tabular softmax policies `π_θ(a|s) ∝ exp θ[s][a]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logits `θ`, one row per state. Flattened in `[s][a]` order for
/// gradient arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PolicyParams {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_flat(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                what: "logits",
                expected: n_states * n_actions,
                found: logits.len(),
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logit(&self, s: usize, a: usize) -> f64 {
        self.logits[s * self.n_actions + a]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn state_logits(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.logits)
    }

    pub fn max_abs_logit(&self) -> f64 {
        self.logits.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `θ + scale·direction`.
    pub fn offset(&self, direction: &DVector<f64>, scale: f64) -> Result<Self> {
        if direction.len() != self.logits.len() {
            return Err(Error::DimensionMismatch {
                what: "policy direction",
                expected: self.logits.len(),
                found: direction.len(),
            });
        }
        let logits = self
            .logits
            .iter()
            .zip(direction.iter())
            .map(|(x, d)| x + scale * d)
            .collect();
        Ok(Self {
            logits,
            ..self.clone()
        })
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|x| x.is_finite())
    }

    /// `n_states × n_actions` table of action probabilities.
    pub fn probs_table(&self) -> DMatrix<f64> {
        let mut table = DMatrix::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for (a, p) in action_probs(self, s).into_iter().enumerate() {
                table[(s, a)] = p;
            }
        }
        table
    }
}

impl TryFrom<Vec<Vec<f64>>> for PolicyParams {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidArgument(
                "logits must be a non-empty rectangular table".into(),
            ));
        }
        let n_states = rows.len();
        Self::from_flat(n_states, n_actions, rows.into_iter().flatten().collect())
    }
}

impl From<PolicyParams> for Vec<Vec<f64>> {
    fn from(params: PolicyParams) -> Self {
        params
            .logits
            .chunks(params.n_actions)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// `π(·|s)` via max-shifted softmax.
pub fn action_probs(theta: &PolicyParams, s: usize) -> Vec<f64> {
    let logits = theta.state_logits(s);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// `log π(a|s)` without forming the probabilities.
pub fn log_prob(theta: &PolicyParams, s: usize, a: usize) -> f64 {
    let logits = theta.state_logits(s);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits[a] - max - log_total
}

/// `∇_θ log π(a|s)`: zero outside block `s`, where entry `a'` is
/// `1[a' = a] − π(a'|s)`.
pub fn score(theta: &PolicyParams, s: usize, a: usize) -> DVector<f64> {
    let mut grad = DVector::zeros(theta.len());
    let offset = s * theta.n_actions;
    for (b, p) in action_probs(theta, s).into_iter().enumerate() {
        grad[offset + b] = if b == a { 1.0 - p } else { -p };
    }
    grad
}

/// `H(π(·|s))`.
pub fn policy_entropy(theta: &PolicyParams, s: usize) -> f64 {
    let logits = theta.state_logits(s);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    action_probs(theta, s)
        .iter()
        .zip(logits)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, x)| -p * (x - max - log_total))
        .sum::<f64>()
        .max(0.0)
}

/// `max_s ‖π_{θ₁}(·|s) − π_{θ₂}(·|s)‖₁`.
pub fn tv_distance(first: &PolicyParams, second: &PolicyParams) -> Result<f64> {
    if first.n_states != second.n_states || first.n_actions != second.n_actions {
        return Err(Error::DimensionMismatch {
            what: "policy shape",
            expected: first.len(),
            found: second.len(),
        });
    }
    Ok((0..first.n_states)
        .map(|s| {
            action_probs(first, s)
                .iter()
                .zip(action_probs(second, s))
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Uniform bounds on the score and its Jacobian for tabular softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    /// `sup ‖∇ log π‖₂ = √2`.
    pub score: f64,
    /// Upper bound on `‖∇² log π‖₂`; the Hessian is `−(diag π − ππᵀ)`.
    pub hessian: f64,
}

pub fn lipschitz_bounds() -> LipschitzBounds {
    LipschitzBounds {
        score: std::f64::consts::SQRT_2,
        hessian: 1.0,
    }
}
