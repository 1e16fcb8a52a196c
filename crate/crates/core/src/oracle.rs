//! Exact, sampling-free evaluation of the quantities the convergence
//! analysis refers to: the TD system `(Ā, b)`, its fixed point `ω*`, the
//! exploration margin λ, the approximation error ε, and `∇J`.
//!
//! Sign convention: `Ā = E[φ(s)(φ(s) − γφ(s'))ᵀ]` is positive stable and
//! `ω* = Ā⁻¹b`. λ is the smallest eigenvalue of `(Ā + Āᵀ)/2`, so the
//! exploration condition reads `λ > 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{self, FeatureMap, FiniteMdp, SoftValues, StateDistribution};
use crate::policy::PolicyParams;
use crate::reward::{self, RewardParams};

/// Largest acceptable ℓ∞ residual of `Ā ω* = b`.
pub const CRITIC_RESIDUAL_TOL: f64 = 1e-9;
/// Condition-number estimate above which `Ā` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Everything about one `(θ, φ)` that does not depend on the features.
#[derive(Clone, Debug)]
pub(crate) struct PolicyEvaluation {
    pub probs: DMatrix<f64>,
    pub p_pi: DMatrix<f64>,
    pub visitation: StateDistribution,
    /// `Σ_a π(a|s) r̃(s, a)`.
    pub mean_reward: DVector<f64>,
    pub values: SoftValues,
}

impl PolicyEvaluation {
    pub fn new(mdp: &FiniteMdp, theta: &PolicyParams, phi: &RewardParams) -> Result<Self> {
        check_shapes(mdp, theta, phi)?;
        let probs = theta.probs_table();
        let p_pi = mdp::policy_transition_matrix(mdp, &probs)?;
        let visitation = mdp::visitation_from_kernel(&p_pi, mdp.rho(), mdp.gamma())?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let reward = DMatrix::from_fn(ns, na, |s, a| reward::regularized_reward(phi, theta, s, a));
        let mean_reward = DVector::from_fn(ns, |s, _| {
            (0..na).map(|a| probs[(s, a)] * reward[(s, a)]).sum()
        });
        let values = mdp::soft_values(mdp, &probs, |s, a| reward[(s, a)])?;
        Ok(Self {
            probs,
            p_pi,
            visitation,
            mean_reward,
            values,
        })
    }

    pub fn objective(&self, mdp: &FiniteMdp) -> f64 {
        mdp.rho()
            .iter()
            .zip(self.values.v.iter())
            .map(|(r, v)| r * v)
            .sum()
    }

    pub fn td_matrices(&self, mdp: &FiniteMdp, features: &FeatureMap) -> TdMatrices {
        let phi = features.matrix();
        let weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |s, j| {
            self.visitation.probs()[s] * phi[(s, j)]
        });
        let successor = &self.p_pi * phi;
        let a = weighted.tr_mul(&(phi - successor * mdp.gamma()));
        let b = weighted.tr_mul(&self.mean_reward);
        TdMatrices { a, b }
    }

    /// `ν`-weighted RMS of `e = Φω* − Ṽ`, and the TD-error gap of
    /// `td_error_bound_check`.
    fn value_gaps(
        &self,
        mdp: &FiniteMdp,
        features: &FeatureMap,
        omega_star: &DVector<f64>,
    ) -> (f64, f64) {
        let gap = features.matrix() * omega_star - &self.values.v;
        let nu = self.visitation.probs();
        let epsilon = nu
            .iter()
            .zip(gap.iter())
            .map(|(p, e)| p * e * e)
            .sum::<f64>()
            .sqrt();
        let gamma = mdp.gamma();
        let mut second_moment = 0.0;
        for (s, p) in nu.iter().enumerate() {
            for next in 0..mdp.n_states() {
                let w = p * self.p_pi[(s, next)];
                if w > 0.0 {
                    second_moment += w * (gamma * gap[next] - gap[s]).powi(2);
                }
            }
        }
        (epsilon, second_moment.sqrt())
    }
}

fn check_shapes(mdp: &FiniteMdp, theta: &PolicyParams, phi: &RewardParams) -> Result<()> {
    if theta.n_states() != mdp.n_states() || theta.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            what: "policy parameters",
            expected: mdp.n_states() * mdp.n_actions(),
            found: theta.len(),
        });
    }
    if phi.n_states() != mdp.n_states() || phi.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            what: "reward parameters",
            expected: mdp.n_states() * mdp.n_actions(),
            found: phi.base_weights().len(),
        });
    }
    Ok(())
}

fn check_features(mdp: &FiniteMdp, features: &FeatureMap) -> Result<()> {
    if features.n_states() != mdp.n_states() {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: mdp.n_states(),
            found: features.n_states(),
        });
    }
    Ok(())
}

/// The expected TD(0) system under the discounted visitation.
#[derive(Clone, Debug, PartialEq)]
pub struct TdMatrices {
    /// `Ā = Σ_s ν(s) φ(s) (φ(s) − γ E[φ(s') | s])ᵀ`.
    pub a: DMatrix<f64>,
    /// `b = Σ_s ν(s) E_a[r̃(s, a)] φ(s)`.
    pub b: DVector<f64>,
}

pub fn td_matrices(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<TdMatrices> {
    check_features(mdp, features)?;
    Ok(PolicyEvaluation::new(mdp, theta, phi)?.td_matrices(mdp, features))
}

/// The TD limiting point `ω* = Ā⁻¹ b`.
pub fn optimal_critic(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "TD system",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    let singular = a.singular_values();
    let (hi, lo) = (singular.max(), singular.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let omega = a.clone().lu().solve(b).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let residual = (a * &omega - b).amax();
    if !(residual <= CRITIC_RESIDUAL_TOL) {
        return Err(Error::SingularSystem {
            what: "TD fixed point",
            residual,
        });
    }
    Ok(omega)
}

/// Smallest eigenvalue of the symmetric part of `Ā`.
pub fn exploration_lambda(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// `√(Σ_s ν(s) (φ(s)ᵀω* − Ṽ(s))²)` at one `(θ, φ)`.
pub fn approximation_error(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<f64> {
    check_features(mdp, features)?;
    let eval = PolicyEvaluation::new(mdp, theta, phi)?;
    let system = eval.td_matrices(mdp, features);
    let omega_star = optimal_critic(&system.a, &system.b)?;
    Ok(eval.value_gaps(mdp, features, &omega_star).0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    /// `∇_θ J_φ(θ)`, flattened like the logits.
    pub grad: DVector<f64>,
    /// `J_φ(θ) = Σ_s ρ(s) Ṽ(s)`.
    pub objective: f64,
}

/// Exact gradient of the regularized objective.
///
/// Differentiating `Ṽ` through both `π` and the `−α log π` inside `r̃`,
/// the second contribution is `−α Σ_a π(a|s) ∇log π(a|s) = 0`, so the
/// result is the plain policy-gradient theorem applied to `Q̃` built from
/// `r̃`. For tabular softmax it reduces to
/// `∂J/∂θ[s][a] = ν(s) π(a|s) (Q̃(s,a) − Ṽ(s)) / (1−γ)`.
pub fn exact_policy_gradient(
    mdp: &FiniteMdp,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<PolicyGradient> {
    let eval = PolicyEvaluation::new(mdp, theta, phi)?;
    Ok(gradient_from(mdp, &eval))
}

pub(crate) fn gradient_from(mdp: &FiniteMdp, eval: &PolicyEvaluation) -> PolicyGradient {
    let na = mdp.n_actions();
    let scale = 1.0 / (1.0 - mdp.gamma());
    let nu = eval.visitation.probs();
    let grad = DVector::from_fn(mdp.n_states() * na, |i, _| {
        let (s, a) = (i / na, i % na);
        scale * nu[s] * eval.probs[(s, a)] * (eval.values.q[(s, a)] - eval.values.v[s])
    });
    PolicyGradient {
        grad,
        objective: eval.objective(mdp),
    }
}

/// Both sides of the TD-error approximation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TdErrorBound {
    /// `√E[((γV̂(s') − V̂(s)) − (γṼ(s') − Ṽ(s)))²]` with `V̂ = Φω*`.
    pub lhs: f64,
    /// `2√2·ε`.
    pub rhs: f64,
    pub ok: bool,
}

pub fn td_error_bound_check(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<TdErrorBound> {
    check_features(mdp, features)?;
    let eval = PolicyEvaluation::new(mdp, theta, phi)?;
    let system = eval.td_matrices(mdp, features);
    let omega_star = optimal_critic(&system.a, &system.b)?;
    let (epsilon, lhs) = eval.value_gaps(mdp, features, &omega_star);
    let rhs = 2.0 * std::f64::consts::SQRT_2 * epsilon;
    Ok(TdErrorBound {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-10,
    })
}

/// `C + 2C_ω` with `C = max|r| + α log|A|`, the bound on
/// `|E_a r̃(s,a)|` plus the largest critic contribution to the TD error.
pub fn c_delta_bound(
    mdp: &FiniteMdp,
    max_abs_reward: f64,
    alpha_max: f64,
    critic_radius: f64,
) -> f64 {
    max_abs_reward + alpha_max * (mdp.n_actions() as f64).ln() + 2.0 * critic_radius
}

/// All exact quantities at one `(θ, φ)`.
#[derive(Clone, Debug)]
pub struct OracleSnapshot {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub omega_star: DVector<f64>,
    /// `‖Ā ω* − b‖∞`.
    pub residual: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub c_delta: f64,
    pub grad_j: DVector<f64>,
    pub objective: f64,
    pub visitation: StateDistribution,
}

impl OracleSnapshot {
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad_j.norm_squared()
    }

    pub fn critic_error_sq(&self, omega: &DVector<f64>) -> f64 {
        (omega - &self.omega_star).norm_squared()
    }
}

/// Computes every oracle quantity with one visitation solve and one
/// Bellman solve. `critic_radius` only enters `c_delta`.
pub fn snapshot(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    theta: &PolicyParams,
    phi: &RewardParams,
    critic_radius: f64,
) -> Result<OracleSnapshot> {
    check_features(mdp, features)?;
    let eval = PolicyEvaluation::new(mdp, theta, phi)?;
    snapshot_from(mdp, features, &eval, phi, critic_radius)
}

pub(crate) fn snapshot_from(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    eval: &PolicyEvaluation,
    phi: &RewardParams,
    critic_radius: f64,
) -> Result<OracleSnapshot> {
    let TdMatrices { a, b } = eval.td_matrices(mdp, features);
    let lambda = exploration_lambda(&a);
    let omega_star = optimal_critic(&a, &b)?;
    let residual = (&a * &omega_star - &b).amax();
    let (epsilon, _) = eval.value_gaps(mdp, features, &omega_star);
    let PolicyGradient { grad, objective } = gradient_from(mdp, eval);
    Ok(OracleSnapshot {
        a,
        b,
        omega_star,
        residual,
        lambda,
        epsilon,
        c_delta: c_delta_bound(mdp, phi.max_abs_base(), phi.alpha(), critic_radius),
        grad_j: grad,
        objective,
        visitation: eval.visitation.clone(),
    })
}

/// `max_{s,a} |r̃(s, a)|` at one `(θ, φ)`.
pub fn max_abs_regularized_reward(
    mdp: &FiniteMdp,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<f64> {
    check_shapes(mdp, theta, phi)?;
    let mut max = 0.0f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            max = max.max(reward::regularized_reward(phi, theta, s, a).abs());
        }
    }
    Ok(max)
}
