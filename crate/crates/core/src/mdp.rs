//! Finite discounted MDPs, their exact visitation and soft-value solvers,
//! and the restart-mixture sampling chain used by the actor-critic loop.
//!
//! Policies enter this module as a dense `n_states × n_actions` table of
//! action probabilities (row `s` is `π(·|s)`), so nothing here depends on
//! how the policy is parameterized.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of every probability vector.
pub const DIST_SUM_TOL: f64 = 1e-12;
/// Largest acceptable ℓ∞ residual of a dense linear solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// A finite MDP `(S, A, P, r, γ)` together with its initial distribution ρ.
///
/// Transition probabilities are stored flat in `[s][a][s']` order and base
/// rewards in `[s][a]` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    base_reward: Vec<f64>,
    rho: Vec<f64>,
    gamma: f64,
}

impl FiniteMdp {
    /// Builds an MDP after checking shapes only. Use [`validate_mdp`] to
    /// inspect the probabilistic invariants, or [`FiniteMdp::new`] to
    /// enforce them.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        base_reward: Vec<f64>,
        rho: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        check_len(
            "transition",
            n_states * n_actions * n_states,
            transition.len(),
        )?;
        check_len("base_reward", n_states * n_actions, base_reward.len())?;
        check_len("rho", n_states, rho.len())?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            base_reward,
            rho,
            gamma,
        })
    }

    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        base_reward: Vec<f64>,
        rho: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = Self::from_parts(n_states, n_actions, transition, base_reward, rho, gamma)?;
        let report = validate_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(
                report.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `P(·|s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn base_reward(&self, s: usize, a: usize) -> f64 {
        self.base_reward[s * self.n_actions + a]
    }

    /// Base rewards flattened in `[s][a]` order.
    pub fn base_rewards(&self) -> &[f64] {
        &self.base_reward
    }

    pub fn max_abs_base_reward(&self) -> f64 {
        self.base_reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub(crate) fn check_policy_table(&self, policy: &DMatrix<f64>) -> Result<()> {
        check_len("policy rows", self.n_states, policy.nrows())?;
        check_len("policy columns", self.n_actions, policy.ncols())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Serialized form: row-major, states then actions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub base_reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.transition.len() != doc.n_states
            || doc.transition.iter().any(|row| row.len() != doc.n_actions)
        {
            return Err(Error::InvalidMdp(vec![format!(
                "transition must be shaped [{}][{}][{}]",
                doc.n_states, doc.n_actions, doc.n_states
            )]));
        }
        if doc.base_reward.len() != doc.n_states
            || doc.base_reward.iter().any(|row| row.len() != doc.n_actions)
        {
            return Err(Error::InvalidMdp(vec![format!(
                "base_reward must be shaped [{}][{}]",
                doc.n_states, doc.n_actions
            )]));
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let base_reward = doc.base_reward.into_iter().flatten().collect();
        FiniteMdp::new(
            doc.n_states,
            doc.n_actions,
            transition,
            base_reward,
            doc.rho,
            doc.gamma,
        )
    }
}

impl From<FiniteMdp> for MdpDocument {
    fn from(mdp: FiniteMdp) -> Self {
        let (ns, na) = (mdp.n_states, mdp.n_actions);
        let transition = mdp
            .transition
            .chunks(ns * na)
            .map(|per_state| per_state.chunks(ns).map(<[f64]>::to_vec).collect())
            .collect();
        let base_reward = mdp.base_reward.chunks(na).map(<[f64]>::to_vec).collect();
        MdpDocument {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma,
            rho: mdp.rho,
            transition,
            base_reward,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TransitionRowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeTransition {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    RhoSum {
        sum: f64,
    },
    NegativeRho {
        state: usize,
        value: f64,
    },
    GammaOutOfRange {
        gamma: f64,
    },
    NonFiniteReward {
        state: usize,
        action: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, action, sum } => {
                write!(f, "transition[{state}][{action}] sums to {sum}")
            }
            Violation::NegativeTransition {
                state,
                action,
                next,
                value,
            } => {
                write!(
                    f,
                    "transition[{state}][{action}][{next}] is negative ({value})"
                )
            }
            Violation::RhoSum { sum } => write!(f, "rho sums to {sum}"),
            Violation::NegativeRho { state, value } => {
                write!(f, "rho[{state}] is negative ({value})")
            }
            Violation::GammaOutOfRange { gamma } => {
                write!(f, "gamma out of (0,1): {gamma}")
            }
            Violation::NonFiniteReward { state, action } => {
                write!(f, "base_reward[{state}][{action}] is not finite")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_mdp(mdp: &FiniteMdp) -> ValidationReport {
    let mut violations = Vec::new();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.transition_row(s, a);
            for (next, &value) in row.iter().enumerate() {
                if value < 0.0 || !value.is_finite() {
                    violations.push(Violation::NegativeTransition {
                        state: s,
                        action: a,
                        next,
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= DIST_SUM_TOL) {
                violations.push(Violation::TransitionRowSum {
                    state: s,
                    action: a,
                    sum,
                });
            }
            if !mdp.base_reward(s, a).is_finite() {
                violations.push(Violation::NonFiniteReward {
                    state: s,
                    action: a,
                });
            }
        }
    }
    for (state, &value) in mdp.rho.iter().enumerate() {
        if value < 0.0 || !value.is_finite() {
            violations.push(Violation::NegativeRho { state, value });
        }
    }
    let sum: f64 = mdp.rho.iter().sum();
    if !((sum - 1.0).abs() <= DIST_SUM_TOL) {
        violations.push(Violation::RhoSum { sum });
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        violations.push(Violation::GammaOutOfRange { gamma: mdp.gamma });
    }
    ValidationReport { violations }
}

/// Linear features `φ(s)`; row `s` of the matrix is `φ(s)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    matrix: DMatrix<f64>,
}

impl FeatureMap {
    /// Accepts any `n_states × d` matrix whose rows have Euclidean norm ≤ 1.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(Error::InvalidFeatures(
                "feature dimension must be positive".into(),
            ));
        }
        for (s, row) in matrix.row_iter().enumerate() {
            let norm = row.norm();
            if !norm.is_finite() || norm > 1.0 + 1e-12 {
                return Err(Error::InvalidFeatures(format!(
                    "row {s} has norm {norm} > 1"
                )));
            }
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidFeatures("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat))
    }

    /// One-hot features; linear critics represent every value function.
    pub fn tabular(n_states: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n_states, n_states),
        }
    }

    /// A single all-ones feature.
    pub fn constant(n_states: usize) -> Self {
        Self {
            matrix: DMatrix::from_element(n_states, 1, 1.0),
        }
    }

    /// Gaussian features with every row scaled to unit norm.
    pub fn random_projection(n_states: usize, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidFeatures(
                "feature dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = DMatrix::from_fn(n_states, d, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        for mut row in matrix.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        Ok(Self { matrix })
    }

    pub fn n_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row(&self, s: usize) -> DVector<f64> {
        self.matrix.row(s).transpose()
    }

    /// `φ(s)ᵀω`.
    pub fn value(&self, s: usize, weights: &DVector<f64>) -> f64 {
        self.matrix
            .row(s)
            .iter()
            .zip(weights.iter())
            .map(|(f, w)| f * w)
            .sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// A probability vector over states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) || !((sum - 1.0).abs() <= DIST_SUM_TOL)
        {
            return Err(Error::InvalidArgument(format!(
                "state distribution must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn l1_distance(&self, other: &StateDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (p - q).abs())
            .sum()
    }

    pub(crate) fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.probs)
    }
}

/// `P_π[s][s'] = Σ_a π(a|s) P(s'|s,a)`.
pub fn policy_transition_matrix(mdp: &FiniteMdp, policy: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    mdp.check_policy_table(policy)?;
    let n = mdp.n_states;
    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy[(s, a)];
            if w == 0.0 {
                continue;
            }
            for (next, p) in mdp.transition_row(s, a).iter().enumerate() {
                p_pi[(s, next)] += w * p;
            }
        }
    }
    Ok(p_pi)
}

/// Discounted visitation `ν = (1−γ) Σ_t γᵗ Pr(s_t = ·)`, obtained from the
/// linear system `(I − γ P_πᵀ) ν = (1−γ) ρ`.
pub fn exact_visitation(mdp: &FiniteMdp, policy: &DMatrix<f64>) -> Result<StateDistribution> {
    let p_pi = policy_transition_matrix(mdp, policy)?;
    visitation_from_kernel(&p_pi, mdp.rho(), mdp.gamma)
}

pub(crate) fn visitation_from_kernel(
    p_pi: &DMatrix<f64>,
    rho: &[f64],
    gamma: f64,
) -> Result<StateDistribution> {
    let n = p_pi.nrows();
    let system = DMatrix::identity(n, n) - p_pi.transpose() * gamma;
    let rhs = DVector::from_column_slice(rho) * (1.0 - gamma);
    let nu = solve_checked(&system, &rhs, "visitation")?;
    // ν ≥ (1−γ)ρ ≥ 0; only rounding noise can be negative here.
    let mut probs: Vec<f64> = nu.iter().map(|p| p.max(0.0)).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    StateDistribution::new(probs)
}

pub(crate) fn solve_checked(
    system: &DMatrix<f64>,
    rhs: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let solution = system
        .clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::SingularSystem {
            what,
            residual: f64::INFINITY,
        })?;
    let residual = (system * &solution - rhs).amax();
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::SingularSystem { what, residual });
    }
    Ok(solution)
}

/// Entropy-regularized values of a fixed policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftValues {
    /// `Ṽ(s)`.
    pub v: DVector<f64>,
    /// `Q̃(s, a) = r̃(s, a) + γ Σ_{s'} P(s'|s,a) Ṽ(s')`.
    pub q: DMatrix<f64>,
}

/// Solves the policy-evaluation Bellman equation `(I − γ P_π) Ṽ = r̄_π` for
/// an arbitrary per-(s, a) reward. Passing the regularized reward
/// `r − α log π` yields the soft value function.
pub fn soft_values<F>(mdp: &FiniteMdp, policy: &DMatrix<f64>, reward: F) -> Result<SoftValues>
where
    F: Fn(usize, usize) -> f64,
{
    let p_pi = policy_transition_matrix(mdp, policy)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let rewards = DMatrix::from_fn(ns, na, reward);
    let mut r_bar = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let w = policy[(s, a)];
            if w > 0.0 {
                if !rewards[(s, a)].is_finite() {
                    return Err(Error::NonFiniteReward {
                        state: s,
                        action: a,
                    });
                }
                r_bar[s] += w * rewards[(s, a)];
            }
        }
    }
    let system = DMatrix::identity(ns, ns) - &p_pi * mdp.gamma;
    let v = solve_checked(&system, &r_bar, "soft Bellman")?;
    let q = DMatrix::from_fn(ns, na, |s, a| {
        let next: f64 = mdp
            .transition_row(s, a)
            .iter()
            .zip(v.iter())
            .map(|(p, v)| p * v)
            .sum();
        rewards[(s, a)] + mdp.gamma * next
    });
    Ok(SoftValues { v, q })
}

/// The distribution of `s_{t+1}` when `s_t ∼ dist` under the restart kernel
/// `P̂ = γP + (1−γ)ρ`: returns `γ P_πᵀ dist + (1−γ) ρ`.
pub fn apply_sampling_operator(
    mdp: &FiniteMdp,
    policy: &DMatrix<f64>,
    dist: &StateDistribution,
) -> Result<StateDistribution> {
    check_len("distribution", mdp.n_states, dist.len())?;
    let p_pi = policy_transition_matrix(mdp, policy)?;
    Ok(apply_restart_kernel(&p_pi, mdp.rho(), mdp.gamma, dist))
}

pub(crate) fn apply_restart_kernel(
    p_pi: &DMatrix<f64>,
    rho: &[f64],
    gamma: f64,
    dist: &StateDistribution,
) -> StateDistribution {
    let pushed = p_pi.tr_mul(&dist.as_dvector());
    let mut probs: Vec<f64> = pushed
        .iter()
        .zip(rho)
        .map(|(p, r)| gamma * p + (1.0 - gamma) * r)
        .collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    StateDistribution { probs }
}

/// One step of the sampling chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    /// `s' ∼ P(·|s, a)`, used by the TD error.
    pub s_next: usize,
    /// `s_{t+1} ∼ P̂(·|s, a)`, where the chain continues.
    pub s_sampler_next: usize,
    /// Whether `s_{t+1}` came from the ρ-restart branch of `P̂`.
    pub restarted: bool,
}

/// Current chain state plus its private random stream.
#[derive(Clone, Debug)]
pub struct SamplerState {
    current_state: usize,
    rng: ChaCha8Rng,
}

impl SamplerState {
    /// Seeds the stream and draws `s_0 ∼ ρ` from it.
    pub fn new(mdp: &FiniteMdp, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let current_state = sample_index(&mut rng, mdp.rho())?;
        Ok(Self { current_state, rng })
    }

    /// Starts the chain at a given state.
    pub fn at_state(mdp: &FiniteMdp, state: usize, seed: u64) -> Result<Self> {
        if state >= mdp.n_states {
            return Err(Error::InvalidArgument(format!(
                "state {state} out of range"
            )));
        }
        Ok(Self {
            current_state: state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn current_state(&self) -> usize {
        self.current_state
    }

    /// Draws `a ∼ π(·|s)`, `s' ∼ P(·|s,a)` and an independent
    /// `s_{t+1} ∼ P̂(·|s,a)`, then moves the chain to `s_{t+1}`.
    pub fn sample_transition(
        &mut self,
        mdp: &FiniteMdp,
        policy: &DMatrix<f64>,
    ) -> Result<Transition> {
        mdp.check_policy_table(policy)?;
        let s = self.current_state;
        let action_probs: Vec<f64> = policy.row(s).iter().copied().collect();
        let a = sample_index(&mut self.rng, &action_probs)?;
        let row = mdp.transition_row(s, a);
        let s_next = sample_index(&mut self.rng, row)?;
        let restarted = !self.rng.random_bool(mdp.gamma);
        let s_sampler_next = if restarted {
            sample_index(&mut self.rng, mdp.rho())?
        } else {
            sample_index(&mut self.rng, row)?
        };
        self.current_state = s_sampler_next;
        Ok(Transition {
            s,
            a,
            s_next,
            s_sampler_next,
            restarted,
        })
    }
}

/// Inverse-CDF draw from nonnegative weights.
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateDistribution { total });
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

/// Seeded random MDP fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpGenerator {
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    /// Every transition probability is at least this large.
    #[serde(default)]
    pub min_transition_mass: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_reward_scale() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    0.95
}

impl MdpGenerator {
    /// The 5-state, 3-action fixture used by the rate experiments.
    pub fn default_fixture() -> Self {
        Self {
            n_states: 5,
            n_actions: 3,
            seed: 5,
            reward_scale: 2.0,
            min_transition_mass: 0.05,
            gamma: 0.8,
        }
    }

    pub fn generate(&self) -> Result<FiniteMdp> {
        random_mdp(
            self.n_states,
            self.n_actions,
            self.seed,
            self.reward_scale,
            self.min_transition_mass,
            self.gamma,
        )
    }
}

/// Transition rows are flat-Dirichlet draws mixed with a uniform floor:
/// `p = m + (1 − n·m)·d`, so every entry is at least `m` and `m = 1/n`
/// gives exactly uniform rows. Rewards are uniform in
/// `[−reward_scale, reward_scale]`; ρ is uniform.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    reward_scale: f64,
    min_transition_mass: f64,
    gamma: f64,
) -> Result<FiniteMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidArgument(
            "n_states and n_actions must be at least 1".into(),
        ));
    }
    let max_floor = 1.0 / n_states as f64;
    if !(0.0..=max_floor).contains(&min_transition_mass) {
        return Err(Error::InfeasibleFloor {
            floor: min_transition_mass,
            max: max_floor,
        });
    }
    if !(reward_scale >= 0.0 && reward_scale.is_finite()) {
        return Err(Error::InvalidArgument(
            "reward_scale must be finite and ≥ 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free_mass = (1.0 - n_states as f64 * min_transition_mass).max(0.0);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let draws: Vec<f64> = (0..n_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        let mut row: Vec<f64> = draws
            .iter()
            .map(|d| min_transition_mass + free_mass * d / total)
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
        transition.extend(row);
    }
    let base_reward = (0..n_states * n_actions)
        .map(|_| reward_scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let rho = vec![1.0 / n_states as f64; n_states];
    FiniteMdp::new(n_states, n_actions, transition, base_reward, rho, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn swap_mdp(gamma: f64) -> FiniteMdp {
        // One action; state 0 -> 1 -> 0.
        FiniteMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            gamma,
        )
        .unwrap()
    }

    fn single_action(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn valid_mdp_has_empty_report() {
        assert!(validate_mdp(&swap_mdp(0.9)).is_valid());
    }

    #[test]
    fn short_transition_row_is_reported() {
        let mdp = FiniteMdp::from_parts(
            2,
            1,
            vec![0.5, 0.4, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            0.9,
        )
        .unwrap();
        let report = validate_mdp(&mdp);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::TransitionRowSum { state, action, sum } => {
                assert_eq!((*state, *action), (0, 0));
                assert_abs_diff_eq!(*sum, 0.9, epsilon = 1e-15);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn gamma_one_is_reported() {
        let mdp = FiniteMdp::from_parts(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).unwrap();
        let report = validate_mdp(&mdp);
        assert_eq!(
            report.violations,
            vec![Violation::GammaOutOfRange { gamma: 1.0 }]
        );
        assert!(report.violations[0]
            .to_string()
            .contains("gamma out of (0,1)"));
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn deterministic_policy_on_deterministic_kernel_is_permutation() {
        // Action 0 stays, action 1 swaps; policy picks the swap everywhere.
        let transition = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let mdp = FiniteMdp::new(2, 2, transition, vec![0.0; 4], vec![0.5, 0.5], 0.9).unwrap();
        let policy = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let p = policy_transition_matrix(&mdp, &policy).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));

        let stay = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let p = policy_transition_matrix(&mdp, &stay).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));
    }

    #[test]
    fn uniform_policy_on_uniform_kernel_is_uniform() {
        let mdp = random_mdp(4, 3, 1, 1.0, 0.25, 0.9).unwrap();
        let policy = DMatrix::from_element(4, 3, 1.0 / 3.0);
        let p = policy_transition_matrix(&mdp, &policy).unwrap();
        for value in p.iter() {
            assert_abs_diff_eq!(*value, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn policy_table_shape_is_checked() {
        let mdp = swap_mdp(0.5);
        let bad = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            policy_transition_matrix(&mdp, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn self_loop_visitation_stays_put() {
        let mdp = FiniteMdp::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            vec![1.0, 0.0],
            0.7,
        )
        .unwrap();
        let nu = exact_visitation(&mdp, &single_action(2)).unwrap();
        assert_abs_diff_eq!(nu.probs()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.probs()[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn swap_visitation_matches_geometric_series() {
        let nu = exact_visitation(&swap_mdp(0.5), &single_action(2)).unwrap();
        assert_abs_diff_eq!(nu.probs()[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(nu.probs()[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn uniform_kernel_gives_uniform_visitation() {
        let mdp = random_mdp(5, 2, 3, 1.0, 0.2, 0.9).unwrap();
        let nu = exact_visitation(&mdp, &DMatrix::from_element(5, 2, 0.5)).unwrap();
        for p in nu.probs() {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-14);
        }
    }

    #[test]
    fn visitation_matches_truncated_power_series() {
        let mdp = random_mdp(6, 2, 11, 1.0, 0.0, 0.8).unwrap();
        let policy = DMatrix::from_element(6, 2, 0.5);
        let nu = exact_visitation(&mdp, &policy).unwrap();
        let p_pi = policy_transition_matrix(&mdp, &policy).unwrap();
        let k = 60;
        let mut term = DVector::from_column_slice(mdp.rho());
        let mut series = DVector::zeros(6);
        let mut weight = 1.0 - mdp.gamma();
        for _ in 0..=k {
            series += &term * weight;
            term = p_pi.tr_mul(&term);
            weight *= mdp.gamma();
        }
        let gap: f64 = nu
            .probs()
            .iter()
            .zip(series.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(gap <= 2.0 * mdp.gamma().powi(k + 1));
    }

    #[test]
    fn geometric_value_of_unit_reward() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.9).unwrap();
        let values = soft_values(&mdp, &single_action(1), |s, a| mdp.base_reward(s, a)).unwrap();
        assert_abs_diff_eq!(values.v[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(values.q[(0, 0)], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_entropy_value_is_log2_over_one_minus_gamma() {
        let mdp = random_mdp(3, 2, 5, 0.0, 0.0, 0.5).unwrap();
        let policy = DMatrix::from_element(3, 2, 0.5);
        let values = soft_values(&mdp, &policy, |s, a| -policy[(s, a)].ln()).unwrap();
        for v in values.v.iter() {
            assert_abs_diff_eq!(*v, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mdp = random_mdp(4, 2, 2, 1.0, 0.0, 0.9).unwrap();
        let values = soft_values(&mdp, &DMatrix::from_element(4, 2, 0.5), |_, _| 0.0).unwrap();
        assert!(values.v.iter().all(|v| *v == 0.0));
        assert!(values.q.iter().all(|q| *q == 0.0));
    }

    #[test]
    fn soft_values_satisfy_bellman_equation() {
        let mdp = random_mdp(7, 3, 9, 2.0, 0.0, 0.95).unwrap();
        let policy = DMatrix::from_fn(7, 3, |s, a| ((s + 2 * a) % 3 + 1) as f64 / 6.0);
        let values = soft_values(&mdp, &policy, |s, a| mdp.base_reward(s, a)).unwrap();
        for s in 0..7 {
            let backup: f64 = (0..3).map(|a| policy[(s, a)] * values.q[(s, a)]).sum();
            assert!((backup - values.v[s]).abs() <= 1e-10);
        }
    }

    #[test]
    fn non_finite_reward_is_rejected() {
        let mdp = swap_mdp(0.5);
        let err = soft_values(
            &mdp,
            &single_action(2),
            |s, _| if s == 1 { f64::NAN } else { 0.0 },
        );
        assert!(matches!(
            err,
            Err(Error::NonFiniteReward {
                state: 1,
                action: 0
            })
        ));
    }

    #[test]
    fn sampling_operator_fixes_visitation() {
        let mdp = random_mdp(6, 3, 4, 1.0, 0.0, 0.9).unwrap();
        let policy = DMatrix::from_element(6, 3, 1.0 / 3.0);
        let nu = exact_visitation(&mdp, &policy).unwrap();
        let pushed = apply_sampling_operator(&mdp, &policy, &nu).unwrap();
        assert!(pushed.l1_distance(&nu) <= 1e-12);
    }

    #[test]
    fn small_gamma_operator_output_is_near_rho() {
        let mdp = random_mdp(5, 2, 8, 1.0, 0.0, 0.01).unwrap();
        let policy = DMatrix::from_element(5, 2, 0.5);
        let dist = StateDistribution::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = apply_sampling_operator(&mdp, &policy, &dist).unwrap();
        let rho = StateDistribution::new(mdp.rho().to_vec()).unwrap();
        assert!(out.l1_distance(&rho) <= 0.02);
    }

    #[test]
    fn deterministic_chain_follows_successor() {
        let gamma = 1.0 - 1e-9;
        let mdp = swap_mdp(gamma);
        let mut sampler = SamplerState::at_state(&mdp, 0, 3).unwrap();
        for step in 0..100 {
            let tr = sampler.sample_transition(&mdp, &single_action(2)).unwrap();
            assert!(!tr.restarted);
            let expected = (step + 1) % 2;
            assert_eq!(tr.s_next, expected);
            assert_eq!(tr.s_sampler_next, expected);
        }
    }

    #[test]
    fn restart_frequency_is_binomial() {
        let gamma = 0.7;
        let mdp = random_mdp(4, 2, 6, 1.0, 0.0, gamma).unwrap();
        let policy = DMatrix::from_element(4, 2, 0.5);
        let mut sampler = SamplerState::new(&mdp, 42).unwrap();
        let n = 100_000;
        let mut restarts = 0usize;
        for _ in 0..n {
            if sampler.sample_transition(&mdp, &policy).unwrap().restarted {
                restarts += 1;
            }
        }
        let p = 1.0 - gamma;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((restarts as f64 - n as f64 * p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn same_seed_same_transition() {
        let mdp = random_mdp(5, 3, 1, 1.0, 0.0, 0.9).unwrap();
        let policy = DMatrix::from_element(5, 3, 1.0 / 3.0);
        let mut a = SamplerState::new(&mdp, 17).unwrap();
        let mut b = SamplerState::new(&mdp, 17).unwrap();
        for _ in 0..50 {
            assert_eq!(
                a.sample_transition(&mdp, &policy).unwrap(),
                b.sample_transition(&mdp, &policy).unwrap()
            );
        }
    }

    #[test]
    fn empirical_visits_converge_to_visitation() {
        let mdp = random_mdp(6, 2, 21, 1.0, 0.02, 0.9).unwrap();
        let policy = DMatrix::from_fn(6, 2, |s, a| {
            if a == 0 {
                0.3 + 0.1 * s as f64
            } else {
                0.7 - 0.1 * s as f64
            }
        });
        let nu = exact_visitation(&mdp, &policy).unwrap();
        let mut sampler = SamplerState::new(&mdp, 5).unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sampler.current_state()] += 1;
            sampler.sample_transition(&mdp, &policy).unwrap();
        }
        let gap: f64 = counts
            .iter()
            .zip(nu.probs())
            .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
            .sum();
        assert!(gap <= 0.05, "ℓ1 gap {gap}");
    }

    #[test]
    fn saturated_floor_gives_uniform_rows() {
        let mdp = random_mdp(4, 2, 99, 1.0, 0.25, 0.9).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                for p in mdp.transition_row(s, a) {
                    assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let a = random_mdp(5, 3, 12, 2.0, 0.01, 0.9).unwrap();
        let b = random_mdp(5, 3, 12, 2.0, 0.01, 0.9).unwrap();
        assert_eq!(a, b);
        assert!(validate_mdp(&a).is_valid());
        assert!(a.max_abs_base_reward() <= 2.0);
        for p in a.transition_row(2, 1) {
            assert!(*p >= 0.01 - 1e-15);
        }
    }

    #[test]
    fn infeasible_floor_is_rejected() {
        assert!(matches!(
            random_mdp(4, 2, 0, 1.0, 0.3, 0.9),
            Err(Error::InfeasibleFloor { .. })
        ));
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let mdp = random_mdp(3, 2, 4, 1.0, 0.0, 0.9).unwrap();
        let text = serde_json::to_string(&mdp).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["transition"][2][1].as_array().unwrap().len(), 3);
        let back: FiniteMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mdp);

        let mut doc: MdpDocument = mdp.into();
        doc.gamma = 1.0;
        let text = serde_json::to_string(&doc).unwrap();
        assert!(serde_json::from_str::<FiniteMdp>(&text).is_err());
    }

    #[test]
    fn feature_rows_are_norm_checked() {
        assert!(FeatureMap::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.1]]).is_err());
        let f = FeatureMap::random_projection(8, 3, 2).unwrap();
        for s in 0..8 {
            assert!(f.row(s).norm() <= 1.0 + 1e-12);
        }
    }
}
