//! The single-sample, single-timescale actor-critic loop with an evolving
//! reward, plus its step-size schedule and projected critic.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, FeatureMap, FiniteMdp, SamplerState, StateDistribution, Transition};
use crate::oracle::{self, PolicyEvaluation};
use crate::policy::{self, PolicyParams};
use crate::reward::{self, RewardOracle, RewardParams};

mod trace;

pub use trace::{
    load_rows, read_rows, write_rows, RunFlag, RunSummary, RunTrace, SnapshotRecord, StepRecord,
    TraceRow,
};

/// Linear critic weights kept inside the ball of radius `C_ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    weights: DVector<f64>,
    radius: f64,
}

impl CriticParams {
    /// Projects `weights` onto the ball if needed.
    pub fn new(weights: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "critic radius must be finite and ≥ 0, got {radius}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "critic weights must be finite".into(),
            ));
        }
        let weights = project_to_ball(weights, radius);
        Ok(Self { weights, radius })
    }

    pub fn zeros(dim: usize, radius: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), radius)
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn norm(&self) -> f64 {
        self.weights.norm()
    }
}

fn project_to_ball(v: DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm > radius {
        v * (radius / norm)
    } else {
        v
    }
}

/// `η_t = c/√(t + t_offset − 1)` for both actor and critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c_theta: f64,
    pub c_omega: f64,
    pub t_offset: usize,
}

impl StepSchedule {
    pub fn new(c_theta: f64, c_omega: f64, t_offset: usize) -> Result<Self> {
        if !(c_theta >= 0.0 && c_theta.is_finite()) {
            return Err(Error::config("schedule.c_theta", "must be finite and ≥ 0"));
        }
        if !(c_omega >= 0.0 && c_omega.is_finite()) {
            return Err(Error::config("schedule.c_omega", "must be finite and ≥ 0"));
        }
        if t_offset == 0 {
            return Err(Error::config("schedule.t_offset", "must be ≥ 1"));
        }
        Ok(Self {
            c_theta,
            c_omega,
            t_offset,
        })
    }

    /// `c_θ / c_ω`.
    pub fn ratio(&self) -> f64 {
        self.c_theta / self.c_omega
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            c_theta: 0.05,
            c_omega: 0.5,
            t_offset: 1,
        }
    }
}

/// Step sizes at the 1-based step `t`.
pub fn step_sizes(t: usize, schedule: &StepSchedule) -> (f64, f64) {
    let k = (t + schedule.t_offset).saturating_sub(1).max(1) as f64;
    let root = k.sqrt();
    (schedule.c_theta / root, schedule.c_omega / root)
}

/// `δ̂ = r̃(s, a) + (γφ(s') − φ(s))ᵀω`.
pub fn td_error(
    phi: &RewardParams,
    theta: &PolicyParams,
    critic: &CriticParams,
    features: &FeatureMap,
    transition: &Transition,
    gamma: f64,
) -> f64 {
    let reward = reward::regularized_reward(phi, theta, transition.s, transition.a);
    let w = critic.weights();
    reward + gamma * features.value(transition.s_next, w) - features.value(transition.s, w)
}

/// `θ + η δ̂ ∇log π(a|s)`.
pub fn actor_step(
    theta: &PolicyParams,
    td: f64,
    score: &DVector<f64>,
    eta: f64,
) -> Result<PolicyParams> {
    if !td.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite TD error {td}")));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative actor step size {eta}"
        )));
    }
    theta.offset(score, eta * td)
}

/// `Proj_{C_ω}(ω + η δ̂ φ(s))`.
pub fn critic_step(
    critic: &CriticParams,
    td: f64,
    feature_row: &DVector<f64>,
    eta: f64,
) -> CriticParams {
    projected_critic_step(critic, td, feature_row, eta, critic.radius)
}

fn projected_critic_step(
    critic: &CriticParams,
    td: f64,
    feature_row: &DVector<f64>,
    eta: f64,
    projection_radius: f64,
) -> CriticParams {
    let moved = &critic.weights + feature_row * (eta * td);
    CriticParams {
        weights: project_to_ball(moved, projection_radius),
        radius: critic.radius,
    }
}

/// How the critic radius is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CriticRadius {
    Fixed(f64),
    /// `2·max_{s,a}|r̃₀(s,a)| / λ₀` from the initial parameters.
    Auto,
}

/// Which steps receive an exact oracle snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cadence {
    pub every: usize,
    /// Stride inside `[T/2, T)`; `None` keeps `every` there too.
    pub second_half_stride: Option<usize>,
}

/// Largest number of snapshots taken in the second half by [`Cadence::auto`].
pub const AUTO_SECOND_HALF_SNAPSHOTS: usize = 32_768;

impl Cadence {
    pub fn every(every: usize) -> Self {
        Self {
            every: every.max(1),
            second_half_stride: None,
        }
    }

    /// Every `⌈T/512⌉` steps, plus the second half at the finest stride that
    /// stays within [`AUTO_SECOND_HALF_SNAPSHOTS`].
    pub fn auto(horizon: usize) -> Self {
        let half = horizon - horizon / 2;
        Self {
            every: horizon.div_ceil(512).max(1),
            second_half_stride: Some(half.div_ceil(AUTO_SECOND_HALF_SNAPSHOTS).max(1)),
        }
    }

    pub fn is_snapshot(&self, t: usize, horizon: usize) -> bool {
        let half = horizon / 2;
        if t >= half {
            let stride = self.second_half_stride.unwrap_or(self.every);
            (t - half).is_multiple_of(stride) || t.is_multiple_of(self.every)
        } else {
            t.is_multiple_of(self.every)
        }
    }

    /// Spacing of snapshots in the second half, as reported with `G_T`.
    pub fn second_half_stride(&self) -> usize {
        self.second_half_stride.unwrap_or(self.every)
    }
}

/// Everything a single run needs besides the MDP, features and oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub schedule: StepSchedule,
    pub critic_radius: CriticRadius,
    pub horizon: usize,
    pub seed: u64,
    pub cadence: Cadence,
    pub track_mismatch: bool,
    /// Flag the run once `max |θ(s,a)|` exceeds this.
    pub logit_limit: Option<f64>,
    /// Fault injection: project onto this radius instead of `C_ω`.
    #[doc(hidden)]
    pub projection_radius_override: Option<f64>,
}

impl RunSettings {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            schedule: StepSchedule::default(),
            critic_radius: CriticRadius::Auto,
            horizon,
            seed,
            cadence: Cadence::auto(horizon),
            track_mismatch: true,
            logit_limit: None,
            projection_radius_override: None,
        }
    }
}

/// Initial parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunInit {
    pub theta: PolicyParams,
    /// Zero if absent.
    pub omega: Option<DVector<f64>>,
    pub phi: RewardParams,
}

impl RunInit {
    /// `θ₀ = 0`, `ω₀ = 0` and `φ₀` from the MDP's base reward.
    pub fn defaults(mdp: &FiniteMdp, alpha: f64) -> Result<Self> {
        Ok(Self {
            theta: PolicyParams::zeros(mdp.n_states(), mdp.n_actions()),
            omega: None,
            phi: RewardParams::from_mdp(mdp, alpha)?,
        })
    }
}

/// Resolves [`CriticRadius::Auto`] at the initial parameters.
pub fn auto_critic_radius(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<f64> {
    let system = oracle::td_matrices(mdp, features, theta, phi)?;
    let lambda = oracle::exploration_lambda(&system.a);
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "automatic critic radius needs λ > 0 at the initial policy, got {lambda:e}"
        )));
    }
    Ok(2.0 * oracle::max_abs_regularized_reward(mdp, theta, phi)? / lambda)
}

/// Runs the algorithm for `settings.horizon` steps from `s₀ ∼ ρ`.
///
/// The oracle is consumed because it owns a random stream. The run is a
/// pure function of its inputs, so equal arguments give equal traces.
pub fn run_acer(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    init: &RunInit,
    mut reward_oracle: RewardOracle,
    settings: &RunSettings,
) -> Result<RunTrace> {
    let horizon = settings.horizon;
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be ≥ 2, got {horizon}"
        )));
    }
    if features.n_states() != mdp.n_states() {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: mdp.n_states(),
            found: features.n_states(),
        });
    }
    let radius = match settings.critic_radius {
        CriticRadius::Fixed(r) => r,
        CriticRadius::Auto => auto_critic_radius(mdp, features, &init.theta, &init.phi)?,
    };
    let omega0 = init
        .omega
        .clone()
        .unwrap_or_else(|| DVector::zeros(features.dim()));
    if omega0.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial critic",
            expected: features.dim(),
            found: omega0.len(),
        });
    }
    let projection_radius = settings.projection_radius_override.unwrap_or(radius);
    let gamma = mdp.gamma();

    let mut theta = init.theta.clone();
    let mut critic = CriticParams::new(omega0, radius)?;
    let mut phi = init.phi.clone();
    let mut sampler = SamplerState::new(mdp, settings.seed)?;
    let rho = StateDistribution::new(mdp.rho().to_vec())?;
    let mut sampler_dist = rho;
    let mut previous_visitation: Option<StateDistribution> = None;

    let mut records = Vec::with_capacity(horizon);
    let mut flags = FlagCollector::default();
    let mut max_abs_base = phi.max_abs_base();
    let mut max_alpha = phi.alpha();

    for t in 0..horizon {
        let probs = theta.probs_table();
        let take_snapshot = settings.cadence.is_snapshot(t, horizon);

        let mut snapshot = None;
        let mut mismatch = None;
        let mut visitation_shift = None;
        if take_snapshot || settings.track_mismatch {
            let eval = PolicyEvaluation::new(mdp, &theta, &phi).map_err(|e| abort(t, e))?;
            if settings.track_mismatch {
                let nu = &eval.visitation;
                mismatch = Some(sampler_dist.l1_distance(nu));
                if let Some(prev) = &previous_visitation {
                    visitation_shift = Some(prev.l1_distance(nu));
                }
                sampler_dist =
                    mdp::apply_restart_kernel(&eval.p_pi, mdp.rho(), gamma, &sampler_dist);
                previous_visitation = Some(nu.clone());
            }
            if take_snapshot {
                let system = eval.td_matrices(mdp, features);
                let lambda = oracle::exploration_lambda(&system.a);
                if !(lambda > 0.0) {
                    flags.assumption(t, lambda);
                }
                match oracle::snapshot_from(mdp, features, &eval, &phi, radius) {
                    Ok(snap) => {
                        snapshot = Some(SnapshotRecord {
                            grad_norm_sq: snap.grad_norm_sq(),
                            critic_err_sq: snap.critic_error_sq(critic.weights()),
                            lambda: snap.lambda,
                            epsilon: snap.epsilon,
                            objective: snap.objective,
                        });
                    }
                    Err(e) => flags.oracle_failure(t, e.to_string()),
                }
            }
        }

        let transition = sampler
            .sample_transition(mdp, &probs)
            .map_err(|e| abort(t, e))?;
        let td = td_error(&phi, &theta, &critic, features, &transition, gamma);
        if !td.is_finite() {
            return Err(Error::NonFinite {
                step: t,
                what: "TD error",
            });
        }
        let max_reward = oracle::max_abs_regularized_reward(mdp, &theta, &phi)?;
        let c_delta = oracle::c_delta_bound(mdp, max_reward, 0.0, radius);

        let (eta_theta, eta_omega) = step_sizes(t + 1, &settings.schedule);
        let score = policy::score(&theta, transition.s, transition.a);
        let next_theta = actor_step(&theta, td, &score, eta_theta).map_err(|e| abort(t, e))?;
        if !next_theta.is_finite() {
            return Err(Error::NonFinite {
                step: t,
                what: "policy parameters",
            });
        }
        let actor_displacement = eta_theta * td.abs() * score.norm();
        let feature_row = features.row(transition.s);
        let next_critic =
            projected_critic_step(&critic, td, &feature_row, eta_omega, projection_radius);
        if next_critic.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                step: t,
                what: "critic weights",
            });
        }
        let (next_phi, phi_step) = reward_oracle
            .update_reward(&phi, t + 1)
            .map_err(|e| abort(t, e))?;
        if !next_phi.is_finite() {
            return Err(Error::NonFinite {
                step: t,
                what: "reward parameters",
            });
        }

        records.push(StepRecord {
            t,
            state: transition.s,
            action: transition.a,
            next_state: transition.s_next,
            restarted: transition.restarted,
            td_error: td,
            c_delta,
            actor_step: actor_displacement,
            critic_norm: next_critic.norm(),
            delta_phi_sq: phi_step * phi_step,
            mismatch_l1: mismatch,
            visitation_shift,
            snapshot,
        });

        if let Some(limit) = settings.logit_limit {
            flags.logits(t, limit, next_theta.max_abs_logit());
        }
        theta = next_theta;
        critic = next_critic;
        phi = next_phi;
        max_abs_base = max_abs_base.max(phi.max_abs_base());
        max_alpha = max_alpha.max(phi.alpha());
    }

    Ok(RunTrace {
        label: String::new(),
        seed: settings.seed,
        horizon,
        gamma,
        critic_radius: radius,
        oracle_kind: reward_oracle.kind(),
        schedule: settings.schedule,
        second_half_stride: settings.cadence.second_half_stride(),
        track_mismatch: settings.track_mismatch,
        initial_mismatch: settings
            .track_mismatch
            .then(|| records.first().and_then(|r| r.mismatch_l1))
            .flatten(),
        records,
        flags: flags.finish(),
        final_theta: theta,
        final_omega: critic.weights,
        final_phi: phi,
        max_abs_base,
        max_alpha,
    })
}

fn abort(step: usize, error: Error) -> Error {
    match error {
        Error::NonFinite { .. } => error,
        Error::NonFiniteReward { .. } | Error::DegenerateDistribution { .. } => Error::NonFinite {
            step,
            what: "sampled quantity",
        },
        Error::SingularSystem { residual, .. } if !residual.is_finite() => Error::NonFinite {
            step,
            what: "exact values",
        },
        other => other,
    }
}

#[derive(Default)]
struct FlagCollector {
    assumption: Option<(usize, usize, f64)>,
    failures: Vec<RunFlag>,
    logits: Option<(usize, f64, f64)>,
}

impl FlagCollector {
    fn assumption(&mut self, t: usize, lambda: f64) {
        let entry = self.assumption.get_or_insert((t, 0, lambda));
        entry.1 += 1;
        entry.2 = entry.2.min(lambda);
    }

    fn oracle_failure(&mut self, t: usize, message: String) {
        if self.failures.len() < 16 {
            self.failures
                .push(RunFlag::OracleFailure { step: t, message });
        }
    }

    fn logits(&mut self, t: usize, limit: f64, max_abs: f64) {
        if max_abs > limit {
            let entry = self.logits.get_or_insert((t, limit, max_abs));
            entry.2 = entry.2.max(max_abs);
        }
    }

    fn finish(self) -> Vec<RunFlag> {
        let mut flags: Vec<RunFlag> = self
            .assumption
            .map(
                |(first_step, count, min_lambda)| RunFlag::ExplorationViolated {
                    first_step,
                    count,
                    min_lambda,
                },
            )
            .into_iter()
            .collect();
        flags.extend(self.failures);
        flags.extend(self.logits.map(|(first_step, limit, max_abs_logit)| {
            RunFlag::LogitsExceeded {
                first_step,
                limit,
                max_abs_logit,
            }
        }));
        flags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, MdpGenerator};
    use crate::reward::OracleConfig;
    use approx::assert_abs_diff_eq;

    fn fixture() -> FiniteMdp {
        MdpGenerator::default_fixture().generate().unwrap()
    }

    fn transition(s: usize, a: usize, s_next: usize) -> Transition {
        Transition {
            s,
            a,
            s_next,
            s_sampler_next: s_next,
            restarted: false,
        }
    }

    #[test]
    fn zero_critic_td_is_reward() {
        let mdp = fixture();
        let theta = PolicyParams::zeros(5, 3);
        let phi = RewardParams::from_mdp(&mdp, 0.1).unwrap();
        let critic = CriticParams::zeros(5, 10.0).unwrap();
        let tr = transition(2, 1, 4);
        let td = td_error(
            &phi,
            &theta,
            &critic,
            &FeatureMap::tabular(5),
            &tr,
            mdp.gamma(),
        );
        assert_eq!(td, reward::regularized_reward(&phi, &theta, 2, 1));
    }

    #[test]
    fn one_state_td_error() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![0.5], vec![1.0], 0.9).unwrap();
        let phi = RewardParams::from_mdp(&mdp, 0.0).unwrap();
        let critic = CriticParams::new(DVector::from_element(1, 3.0), 10.0).unwrap();
        let td = td_error(
            &phi,
            &PolicyParams::zeros(1, 1),
            &critic,
            &FeatureMap::tabular(1),
            &transition(0, 0, 0),
            0.9,
        );
        assert_abs_diff_eq!(td, 0.5 - 0.1 * 3.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_values_zero_discount() {
        let base = random_mdp(3, 2, 4, 1.0, 0.0, 0.5).unwrap();
        let mut transition_table = Vec::new();
        for s in 0..3 {
            for a in 0..2 {
                transition_table.extend_from_slice(base.transition_row(s, a));
            }
        }
        let mdp = FiniteMdp::from_parts(
            3,
            2,
            transition_table,
            base.base_rewards().to_vec(),
            base.rho().to_vec(),
            0.0,
        )
        .unwrap();
        let theta = PolicyParams::zeros(3, 2);
        let phi = RewardParams::from_mdp(&mdp, 0.0).unwrap();
        let probs = theta.probs_table();
        let values = mdp::soft_values(&mdp, &probs, |s, a| mdp.base_reward(s, a)).unwrap();
        let critic = CriticParams::new(values.v.clone(), 100.0).unwrap();
        let td = td_error(
            &phi,
            &theta,
            &critic,
            &FeatureMap::tabular(3),
            &transition(1, 0, 2),
            0.0,
        );
        assert_abs_diff_eq!(td, mdp.base_reward(1, 0) - values.v[1], epsilon = 1e-15);
    }

    #[test]
    fn actor_step_cases() {
        let theta = PolicyParams::from_flat(1, 2, vec![0.3, -0.2]).unwrap();
        let score = policy::score(&theta, 0, 1);
        assert_eq!(actor_step(&theta, 0.0, &score, 0.5).unwrap(), theta);
        assert_eq!(actor_step(&theta, 1.5, &score, 0.0).unwrap(), theta);
        let unit = DVector::from_vec(vec![1.0, 0.0]);
        let moved = actor_step(&theta, 2.0, &unit, 0.1).unwrap();
        assert_abs_diff_eq!(
            (moved.as_dvector() - theta.as_dvector()).norm(),
            0.2,
            epsilon = 1e-15
        );
        assert!(actor_step(&theta, f64::NAN, &score, 0.1).is_err());
    }

    #[test]
    fn critic_projection_cases() {
        let critic = CriticParams::zeros(2, 1.0).unwrap();
        let row = DVector::from_vec(vec![0.6, 0.8]);
        let inside = critic_step(&critic, 0.5, &row, 1.0);
        assert_abs_diff_eq!(inside.weights()[0], 0.3, epsilon = 1e-15);
        let outside = critic_step(&critic, 2.0, &row, 1.0);
        assert_abs_diff_eq!(outside.weights()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(outside.weights()[1], 0.8, epsilon = 1e-15);
        assert_eq!(critic_step(&inside, 0.0, &row, 1.0), inside);
    }

    #[test]
    fn step_size_cases() {
        let sched = StepSchedule::new(0.1, 1.0, 1).unwrap();
        assert_eq!(step_sizes(1, &sched).0, 0.1);
        assert_abs_diff_eq!(step_sizes(100, &sched).1, 0.1, epsilon = 1e-15);
        for t in [1, 7, 1000, 123_456] {
            let (a, b) = step_sizes(t, &sched);
            assert_abs_diff_eq!(a / b, 0.1, epsilon = 1e-15);
        }
        let shifted = StepSchedule::new(1.0, 1.0, 4).unwrap();
        assert_eq!(step_sizes(1, &shifted).0, 0.5);
        assert!(StepSchedule::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn cadence_auto() {
        let c = Cadence::auto(1 << 16);
        assert_eq!(c.every, 128);
        assert_eq!(c.second_half_stride(), 1);
        let big = Cadence::auto(1 << 18);
        assert_eq!(big.second_half_stride(), 4);
        assert!(c.is_snapshot(0, 1 << 16));
        assert!(c.is_snapshot(1 << 15, 1 << 16));
        assert!(c.is_snapshot((1 << 15) + 1, 1 << 16));
        assert!(!c.is_snapshot(1, 1 << 16));
    }

    fn run(mdp: &FiniteMdp, oracle: OracleConfig, settings: &RunSettings) -> RunTrace {
        let init = RunInit::defaults(mdp, 0.01).unwrap();
        let oracle = RewardOracle::new(&oracle, &init.phi, settings.seed).unwrap();
        run_acer(
            mdp,
            &FeatureMap::tabular(mdp.n_states()),
            &init,
            oracle,
            settings,
        )
        .unwrap()
    }

    #[test]
    fn frozen_run_is_constant() {
        let mdp = fixture();
        let mut settings = RunSettings::new(256, 3);
        settings.schedule = StepSchedule::new(0.0, 0.0, 1).unwrap();
        settings.cadence = Cadence::every(1);
        let trace = run(&mdp, OracleConfig::fixed(), &settings);
        assert_eq!(trace.final_theta, PolicyParams::zeros(5, 3));
        assert_eq!(trace.final_omega, DVector::zeros(5));
        let first = trace.records[0].snapshot.unwrap().grad_norm_sq;
        assert!(trace
            .records
            .iter()
            .all(|r| r.snapshot.unwrap().grad_norm_sq == first));
        assert!(trace.records.iter().all(|r| r.delta_phi_sq == 0.0));
        let nu0 = trace.initial_mismatch.unwrap();
        for r in &trace.records {
            let bound = mdp.gamma().powi(r.t as i32) * nu0 + 1e-10;
            assert!(r.mismatch_l1.unwrap() <= bound, "t = {}", r.t);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mdp = fixture();
        let settings = RunSettings::new(2048, 11);
        let oracle = OracleConfig::gradient_based(1.0, 1.0, 2.0, 5);
        let a = run(&mdp, oracle.clone(), &settings);
        let b = run(&mdp, oracle, &settings);
        assert_eq!(a, b);
    }

    #[test]
    fn learning_run_respects_ball_and_bounds() {
        let mdp = fixture();
        let settings = RunSettings::new(4096, 2);
        let trace = run(&mdp, OracleConfig::fixed(), &settings);
        assert!(trace.flags.is_empty(), "{:?}", trace.flags);
        for r in &trace.records {
            assert!(r.critic_norm <= trace.critic_radius + 1e-12);
            assert!(r.td_error.abs() <= r.c_delta);
            assert!(
                r.actor_step
                    <= step_sizes(r.t + 1, &settings.schedule).0 * r.td_error.abs() * 2f64.sqrt()
                        + 1e-15
            );
        }
        let first = trace.records[0].snapshot.unwrap().grad_norm_sq;
        let last = trace
            .records
            .iter()
            .rev()
            .find_map(|r| r.snapshot)
            .unwrap()
            .grad_norm_sq;
        assert!(last < first);
    }

    #[test]
    fn logit_limit_flags_once() {
        let mdp = fixture();
        let mut settings = RunSettings::new(2048, 2);
        let quiet = run(&mdp, OracleConfig::fixed(), &settings);
        let peak = quiet.final_theta.max_abs_logit();
        settings.logit_limit = Some(peak / 2.0);
        let flagged = run(&mdp, OracleConfig::fixed(), &settings);
        match flagged.flags.as_slice() {
            [RunFlag::LogitsExceeded {
                limit,
                max_abs_logit,
                ..
            }] => {
                assert_eq!(*limit, peak / 2.0);
                assert!(*max_abs_logit >= peak);
            }
            other => panic!("{other:?}"),
        }
        settings.logit_limit = Some(1e6);
        assert!(run(&mdp, OracleConfig::fixed(), &settings).flags.is_empty());
    }

    #[test]
    fn corrupted_projection_breaks_ball() {
        let mdp = fixture();
        let mut settings = RunSettings::new(512, 2);
        settings.critic_radius = CriticRadius::Fixed(0.05);
        settings.projection_radius_override = Some(1e6);
        let trace = run(&mdp, OracleConfig::fixed(), &settings);
        assert!(trace
            .records
            .iter()
            .any(|r| r.critic_norm > trace.critic_radius + 1e-12));
    }

    #[test]
    fn non_finite_td_error_aborts_with_step() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1e308], vec![1.0], 0.9).unwrap();
        let mut settings = RunSettings::new(64, 2);
        settings.critic_radius = CriticRadius::Fixed(f64::MAX);
        settings.schedule = StepSchedule::new(0.1, 1.0, 1).unwrap();
        let init = RunInit::defaults(&mdp, 0.0).unwrap();
        let oracle = RewardOracle::new(&OracleConfig::fixed(), &init.phi, 0).unwrap();
        let err = run_acer(&mdp, &FeatureMap::tabular(1), &init, oracle, &settings).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 0, .. }), "{err}");

        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1e307], vec![1.0], 0.5).unwrap();
        settings.schedule = StepSchedule::new(0.1, 40.0, 1).unwrap();
        settings.track_mismatch = false;
        settings.cadence = Cadence::every(1000);
        let init = RunInit::defaults(&mdp, 0.0).unwrap();
        let oracle = RewardOracle::new(&OracleConfig::fixed(), &init.phi, 0).unwrap();
        let err = run_acer(&mdp, &FeatureMap::tabular(1), &init, oracle, &settings).unwrap_err();
        assert!(
            matches!(
                err,
                Error::NonFinite {
                    what: "critic weights",
                    step: 0
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn short_horizon_is_rejected() {
        let mdp = fixture();
        let init = RunInit::defaults(&mdp, 0.01).unwrap();
        let oracle = RewardOracle::new(&OracleConfig::fixed(), &init.phi, 0).unwrap();
        assert!(run_acer(
            &mdp,
            &FeatureMap::tabular(5),
            &init,
            oracle,
            &RunSettings::new(1, 0)
        )
        .is_err());
    }
}
