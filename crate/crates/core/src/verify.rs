//! Property checks and scaled-down rate experiments with pass/fail results.
//!
//! Each check builds its own seeded probes, so results are reproducible.
//! `fast` runs the oracle checks plus one short run with a binding critic
//! ball; `full` adds the three rate sweeps on the default fixture.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::actor_critic::{run_acer, RunTrace};
use crate::error::{Error, Result};
use crate::experiment::{
    CriticConfig, ExperimentConfig, FeatureSpec, MdpSource, ScheduleConfig, Setting,
};
use crate::mdp::{self, random_mdp, FeatureMap, FiniteMdp, MdpGenerator, StateDistribution};
use crate::metrics::{check_invariants, summarize, GroupReport, InvariantReport};
use crate::oracle;
use crate::policy::{self, PolicyParams};
use crate::reward::{self, OracleConfig, RewardOracle, RewardParams};

/// Horizons of the rate sweeps.
pub const RATE_HORIZONS: [usize; 4] = [1 << 10, 1 << 12, 1 << 14, 1 << 16];
/// Seeds of the rate sweeps.
pub const RATE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Accepted log-log slopes for `G_T` and `W_T`.
pub const SLOPE_BAND: (f64, f64) = (-0.8, -0.25);
pub const MIN_R2: f64 = 0.8;
/// The drift sweep must not decay faster than this.
pub const DRIFT_SLOPE_FLOOR: f64 = -0.15;
/// Reported, not gated.
pub const DRIFT_RATIO_TARGET: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(Error::config(
                "level",
                format!("expected fast or full, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
    pub seconds: f64,
}

impl CheckResult {
    /// `PASS  6 static_rate: ...`
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary,
            self.seconds
        )
    }
}

fn timed(id: &str, name: &str, f: impl FnOnce() -> Result<(bool, String, Value)>) -> CheckResult {
    let start = Instant::now();
    let (passed, summary, details) =
        f().unwrap_or_else(|e| (false, format!("error: {e}"), Value::Null));
    CheckResult {
        id: id.to_string(),
        name: name.to_string(),
        passed,
        summary,
        details,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_theta(rng: &mut ChaCha8Rng, ns: usize, na: usize, scale: f64) -> PolicyParams {
    let logits = (0..ns * na)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    PolicyParams::from_flat(ns, na, logits).expect("shape matches")
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> StateDistribution {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    StateDistribution::new(draws.iter().map(|d| d / total).collect()).expect("normalized")
}

fn soft_value_vector(
    mdp: &FiniteMdp,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> Result<DVector<f64>> {
    let probs = theta.probs_table();
    Ok(mdp::soft_values(mdp, &probs, |s, a| {
        reward::regularized_reward(phi, theta, s, a)
    })?
    .v)
}

fn objective(mdp: &FiniteMdp, theta: &PolicyParams, phi: &RewardParams) -> Result<f64> {
    let v = soft_value_vector(mdp, theta, phi)?;
    Ok(mdp.rho().iter().zip(v.iter()).map(|(r, v)| r * v).sum())
}

/// Tabular `ω*` against the soft value vector from the Bellman equation.
pub fn oracle_equivalence(n_mdps: usize) -> CheckResult {
    timed("1", "oracle_equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst: f64 = 0.0;
        for i in 0..n_mdps as u64 {
            let ns = rng.random_range(1..=8);
            let na = rng.random_range(1..=4);
            let mdp = random_mdp(ns, na, i, 1.0, 0.0, rng.random_range(0.5..0.99))?;
            let theta = random_theta(&mut rng, ns, na, 1.0);
            for alpha in [0.0, 0.1] {
                let phi = RewardParams::from_mdp(&mdp, alpha)?;
                let system = oracle::td_matrices(&mdp, &FeatureMap::tabular(ns), &theta, &phi)?;
                let omega = oracle::optimal_critic(&system.a, &system.b)?;
                let v = soft_value_vector(&mdp, &theta, &phi)?;
                worst = worst.max((omega - v).amax());
            }
        }
        Ok((
            worst <= 1e-8,
            format!("max ℓ∞ gap {worst:.2e} ≤ 1e-8 over {} cases", 2 * n_mdps),
            json!({ "max_gap": worst, "tol": 1e-8, "cases": 2 * n_mdps }),
        ))
    })
}

/// Analytic gradient against central differences of the solved objective.
pub fn gradient_check(n_probes: usize) -> CheckResult {
    timed("2", "gradient_fd", || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..n_probes as u64 {
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=4);
            let mdp = random_mdp(ns, na, 1000 + i, 1.0, 0.0, rng.random_range(0.5..0.95))?;
            let theta = random_theta(&mut rng, ns, na, 1.0);
            let alpha = if i % 2 == 1 { 0.1 } else { 0.0 };
            let phi = RewardParams::from_mdp(&mdp, alpha)?;
            let analytic = oracle::exact_policy_gradient(&mdp, &theta, &phi)?.grad;
            let mut fd = DVector::zeros(theta.len());
            for k in 0..theta.len() {
                let mut e = DVector::zeros(theta.len());
                e[k] = 1.0;
                fd[k] = (objective(&mdp, &theta.offset(&e, h)?, &phi)?
                    - objective(&mdp, &theta.offset(&e, -h)?, &phi)?)
                    / (2.0 * h);
            }
            worst = worst.max((&analytic - &fd).norm() / fd.norm().max(1e-12));
        }
        Ok((
            worst <= 1e-5,
            format!("max relative error {worst:.2e} ≤ 1e-5 over {n_probes} probes"),
            json!({ "max_relative_error": worst, "tol": 1e-5, "step": h, "probes": n_probes }),
        ))
    })
}

/// The restart-kernel operator contracts by γ in ℓ1 and fixes `ν`.
pub fn contraction(n_probes: usize) -> CheckResult {
    timed("3", "contraction", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_fixed: f64 = 0.0;
        for i in 0..n_probes as u64 {
            let ns = rng.random_range(2..=8);
            let na = rng.random_range(1..=4);
            let mdp = random_mdp(ns, na, 5000 + i, 1.0, 0.0, rng.random_range(0.3..0.99))?;
            let probs = random_theta(&mut rng, ns, na, 2.0).probs_table();
            let (nu1, nu2) = (
                random_distribution(&mut rng, ns),
                random_distribution(&mut rng, ns),
            );
            let out1 = mdp::apply_sampling_operator(&mdp, &probs, &nu1)?;
            let out2 = mdp::apply_sampling_operator(&mdp, &probs, &nu2)?;
            let excess = out1.l1_distance(&out2) - mdp.gamma() * nu1.l1_distance(&nu2);
            worst_excess = worst_excess.max(excess);
            let exact = mdp::exact_visitation(&mdp, &probs)?;
            let pushed = mdp::apply_sampling_operator(&mdp, &probs, &exact)?;
            worst_fixed = worst_fixed.max(pushed.l1_distance(&exact));
        }
        Ok((
            worst_excess <= 1e-12 && worst_fixed <= 1e-10,
            format!(
                "max excess over γ‖Δν‖₁ {worst_excess:.2e} ≤ 1e-12, fixed-point gap {worst_fixed:.2e} ≤ 1e-10"
            ),
            json!({ "max_excess": worst_excess, "max_fixed_point_gap": worst_fixed, "probes": n_probes }),
        ))
    })
}

/// Both sides of the TD-error bound, summed directly over `(s, a, s')`.
pub fn td_error_bound(n_probes: usize) -> CheckResult {
    timed("4", "td_error_bound", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_disagreement: f64 = 0.0;
        for i in 0..n_probes as u64 {
            let ns = rng.random_range(2..=8);
            let na = rng.random_range(1..=4);
            let gamma = rng.random_range(0.5..0.99);
            let mdp = random_mdp(ns, na, 9000 + i, 1.0, 0.01, gamma)?;
            let features = FeatureMap::random_projection(ns, ns.div_ceil(2), i)?;
            let theta = random_theta(&mut rng, ns, na, 1.0);
            let phi = RewardParams::from_mdp(&mdp, rng.random_range(0.0..0.5))?;

            let system = oracle::td_matrices(&mdp, &features, &theta, &phi)?;
            let omega = oracle::optimal_critic(&system.a, &system.b)?;
            let v = soft_value_vector(&mdp, &theta, &phi)?;
            let probs = theta.probs_table();
            let nu = mdp::exact_visitation(&mdp, &probs)?;
            let e = features.matrix() * &omega - v;
            let mut eps_sq = 0.0;
            let mut lhs_sq = 0.0;
            for s in 0..ns {
                eps_sq += nu.probs()[s] * e[s] * e[s];
                for a in 0..na {
                    for (next, p) in mdp.transition_row(s, a).iter().enumerate() {
                        let w = nu.probs()[s] * probs[(s, a)] * p;
                        lhs_sq += w * (gamma * e[next] - e[s]).powi(2);
                    }
                }
            }
            let (epsilon, lhs) = (eps_sq.sqrt(), lhs_sq.sqrt());
            worst_excess = worst_excess.max(lhs - 2.0 * std::f64::consts::SQRT_2 * epsilon);
            let lib = oracle::td_error_bound_check(&mdp, &features, &theta, &phi)?;
            worst_disagreement = worst_disagreement.max((lib.lhs - lhs).abs());
        }
        Ok((
            worst_excess <= 1e-10,
            format!("max lhs − 2√2ε {worst_excess:.2e} ≤ 1e-10 over {n_probes} probes"),
            json!({
                "max_excess": worst_excess,
                "max_library_disagreement": worst_disagreement,
                "probes": n_probes,
            }),
        ))
    })
}

/// `max_s ‖π₁ − π₂‖₁ ≤ √2‖θ₁ − θ₂‖₂` on random pairs.
pub fn policy_lipschitz(n_pairs: usize) -> CheckResult {
    timed("5", "policy_lipschitz", || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..n_pairs {
            let ns = rng.random_range(1..=6);
            let na = rng.random_range(1..=5);
            let scale = rng.random_range(0.1..5.0);
            let first = random_theta(&mut rng, ns, na, scale);
            let size = 10f64.powf(rng.random_range(-6.0..1.0));
            let delta: DVector<f64> =
                DVector::from_fn(ns * na, |_, _| size * rng.sample::<f64, _>(StandardNormal));
            let second = first.offset(&delta, 1.0)?;
            let tv = policy::tv_distance(&first, &second)?;
            let bound = std::f64::consts::SQRT_2 * delta.norm();
            worst_excess = worst_excess.max(tv - bound);
            if delta.norm() > 0.0 {
                worst_ratio = worst_ratio.max(tv / delta.norm());
            }
        }
        Ok((
            worst_excess <= 1e-12,
            format!("max tv − √2‖Δθ‖ {worst_excess:.2e} ≤ 1e-12 over {n_pairs} pairs"),
            json!({ "max_excess": worst_excess, "max_ratio": worst_ratio, "pairs": n_pairs }),
        ))
    })
}

/// The config of the rate sweeps: default fixture, tabular features,
/// `c_θ = 0.05`, `c_ω = 3`, `t_offset = 9`, automatic `C_ω`, `α₀ = 0.01`.
pub fn rate_config(label: &str, reward_oracle: OracleConfig) -> ExperimentConfig {
    ExperimentConfig {
        label: Some(label.to_string()),
        mdp: MdpSource::Generator(MdpGenerator::default_fixture()),
        features: FeatureSpec::Tabular,
        schedule: ScheduleConfig {
            c_theta: 0.05,
            c_omega: 3.0,
            ratio_cap: 0.1,
            t_offset: 9,
        },
        critic: CriticConfig::default(),
        reward_oracle,
        alpha0: 0.01,
        horizon: None,
        horizon_sweep: Some(RATE_HORIZONS.to_vec()),
        seeds: RATE_SEEDS.to_vec(),
        oracle_cadence: Setting::Auto,
        track_mismatch: true,
        logit_limit: None,
        output_dir: "runs".into(),
    }
}

/// `GradientBased` with `c_φ = C_φ = 1` and a direction twice the cap, so
/// every step saturates.
pub fn gradient_oracle() -> OracleConfig {
    OracleConfig::gradient_based(1.0, 1.0, 2.0, 17)
}

/// `ConstantDrift` with per-step norm 0.01.
pub fn drift_oracle() -> OracleConfig {
    OracleConfig::constant_drift(0.01, 23)
}

/// Per-run invariant results kept after a sweep's traces are dropped.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunCheck {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "F_T")]
    pub f_t: f64,
    pub invariants: InvariantReport,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateSweep {
    pub group: GroupReport,
    pub runs: Vec<RunCheck>,
}

/// Runs one sweep. `projection_radius_override` is the fault-injection hook.
pub fn rate_sweep(
    config: &ExperimentConfig,
    threads: usize,
    projection_radius_override: Option<f64>,
) -> Result<RateSweep> {
    let traces = run_config(config, threads, projection_radius_override)?;
    let runs = traces
        .iter()
        .map(|t| {
            Ok(RunCheck {
                seed: t.seed,
                horizon: t.horizon,
                f_t: crate::metrics::second_half_averages(t)?.f_t,
                invariants: check_invariants(t),
                flags: t.flags.iter().map(|f| f.name().to_string()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = summarize(&traces)?;
    Ok(RateSweep {
        group: report.groups.remove(0),
        runs,
    })
}

fn run_config(
    config: &ExperimentConfig,
    threads: usize,
    projection_radius_override: Option<f64>,
) -> Result<Vec<RunTrace>> {
    let prepared = config.prepare()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        config
            .jobs()
            .par_iter()
            .map(|&(horizon, seed)| {
                let mut settings = config.run_settings(&prepared, horizon, seed);
                settings.projection_radius_override = projection_radius_override;
                let oracle = RewardOracle::new(&config.reward_oracle, &prepared.init.phi, seed)?;
                Ok(run_acer(
                    &prepared.mdp,
                    &prepared.features,
                    &prepared.init,
                    oracle,
                    &settings,
                )?
                .with_label(config.key()))
            })
            .collect()
    })
}

/// The static, gradient-oracle and drift sweeps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateSuite {
    #[serde(rename = "static")]
    pub fixed: RateSweep,
    pub gradient: RateSweep,
    pub drift: RateSweep,
}

pub fn rate_suite(threads: usize, projection_radius_override: Option<f64>) -> Result<RateSuite> {
    let sweep = |label, oracle| {
        rate_sweep(
            &rate_config(label, oracle),
            threads,
            projection_radius_override,
        )
    };
    Ok(RateSuite {
        fixed: sweep("static", OracleConfig::fixed())?,
        gradient: sweep("gradient", gradient_oracle())?,
        drift: sweep("drift", drift_oracle())?,
    })
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn in_band(slope: f64) -> bool {
    (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&slope)
}

fn fit_json(group: &GroupReport) -> Value {
    json!({
        "T": group.per_t.iter().map(|h| h.horizon).collect::<Vec<_>>(),
        "G_T": group.per_t.iter().map(|h| h.g_t.mean).collect::<Vec<_>>(),
        "W_T": group.per_t.iter().map(|h| h.w_t.mean).collect::<Vec<_>>(),
        "F_T": group.per_t.iter().map(|h| h.f_t.mean).collect::<Vec<_>>(),
        "rate_fits": group.rate_fits,
        "band": [SLOPE_BAND.0, SLOPE_BAND.1],
    })
}

fn slopes(group: &GroupReport) -> Result<((f64, f64), (f64, f64))> {
    let g = group
        .rate_fits
        .g_t
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no G_T fit".into()))?;
    let w = group
        .rate_fits
        .w_t
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no W_T fit".into()))?;
    Ok(((g.slope, g.r_squared), (w.slope, w.r_squared)))
}

/// Static reward: `G_T` and `W_T` decrease with slopes in the band.
pub fn static_rate(sweep: &RateSweep) -> CheckResult {
    timed("6", "static_rate", || {
        let group = &sweep.group;
        let ((gs, gr), (ws, wr)) = slopes(group)?;
        let g_dec =
            strictly_decreasing(&group.per_t.iter().map(|h| h.g_t.mean).collect::<Vec<_>>());
        let w_dec =
            strictly_decreasing(&group.per_t.iter().map(|h| h.w_t.mean).collect::<Vec<_>>());
        let passed = g_dec && w_dec && in_band(gs) && in_band(ws) && gr >= MIN_R2 && wr >= MIN_R2;
        Ok((
            passed,
            format!(
                "G slope {gs:.3} (R² {gr:.2}), W slope {ws:.3} (R² {wr:.2}), decreasing G {g_dec} W {w_dec}"
            ),
            fit_json(group),
        ))
    })
}

/// Saturated gradient oracle: `F_T ≤ 4/T²` and slopes in the band.
pub fn gradient_oracle_rate(sweep: &RateSweep) -> CheckResult {
    timed("7", "gradient_oracle_rate", || {
        let ((gs, gr), (ws, wr)) = slopes(&sweep.group)?;
        let worst = sweep
            .runs
            .iter()
            .map(|r| r.f_t * (r.horizon as f64).powi(2))
            .fold(0.0, f64::max);
        let passed = worst <= 4.0 && in_band(gs) && in_band(ws);
        let mut details = fit_json(&sweep.group);
        details["max_F_T_times_T2"] = worst.into();
        Ok((
            passed,
            format!(
                "max T²·F_T {worst:.3} ≤ 4, G slope {gs:.3} (R² {gr:.2}), W slope {ws:.3} (R² {wr:.2})"
            ),
            details,
        ))
    })
}

/// Constant drift: `G_T` stops decaying. The ratio to the static sweep at
/// the largest horizon is reported only.
pub fn drift_degradation(drift: &RateSweep, fixed: &RateSweep) -> CheckResult {
    timed("8", "drift_degradation", || {
        let ((gs, gr), _) = slopes(&drift.group)?;
        let ratio = drift.group.g_t.mean / fixed.group.g_t.mean;
        let mut details = fit_json(&drift.group);
        details["G_ratio_vs_static"] = ratio.into();
        details["ratio_target"] = DRIFT_RATIO_TARGET.into();
        Ok((
            gs > DRIFT_SLOPE_FLOOR,
            format!(
                "G slope {gs:.3} > {DRIFT_SLOPE_FLOOR} (R² {gr:.2}); G ratio vs static {ratio:.1} (diagnostic, target ≥ {DRIFT_RATIO_TARGET})"
            ),
            details,
        ))
    })
}

fn invariant_result(id: &str, name: &str, runs: &[&RunCheck]) -> CheckResult {
    timed(id, name, || {
        let mut failures: Vec<Value> = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for run in runs {
            let mut failed: Vec<String> = run
                .invariants
                .failures()
                .iter()
                .map(|s| s.to_string())
                .collect();
            failed.extend(run.flags.iter().cloned());
            if !failed.is_empty() {
                names.extend(failed.iter().cloned());
                failures.push(json!({ "seed": run.seed, "T": run.horizon, "failed": failed }));
            }
        }
        names.sort();
        names.dedup();
        let summary = if failures.is_empty() {
            format!("{} runs, no violations", runs.len())
        } else {
            format!(
                "{} of {} runs violate: {}",
                failures.len(),
                runs.len(),
                names.join(", ")
            )
        };
        Ok((
            failures.is_empty(),
            summary,
            json!({ "runs": runs.len(), "failures": failures }),
        ))
    })
}

/// Zero invariant violations and flags on every sweep run.
pub fn run_invariants(suite: &RateSuite) -> CheckResult {
    let runs: Vec<&RunCheck> = suite
        .fixed
        .runs
        .iter()
        .chain(&suite.gradient.runs)
        .chain(&suite.drift.runs)
        .collect();
    invariant_result("9", "run_invariants", &runs)
}

/// One short static run on the fixture with `C_ω = 1`, small enough that
/// the projection is active.
pub fn smoke_run(projection_radius_override: Option<f64>) -> CheckResult {
    let mut config = rate_config("smoke", OracleConfig::fixed());
    config.critic.c_omega = Setting::Value(1.0);
    config.horizon_sweep = Some(vec![1 << 12]);
    config.seeds = vec![1];
    let start = Instant::now();
    let result = run_config(&config, 1, projection_radius_override).and_then(|traces| {
        let t = &traces[0];
        let bound_active = t
            .records
            .iter()
            .any(|r| r.critic_norm >= t.critic_radius * (1.0 - 1e-9));
        Ok((
            RunCheck {
                seed: t.seed,
                horizon: t.horizon,
                f_t: crate::metrics::second_half_averages(t)?.f_t,
                invariants: check_invariants(t),
                flags: t.flags.iter().map(|f| f.name().to_string()).collect(),
            },
            bound_active,
        ))
    });
    match result {
        Ok((run, bound_active)) => {
            let mut check = invariant_result("S", "smoke_invariants", &[&run]);
            check.summary = format!("{}; ball reached: {bound_active}", check.summary);
            check.details["ball_reached"] = bound_active.into();
            check.seconds = start.elapsed().as_secs_f64();
            check
        }
        Err(e) => CheckResult {
            id: "S".into(),
            name: "smoke_invariants".into(),
            passed: false,
            summary: format!("error: {e}"),
            details: Value::Null,
            seconds: start.elapsed().as_secs_f64(),
        },
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyOptions {
    pub threads: usize,
    /// Projects the critic onto this radius instead of `C_ω`.
    pub projection_radius_override: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub passed: bool,
    pub results: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }
}

pub fn verify_suite(level: Level, options: &VerifyOptions) -> VerifyReport {
    let mut results = vec![
        oracle_equivalence(20),
        gradient_check(50),
        contraction(1000),
        td_error_bound(100),
        policy_lipschitz(10_000),
        smoke_run(options.projection_radius_override),
    ];
    if level == Level::Full {
        match rate_suite(options.threads, options.projection_radius_override) {
            Ok(suite) => {
                results.push(static_rate(&suite.fixed));
                results.push(gradient_oracle_rate(&suite.gradient));
                results.push(drift_degradation(&suite.drift, &suite.fixed));
                results.push(run_invariants(&suite));
            }
            Err(e) => {
                for (id, name) in [
                    ("6", "static_rate"),
                    ("7", "gradient_oracle_rate"),
                    ("8", "drift_degradation"),
                    ("9", "run_invariants"),
                ] {
                    results.push(timed(id, name, || {
                        Err(Error::InvalidArgument(e.to_string()))
                    }));
                }
            }
        }
    }
    VerifyReport {
        level,
        passed: results.iter().all(|r| r.passed),
        results,
    }
}
