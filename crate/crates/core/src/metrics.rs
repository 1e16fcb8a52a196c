//! Finite-horizon diagnostics: second-half averages, log-log rate fits,
//! run invariants and multi-run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::actor_critic::{RunFlag, RunTrace};
use crate::error::{Error, Result};

/// Slack allowed by the mismatch recursion and frozen-policy checks.
pub const RECURSION_TOL: f64 = 1e-10;
/// Slack allowed by the critic-ball check.
pub const BALL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(rename = "G_T")]
    pub g_t: f64,
    #[serde(rename = "W_T")]
    pub w_t: f64,
    #[serde(rename = "F_T")]
    pub f_t: f64,
    /// Spacing of the snapshots behind `G_T` and `W_T`; 1 is the exact
    /// second-half average, larger values a uniform subsample of it.
    pub stride: usize,
    pub n_snapshots: usize,
    pub mismatch_max: Option<f64>,
    pub lambda_min_observed: f64,
    pub epsilon_max_observed: f64,
    pub assumption_flags: Vec<RunFlag>,
}

/// `G_T`, `W_T` over the snapshots in `[T/2, T)` and `F_T` over every step
/// of that window.
pub fn second_half_averages(trace: &RunTrace) -> Result<MetricsSummary> {
    let half = trace.horizon / 2;
    let window: Vec<_> = trace.snapshots().filter(|(t, _)| *t >= half).collect();
    if window.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let n = window.len() as f64;
    let g_t = window.iter().map(|(_, s)| s.grad_norm_sq).sum::<f64>() / n;
    let w_t = window.iter().map(|(_, s)| s.critic_err_sq).sum::<f64>() / n;
    let tail = &trace.records[half.min(trace.records.len())..];
    let f_t = tail.iter().map(|r| r.delta_phi_sq).sum::<f64>() / tail.len().max(1) as f64;
    let (lambda_min, epsilon_max) = trace
        .snapshots()
        .fold((f64::INFINITY, 0.0f64), |(l, e), (_, s)| {
            (l.min(s.lambda), e.max(s.epsilon))
        });
    let mismatch_max = trace.track_mismatch.then(|| {
        trace
            .records
            .iter()
            .filter_map(|r| r.mismatch_l1)
            .fold(0.0f64, f64::max)
    });
    Ok(MetricsSummary {
        g_t,
        w_t,
        f_t,
        stride: trace.second_half_stride,
        n_snapshots: window.len(),
        mismatch_max,
        lambda_min_observed: lambda_min,
        epsilon_max_observed: epsilon_max,
        assumption_flags: trace.flags.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
    /// `(ln T, ln value)`.
    pub points: Vec<(f64, f64)>,
}

/// Ordinary least squares of `ln value` on `ln T`.
pub fn rate_fit(series: &[(f64, f64)]) -> Result<RateFit> {
    for &(horizon, value) in series {
        if !(value > 0.0 && value.is_finite()) || !(horizon > 0.0) {
            return Err(Error::NonPositiveValue { horizon, value });
        }
    }
    let mut distinct: Vec<f64> = series.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientPoints(distinct.len()));
    }
    let points: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionCheck {
    pub violations: usize,
    /// Largest `lhs − rhs` over all pairs; negative when every pair has slack.
    pub max_excess: f64,
}

/// Checks `m_{t+1} ≤ γ m_t + ‖ν_t − ν_{t+1}‖₁ + 1e-10` for every step.
pub fn mismatch_recursion_check(trace: &RunTrace) -> Result<RecursionCheck> {
    if !trace.track_mismatch {
        return Err(Error::MismatchNotTracked);
    }
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for pair in trace.records.windows(2) {
        let (Some(m0), Some(m1), Some(shift)) = (
            pair[0].mismatch_l1,
            pair[1].mismatch_l1,
            pair[1].visitation_shift,
        ) else {
            return Err(Error::MismatchNotTracked);
        };
        let excess = m1 - (trace.gamma * m0 + shift);
        max_excess = max_excess.max(excess);
        if excess > RECURSION_TOL {
            violations += 1;
        }
    }
    Ok(RecursionCheck {
        violations,
        max_excess,
    })
}

/// Per-run invariant counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Steps with `‖ω_{t+1}‖ > C_ω`.
    pub ball_violations: usize,
    /// Steps with `|δ̂_t| > c_delta_bound`.
    pub td_bound_violations: usize,
    pub max_td_ratio: f64,
    pub recursion: Option<RecursionCheck>,
    /// Snapshots with `λ_t ≤ 0`.
    pub exploration_violations: usize,
    pub oracle_failures: usize,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.ball_violations == 0
            && self.td_bound_violations == 0
            && self.recursion.is_none_or(|r| r.violations == 0)
            && self.exploration_violations == 0
            && self.oracle_failures == 0
    }

    /// Names of the invariants that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.ball_violations > 0 {
            out.push("critic_ball");
        }
        if self.td_bound_violations > 0 {
            out.push("td_error_bound");
        }
        if self.recursion.is_some_and(|r| r.violations > 0) {
            out.push("mismatch_recursion");
        }
        if self.exploration_violations > 0 {
            out.push("exploration_margin");
        }
        if self.oracle_failures > 0 {
            out.push("oracle_failure");
        }
        out
    }
}

pub fn check_invariants(trace: &RunTrace) -> InvariantReport {
    let radius = trace.critic_radius;
    let ball_violations = trace
        .records
        .iter()
        .filter(|r| r.critic_norm > radius + BALL_TOL)
        .count();
    let td_bound_violations = trace
        .records
        .iter()
        .filter(|r| r.td_error.abs() > r.c_delta)
        .count();
    let max_td_ratio = trace
        .records
        .iter()
        .map(|r| {
            if r.c_delta > 0.0 {
                r.td_error.abs() / r.c_delta
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let mut exploration_violations = 0;
    let mut oracle_failures = 0;
    for flag in &trace.flags {
        match flag {
            RunFlag::ExplorationViolated { count, .. } => exploration_violations += count,
            RunFlag::OracleFailure { .. } => oracle_failures += 1,
            RunFlag::LogitsExceeded { .. } => {}
        }
    }
    InvariantReport {
        ball_violations,
        td_bound_violations,
        max_td_ratio,
        recursion: mismatch_recursion_check(trace).ok(),
        exploration_violations,
        oracle_failures,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonStats {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n_runs: usize,
    #[serde(rename = "G_T")]
    pub g_t: Stat,
    #[serde(rename = "W_T")]
    pub w_t: Stat,
    #[serde(rename = "F_T")]
    pub f_t: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateFits {
    #[serde(rename = "G_T", skip_serializing_if = "Option::is_none")]
    pub g_t: Option<RateFit>,
    #[serde(rename = "W_T", skip_serializing_if = "Option::is_none")]
    pub w_t: Option<RateFit>,
    #[serde(rename = "F_T", skip_serializing_if = "Option::is_none")]
    pub f_t: Option<RateFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub key: String,
    pub n_runs: usize,
    /// Statistics at the largest horizon in the group.
    #[serde(rename = "G_T")]
    pub g_t: Stat,
    #[serde(rename = "W_T")]
    pub w_t: Stat,
    #[serde(rename = "F_T")]
    pub f_t: Stat,
    /// One entry per horizon, ascending.
    pub per_t: Vec<HorizonStats>,
    /// Fits of the per-horizon means; absent with fewer than 3 horizons.
    pub rate_fits: RateFits,
    /// Distinct flag and invariant-failure names over the group.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupReport>,
}

/// Groups traces by label and aggregates each group over seeds and horizons.
pub fn summarize(traces: &[RunTrace]) -> Result<Report> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to summarize".into()));
    }
    let mut grouped: BTreeMap<&str, Vec<&RunTrace>> = BTreeMap::new();
    for trace in traces {
        grouped.entry(trace.label.as_str()).or_default().push(trace);
    }
    let groups = grouped
        .into_iter()
        .map(|(key, members)| summarize_group(key, &members))
        .collect::<Result<_>>()?;
    Ok(Report { groups })
}

fn summarize_group(key: &str, members: &[&RunTrace]) -> Result<GroupReport> {
    let first = members[0];
    for other in &members[1..] {
        if other.gamma != first.gamma
            || other.oracle_kind != first.oracle_kind
            || other.schedule != first.schedule
            || other.final_theta.n_states() != first.final_theta.n_states()
            || other.final_theta.n_actions() != first.final_theta.n_actions()
        {
            return Err(Error::InconsistentGroup(key.to_string()));
        }
    }
    let mut by_horizon: BTreeMap<usize, Vec<MetricsSummary>> = BTreeMap::new();
    let mut flags: Vec<String> = Vec::new();
    for trace in members {
        by_horizon
            .entry(trace.horizon)
            .or_default()
            .push(second_half_averages(trace)?);
        for flag in &trace.flags {
            flags.push(flag.name().to_string());
        }
        for failure in check_invariants(trace).failures() {
            flags.push(failure.to_string());
        }
    }
    flags.sort();
    flags.dedup();
    let per_t: Vec<HorizonStats> = by_horizon
        .iter()
        .map(|(&horizon, runs)| HorizonStats {
            horizon,
            n_runs: runs.len(),
            g_t: Stat::of(&runs.iter().map(|m| m.g_t).collect::<Vec<_>>()),
            w_t: Stat::of(&runs.iter().map(|m| m.w_t).collect::<Vec<_>>()),
            f_t: Stat::of(&runs.iter().map(|m| m.f_t).collect::<Vec<_>>()),
        })
        .collect();
    let fit = |pick: fn(&HorizonStats) -> f64| {
        let series: Vec<(f64, f64)> = per_t.iter().map(|h| (h.horizon as f64, pick(h))).collect();
        rate_fit(&series).ok()
    };
    let rate_fits = RateFits {
        g_t: fit(|h| h.g_t.mean),
        w_t: fit(|h| h.w_t.mean),
        f_t: fit(|h| h.f_t.mean),
    };
    let last = per_t.last().expect("group has at least one horizon");
    Ok(GroupReport {
        key: key.to_string(),
        n_runs: members.len(),
        g_t: last.g_t,
        w_t: last.w_t,
        f_t: last.f_t,
        per_t,
        rate_fits,
        flags,
    })
}

impl Report {
    pub fn group(&self, key: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.key == key)
    }

    /// Plain-text table, one line per (group, T).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>5} {:>12} {:>12} {:>12}",
            "group", "T", "runs", "G_T", "W_T", "F_T"
        );
        for g in &self.groups {
            for h in &g.per_t {
                let _ = writeln!(
                    out,
                    "{:<20} {:>8} {:>5} {:>12.4e} {:>12.4e} {:>12.4e}",
                    g.key, h.horizon, h.n_runs, h.g_t.mean, h.w_t.mean, h.f_t.mean
                );
            }
            for (name, fit) in [("G_T", &g.rate_fits.g_t), ("W_T", &g.rate_fits.w_t)] {
                if let Some(fit) = fit {
                    let _ = writeln!(
                        out,
                        "{:<20} slope[{name}] = {:.3}  r2 = {:.3}",
                        g.key, fit.slope, fit.r_squared
                    );
                }
            }
        }
        out
    }
}

impl GroupReport {
    /// CSV with columns `T,G_T,W_T,F_T,G_T_std,W_T_std,F_T_std`.
    pub fn write_plot_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["T", "G_T", "W_T", "F_T", "G_T_std", "W_T_std", "F_T_std"])?;
        for h in &self.per_t {
            out.write_record([
                h.horizon.to_string(),
                h.g_t.mean.to_string(),
                h.w_t.mean.to_string(),
                h.f_t.mean.to_string(),
                h.g_t.std.to_string(),
                h.w_t.std.to_string(),
                h.f_t.std.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
