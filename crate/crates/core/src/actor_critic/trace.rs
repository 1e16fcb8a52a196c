use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::actor_critic::StepSchedule;
use crate::error::Result;
use crate::metrics::{self, InvariantReport, MetricsSummary};
use crate::policy::PolicyParams;
use crate::reward::{OracleKind, RewardParams};

/// Exact quantities attached to a step on the oracle cadence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub grad_norm_sq: f64,
    pub critic_err_sq: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub objective: f64,
}

/// One step of a run. Quantities before the update refer to `t`, the
/// critic norm to `ω_{t+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub restarted: bool,
    pub td_error: f64,
    /// `max_{s,a}|r̃_t(s,a)| + 2C_ω`.
    pub c_delta: f64,
    /// `‖θ_{t+1} − θ_t‖₂`.
    pub actor_step: f64,
    /// `‖ω_{t+1}‖₂`.
    pub critic_norm: f64,
    /// `‖φ_{t+1} − φ_t‖₂²`.
    pub delta_phi_sq: f64,
    /// `‖ν̂_t − ν_t‖₁`.
    pub mismatch_l1: Option<f64>,
    /// `‖ν_{t−1} − ν_t‖₁`.
    pub visitation_shift: Option<f64>,
    pub snapshot: Option<SnapshotRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag")]
pub enum RunFlag {
    /// `λ_t ≤ 0` at some snapshot.
    ExplorationViolated {
        first_step: usize,
        count: usize,
        min_lambda: f64,
    },
    /// The exact TD system could not be solved at a snapshot.
    OracleFailure { step: usize, message: String },
    /// Some `|θ(s,a)|` exceeded the configured logit limit.
    LogitsExceeded {
        first_step: usize,
        limit: f64,
        max_abs_logit: f64,
    },
}

impl RunFlag {
    pub fn name(&self) -> &'static str {
        match self {
            RunFlag::ExplorationViolated { .. } => "exploration_violated",
            RunFlag::OracleFailure { .. } => "oracle_failure",
            RunFlag::LogitsExceeded { .. } => "logits_exceeded",
        }
    }
}

/// A trace CSV row. Oracle columns are empty off the cadence and the
/// mismatch column is empty when tracking is off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub td_error: f64,
    pub grad_norm_sq: Option<f64>,
    pub critic_err_sq: Option<f64>,
    pub delta_phi_sq: f64,
    pub mismatch_l1: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(rename = "J")]
    pub objective: Option<f64>,
}

impl From<&StepRecord> for TraceRow {
    fn from(r: &StepRecord) -> Self {
        let snap = r.snapshot;
        TraceRow {
            t: r.t,
            td_error: r.td_error,
            grad_norm_sq: snap.map(|s| s.grad_norm_sq),
            critic_err_sq: snap.map(|s| s.critic_err_sq),
            delta_phi_sq: r.delta_phi_sq,
            mismatch_l1: r.mismatch_l1,
            lambda: snap.map(|s| s.lambda),
            epsilon: snap.map(|s| s.epsilon),
            objective: snap.map(|s| s.objective),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    /// Group key used by reports.
    pub label: String,
    pub seed: u64,
    pub horizon: usize,
    pub gamma: f64,
    pub critic_radius: f64,
    pub oracle_kind: OracleKind,
    pub schedule: StepSchedule,
    pub second_half_stride: usize,
    pub track_mismatch: bool,
    /// `‖ρ − ν_0‖₁`.
    pub initial_mismatch: Option<f64>,
    pub records: Vec<StepRecord>,
    pub flags: Vec<RunFlag>,
    pub final_theta: PolicyParams,
    pub final_omega: DVector<f64>,
    pub final_phi: RewardParams,
    /// Largest `max|base|` and `α` seen over the run.
    pub max_abs_base: f64,
    pub max_alpha: f64,
}

impl RunTrace {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.records.iter().map(TraceRow::from).collect()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (usize, &SnapshotRecord)> {
        self.records
            .iter()
            .filter_map(|r| r.snapshot.as_ref().map(|s| (r.t, s)))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn summary(&self) -> Result<RunSummary> {
        Ok(RunSummary {
            label: self.label.clone(),
            seed: self.seed,
            horizon: self.horizon,
            oracle_kind: self.oracle_kind,
            critic_radius: self.critic_radius,
            metrics: metrics::second_half_averages(self)?,
            invariants: metrics::check_invariants(self),
            final_theta: self.final_theta.clone(),
            final_omega: self.final_omega.iter().copied().collect(),
            final_phi: self.final_phi.clone(),
        })
    }
}

pub fn write_rows<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace CSV written by [`RunTrace::write_csv`].
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in input.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn load_rows(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    read_rows(std::fs::File::open(path)?)
}

/// The per-run JSON summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub oracle_kind: OracleKind,
    #[serde(rename = "C_omega")]
    pub critic_radius: f64,
    #[serde(flatten)]
    pub metrics: MetricsSummary,
    pub invariants: InvariantReport,
    pub final_theta: PolicyParams,
    pub final_omega: Vec<f64>,
    pub final_phi: RewardParams,
}
