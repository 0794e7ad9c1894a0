//! Latency measurement: scenario runners, summary statistics, the
//! motion-to-photon budget check and report rendering.

mod link;
mod scenarios;

use std::fmt::Write as _;

use serde::Serialize;

use crate::client::ClientError;
use crate::error::Registered;

pub use link::Link;
pub use scenarios::{
    frame_pixel, populate_migration_session, run_cold_start, run_frame_draw, run_migration_bench, run_rtt,
    MigrationReport, Target, DEFAULT_RESOLUTION, MIGRATION_ELEMENTS,
};

/// Iterations discarded before each scenario's measured section.
pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERATIONS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("Empty: no samples")]
    Empty,
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error("OutputMismatch: {0}")]
    OutputMismatch(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl Registered for BenchError {
    fn code(&self) -> u16 {
        match self {
            BenchError::Empty => 0x60,
            BenchError::InvalidModel(_) => 0x61,
            BenchError::OutputMismatch(_) => 0x62,
            BenchError::Client(e) => e.code(),
        }
    }
}

impl From<crate::session::SessionError> for BenchError {
    fn from(e: crate::session::SessionError) -> Self {
        BenchError::Client(e.into())
    }
}

impl From<crate::executor::ExecutorError> for BenchError {
    fn from(e: crate::executor::ExecutorError) -> Self {
        BenchError::Client(e.into())
    }
}

impl From<crate::wire::transport::TransportError> for BenchError {
    fn from(e: crate::wire::transport::TransportError) -> Self {
        BenchError::Client(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor n − 1). Zero when n = 1.
    pub sd: f64,
    /// False when n = 1 and `sd` is a placeholder.
    pub sd_defined: bool,
    /// Nearest-rank 99th percentile.
    pub p99: f64,
}

/// Index of the nearest-rank 99th percentile in an ascending sort of `n`
/// samples.
pub fn p99_index(n: usize) -> usize {
    (99 * n).div_ceil(100) - 1
}

pub fn stats(samples: &[f64]) -> Result<Stats, BenchError> {
    let n = samples.len();
    if n == 0 {
        return Err(BenchError::Empty);
    }
    // Summing offsets from the first sample keeps a constant series exact.
    let shift = samples[0];
    let mean = shift + samples.iter().map(|x| x - shift).sum::<f64>() / n as f64;
    let sd = if n > 1 {
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Stats {
        n,
        mean,
        sd,
        sd_defined: n > 1,
        p99: sorted[p99_index(n)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ColdStart,
    FrameDraw,
    Migration,
    Rtt,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::ColdStart => "cold-start",
            Scenario::FrameDraw => "frame-draw",
            Scenario::Migration => "migration",
            Scenario::Rtt => "rtt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub scenario: Scenario,
    /// Sub-measurement within the scenario, such as a migration phase.
    pub phase: Option<&'static str>,
    pub samples_ns: Vec<u64>,
    pub stats: Stats,
}

impl LatencyReport {
    pub fn new(scenario: Scenario, phase: Option<&'static str>, samples_ns: Vec<u64>) -> Result<Self, BenchError> {
        let ms: Vec<f64> = samples_ns.iter().map(|&ns| ns as f64 / 1e6).collect();
        let stats = stats(&ms)?;
        Ok(Self {
            scenario,
            phase,
            samples_ns,
            stats,
        })
    }

    pub fn label(&self) -> String {
        match self.phase {
            Some(p) => format!("{}/{p}", self.scenario.name()),
            None => self.scenario.name().to_string(),
        }
    }

    pub fn json(&self, raw: bool) -> serde_json::Value {
        #[derive(Serialize)]
        struct Out<'a> {
            scenario: Scenario,
            #[serde(skip_serializing_if = "Option::is_none")]
            phase: Option<&'a str>,
            n: usize,
            mean_ms: f64,
            sd_ms: f64,
            sd_defined: bool,
            p99_ms: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            samples: Option<&'a [u64]>,
        }
        serde_json::to_value(Out {
            scenario: self.scenario,
            phase: self.phase,
            n: self.stats.n,
            mean_ms: self.stats.mean,
            sd_ms: self.stats.sd,
            sd_defined: self.stats.sd_defined,
            p99_ms: self.stats.p99,
            samples: raw.then_some(self.samples_ns.as_slice()),
        })
        .expect("report serializes")
    }
}

/// A published figure printed next to measurements for comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub label: &'static str,
    pub mean_ms: Option<f64>,
    pub sd_ms: Option<f64>,
    pub p99_ms: Option<f64>,
}

/// Mobile h264 decode of one frame, the video-streaming baseline.
pub const H264_BASELINE: ReferenceRow = ReferenceRow {
    label: "h264 decode, Samsung S7",
    mean_ms: Some(8.3),
    sd_ms: Some(1.1),
    p99_ms: None,
};

pub fn hardware_references(scenario: Scenario) -> &'static [ReferenceRow] {
    const COLD: &[ReferenceRow] = &[
        ReferenceRow { label: "GPU cold start, RTX 2080", mean_ms: Some(0.7), sd_ms: Some(0.2), p99_ms: Some(1.4) },
        ReferenceRow { label: "GPU cold start, Jetson TX2", mean_ms: Some(1.8), sd_ms: Some(0.5), p99_ms: Some(4.3) },
    ];
    const DRAW: &[ReferenceRow] = &[
        ReferenceRow { label: "GPU frame draw, RTX 2080", mean_ms: Some(0.39), sd_ms: Some(0.4), p99_ms: Some(2.2) },
        ReferenceRow { label: "GPU frame draw, Jetson TX2", mean_ms: Some(0.6), sd_ms: Some(0.4), p99_ms: Some(1.2) },
    ];
    const MIGRATE: &[ReferenceRow] = &[ReferenceRow {
        label: "projected session migration",
        mean_ms: None,
        sd_ms: None,
        p99_ms: Some(1.4),
    }];
    match scenario {
        Scenario::ColdStart => COLD,
        Scenario::FrameDraw => DRAW,
        Scenario::Migration => MIGRATE,
        Scenario::Rtt => &[],
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

/// Renders reports as an AVG / SD / 99th table in milliseconds, followed by
/// the external reference rows. The h264 row is always present.
pub fn render_table(reports: &[LatencyReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<36} {:>6} {:>8} {:>8} {:>8}", "measurement (ms)", "n", "AVG", "SD", "99th");
    for r in reports {
        let sd = if r.stats.sd_defined { format!("{:.1}", r.stats.sd) } else { "n/a".into() };
        let _ = writeln!(
            out,
            "{:<36} {:>6} {:>8.1} {:>8} {:>8.1}",
            r.label(),
            r.stats.n,
            r.stats.mean,
            sd,
            r.stats.p99
        );
    }
    let mut seen = Vec::new();
    let mut refs: Vec<ReferenceRow> = Vec::new();
    for r in reports {
        if !seen.contains(&r.scenario) {
            seen.push(r.scenario);
            refs.extend_from_slice(hardware_references(r.scenario));
        }
    }
    refs.push(H264_BASELINE);
    for r in refs {
        let _ = writeln!(
            out,
            "{:<36} {:>6} {:>8} {:>8} {:>8}  [external reference, not measured]",
            r.label,
            "-",
            cell(r.mean_ms),
            cell(r.sd_ms),
            cell(r.p99_ms)
        );
    }
    out.push_str("SD is the sample standard deviation (n-1); 99th is nearest-rank.\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetModel {
    pub refresh_hz: f64,
    pub sync_ms: f64,
    pub access_ms_uplink: f64,
    pub access_ms_downlink: f64,
}

impl Default for BudgetModel {
    fn default() -> Self {
        Self {
            refresh_hz: 120.0,
            sync_ms: 1.0,
            access_ms_uplink: 0.5,
            access_ms_downlink: 0.5,
        }
    }
}

impl BudgetModel {
    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.refresh_hz
    }

    pub fn device_budget_ms(&self) -> Result<f64, BenchError> {
        let valid = self.refresh_hz.is_finite()
            && self.refresh_hz > 0.0
            && self.sync_ms >= 0.0
            && self.access_ms_uplink >= 0.0
            && self.access_ms_downlink >= 0.0;
        if !valid {
            return Err(BenchError::InvalidModel(format!("{self:?}")));
        }
        let budget = self.frame_interval_ms() - self.sync_ms;
        if budget <= 0.0 {
            return Err(BenchError::InvalidModel(format!(
                "device budget {budget} ms at {} Hz with {} ms sync",
                self.refresh_hz, self.sync_ms
            )));
        }
        Ok(budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetVerdict {
    pub model: BudgetModel,
    pub device_budget_ms: f64,
    pub access_ms: f64,
    /// Device budget left after both access legs.
    pub available_ms: f64,
    pub p99_ms: f64,
    pub fits: bool,
    /// Device budget minus the measured p99.
    pub headroom_ms: f64,
}

pub fn check_budget(p99_ms: f64, model: &BudgetModel) -> Result<BudgetVerdict, BenchError> {
    let device_budget_ms = model.device_budget_ms()?;
    let access_ms = model.access_ms_uplink + model.access_ms_downlink;
    let available_ms = device_budget_ms - access_ms;
    Ok(BudgetVerdict {
        model: *model,
        device_budget_ms,
        access_ms,
        available_ms,
        p99_ms,
        fits: p99_ms <= available_ms,
        headroom_ms: device_budget_ms - p99_ms,
    })
}

impl BudgetVerdict {
    pub fn render(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let mut row = |k: &str, v: f64| {
            let _ = writeln!(out, "{k:<30} {v:>8.3} ms");
        };
        row(&format!("frame interval ({} Hz)", m.refresh_hz), m.frame_interval_ms());
        row("display sync", -m.sync_ms);
        row("device budget", self.device_budget_ms);
        row("access delay, uplink", -m.access_ms_uplink);
        row("access delay, downlink", -m.access_ms_downlink);
        row("available for remote compute", self.available_ms);
        row("measured p99", self.p99_ms);
        row("headroom vs device budget", self.headroom_ms);
        let _ = writeln!(out, "{:<30} {:>8}", "fits", if self.fits { "yes" } else { "no" });
        out
    }
}

#[cfg(test)]
mod tests;
