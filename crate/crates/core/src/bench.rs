//! Per-stage timing over a synthetic run.

use crate::config::PipelineConfig;
use crate::pipeline::TickReport;
use crate::session::{run_pipeline, SessionError, SessionOptions};
use crate::sim_bus::{gen_synthetic, sample_count, Scenario, SynthError};
use serde::Serialize;
use std::fmt;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl StageStats {
    /// Nearest-rank percentiles over `samples` (microseconds).
    pub fn from_samples(samples: &mut [f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let k = (p * samples.len() as f64).ceil() as usize;
            samples[k.clamp(1, samples.len()) - 1]
        };
        StageStats {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p50: rank(0.50),
            p99: rank(0.99),
            max: samples[samples.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scenario: String,
    pub ticks: u64,
    /// Simulated duration of the run, seconds.
    pub simulated_s: f64,
    /// Wall-clock time of the whole run including recording, seconds.
    pub wall_s: f64,
    pub sample: StageStats,
    pub wrench: StageStats,
    pub fusion: StageStats,
    pub haptics: StageStats,
    pub total: StageStats,
}

impl BenchReport {
    pub fn from_reports(
        scenario: Scenario,
        reports: &[TickReport],
        simulated_s: f64,
        wall_s: f64,
    ) -> Self {
        let stats = |f: fn(&TickReport) -> f64| {
            let mut v: Vec<f64> = reports.iter().map(f).collect();
            StageStats::from_samples(&mut v)
        };
        BenchReport {
            scenario: scenario.to_string(),
            ticks: reports.len() as u64,
            simulated_s,
            wall_s,
            sample: stats(|r| r.stage_us.sample),
            wrench: stats(|r| r.stage_us.wrench),
            fusion: stats(|r| r.stage_us.fusion),
            haptics: stats(|r| r.stage_us.haptics),
            total: stats(|r| r.stage_us.total),
        }
    }

    pub fn faster_than_real_time(&self) -> bool {
        self.wall_s < self.simulated_s
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} ticks of {} ({:.1} s simulated) in {:.3} s wall",
            self.ticks, self.scenario, self.simulated_s, self.wall_s
        )?;
        writeln!(
            f,
            "{:<8} {:>10} {:>10} {:>10} {:>10}",
            "stage_us", "mean", "p50", "p99", "max"
        )?;
        for (name, s) in [
            ("sample", &self.sample),
            ("wrench", &self.wrench),
            ("fusion", &self.fusion),
            ("haptics", &self.haptics),
            ("total", &self.total),
        ] {
            writeln!(
                f,
                "{name:<8} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                s.mean, s.p50, s.p99, s.max
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Generates `duration_s` of `scenario` and runs it with command and episode
/// recording on, as `run` would.
pub fn bench(
    cfg: &PipelineConfig,
    scenario: Scenario,
    duration_s: f64,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let traces = gen_synthetic(scenario, duration_s, seed, cfg)?;
    let ticks = sample_count(duration_s, cfg);
    let opts = SessionOptions {
        record_commands: true,
        record_episode: true,
        ..Default::default()
    };
    let start = Instant::now();
    let out = run_pipeline(cfg.clone(), traces, ticks, opts)?;
    let wall_s = start.elapsed().as_secs_f64();
    let simulated_s = ticks as f64 / f64::from(cfg.tick_rate_hz);
    Ok(BenchReport::from_reports(
        scenario,
        &out.reports,
        simulated_s,
        wall_s,
    ))
}
