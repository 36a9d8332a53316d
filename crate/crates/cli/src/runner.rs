use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use dmssca::diagnostics::{IterationTrace, MonitorSummary};
use dmssca::engine::{check_stepsize_conditions, run, AdmissibilityReport, RunOutput, SelectedOutput};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Resolved, RunConfig};
use crate::error::{CliError, Result};

pub const TRACE_HEADER: &str =
    "run_id,seed,t,theta_sq,delta_sq_mean,phi_hat,upsilon_hat,eps_hat,gap_mean,U_bar,sfo_calls";
pub const TRAJECTORY_HEADER: &str = "run_id,seed,t,node,coord,value";

/// One finished replicate.
pub struct Replicate {
    pub run_id: usize,
    pub seed: u64,
    pub output: RunOutput,
}

/// Runs `cfg.replicates` replicates with seeds `cfg.seed + r`, in parallel, ordered by `r`.
pub fn run_replicates(cfg: &RunConfig, resolved: &Resolved) -> Result<Vec<Replicate>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let x0 = resolved.x0_for(seed);
            let output = run(
                &resolved.problem,
                &resolved.hyper,
                &resolved.mixing,
                &x0,
                seed,
                &resolved.settings,
            )?;
            Ok(Replicate {
                run_id: r,
                seed,
                output,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let stderr = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        };
        MeanStderr { mean, stderr }
    }
}

#[derive(Debug, Serialize)]
pub struct AdmissibilitySummary {
    pub verdict: String,
    #[serde(flatten)]
    pub report: AdmissibilityReport,
}

#[derive(Debug, Serialize)]
pub struct ReplicateSummary {
    pub run_id: usize,
    pub seed: u64,
    pub selected: SelectedOutput,
    pub final_gap_mean: f64,
    pub final_theta_sq: f64,
    pub gap_time_average: f64,
    pub avg_progress_stacked: f64,
    pub avg_progress_per_node: f64,
    pub sfo_calls: u64,
    pub samples_drawn: u64,
    pub monitor: MonitorSummary,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub distribution_hash: String,
    pub problem: String,
    pub algorithm: String,
    pub replicates: usize,
    pub iterations: usize,
    pub lambda_w: f64,
    pub smoothness: f64,
    pub sigma_bar_sq: f64,
    pub admissibility: AdmissibilitySummary,
    /// `gap_mean` at the last traced iteration, across replicates.
    pub final_gap: MeanStderr,
    /// Gap of the uniformly selected output, across replicates.
    pub selected_gap: MeanStderr,
    /// `(1/T) sum_t gap_mean(t)`, across replicates.
    pub gap_time_average: MeanStderr,
    /// `sfo_calls` counts two oracle calls per fresh sample when the momentum correction
    /// is active; `samples_drawn` counts each fresh sample once.
    pub sfo_convention: &'static str,
    pub monitor: MonitorSummary,
    pub runs: Vec<ReplicateSummary>,
}

pub fn summarize(cfg: &RunConfig, resolved: &Resolved, reps: &[Replicate]) -> Summary {
    let report = check_stepsize_conditions(
        &resolved.hyper,
        resolved.mixing.lambda_w(),
        resolved.problem.global_l(),
        resolved.problem.n(),
    );
    let last = |r: &Replicate| r.output.trace.last().cloned();
    let runs: Vec<ReplicateSummary> = reps
        .iter()
        .map(|r| {
            let fin = last(r);
            ReplicateSummary {
                run_id: r.run_id,
                seed: r.seed,
                selected: r.output.selected.clone(),
                final_gap_mean: fin.as_ref().map_or(f64::NAN, |t| t.gap_mean),
                final_theta_sq: fin.as_ref().map_or(f64::NAN, |t| t.theta_sq),
                gap_time_average: r.output.gap_time_average,
                avg_progress_stacked: r.output.avg_progress_stacked,
                avg_progress_per_node: r.output.avg_progress_per_node,
                sfo_calls: r.output.final_state.sfo_calls,
                samples_drawn: r.output.final_state.samples_drawn,
                monitor: r.output.monitor.clone(),
            }
        })
        .collect();
    let mut monitor = MonitorSummary::default();
    for r in reps {
        monitor.merge(&r.output.monitor);
    }
    let col = |f: fn(&ReplicateSummary) -> f64| MeanStderr::of(&runs.iter().map(f).collect::<Vec<_>>());
    Summary {
        config_hash: cfg.config_hash(),
        distribution_hash: cfg.distribution_hash(),
        problem: resolved.problem.name().to_string(),
        algorithm: cfg.algorithm.to_string(),
        replicates: reps.len(),
        iterations: resolved.hyper.iterations,
        lambda_w: resolved.mixing.lambda_w(),
        smoothness: resolved.problem.global_l(),
        sigma_bar_sq: resolved.problem.sigma_bar_sq(),
        admissibility: AdmissibilitySummary {
            verdict: report.verdict(),
            report,
        },
        final_gap: col(|r| r.final_gap_mean),
        selected_gap: col(|r| r.selected.gap),
        gap_time_average: col(|r| r.gap_time_average),
        sfo_convention: "sfo_calls = 2 per fresh sample while beta < 1, else 1; samples_drawn = 1 per fresh sample",
        monitor,
        runs,
    }
}

/// Seventeen significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn io_ctx(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("writing {}", path.display()), e)
}

pub fn trace_row(run_id: usize, seed: u64, rec: &IterationTrace) -> String {
    let mut row = format!("{run_id},{seed},{}", rec.t);
    for v in rec.values() {
        row.push(',');
        row.push_str(&fmt_f64(v));
    }
    row.push_str(&format!(",{}", rec.sfo_calls));
    row
}

pub fn write_trace(path: &Path, reps: &[Replicate]) -> Result<()> {
    let err = io_ctx(path);
    let mut w = create(path)?;
    writeln!(w, "{TRACE_HEADER}").map_err(&err)?;
    for r in reps {
        for rec in &r.output.trace {
            writeln!(w, "{}", trace_row(r.run_id, r.seed, rec)).map_err(&err)?;
        }
    }
    w.flush().map_err(&err)
}

pub fn write_trajectory(path: &Path, reps: &[Replicate]) -> Result<()> {
    let err = io_ctx(path);
    let mut w = create(path)?;
    writeln!(w, "{TRAJECTORY_HEADER}").map_err(&err)?;
    for r in reps {
        for p in &r.output.trajectory {
            for (c, v) in p.x.iter().enumerate() {
                writeln!(w, "{},{},{},{},{c},{}", r.run_id, r.seed, p.t, p.node, fmt_f64(*v)).map_err(&err)?;
            }
        }
    }
    w.flush().map_err(&err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let err = io_ctx(path);
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(&err)?;
    w.flush().map_err(&err)
}

/// Runs a resolved config and writes the four output files into `dir`.
pub fn execute(cfg: &RunConfig, resolved: &Resolved, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let reps = run_replicates(cfg, resolved)?;
    write_trace(&dir.join("trace.csv"), &reps)?;
    write_trajectory(&dir.join("trajectory.csv"), &reps)?;
    let summary = summarize(cfg, resolved, &reps);
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("config_echo.json"), cfg)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(-3.0), "-3.0000000000000000e0");
    }

    #[test]
    fn mean_stderr() {
        let m = MeanStderr::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStderr::of(&[4.0]).stderr, 0.0);
    }
}
