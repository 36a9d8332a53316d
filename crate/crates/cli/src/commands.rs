use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmssca::engine::check_stepsize_conditions;

use crate::config::{anchor, load_config, RunConfig};
use crate::error::{CliError, Result};
use crate::presets::{run_preset, Preset};
use crate::runner::{execute, Summary};

/// Values within this distance of 1 are reported as `lambda_W = 1`.
const UNIT_LAMBDA_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replicates: Option<usize>,
}

fn config_dir(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn resolve_with_source(cfg: &RunConfig, path: &Path) -> Result<crate::config::Resolved> {
    cfg.resolve(config_dir(path)).map_err(|e| {
        let text = std::fs::read_to_string(path).unwrap_or_default();
        anchor(e, &text, Some(path))
    })
}

pub fn run_command(path: &Path, overrides: &RunOverrides) -> Result<Summary> {
    let mut cfg = load_config(path)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.output_dir = o.clone();
    }
    if let Some(r) = overrides.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let resolved = resolve_with_source(&cfg, path)?;
    let dir = cfg.output_dir.clone();
    execute(&cfg, &resolved, &dir)
}

pub fn preset_command(name: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let preset: Preset = name.parse()?;
    run_preset(preset, out)
}

/// Human-readable report on the mixing matrix, problem constants, and step-size conditions.
pub fn check_report(cfg: &RunConfig, base_dir: Option<&Path>) -> Result<String> {
    let r = cfg.resolve(base_dir)?;
    let w = &r.mixing;
    let max_dev = |v: Vec<f64>| v.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let mut lambda = w.lambda_w();
    if (1.0 - lambda).abs() < UNIT_LAMBDA_TOL {
        lambda = 1.0;
    }
    let p = &r.problem;
    let report = check_stepsize_conditions(&r.hyper, lambda, p.global_l(), p.n());

    let mut s = String::new();
    let _ = writeln!(s, "mixing: n = {}, edges = {}", w.n(), r.graph.num_edges());
    let _ = writeln!(s, "  max |row sum - 1| = {:.3e}", max_dev(w.row_sums()));
    let _ = writeln!(s, "  max |col sum - 1| = {:.3e}", max_dev(w.col_sums()));
    let _ = writeln!(s, "  lambda_W = {lambda:.12}");
    if lambda >= 1.0 {
        let _ = writeln!(s, "  warning: lambda_W = 1, no consensus contraction");
    }
    let _ = writeln!(s, "problem: {} (n = {}, d = {})", p.name(), p.n(), p.dim());
    let _ = writeln!(s, "  L = {:.6e}", p.global_l());
    let _ = writeln!(s, "  sigma_bar^2 = {:.6e}", p.sigma_bar_sq());
    let h = &r.hyper;
    let _ = writeln!(
        s,
        "hyper: alpha = {:.6e}, beta = {:.6e}, mu = {:.6e}, b0 = {}, T = {}",
        h.alpha, h.beta, h.mu, h.b0, h.iterations
    );
    let _ = writeln!(s, "  mu_min = {:.6e}", report.mu_min);
    let _ = writeln!(s, "  alpha_max = {:.6e}", report.alpha_max);
    let _ = writeln!(s, "verdict: {}", report.verdict());
    Ok(s)
}

pub fn check_command(path: &Path) -> Result<String> {
    let cfg = load_config(path)?;
    check_report(&cfg, config_dir(path)).map_err(|e| match e {
        CliError::Config { .. } => {
            let text = std::fs::read_to_string(path).unwrap_or_default();
            anchor(e, &text, Some(path))
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::base_config;

    #[test]
    fn preset_config_is_inadmissible() {
        let text = check_report(&base_config(), None).unwrap();
        assert!(text.contains("verdict: inadmissible (β ≠ α²; α > 1/116"), "{text}");
        assert!(text.contains("lambda_W = 0.500000000000"), "{text}");
    }
}
