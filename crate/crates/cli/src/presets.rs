use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dmssca::engine::Schedule;
use dmssca::problem::make_piecewise_cubic_problem;
use nalgebra::DVector;

use crate::config::{HyperConfig, MixingConfig, ProblemConfig, RunConfig, TopologyConfig, TopologyName, X0Spec};
use crate::error::{CliError, Result};
use crate::runner::{execute, fmt_f64};

/// Initial points for the fig1 preset.
pub const FIG1_STARTS: [f64; 5] = [-3.5, -1.5, 0.0, 1.5, 3.5];
pub const PRESET_ITERATIONS: usize = 2000;
pub const PRESET_REPLICATES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl std::str::FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            other => Err(CliError::UnknownPreset(other.to_string())),
        }
    }
}

/// The scalar example on the complete 3-node graph with `lambda_W = 0.5`,
/// `alpha = 0.8`, `beta = 0.16`, `mu = 5000`.
pub fn base_config() -> RunConfig {
    RunConfig {
        problem: ProblemConfig::PiecewiseCubic3Node { box_radius: None },
        topology: TopologyConfig {
            kind: TopologyName::Complete,
            n: 3,
            edges: None,
            edge_file: None,
        },
        mixing: MixingConfig::LazyUniform { laziness: 0.5 },
        hyper: HyperConfig {
            schedule: Schedule::Fixed,
            alpha: Some(0.8),
            beta: Some(0.16),
            mu: 5000.0,
            b0: Some(1),
            iterations: PRESET_ITERATIONS,
        },
        algorithm: Default::default(),
        x0: X0Spec::Named("zeros".into()),
        seed: 1,
        replicates: PRESET_REPLICATES,
        trace_every: 10,
        output_dir: PathBuf::from("out"),
    }
}

/// `(tag, config)` pairs; tagged runs go to subdirectories named by the tag.
pub fn preset_configs(preset: Preset) -> Vec<(Option<String>, RunConfig)> {
    match preset {
        Preset::Fig1 => FIG1_STARTS
            .iter()
            .map(|&x0| {
                let mut c = base_config();
                c.x0 = X0Spec::Scalar(x0);
                (Some(format!("x0={x0}")), c)
            })
            .collect(),
        Preset::Fig2 => {
            let mut c = base_config();
            c.problem = ProblemConfig::PiecewiseCubic3Node { box_radius: Some(2.25) };
            c.trace_every = 1;
            vec![(None, c)]
        }
        Preset::Fig3 => {
            let mut complete = base_config();
            complete.mixing = MixingConfig::Metropolis;
            let mut tree = complete.clone();
            tree.topology.kind = TopologyName::Path;
            vec![
                (Some("topology=complete".into()), complete),
                (Some("topology=tree".into()), tree),
            ]
        }
        Preset::Fig4 => Vec::new(),
    }
}

/// Noise-free `U` on `[-4, 4]` with step 0.01.
pub fn tabulate_u() -> Result<Vec<(f64, f64)>> {
    let p = make_piecewise_cubic_problem(None)?;
    (0..=800)
        .map(|k| {
            let x = (k as f64 - 400.0) / 100.0;
            Ok((x, p.global_objective(&DVector::from_element(1, x))?))
        })
        .collect()
}

pub fn run_preset(preset: Preset, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    if preset == Preset::Fig4 {
        let path = out.join("ufunc.csv");
        let mut text = String::from("x,U\n");
        for (x, u) in tabulate_u()? {
            text.push_str(&format!("{},{}\n", fmt_f64(x), fmt_f64(u)));
        }
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        return Ok(vec![path]);
    }
    let mut dirs = Vec::new();
    for (tag, mut cfg) in preset_configs(preset) {
        let dir = match &tag {
            Some(t) => out.join(t),
            None => out.to_path_buf(),
        };
        cfg.output_dir = dir.clone();
        let resolved = cfg.resolve(None)?;
        execute(&cfg, &resolved, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u_table_endpoints() {
        let t = tabulate_u().unwrap();
        assert_eq!(t.len(), 801);
        assert_eq!(t[0].0, -4.0);
        assert_eq!(t[800].0, 4.0);
        assert_eq!(t[400], (0.0, 0.0));
    }

    #[test]
    fn preset_configs_resolve() {
        for p in [Preset::Fig1, Preset::Fig2, Preset::Fig3] {
            for (_, c) in preset_configs(p) {
                c.resolve(None).unwrap();
            }
        }
        let fig3 = preset_configs(Preset::Fig3);
        let lw: Vec<f64> = fig3
            .iter()
            .map(|(_, c)| c.resolve(None).unwrap().mixing.lambda_w())
            .collect();
        assert!(lw[0].abs() < 1e-10 && (lw[1] - 2.0 / 3.0).abs() < 1e-10, "{lw:?}");
    }

    #[test]
    fn unknown_preset_exits_two() {
        let e = "fig9".parse::<Preset>().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
