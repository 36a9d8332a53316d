use std::fmt;
use std::path::{Path, PathBuf};

use dmssca::engine::{Algorithm, HyperParams, RunSettings, Schedule};
use dmssca::graph::{build_graph, build_mixing_matrix, Graph, MixingMatrix, MixingScheme, TopologyKind};
use dmssca::noise::{self, Stream};
use dmssca::problem::{
    make_lasso_problem, make_piecewise_cubic_problem, make_quadratic_consensus_problem, ProblemInstance,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// A single JSON experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub mixing: MixingConfig,
    pub hyper: HyperConfig,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub x0: X0Spec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default = "one")]
    pub trace_every: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// The three-node scalar example with quartic interiors and affine tails.
    #[serde(rename = "piecewise_cubic_3node")]
    PiecewiseCubic3Node {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        box_radius: Option<f64>,
    },
    /// Random strongly convex quadratics.
    QuadraticConsensus {
        n: usize,
        d: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise_variance: f64,
    },
    /// Local least squares with an l1 penalty and optional box.
    LassoLeastSquares {
        n: usize,
        d: usize,
        m: usize,
        #[serde(default)]
        seed: u64,
        lambda1: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<[f64; 2]>,
        #[serde(default)]
        noise_variance: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    Complete,
    Ring,
    Path,
    Star,
    BalancedBinaryTree,
    /// Explicit `edges` or `edge_file`.
    Custom,
}

impl TopologyName {
    fn builtin(self) -> Option<TopologyKind> {
        match self {
            TopologyName::Complete => Some(TopologyKind::Complete),
            TopologyName::Ring => Some(TopologyKind::Ring),
            TopologyName::Path => Some(TopologyKind::Path),
            TopologyName::Star => Some(TopologyKind::Star),
            TopologyName::BalancedBinaryTree => Some(TopologyKind::BalancedBinaryTree),
            TopologyName::Custom => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyName,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Edge-list file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixingConfig {
    #[default]
    Metropolis,
    LazyUniform {
        laziness: f64,
    },
    /// Explicit row-major weights.
    Custom {
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(default = "fixed")]
    pub schedule: Schedule,
    /// Required for the fixed schedule; derived from `iterations` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<usize>,
    pub iterations: usize,
}

fn fixed() -> Schedule {
    Schedule::Fixed
}

/// Common starting point: `"zeros"`, `"uniform(lo,hi)"`, a scalar broadcast to every
/// coordinate, or an explicit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Scalar(f64),
    Vector(Vec<f64>),
    Named(String),
}

impl Default for X0Spec {
    fn default() -> Self {
        X0Spec::Named("zeros".into())
    }
}

impl fmt::Display for X0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            X0Spec::Scalar(v) => write!(f, "{v}"),
            X0Spec::Vector(v) => write!(f, "{v:?}"),
            X0Spec::Named(s) => f.write_str(s),
        }
    }
}

enum X0Rule {
    Zeros,
    Uniform(f64, f64),
    Point(Vec<f64>),
    Broadcast(f64),
}

fn parse_x0(spec: &X0Spec) -> std::result::Result<X0Rule, String> {
    match spec {
        X0Spec::Scalar(v) if v.is_finite() => Ok(X0Rule::Broadcast(*v)),
        X0Spec::Scalar(v) => Err(format!("must be finite, got {v}")),
        X0Spec::Vector(v) if v.iter().all(|c| c.is_finite()) => Ok(X0Rule::Point(v.clone())),
        X0Spec::Vector(_) => Err("coordinates must be finite".into()),
        X0Spec::Named(s) => {
            let s = s.trim();
            if s == "zeros" {
                return Ok(X0Rule::Zeros);
            }
            let inner = s
                .strip_prefix("uniform(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| format!("expected \"zeros\" or \"uniform(lo,hi)\", got {s:?}"))?;
            let parts: Vec<_> = inner.split(',').map(str::trim).collect();
            let bounds: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
            match bounds[..] {
                [lo, hi] if parts.len() == 2 && lo < hi && lo.is_finite() && hi.is_finite() => {
                    Ok(X0Rule::Uniform(lo, hi))
                }
                _ => Err(format!("malformed uniform bounds in {s:?}")),
            }
        }
    }
}

/// A config resolved into core objects.
pub struct Resolved {
    pub problem: ProblemInstance,
    pub graph: Graph,
    pub mixing: MixingMatrix,
    pub hyper: HyperParams,
    pub settings: RunSettings,
    x0: X0Rule,
}

impl Resolved {
    /// Starting point for the replicate with this seed.
    pub fn x0_for(&self, seed: u64) -> DVector<f64> {
        let d = self.problem.dim();
        match &self.x0 {
            X0Rule::Zeros => DVector::zeros(d),
            X0Rule::Broadcast(v) => DVector::from_element(d, *v),
            X0Rule::Point(v) => DVector::from_column_slice(v),
            X0Rule::Uniform(lo, hi) => {
                let mut rng = noise::rng(seed, Stream::Start, 0, 0);
                DVector::from_fn(d, |_, _| rng.random_range(*lo..*hi))
            }
        }
    }
}

fn invalid(field: &str, message: impl fmt::Display) -> CliError {
    CliError::Config {
        path: None,
        line: None,
        column: None,
        field: field.into(),
        message: message.to_string(),
    }
}

/// Parses a config document; errors carry the line, column, and field path.
pub fn parse_config(text: &str, path: Option<&Path>) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: std::result::Result<RunConfig, _> = serde_path_to_error::deserialize(de);
    let cfg = parsed.map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let (line, column) = if inner.line() > 0 {
            (Some(inner.line()), Some(inner.column()))
        } else {
            (None, None)
        };
        let message = strip_position(&inner.to_string());
        anchor(
            CliError::Config {
                path: None,
                line,
                column,
                field,
                message,
            },
            text,
            path,
        )
    })?;
    cfg.validate().map_err(|e| anchor(e, text, path))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_config(&text, Some(path))
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

/// Fills the path and, for errors without a position, the line of the offending field.
pub fn anchor(err: CliError, text: &str, path: Option<&Path>) -> CliError {
    match err {
        CliError::Config {
            line,
            column,
            field,
            message,
            ..
        } => {
            let line = line.or_else(|| locate_field(text, &field));
            CliError::Config {
                path: path.map(Path::to_path_buf),
                line,
                column,
                field,
                message,
            }
        }
        other => other,
    }
}

/// Line of the last key in a dotted field path, found by scanning keys in order.
fn locate_field(text: &str, field: &str) -> Option<usize> {
    let mut pos = 0;
    let mut found = None;
    for seg in field
        .split('.')
        .filter(|s| !s.is_empty() && s.parse::<usize>().is_err())
    {
        let key = format!("\"{seg}\"");
        let at = text[pos..].find(&key)? + pos;
        found = Some(at);
        pos = at + key.len();
    }
    found.map(|at| text[..at].matches('\n').count() + 1)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    /// Field-level checks that do not need the problem or graph built.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(invalid("trace_every", "must be at least 1"));
        }
        if self.hyper.iterations == 0 {
            return Err(invalid("hyper.iterations", "must be at least 1"));
        }
        if !self.hyper.iterations.is_multiple_of(self.trace_every) {
            return Err(invalid(
                "trace_every",
                format!("must divide hyper.iterations = {}", self.hyper.iterations),
            ));
        }
        parse_x0(&self.x0).map_err(|m| invalid("x0", m))?;
        if let Some(n) = self.problem_nodes() {
            if n != self.topology.n {
                return Err(invalid(
                    "topology.n",
                    format!("is {} but the problem has {n} nodes", self.topology.n),
                ));
            }
        }
        match (self.topology.kind, &self.topology.edges, &self.topology.edge_file) {
            (TopologyName::Custom, None, None) => {
                return Err(invalid("topology.kind", "custom topology needs `edges` or `edge_file`"))
            }
            (TopologyName::Custom, Some(_), Some(_)) => {
                return Err(invalid(
                    "topology.edge_file",
                    "give either `edges` or `edge_file`, not both",
                ))
            }
            (TopologyName::Custom, _, _) => {}
            (_, Some(_), _) | (_, _, Some(_)) => {
                return Err(invalid("topology.kind", "explicit edges require kind \"custom\""))
            }
            _ => {}
        }
        Ok(())
    }

    fn problem_nodes(&self) -> Option<usize> {
        match &self.problem {
            ProblemConfig::PiecewiseCubic3Node { .. } => Some(3),
            ProblemConfig::QuadraticConsensus { n, .. } | ProblemConfig::LassoLeastSquares { n, .. } => Some(*n),
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of everything that shapes the law of a replicate: excludes the seed, the
    /// replicate count, and the output directory.
    pub fn distribution_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.replicates = 1;
        c.output_dir = PathBuf::new();
        c.config_hash()
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let h = &self.hyper;
        let hp = match h.schedule {
            Schedule::Fixed => {
                let alpha = h
                    .alpha
                    .ok_or_else(|| invalid("hyper.alpha", "required for the fixed schedule"))?;
                let beta = h
                    .beta
                    .ok_or_else(|| invalid("hyper.beta", "required for the fixed schedule"))?;
                HyperParams {
                    alpha,
                    beta,
                    mu: h.mu,
                    b0: h.b0.unwrap_or(1),
                    iterations: h.iterations,
                    schedule: h.schedule,
                }
            }
            Schedule::Corollary1 => {
                let s = dmssca::engine::corollary_schedule(h.iterations).map_err(|e| invalid("hyper.iterations", e))?;
                let mismatch = |given: Option<f64>, want: f64| given.is_some_and(|g| (g - want).abs() > 1e-12 * want);
                if mismatch(h.alpha, s.alpha) {
                    return Err(invalid("hyper.alpha", format!("corollary1 fixes alpha = {}", s.alpha)));
                }
                if mismatch(h.beta, s.beta) {
                    return Err(invalid("hyper.beta", format!("corollary1 fixes beta = {}", s.beta)));
                }
                if h.b0.is_some_and(|b| b != s.b0) {
                    return Err(invalid("hyper.b0", format!("corollary1 fixes b0 = {}", s.b0)));
                }
                HyperParams {
                    alpha: s.alpha,
                    beta: s.beta,
                    mu: h.mu,
                    b0: s.b0,
                    iterations: h.iterations,
                    schedule: h.schedule,
                }
            }
        };
        hp.validate().map_err(|e| match e {
            dmssca::Error::InvalidParameter { name, reason } => {
                let field = match name {
                    "T" => "hyper.iterations".to_string(),
                    other => format!("hyper.{other}"),
                };
                invalid(&field, reason)
            }
            other => invalid("hyper", other),
        })?;
        Ok(hp)
    }

    pub fn build_problem(&self) -> Result<ProblemInstance> {
        let p = match &self.problem {
            ProblemConfig::PiecewiseCubic3Node { box_radius } => make_piecewise_cubic_problem(*box_radius),
            ProblemConfig::QuadraticConsensus {
                n,
                d,
                seed,
                noise_variance,
            } => make_quadratic_consensus_problem(*n, *d, *seed, *noise_variance),
            ProblemConfig::LassoLeastSquares {
                n,
                d,
                m,
                seed,
                lambda1,
                bounds,
                noise_variance,
            } => make_lasso_problem(
                *n,
                *d,
                *m,
                *seed,
                *lambda1,
                bounds.map(|[lo, hi]| (lo, hi)),
                *noise_variance,
            ),
        };
        p.map_err(|e| invalid("problem", e))
    }

    pub fn build_graph(&self, base_dir: Option<&Path>) -> Result<Graph> {
        let t = &self.topology;
        let g = match (t.kind.builtin(), &t.edges, &t.edge_file) {
            (Some(kind), _, _) => build_graph(kind, t.n).map_err(|e| invalid("topology", e))?,
            (None, Some(edges), _) => {
                let pairs: Vec<_> = edges.iter().map(|[a, b]| (*a, *b)).collect();
                Graph::from_edges(t.n, &pairs).map_err(|e| invalid("topology.edges", e))?
            }
            (None, None, Some(file)) => {
                let full = base_dir.map(|b| b.join(file)).unwrap_or_else(|| file.clone());
                Graph::load_edge_list(&full)
                    .map_err(|e| invalid("topology.edge_file", format!("{}: {e}", full.display())))?
            }
            (None, None, None) => return Err(invalid("topology.kind", "custom topology needs `edges` or `edge_file`")),
        };
        if g.n() != t.n {
            return Err(invalid(
                "topology.n",
                format!("is {} but the edge list has {} nodes", t.n, g.n()),
            ));
        }
        Ok(g)
    }

    pub fn build_mixing(&self, g: &Graph) -> Result<MixingMatrix> {
        let res = match &self.mixing {
            MixingConfig::Metropolis => build_mixing_matrix(g, MixingScheme::Metropolis),
            MixingConfig::LazyUniform { laziness } => {
                build_mixing_matrix(g, MixingScheme::LazyUniform { laziness: *laziness })
            }
            MixingConfig::Custom { weights } => {
                let n = g.n();
                if weights.len() != n || weights.iter().any(|r| r.len() != n) {
                    return Err(invalid("mixing.weights", format!("must be a {n}x{n} matrix")));
                }
                MixingMatrix::new(DMatrix::from_fn(n, n, |i, j| weights[i][j]), Some(g))
            }
        };
        res.map_err(|e| invalid("mixing", e))
    }

    /// Builds every core object; `base_dir` anchors relative edge files.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Resolved> {
        self.validate()?;
        let problem = self.build_problem()?;
        let graph = self.build_graph(base_dir)?;
        let mixing = self.build_mixing(&graph)?;
        let hyper = self.hyper_params()?;
        let x0 = parse_x0(&self.x0).map_err(|m| invalid("x0", m))?;
        if let X0Rule::Point(v) = &x0 {
            if v.len() != problem.dim() {
                return Err(invalid(
                    "x0",
                    format!("has {} coordinates, the problem has {}", v.len(), problem.dim()),
                ));
            }
        }
        let settings = RunSettings {
            trace_every: self.trace_every,
            algorithm: self.algorithm,
            ..RunSettings::default()
        };
        Ok(Resolved {
            problem,
            graph,
            mixing,
            hyper,
            settings,
            x0,
        })
    }
}
