//! The decentralized momentum-based stochastic SCA iteration, two baselines, and the
//! step-size admissibility conditions.
//!
//! One synchronous round at iteration `t`, for every node `i`:
//!
//! 1. `x_hat_i` solves the strongly convex surrogate subproblem at `(x_i, z_i, y_i)`;
//! 2. `x_i+ = sum_j W_ij (x_j + alpha (x_hat_j - x_j))`;
//! 3. with one fresh sample `xi_i`,
//!    `z_i+ = grad f_i(x_i+, xi_i) + (1 - beta)(z_i - grad f_i(x_i, xi_i))`;
//! 4. `y_i+ = sum_j W_ij (y_j + z_j+ - z_j)`.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, IterationTrace, MonitorSummary};
use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::noise::{self, Stream};
use crate::problem::ProblemInstance;
use crate::surrogate::{self, SolverOptions, SubproblemInputs, SubproblemSolution};

/// How `alpha`, `beta` and `b0` are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Fixed,
    /// `alpha = T^(-1/3)`, `beta = alpha^2`, `b0 = ceil(T^(1/3))`.
    Corollary1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub b0: usize,
    pub iterations: usize,
    pub schedule: Schedule,
}

/// `(alpha, beta, b0)` from the horizon-dependent schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorollarySchedule {
    pub alpha: f64,
    pub beta: f64,
    pub b0: usize,
}

/// `T^(1/3)`, snapped to the nearest integer when `T` is a perfect cube.
fn cube_root(t: usize) -> f64 {
    let r = (t as f64).cbrt();
    if (r - r.round()).abs() < 1e-9 {
        r.round()
    } else {
        r
    }
}

pub fn corollary_schedule(iterations: usize) -> Result<CorollarySchedule> {
    if iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "T",
            reason: "must be at least 1".into(),
        });
    }
    let root = cube_root(iterations);
    let alpha = 1.0 / root;
    Ok(CorollarySchedule {
        alpha,
        beta: alpha * alpha,
        b0: root.ceil() as usize,
    })
}

impl HyperParams {
    pub fn fixed(alpha: f64, beta: f64, mu: f64, b0: usize, iterations: usize) -> Result<Self> {
        let hp = HyperParams {
            alpha,
            beta,
            mu,
            b0,
            iterations,
            schedule: Schedule::Fixed,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn corollary(iterations: usize, mu: f64) -> Result<Self> {
        let s = corollary_schedule(iterations)?;
        let hp = HyperParams {
            alpha: s.alpha,
            beta: s.beta,
            mu,
            b0: s.b0,
            iterations,
            schedule: Schedule::Corollary1,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta", format!("must lie in (0, 1], got {}", self.beta));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu", format!("must be positive, got {}", self.mu));
        }
        if self.b0 == 0 {
            return bad("b0", "must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("T", "must be at least 1".into());
        }
        if self.schedule == Schedule::Corollary1 {
            let s = corollary_schedule(self.iterations)?;
            if (s.alpha, s.beta, s.b0) != (self.alpha, self.beta, self.b0) {
                return bad("schedule", "corollary1 values do not match T".into());
            }
        }
        Ok(())
    }
}

/// Result of checking the step-size conditions of the convergence theorem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub alpha_max: f64,
    pub mu_min: f64,
    pub violations: Vec<String>,
}

impl AdmissibilityReport {
    pub fn verdict(&self) -> String {
        if self.admissible {
            "admissible".into()
        } else {
            format!("inadmissible ({})", self.violations.join("; "))
        }
    }
}

/// Evaluates `mu >= (6 sqrt(3) L / n)(1 + 8 lambda^2 / (1 - lambda^2))`, `beta = alpha^2`,
/// and `alpha <= min{1/116, (1-lambda^2)^2 / (432 lambda^2), ((1-lambda^2)/(24 lambda))^(2/3),
/// mu/(6L), mu^2 (1-lambda^2)^2 / (48 L^2 lambda^2)}`.
///
/// Terms with `lambda^2` in a denominator are vacuous when `lambda = 0`.
pub fn check_stepsize_conditions(hp: &HyperParams, lambda_w: f64, l: f64, n: usize) -> AdmissibilityReport {
    let lam2 = lambda_w * lambda_w;
    let gap = 1.0 - lam2;
    let mut violations = Vec::new();

    if lambda_w >= 1.0 {
        violations.push("λ_W ≥ 1: no consensus contraction".to_string());
    }
    let mu_min = if gap > 0.0 {
        6.0 * 3f64.sqrt() * l / n as f64 * (1.0 + 8.0 * lam2 / gap)
    } else {
        f64::INFINITY
    };

    let mut bounds: Vec<(&str, f64)> = vec![("1/116", 1.0 / 116.0), ("μ/(6L)", hp.mu / (6.0 * l))];
    if lambda_w > 0.0 {
        let g = gap.max(0.0);
        bounds.push(("(1−λ_W²)²/(432λ_W²)", g * g / (432.0 * lam2)));
        bounds.push(("((1−λ_W²)/(24λ_W))^(2/3)", (g / (24.0 * lambda_w)).powf(2.0 / 3.0)));
        bounds.push(("μ²(1−λ_W²)²/(48L²λ_W²)", hp.mu * hp.mu * g * g / (48.0 * l * l * lam2)));
    }
    let alpha_max = bounds.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);

    if (hp.beta - hp.alpha * hp.alpha).abs() > 1e-12 * hp.alpha.powi(2).max(1e-300) {
        violations.push("β ≠ α²".to_string());
    }
    if hp.beta >= 1.0 {
        violations.push("β ≥ 1".to_string());
    }
    for (name, bound) in &bounds {
        if hp.alpha > *bound {
            violations.push(format!("α > {name}"));
        }
    }
    if hp.mu < mu_min {
        violations.push(format!("μ < μ_min = {mu_min:.6e}"));
    }
    AdmissibilityReport {
        admissible: violations.is_empty(),
        alpha_max,
        mu_min,
        violations,
    }
}

/// Local variables of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub x: DVector<f64>,
    /// Last subproblem solution.
    pub x_hat: DVector<f64>,
    /// Hybrid momentum gradient estimator.
    pub z: DVector<f64>,
    /// Tracker of the network-average gradient estimator.
    pub y: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub t: usize,
    pub nodes: Vec<NodeState>,
    pub seed: u64,
    /// Stochastic gradient evaluations so far; the paired evaluation counts twice.
    pub sfo_calls: u64,
    /// Fresh samples drawn so far; the paired evaluation counts once.
    pub samples_drawn: u64,
}

impl NetworkState {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn xs(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.y.clone()).collect()
    }

    pub fn zs(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.z.clone()).collect()
    }
}

/// Common initial point, with `z_i = y_i` set to the average of `b0` sampled gradients.
pub fn initialize(p: &ProblemInstance, hp: &HyperParams, x0: &DVector<f64>, seed: u64) -> Result<NetworkState> {
    if x0.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x0.len(),
        });
    }
    if !p.feasible().contains(x0) {
        return Err(Error::Infeasible);
    }
    if hp.b0 == 0 {
        return Err(Error::InvalidParameter {
            name: "b0",
            reason: "must be at least 1".into(),
        });
    }
    let nodes = (0..p.n())
        .map(|i| {
            let f = p.local(i);
            let mut z = DVector::zeros(p.dim());
            for r in 0..hp.b0 {
                let xi = noise::standard_normals(seed, Stream::Init(r as u64), i, 1, f.noise_dim());
                z += f.sample_gradient(x0, &xi);
            }
            z /= hp.b0 as f64;
            NodeState {
                x: x0.clone(),
                x_hat: x0.clone(),
                y: z.clone(),
                z,
            }
        })
        .collect();
    let draws = (p.n() * hp.b0) as u64;
    Ok(NetworkState {
        t: 1,
        nodes,
        seed,
        sfo_calls: draws,
        samples_drawn: draws,
    })
}

/// The next state plus the subproblem solutions computed at the current iteration.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub next: NetworkState,
    pub solutions: Vec<SubproblemSolution>,
}

fn solve_all(
    state: &NetworkState,
    p: &ProblemInstance,
    mu: f64,
    opts: &SolverOptions,
) -> Result<Vec<SubproblemSolution>> {
    state
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let input = SubproblemInputs {
                x_t: &node.x,
                z_t: &node.z,
                y_t: &node.y,
                mu,
                h: p.regularizer(),
                feasible: p.feasible(),
            };
            surrogate::solve_subproblem(&input, opts).map_err(|e| Error::Subproblem {
                node: i,
                t: state.t,
                source: Box::new(e),
            })
        })
        .collect()
}

fn check_state(state: &NetworkState, p: &ProblemInstance, w: &MixingMatrix) -> Result<()> {
    if state.n() != p.n() || w.n() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            got: state.n().min(w.n()),
        });
    }
    Ok(())
}

fn momentum_round(
    state: &NetworkState,
    p: &ProblemInstance,
    w: &MixingMatrix,
    alpha: f64,
    beta: f64,
    mu: f64,
    opts: &SolverOptions,
) -> Result<StepOutput> {
    check_state(state, p, w)?;
    let t = state.t;
    let solutions = solve_all(state, p, mu, opts)?;

    let moved: Vec<DVector<f64>> = state
        .nodes
        .iter()
        .zip(&solutions)
        .map(|(node, sol)| &node.x + (&sol.x_hat - &node.x) * alpha)
        .collect();
    let x_next = w.mix(&moved);

    let paired = beta != 1.0;
    let z_next: Vec<DVector<f64>> = state
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let f = p.local(i);
            let xi = noise::standard_normals(state.seed, Stream::Fresh, i, t + 1, f.noise_dim());
            let fresh = f.sample_gradient(&x_next[i], &xi);
            if paired {
                fresh + (&node.z - f.sample_gradient(&node.x, &xi)) * (1.0 - beta)
            } else {
                fresh
            }
        })
        .collect();

    let tracked: Vec<DVector<f64>> = state
        .nodes
        .iter()
        .zip(&z_next)
        .map(|(node, z)| &node.y + z - &node.z)
        .collect();
    let y_next = w.mix(&tracked);

    let nodes = x_next
        .into_iter()
        .zip(z_next)
        .zip(y_next)
        .zip(&solutions)
        .map(|(((x, z), y), sol)| NodeState {
            x,
            x_hat: sol.x_hat.clone(),
            z,
            y,
        })
        .collect();
    let n = state.n() as u64;
    Ok(StepOutput {
        next: NetworkState {
            t: t + 1,
            nodes,
            seed: state.seed,
            sfo_calls: state.sfo_calls + n * if paired { 2 } else { 1 },
            samples_drawn: state.samples_drawn + n,
        },
        solutions,
    })
}

/// One synchronous round of the momentum-based method.
pub fn step(state: &NetworkState, p: &ProblemInstance, hp: &HyperParams, w: &MixingMatrix) -> Result<StepOutput> {
    step_with(state, p, hp, w, &SolverOptions::default())
}

pub fn step_with(
    state: &NetworkState,
    p: &ProblemInstance,
    hp: &HyperParams,
    w: &MixingMatrix,
    opts: &SolverOptions,
) -> Result<StepOutput> {
    momentum_round(state, p, w, hp.alpha, hp.beta, hp.mu, opts)
}

/// Reference methods for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Gradient tracking with plain stochastic gradients (`beta = 1`).
    Dsgt,
    /// `x_i+ = prox-project(sum_j W_ij x_j - alpha grad f_i(x_i, xi), alpha)`.
    ProxDsgd,
}

pub fn baseline_step(
    state: &NetworkState,
    p: &ProblemInstance,
    hp: &HyperParams,
    w: &MixingMatrix,
    kind: Baseline,
) -> Result<StepOutput> {
    match kind {
        Baseline::Dsgt => momentum_round(state, p, w, hp.alpha, 1.0, hp.mu, &SolverOptions::default()),
        Baseline::ProxDsgd => prox_dsgd_round(state, p, w, hp.alpha),
    }
}

/// Proximal decentralized SGD. Its subproblem solution at `t` is the new iterate, with the
/// certificate `(v - x+)/alpha` from the proximal optimality condition.
fn prox_dsgd_round(state: &NetworkState, p: &ProblemInstance, w: &MixingMatrix, alpha: f64) -> Result<StepOutput> {
    check_state(state, p, w)?;
    let t = state.t;
    let mixed = w.mix(&state.xs());
    let mut nodes = Vec::with_capacity(state.n());
    let mut solutions = Vec::with_capacity(state.n());
    for (i, node) in state.nodes.iter().enumerate() {
        let f = p.local(i);
        let xi = noise::standard_normals(state.seed, Stream::Fresh, i, t + 1, f.noise_dim());
        let g = f.sample_gradient(&node.x, &xi);
        let v = &mixed[i] - &g * alpha;
        let (hk, xk) = (p.regularizer().kind(), p.feasible().kind());
        if !surrogate::prox_then_project_is_exact(hk, xk) {
            return Err(Error::Subproblem {
                node: i,
                t,
                source: Box::new(Error::Unsupported(format!("prox-project for {hk:?} with {xk:?}"))),
            });
        }
        let x = p.feasible().project(&p.regularizer().prox(&v, alpha));
        let w_hat = (&v - &x) / alpha;
        solutions.push(SubproblemSolution {
            x_hat: x.clone(),
            w_hat,
            inner_iterations: 0,
        });
        nodes.push(NodeState {
            x_hat: x.clone(),
            x,
            y: g.clone(),
            z: g,
        });
    }
    let n = state.n() as u64;
    Ok(StepOutput {
        next: NetworkState {
            t: t + 1,
            nodes,
            seed: state.seed,
            sfo_calls: state.sfo_calls + n,
            samples_drawn: state.samples_drawn + n,
        },
        solutions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Dmssca,
    Dsgt,
    ProxDsgd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dmssca => "dmssca",
            Algorithm::Dsgt => "dsgt",
            Algorithm::ProxDsgd => "prox_dsgd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    /// Record diagnostics when `t % trace_every == 0`.
    pub trace_every: usize,
    pub algorithm: Algorithm,
    pub solver: SolverOptions,
    /// Record node iterates at trace points.
    pub record_trajectory: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            trace_every: 1,
            algorithm: Algorithm::Dmssca,
            solver: SolverOptions::default(),
            record_trajectory: true,
        }
    }
}

/// The output iterate, drawn uniformly over all `(node, iteration)` subproblem solutions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectedOutput {
    pub node: usize,
    pub t: usize,
    pub x_hat: Vec<f64>,
    /// Stationarity residual of the selected solution.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub node: usize,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub selected: SelectedOutput,
    pub trace: Vec<IterationTrace>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_state: NetworkState,
    pub monitor: MonitorSummary,
    /// `(1/T) sum_t gap_mean(t)`: the mean-squared stationary gap of this sample path,
    /// which is also the expected gap of the selected output given the path.
    pub gap_time_average: f64,
    /// `(1/T) sum_t ||x_hat^t - x^t||^2` over the stacked vector.
    pub avg_progress_stacked: f64,
    /// `(1/T) sum_t (1/n) ||x_hat^t - x^t||^2`.
    pub avg_progress_per_node: f64,
}

/// Uniform `(node, t)` over `n * T` cells from the dedicated selection stream.
pub fn select_output_cell(seed: u64, n: usize, iterations: usize) -> (usize, usize) {
    let mut rng = noise::rng(seed, Stream::Selection, 0, 0);
    let idx = rng.random_range(0..n * iterations);
    (idx % n, idx / n + 1)
}

/// Runs `hp.iterations` rounds from the common point `x0`.
pub fn run(
    p: &ProblemInstance,
    hp: &HyperParams,
    w: &MixingMatrix,
    x0: &DVector<f64>,
    seed: u64,
    settings: &RunSettings,
) -> Result<RunOutput> {
    hp.validate()?;
    if settings.trace_every == 0 {
        return Err(Error::InvalidParameter {
            name: "trace_every",
            reason: "must be at least 1".into(),
        });
    }
    let n = p.n();
    let big_t = hp.iterations;
    let (sel_node, sel_t) = select_output_cell(seed, n, big_t);
    let monitored = settings.algorithm != Algorithm::ProxDsgd;

    let mut state = initialize(p, hp, x0, seed)?;
    let mut trace = Vec::with_capacity(big_t / settings.trace_every);
    let mut trajectory = Vec::new();
    let mut monitor = MonitorSummary::default();
    let mut prev: Option<IterationTrace> = None;
    let mut selected = None;
    let (mut gap_sum, mut progress_sum) = (0.0, 0.0);

    for t in 1..=big_t {
        debug_assert_eq!(state.t, t);
        let out = match settings.algorithm {
            Algorithm::Dmssca => step_with(&state, p, hp, w, &settings.solver)?,
            Algorithm::Dsgt => momentum_round(&state, p, w, hp.alpha, 1.0, hp.mu, &settings.solver)?,
            Algorithm::ProxDsgd => prox_dsgd_round(&state, p, w, hp.alpha)?,
        };
        let record = diagnostics::measure(&state, &out.solutions, p);
        gap_sum += record.gap_mean;
        progress_sum += record.delta_sq_mean;

        monitor.check_feasibility(&state, &out.solutions, p);
        if monitored {
            let rows = diagnostics::lemma_monitor(prev.as_ref(), &record, &state, hp.alpha, w);
            monitor.absorb(t, &rows);
        }
        if t == sel_t {
            let sol = &out.solutions[sel_node];
            selected = Some(SelectedOutput {
                node: sel_node,
                t,
                x_hat: sol.x_hat.iter().copied().collect(),
                gap: surrogate::stationarity_residual(p, sol),
            });
        }
        if t % settings.trace_every == 0 {
            if settings.record_trajectory {
                trajectory.extend(state.nodes.iter().enumerate().map(|(i, node)| TrajectoryPoint {
                    t,
                    node: i,
                    x: node.x.iter().copied().collect(),
                }));
            }
            trace.push(record.clone());
        }
        prev = Some(record);
        state = out.next;
    }

    Ok(RunOutput {
        selected: selected.expect("selection cell lies within the horizon"),
        trace,
        trajectory,
        final_state: state,
        monitor,
        gap_time_average: gap_sum / big_t as f64,
        avg_progress_stacked: progress_sum * n as f64 / big_t as f64,
        avg_progress_per_node: progress_sum / big_t as f64,
    })
}
