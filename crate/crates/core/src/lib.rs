//! Decentralized momentum-based stochastic successive convex approximation (D-MSSCA)
//! for composite non-convex problems over graphs.
//!
//! Nodes hold private stochastic objectives `u_i(x) = E[f_i(x, xi_i)]` and cooperate to
//! find a stationary point of `(1/n) sum_i u_i(x) + h(x)` over a convex set `X`,
//! exchanging iterates and gradient trackers with neighbours through a doubly
//! stochastic mixing matrix. Each round, a node minimizes a strongly convex surrogate,
//! takes a damped step toward its solution, mixes, and refreshes a hybrid
//! SGD/SARAH momentum gradient estimator.
//!
//! The [`diagnostics`] module measures consensus, progress, variance, and tracking
//! errors along a run and checks the pathwise inequalities they must satisfy.

// `!(a > b)` is used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod graph;
pub mod noise;
pub mod problem;
pub mod stacked;
pub mod surrogate;

pub use diagnostics::{aggregate_runs, lemma_monitor, measure, IterationTrace, MonitorSummary, RunTrace};
pub use engine::{
    baseline_step, check_stepsize_conditions, corollary_schedule, initialize, run, step, AdmissibilityReport,
    Algorithm, Baseline, HyperParams, NetworkState, NodeState, RunOutput, RunSettings, Schedule,
};
pub use error::{Error, Result};
pub use graph::{
    build_graph, build_mixing_matrix, consensus_contract_check, spectral_gap, Graph, MixingMatrix, MixingScheme,
    TopologyKind,
};
pub use problem::{
    brute_force_minimize, global_objective, make_lasso_problem, make_piecewise_cubic_problem,
    make_quadratic_consensus_problem, make_quadratic_problem, ProblemInstance,
};
pub use surrogate::{
    solve_subproblem_closed_form, solve_subproblem_iterative, stationarity_residual, SubproblemInputs,
    SubproblemSolution, SurrogateSpec,
};
