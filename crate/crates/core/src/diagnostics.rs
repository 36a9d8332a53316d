//! Per-iteration error quantities, pathwise monitors of the basic lemmas, and
//! Monte-Carlo aggregation across seeds.
//!
//! Expectation-valued quantities are recorded as single-path realizations (`*_hat`);
//! their expectations are estimated by [`aggregate_runs`]. All gradients of `u` use the
//! exact expected-gradient oracle.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::engine::NetworkState;
use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::problem::ProblemInstance;
use crate::stacked;
use crate::surrogate::{self, SubproblemSolution};

/// Relative tolerance for the tracking identity `mean(y) = mean(z)`.
pub const TRACKING_TOL: f64 = 1e-9;
/// Absolute slack for the contraction inequalities.
pub const CONTRACTION_SLACK: f64 = 1e-12;
/// Absolute slack for feasibility of mixed iterates.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationTrace {
    pub t: usize,
    /// `||x - 1 (x) mean(x)||^2`.
    pub theta_sq: f64,
    /// `(1/n) ||x_hat - x||^2`.
    pub delta_sq_mean: f64,
    /// `||mean(z) - (1/n) sum_i grad u_i(x_i)||^2`.
    pub phi_hat: f64,
    /// `sum_i ||z_i - grad u_i(x_i)||^2`.
    pub upsilon_hat: f64,
    /// `||y - 1 (x) mean(y)||^2`.
    pub eps_hat: f64,
    /// `(1/n) sum_i ||grad u(x_hat_i) + w_hat_i||^2`.
    pub gap_mean: f64,
    /// Noise-free `U(mean(x))`.
    pub u_bar: f64,
    pub sfo_calls: u64,
}

impl IterationTrace {
    pub const FIELDS: [&'static str; 8] = [
        "theta_sq",
        "delta_sq_mean",
        "phi_hat",
        "upsilon_hat",
        "eps_hat",
        "gap_mean",
        "U_bar",
        "sfo_calls",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.theta_sq,
            self.delta_sq_mean,
            self.phi_hat,
            self.upsilon_hat,
            self.eps_hat,
            self.gap_mean,
            self.u_bar,
            self.sfo_calls as f64,
        ]
    }
}

/// Measures the state at iteration `t` together with the subproblem solutions computed
/// from it.
pub fn measure(state: &NetworkState, solutions: &[SubproblemSolution], p: &ProblemInstance) -> IterationTrace {
    let n = state.n();
    let xs = state.xs();
    let grads: Vec<DVector<f64>> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| p.local(i).expected_gradient(x))
        .collect();
    let zs = state.zs();

    let delta_sq: f64 = xs
        .iter()
        .zip(solutions)
        .map(|(x, s)| (&s.x_hat - x).norm_squared())
        .sum();
    let gap: f64 = solutions.iter().map(|s| surrogate::stationarity_residual(p, s)).sum();
    let x_bar = stacked::mean(&xs);

    IterationTrace {
        t: state.t,
        theta_sq: stacked::deviation_sq(&xs),
        delta_sq_mean: delta_sq / n as f64,
        phi_hat: (stacked::mean(&zs) - stacked::mean(&grads)).norm_squared(),
        upsilon_hat: stacked::diff_norm_sq(&zs, &grads),
        eps_hat: stacked::deviation_sq(&state.ys()),
        gap_mean: gap / n as f64,
        u_bar: p.smooth_value(&x_bar) + p.regularizer().value(&x_bar),
        sfo_calls: state.sfo_calls,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// `theta_t^2 <= 2 lambda^2 theta_{t-1}^2 + 2 alpha^2 lambda^2 ||delta_{t-1}||^2`.
    ConsensusRecursion,
    /// `||(W (x) I) x - J x|| <= lambda ||x - J x||` on the current iterate.
    MixingContraction,
    /// `||mean(y) - mean(z)|| / (1 + ||mean(z)||) <= 1e-9`.
    TrackingIdentity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonitorRow {
    pub monitor: Monitor,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl MonitorRow {
    fn new(monitor: Monitor, lhs: f64, rhs: f64, slack: f64) -> Self {
        MonitorRow {
            monitor,
            lhs,
            rhs,
            holds: lhs <= rhs + slack,
        }
    }
}

/// Evaluates the pathwise lemmas at the current iteration. The consensus recursion needs
/// the previous iteration and is skipped when `prev` is `None`.
pub fn lemma_monitor(
    prev: Option<&IterationTrace>,
    cur: &IterationTrace,
    cur_state: &NetworkState,
    alpha: f64,
    w: &MixingMatrix,
) -> Vec<MonitorRow> {
    let lam2 = w.lambda_w() * w.lambda_w();
    let n = cur_state.n() as f64;
    let mut rows = Vec::with_capacity(3);
    if let Some(prev) = prev {
        let rhs = 2.0 * lam2 * prev.theta_sq + 2.0 * alpha * alpha * lam2 * prev.delta_sq_mean * n;
        rows.push(MonitorRow::new(
            Monitor::ConsensusRecursion,
            cur.theta_sq,
            rhs,
            CONTRACTION_SLACK,
        ));
    }

    let xs = cur_state.xs();
    let mixed = w.mix(&xs);
    rows.push(MonitorRow::new(
        Monitor::MixingContraction,
        stacked::deviation_sq(&mixed).sqrt(),
        w.lambda_w() * stacked::deviation_sq(&xs).sqrt(),
        CONTRACTION_SLACK,
    ));

    rows.push(MonitorRow::new(
        Monitor::TrackingIdentity,
        tracking_error(cur_state),
        TRACKING_TOL,
        0.0,
    ));
    rows
}

/// `||mean(y) - mean(z)|| / (1 + ||mean(z)||)`.
pub fn tracking_error(state: &NetworkState) -> f64 {
    let z_bar = stacked::mean(&state.zs());
    (stacked::mean(&state.ys()) - &z_bar).norm() / (1.0 + z_bar.norm())
}

/// Running tally of monitor outcomes over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonitorSummary {
    pub checks: BTreeMap<Monitor, usize>,
    pub violations: BTreeMap<Monitor, usize>,
    /// Largest `lhs - rhs` seen per monitor.
    pub worst_excess: BTreeMap<Monitor, f64>,
    pub max_tracking_error: f64,
    pub feasibility_violations: usize,
    pub first_violation: Option<(usize, MonitorRow)>,
}

impl MonitorSummary {
    pub fn absorb(&mut self, t: usize, rows: &[MonitorRow]) {
        for row in rows {
            *self.checks.entry(row.monitor).or_default() += 1;
            let excess = self.worst_excess.entry(row.monitor).or_insert(f64::NEG_INFINITY);
            *excess = excess.max(row.lhs - row.rhs);
            if row.monitor == Monitor::TrackingIdentity {
                self.max_tracking_error = self.max_tracking_error.max(row.lhs);
            }
            if !row.holds {
                *self.violations.entry(row.monitor).or_default() += 1;
                self.first_violation.get_or_insert((t, *row));
            }
        }
    }

    /// Counts iterates `x_i^t` and solutions `x_hat_i^t` outside the feasible set.
    pub fn check_feasibility(&mut self, state: &NetworkState, solutions: &[SubproblemSolution], p: &ProblemInstance) {
        let set = p.feasible();
        self.feasibility_violations += state
            .nodes
            .iter()
            .map(|n| &n.x)
            .chain(solutions.iter().map(|s| &s.x_hat))
            .filter(|x| !set.contains_within(x, FEASIBILITY_SLACK))
            .count();
    }

    pub fn total_violations(&self) -> usize {
        self.violations.values().sum::<usize>() + self.feasibility_violations
    }

    pub fn merge(&mut self, other: &MonitorSummary) {
        for (k, v) in &other.checks {
            *self.checks.entry(*k).or_default() += v;
        }
        for (k, v) in &other.violations {
            *self.violations.entry(*k).or_default() += v;
        }
        for (k, v) in &other.worst_excess {
            let e = self.worst_excess.entry(*k).or_insert(f64::NEG_INFINITY);
            *e = e.max(*v);
        }
        self.max_tracking_error = self.max_tracking_error.max(other.max_tracking_error);
        self.feasibility_violations += other.feasibility_violations;
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation;
        }
    }
}

/// One seed's trace, tagged with a hash of everything that determines its distribution
/// (the configuration without the seed).
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub distribution: String,
    pub records: Vec<IterationTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub t: usize,
    pub mean: [f64; 8],
    pub stderr: [f64; 8],
}

impl AggregateRow {
    pub fn mean_of(&self, field: &str) -> Option<f64> {
        IterationTrace::FIELDS
            .iter()
            .position(|f| *f == field)
            .map(|k| self.mean[k])
    }

    pub fn stderr_of(&self, field: &str) -> Option<f64> {
        IterationTrace::FIELDS
            .iter()
            .position(|f| *f == field)
            .map(|k| self.stderr[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregatedTrace {
    pub seeds: usize,
    pub rows: Vec<AggregateRow>,
}

/// Per-iteration mean and standard error of every trace field across seeds.
pub fn aggregate_runs(runs: &[RunTrace]) -> Result<AggregatedTrace> {
    if runs.len() < 2 {
        return Err(Error::Aggregate(format!("need at least 2 seeds, got {}", runs.len())));
    }
    let first = &runs[0];
    for (k, r) in runs.iter().enumerate().skip(1) {
        if r.distribution != first.distribution {
            return Err(Error::Aggregate(format!(
                "run {k} has configuration hash {} but run 0 has {}",
                r.distribution, first.distribution
            )));
        }
        let same_grid =
            r.records.len() == first.records.len() && r.records.iter().zip(&first.records).all(|(a, b)| a.t == b.t);
        if !same_grid {
            return Err(Error::Aggregate(format!("run {k} has a different iteration grid")));
        }
    }
    let m = runs.len() as f64;
    let rows = (0..first.records.len())
        .map(|row| {
            let mut mean = [0.0; 8];
            let mut stderr = [0.0; 8];
            for r in runs {
                for (acc, v) in mean.iter_mut().zip(r.records[row].values()) {
                    *acc += v / m;
                }
            }
            for r in runs {
                for ((acc, v), mu) in stderr.iter_mut().zip(r.records[row].values()).zip(mean) {
                    *acc += (v - mu).powi(2);
                }
            }
            for s in &mut stderr {
                *s = (*s / (m - 1.0) / m).sqrt();
            }
            AggregateRow {
                t: first.records[row].t,
                mean,
                stderr,
            }
        })
        .collect();
    Ok(AggregatedTrace {
        seeds: runs.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initialize, step, HyperParams};
    use crate::graph::{build_graph, build_mixing_matrix, MixingScheme, TopologyKind};
    use crate::problem::{make_quadratic_consensus_problem, make_quadratic_problem};
    use nalgebra::DMatrix;

    fn ring4() -> MixingMatrix {
        build_mixing_matrix(&build_graph(TopologyKind::Ring, 4).unwrap(), MixingScheme::Metropolis).unwrap()
    }

    fn trace(t: usize, theta_sq: f64) -> IterationTrace {
        IterationTrace {
            t,
            theta_sq,
            delta_sq_mean: 0.0,
            phi_hat: 0.0,
            upsilon_hat: 0.0,
            eps_hat: 0.0,
            gap_mean: 0.0,
            u_bar: 0.0,
            sfo_calls: 0,
        }
    }

    #[test]
    fn consensual_state_has_zero_theta_and_holds() {
        let p = make_quadratic_consensus_problem(4, 2, 1, 1.0).unwrap();
        let hp = HyperParams::fixed(0.1, 0.01, 5.0, 1, 10).unwrap();
        let s = initialize(&p, &hp, &DVector::zeros(2), 3).unwrap();
        let out = step(&s, &p, &hp, &ring4()).unwrap();
        let m = measure(&s, &out.solutions, &p);
        assert_eq!(m.theta_sq, 0.0);
        let rows = lemma_monitor(Some(&trace(0, 0.0)), &m, &s, hp.alpha, &ring4());
        assert!(rows.iter().all(|r| r.holds));
        assert_eq!(rows[0].lhs, 0.0);
    }

    #[test]
    fn single_node_gap_vanishes_at_optimum() {
        let p = make_quadratic_problem(
            vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])],
            vec![DVector::from_vec(vec![0.3, -0.4])],
            0.0,
        )
        .unwrap();
        let xs = p.optimum().unwrap().clone();
        let hp = HyperParams::fixed(0.5, 1.0, 3.0, 1, 10).unwrap();
        let w = MixingMatrix::new(DMatrix::identity(1, 1), None).unwrap();
        let s = initialize(&p, &hp, &xs, 0).unwrap();
        let out = step(&s, &p, &hp, &w).unwrap();
        let m = measure(&s, &out.solutions, &p);
        assert!(m.gap_mean < 1e-18);
        assert_eq!(m.upsilon_hat, 0.0);
        assert_eq!(m.phi_hat, 0.0);
    }

    #[test]
    fn gap_equals_direct_definition() {
        let p = make_quadratic_consensus_problem(4, 3, 2, 1.0).unwrap();
        let hp = HyperParams::fixed(0.2, 0.04, 6.0, 1, 10).unwrap();
        let w = ring4();
        let mut s = initialize(&p, &hp, &DVector::zeros(3), 1).unwrap();
        for _ in 0..20 {
            let out = step(&s, &p, &hp, &w).unwrap();
            let m = measure(&s, &out.solutions, &p);
            let direct: f64 = s
                .nodes
                .iter()
                .zip(&out.solutions)
                .map(|(node, sol)| {
                    (p.average_gradient(&sol.x_hat) - (&sol.x_hat - &node.x) * hp.mu - &node.y).norm_squared()
                })
                .sum::<f64>()
                / 4.0;
            assert!((m.gap_mean - direct).abs() <= 1e-12 * (1.0 + direct));
            s = out.next;
        }
    }

    #[test]
    fn corrupted_tracker_is_detected() {
        let p = make_quadratic_consensus_problem(4, 2, 1, 1.0).unwrap();
        let hp = HyperParams::fixed(0.1, 0.01, 5.0, 1, 10).unwrap();
        let w = ring4();
        let mut s = initialize(&p, &hp, &DVector::zeros(2), 3).unwrap();
        for _ in 0..5 {
            s = step(&s, &p, &hp, &w).unwrap().next;
        }
        let out = step(&s, &p, &hp, &w).unwrap();
        let m = measure(&s, &out.solutions, &p);
        let ok = lemma_monitor(None, &m, &s, hp.alpha, &w);
        assert!(ok.iter().all(|r| r.holds));

        s.nodes[1].y[0] += 1.0;
        let m_bad = measure(&s, &out.solutions, &p);
        assert!(m_bad.eps_hat > 0.0);
        let bad = lemma_monitor(None, &m_bad, &s, hp.alpha, &w);
        let tracking = bad.iter().find(|r| r.monitor == Monitor::TrackingIdentity).unwrap();
        assert!(!tracking.holds);
    }

    #[test]
    fn monitors_hold_over_many_random_steps() {
        let p = make_quadratic_consensus_problem(4, 2, 5, 2.0).unwrap();
        let w = ring4();
        let mut summary = MonitorSummary::default();
        for seed in 0..10u64 {
            let hp = HyperParams::fixed(0.3, 0.09, 4.0, 1, 1000).unwrap();
            let mut s = initialize(&p, &hp, &DVector::from_vec(vec![1.0, -1.0]), seed).unwrap();
            let mut prev = None;
            for t in 1..=1000 {
                let out = step(&s, &p, &hp, &w).unwrap();
                let m = measure(&s, &out.solutions, &p);
                summary.absorb(t, &lemma_monitor(prev.as_ref(), &m, &s, hp.alpha, &w));
                prev = Some(m);
                s = out.next;
            }
        }
        assert_eq!(summary.total_violations(), 0, "{:?}", summary.first_violation);
        assert_eq!(summary.checks[&Monitor::ConsensusRecursion], 9_990);
    }

    #[test]
    fn aggregation_of_identical_runs_has_zero_stderr() {
        let records: Vec<_> = (1..=3).map(|t| trace(t, t as f64)).collect();
        let runs = vec![
            RunTrace {
                distribution: "h".into(),
                records: records.clone(),
            },
            RunTrace {
                distribution: "h".into(),
                records,
            },
        ];
        let agg = aggregate_runs(&runs).unwrap();
        assert_eq!(agg.rows.len(), 3);
        assert!(agg.rows.iter().all(|r| r.stderr.iter().all(|s| *s == 0.0)));
        assert_eq!(agg.rows[2].mean_of("theta_sq"), Some(3.0));
    }

    #[test]
    fn aggregation_mean_and_stderr() {
        let runs: Vec<_> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&v| RunTrace {
                distribution: "h".into(),
                records: vec![trace(5, v)],
            })
            .collect();
        let agg = aggregate_runs(&runs).unwrap();
        assert_eq!(agg.rows[0].mean_of("theta_sq"), Some(3.0));
        // sample variance = (4 + 1 + 0 + 9) / 3
        let se = (14.0f64 / 3.0 / 4.0).sqrt();
        assert!((agg.rows[0].stderr_of("theta_sq").unwrap() - se).abs() < 1e-15);
    }

    #[test]
    fn aggregation_guards() {
        let a = RunTrace {
            distribution: "a".into(),
            records: vec![trace(1, 0.0)],
        };
        let b = RunTrace {
            distribution: "b".into(),
            records: vec![trace(1, 0.0)],
        };
        let c = RunTrace {
            distribution: "a".into(),
            records: vec![trace(2, 0.0)],
        };
        assert!(aggregate_runs(std::slice::from_ref(&a)).is_err());
        assert!(aggregate_runs(&[a.clone(), b]).is_err());
        assert!(aggregate_runs(&[a, c]).is_err());
    }
}
