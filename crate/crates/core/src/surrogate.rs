//! Strongly convex surrogate subproblems.
//!
//! With the quadratic-proximal surrogate
//! `f_hat(x; x_t, xi) = f(x_t, xi) + <grad f(x_t, xi), x - x_t> + (mu/2)||x - x_t||^2`,
//! the momentum correction and the tracking offset `pi = y - z` collapse to a single
//! linear term, and each node solves
//!
//! ```text
//! x_hat = argmin_{x in X} (mu/2)||x - x_t||^2 + <y_t, x - x_t> + h(x)
//!       = argmin_{x in X} (mu/2)||x - (x_t - y_t/mu)||^2 + h(x).
//! ```

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{FeasibleKind, FeasibleSet, ProblemInstance, Regularizer, RegularizerKind};

/// Quadratic-proximal surrogate with strong-convexity modulus `mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub mu: f64,
}

impl SurrogateSpec {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("must be positive, got {mu}"),
            });
        }
        Ok(SurrogateSpec { mu })
    }

    /// `f_hat(x; x_t)` given the sampled value and gradient at `x_t`.
    pub fn value(&self, x: &DVector<f64>, x_t: &DVector<f64>, value_t: f64, grad_t: &DVector<f64>) -> f64 {
        let r = x - x_t;
        value_t + grad_t.dot(&r) + 0.5 * self.mu * r.norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>, x_t: &DVector<f64>, grad_t: &DVector<f64>) -> DVector<f64> {
        grad_t + (x - x_t) * self.mu
    }
}

/// Per-node subproblem data.
#[derive(Clone, Copy, Debug)]
pub struct SubproblemInputs<'a> {
    pub x_t: &'a DVector<f64>,
    /// Local hybrid gradient estimator. It cancels out of the reduced problem and is
    /// carried only so callers can evaluate the unreduced objective.
    pub z_t: &'a DVector<f64>,
    pub y_t: &'a DVector<f64>,
    pub mu: f64,
    pub h: &'a dyn Regularizer,
    pub feasible: &'a dyn FeasibleSet,
}

impl SubproblemInputs<'_> {
    fn check(&self) -> Result<()> {
        let d = self.x_t.len();
        for v in [self.z_t, self.y_t] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("must be positive, got {}", self.mu),
            });
        }
        Ok(())
    }

    /// Unconstrained minimizer of the smooth part, `x_t - y_t / mu`.
    fn anchor(&self) -> DVector<f64> {
        self.x_t - self.y_t / self.mu
    }

    /// Reduced subproblem objective `(mu/2)||x - x_t||^2 + <y_t, x - x_t> + h(x)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let r = x - self.x_t;
        0.5 * self.mu * r.norm_squared() + self.y_t.dot(&r) + self.h.value(x)
    }

    /// The certificate `w = -mu (x_hat - x_t) - y_t`, an element of
    /// `d(h + indicator_X)(x_hat)` when `x_hat` is optimal.
    pub fn certificate(&self, x_hat: &DVector<f64>) -> DVector<f64> {
        -(x_hat - self.x_t) * self.mu - self.y_t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution {
    pub x_hat: DVector<f64>,
    pub w_hat: DVector<f64>,
    /// 0 for the closed form.
    pub inner_iterations: usize,
}

/// True when prox-then-project equals the joint proximal map of `h + indicator_X`.
pub(crate) fn prox_then_project_is_exact(h: RegularizerKind, x: FeasibleKind) -> bool {
    matches!(
        (h, x),
        (RegularizerKind::Zero, _) | (_, FeasibleKind::Unbounded) | (RegularizerKind::L1 { .. }, FeasibleKind::Box)
    )
}

/// `x_hat = clamp(soft_threshold(x_t - y_t/mu, lambda1/mu))`, exact for separable `h`
/// in `{0, l1}` and `X` in `{R^d, box}`.
pub fn solve_subproblem_closed_form(input: &SubproblemInputs) -> Result<SubproblemSolution> {
    input.check()?;
    let (hk, xk) = (input.h.kind(), input.feasible.kind());
    let supported = matches!(hk, RegularizerKind::Zero | RegularizerKind::L1 { .. })
        && matches!(xk, FeasibleKind::Unbounded | FeasibleKind::Box);
    if !supported {
        return Err(Error::UnsupportedClosedForm {
            regularizer: hk,
            feasible: xk,
        });
    }
    let x_hat = input.feasible.project(&input.h.prox(&input.anchor(), 1.0 / input.mu));
    let w_hat = input.certificate(&x_hat);
    Ok(SubproblemSolution {
        x_hat,
        w_hat,
        inner_iterations: 0,
    })
}

/// Projected proximal gradient with step `1/(2 mu)`, started at `x_t`.
///
/// The map contracts with factor 1/2, so the returned point is within `tol` of the
/// fixed point once successive iterates differ by at most `tol`.
pub fn solve_subproblem_iterative(input: &SubproblemInputs, tol: f64, max_iter: usize) -> Result<SubproblemSolution> {
    input.check()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    let (hk, xk) = (input.h.kind(), input.feasible.kind());
    if !prox_then_project_is_exact(hk, xk) {
        return Err(Error::Unsupported(format!(
            "prox-then-project is not the joint proximal map for {hk:?} with {xk:?}"
        )));
    }
    let step = 1.0 / (2.0 * input.mu);
    let anchor = input.anchor();
    let mut x = input.feasible.project(input.x_t);
    let mut residual = f64::INFINITY;
    for k in 1..=max_iter {
        let forward = &x - (&x - &anchor) * (input.mu * step);
        let next = input.feasible.project(&input.h.prox(&forward, step));
        residual = (&next - &x).norm();
        x = next;
        if residual <= tol {
            let w_hat = input.certificate(&x);
            return Ok(SubproblemSolution {
                x_hat: x,
                w_hat,
                inner_iterations: k,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Solver selection used by the engine: closed form when available, iterative otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub force_iterative: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
            force_iterative: false,
        }
    }
}

pub fn solve_subproblem(input: &SubproblemInputs, opts: &SolverOptions) -> Result<SubproblemSolution> {
    if !opts.force_iterative {
        match solve_subproblem_closed_form(input) {
            Err(Error::UnsupportedClosedForm { .. }) => {}
            other => return other,
        }
    }
    solve_subproblem_iterative(input, opts.tol, opts.max_iter)
}

/// `||(1/n) sum_j grad u_j(x_hat) + w_hat||^2`, the per-node stationarity term.
pub fn stationarity_residual(p: &ProblemInstance, sol: &SubproblemSolution) -> f64 {
    (p.average_gradient(&sol.x_hat) + &sol.w_hat).norm_squared()
}
