//! Stochastic composite problem instances
//! `min_{x in X} (1/n) sum_i u_i(x) + h(x)` with `u_i(x) = E[f_i(x, xi_i)]`.

mod objectives;
mod sets;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise::{self, Stream};

pub use objectives::{LeastSquares, PiecewiseQuartic, Quadratic, StochasticObjective};
pub use sets::{
    soft_threshold, BoxSet, FeasibleKind, FeasibleSet, L1Regularizer, Regularizer, RegularizerKind, Unbounded,
    ZeroRegularizer,
};

#[derive(Clone)]
pub struct ProblemInstance {
    name: String,
    locals: Vec<Arc<dyn StochasticObjective>>,
    h: Arc<dyn Regularizer>,
    feasible: Arc<dyn FeasibleSet>,
    global_l: f64,
    sigma_bar_sq: f64,
    optimum: Option<DVector<f64>>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("d", &self.dim())
            .field("h", &self.h.kind())
            .field("feasible", &self.feasible.kind())
            .field("global_l", &self.global_l)
            .field("sigma_bar_sq", &self.sigma_bar_sq)
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        locals: Vec<Arc<dyn StochasticObjective>>,
        h: Arc<dyn Regularizer>,
        feasible: Arc<dyn FeasibleSet>,
    ) -> Result<Self> {
        let Some(first) = locals.first() else {
            return Err(Error::InvalidParameter {
                name: "locals",
                reason: "need at least one node".into(),
            });
        };
        let d = first.dim();
        if let Some(bad) = locals.iter().find(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        let global_l = locals.iter().map(|f| f.smoothness()).fold(0.0, f64::max);
        let sigma_bar_sq = locals.iter().map(|f| f.variance()).sum();
        Ok(ProblemInstance {
            name: name.into(),
            locals,
            h,
            feasible,
            global_l,
            sigma_bar_sq,
            optimum: None,
        })
    }

    /// Attaches a known minimizer, used as a test oracle.
    pub fn with_optimum(mut self, x: DVector<f64>) -> Self {
        self.optimum = Some(x);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    pub fn local(&self, i: usize) -> &dyn StochasticObjective {
        self.locals[i].as_ref()
    }

    pub fn locals(&self) -> &[Arc<dyn StochasticObjective>] {
        &self.locals
    }

    pub fn regularizer(&self) -> &dyn Regularizer {
        self.h.as_ref()
    }

    pub fn feasible(&self) -> &dyn FeasibleSet {
        self.feasible.as_ref()
    }

    /// `L = max_i L_i`.
    pub fn global_l(&self) -> f64 {
        self.global_l
    }

    /// `sum_i sigma_i^2`.
    pub fn sigma_bar_sq(&self) -> f64 {
        self.sigma_bar_sq
    }

    pub fn optimum(&self) -> Option<&DVector<f64>> {
        self.optimum.as_ref()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Gradient of the network-average smooth part, `(1/n) sum_j grad u_j(x)`.
    pub fn average_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for f in &self.locals {
            g += f.expected_gradient(x);
        }
        g / self.n() as f64
    }

    /// Noise-free `(1/n) sum_i u_i(x)`.
    pub fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        self.locals.iter().map(|f| f.expected_value(x)).sum::<f64>() / self.n() as f64
    }

    /// `U(x) = (1/n) sum_i u_i(x) + h(x)`. Feasibility is not checked.
    pub fn global_objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.smooth_value(x) + self.h.value(x))
    }
}

/// The three-node one-dimensional synthetic problem with quartic interiors and affine
/// tails, `xi_i ~ N(0, 1)`. `box_radius` adds the constraint `|x| <= radius`.
pub fn make_piecewise_cubic_problem(box_radius: Option<f64>) -> Result<ProblemInstance> {
    let locals: Vec<Arc<dyn StochasticObjective>> = vec![
        Arc::new(PiecewiseQuartic::node_one()),
        Arc::new(PiecewiseQuartic::node_two()),
        Arc::new(PiecewiseQuartic::node_three()),
    ];
    let feasible: Arc<dyn FeasibleSet> = match box_radius {
        Some(r) => Arc::new(BoxSet::uniform(1, -r, r)?),
        None => Arc::new(Unbounded),
    };
    ProblemInstance::new("piecewise_cubic_3node", locals, Arc::new(ZeroRegularizer), feasible)
}

fn random_spd(rng: &mut impl rand::Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut *rng));
    DMatrix::identity(d, d) + g.transpose() * g / (2.0 * d as f64)
}

/// Quadratics from explicit curvatures and centers; stores the closed-form minimizer
/// `(sum A_i)^-1 sum A_i c_i`.
pub fn make_quadratic_problem(
    curvatures: Vec<DMatrix<f64>>,
    centers: Vec<DVector<f64>>,
    noise_variance: f64,
) -> Result<ProblemInstance> {
    if curvatures.len() != centers.len() || curvatures.is_empty() {
        return Err(Error::InvalidParameter {
            name: "quadratic",
            reason: "need one curvature per center and at least one node".into(),
        });
    }
    let d = centers[0].len();
    let mut a_sum = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (a, c) in curvatures.iter().zip(&centers) {
        if a.shape() != (d, d) || c.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.len(),
            });
        }
        a_sum += a;
        rhs += a * c;
    }
    let optimum = a_sum
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter {
            name: "curvature",
            reason: "sum of curvatures is not positive definite".into(),
        })?
        .solve(&rhs);
    let locals = curvatures
        .into_iter()
        .zip(centers)
        .map(|(a, c)| Arc::new(Quadratic::new(a, c, noise_variance)) as Arc<dyn StochasticObjective>)
        .collect();
    Ok(ProblemInstance::new(
        "quadratic_consensus",
        locals,
        Arc::new(ZeroRegularizer),
        Arc::new(Unbounded),
    )?
    .with_optimum(optimum))
}

/// Random strongly convex quadratics `0.5 (x - c_i)^T A_i (x - c_i)` with
/// `A_i = I + G^T G / (2d)` and `c_i ~ N(0, I)`.
pub fn make_quadratic_consensus_problem(n: usize, d: usize, seed: u64, noise_variance: f64) -> Result<ProblemInstance> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter {
            name: "n, d",
            reason: "must be positive".into(),
        });
    }
    let mut curvatures = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = noise::rng(seed, Stream::Problem, i, 0);
        curvatures.push(random_spd(&mut rng, d));
        centers.push(DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)));
    }
    make_quadratic_problem(curvatures, centers, noise_variance)
}

/// Per-node least squares on `m` random Gaussian rows sharing a sparse ground truth,
/// plus `lambda1 ||x||_1` and an optional box.
pub fn make_lasso_problem(
    n: usize,
    d: usize,
    m: usize,
    seed: u64,
    lambda1: f64,
    bounds: Option<(f64, f64)>,
    noise_variance: f64,
) -> Result<ProblemInstance> {
    if n == 0 || d == 0 || m == 0 {
        return Err(Error::InvalidParameter {
            name: "n, d, m",
            reason: "must be positive".into(),
        });
    }
    let mut rng = noise::rng(seed, Stream::Problem, usize::MAX, 0);
    let truth = DVector::from_fn(d, |k, _| {
        if k % 3 == 0 {
            StandardNormal.sample(&mut rng)
        } else {
            0.0
        }
    });
    let locals = (0..n)
        .map(|i| {
            let mut rng = noise::rng(seed, Stream::Problem, i, 1);
            let design = DMatrix::from_fn(m, d, |_, _| StandardNormal.sample(&mut rng));
            let residual: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let target = &design * &truth + residual * 0.1;
            Arc::new(LeastSquares::new(design, target, noise_variance)) as Arc<dyn StochasticObjective>
        })
        .collect();
    let feasible: Arc<dyn FeasibleSet> = match bounds {
        Some((lo, hi)) => Arc::new(BoxSet::uniform(d, lo, hi)?),
        None => Arc::new(Unbounded),
    };
    ProblemInstance::new(
        "lasso_least_squares",
        locals,
        Arc::new(L1Regularizer::new(lambda1)?),
        feasible,
    )
}

/// Global objective `U(x)`; see [`ProblemInstance::global_objective`].
pub fn global_objective(p: &ProblemInstance, x: &DVector<f64>) -> Result<f64> {
    p.global_objective(x)
}

/// Golden-section search for a minimizer of a unimodal function on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// All strict interior grid local minima of the noise-free `U` on `[lo, hi]`, refined by
/// golden-section search. Returns `(location, value)` pairs in increasing location.
pub fn brute_force_minimize(p: &ProblemInstance, lo: f64, hi: f64, grid_step: f64) -> Result<Vec<(f64, f64)>> {
    if p.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "brute-force minimization needs d = 1, problem has d = {}",
            p.dim()
        )));
    }
    if !(grid_step > 0.0) || !(hi > lo) {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: format!("need lo < hi and a positive step, got [{lo}, {hi}] step {grid_step}"),
        });
    }
    let u = |x: f64| {
        let v = DVector::from_element(1, x);
        p.smooth_value(&v) + p.regularizer().value(&v)
    };
    let count = ((hi - lo) / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=count).map(|k| lo + k as f64 * grid_step).collect();
    let values: Vec<f64> = grid.iter().map(|&x| u(x)).collect();
    let mut minima = Vec::new();
    for k in 1..count {
        if values[k] < values[k - 1] && values[k] < values[k + 1] {
            let x = golden_section(u, grid[k - 1], grid[k + 1], 1e-9);
            minima.push((x, u(x)));
        }
    }
    Ok(minima)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn piecewise_problem_shape() {
        let p = make_piecewise_cubic_problem(None).unwrap();
        assert_eq!((p.n(), p.dim()), (3, 1));
        assert_eq!(p.sigma_bar_sq(), 3.0);
        assert_abs_diff_eq!(p.global_l(), 1288.0, epsilon = 1e-3);
        assert_eq!(p.global_objective(&v1(0.0)).unwrap(), 0.0);
        let at_two: f64 = (0..3).map(|i| p.local(i).expected_value(&v1(2.0))).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(p.global_objective(&v1(2.0)).unwrap(), at_two, epsilon = 1e-12);
        // f1(2) = -96, f2(2) = (4 + 4)(-2) = -16, f3(2) = -96.
        assert_abs_diff_eq!(at_two, (-96.0 - 16.0 - 96.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn global_objective_rejects_wrong_dimension() {
        let p = make_piecewise_cubic_problem(None).unwrap();
        assert!(matches!(
            p.global_objective(&DVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn quadratic_optimum_examples() {
        let p = make_quadratic_problem(vec![DMatrix::identity(1, 1)], vec![v1(0.0)], 0.0).unwrap();
        assert_abs_diff_eq!(p.optimum().unwrap()[0], 0.0);
        let p = make_quadratic_problem(
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            vec![v1(0.0), v1(2.0)],
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(p.optimum().unwrap()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn random_quadratic_optimum_matches_lu_solve() {
        let p = make_quadratic_consensus_problem(3, 4, 11, 0.0).unwrap();
        let mut a = DMatrix::zeros(4, 4);
        let mut b = DVector::zeros(4);
        let x0 = DVector::zeros(4);
        for i in 0..3 {
            // grad u_i(0) = -A_i c_i; recover A_i column by column from gradients.
            let g0 = p.local(i).expected_gradient(&x0);
            let mut ai = DMatrix::zeros(4, 4);
            for k in 0..4 {
                let mut e = DVector::zeros(4);
                e[k] = 1.0;
                ai.set_column(k, &(p.local(i).expected_gradient(&e) - &g0));
            }
            a += ai;
            b -= g0;
        }
        let x = a.lu().solve(&b).unwrap();
        assert!((x - p.optimum().unwrap()).amax() < 1e-12);
        assert!(p.average_gradient(p.optimum().unwrap()).amax() < 1e-10);
    }

    #[test]
    fn quadratic_generation_is_seeded() {
        let a = make_quadratic_consensus_problem(3, 2, 5, 1.0).unwrap();
        let b = make_quadratic_consensus_problem(3, 2, 5, 1.0).unwrap();
        let c = make_quadratic_consensus_problem(3, 2, 6, 1.0).unwrap();
        assert_eq!(a.optimum(), b.optimum());
        assert_ne!(a.optimum(), c.optimum());
        assert_eq!(a.sigma_bar_sq(), 3.0);
    }

    #[test]
    fn brute_force_finds_quadratic_minimum() {
        let p = make_quadratic_problem(vec![DMatrix::identity(1, 1)], vec![v1(0.7)], 0.0).unwrap();
        let minima = brute_force_minimize(&p, -4.0, 4.0, 1e-3).unwrap();
        assert_eq!(minima.len(), 1);
        assert_abs_diff_eq!(minima[0].0, 0.7, epsilon = 1e-6);

        let p = make_quadratic_problem(vec![DMatrix::identity(1, 1) * 2.0], vec![v1(0.0)], 0.0).unwrap();
        let minima = brute_force_minimize(&p, -2.25, 2.25, 1e-3).unwrap();
        assert_eq!(minima.len(), 1);
        assert_abs_diff_eq!(minima[0].0, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn brute_force_piecewise_minima_are_stationary() {
        let p = make_piecewise_cubic_problem(None).unwrap();
        let minima = brute_force_minimize(&p, -4.0, 4.0, 1e-4).unwrap();
        assert_eq!(minima.len(), 2);
        for (x, _) in &minima {
            assert!(p.average_gradient(&v1(*x))[0].abs() < 1e-5);
        }
        assert!(minima[0].0 < -2.0 && minima[1].0 > 2.0);
    }

    #[test]
    fn brute_force_needs_one_dimension() {
        let p = make_quadratic_consensus_problem(2, 2, 1, 0.0).unwrap();
        assert!(matches!(
            brute_force_minimize(&p, -1.0, 1.0, 0.1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn lasso_problem_has_l1_and_box() {
        let p = make_lasso_problem(3, 6, 20, 4, 0.1, Some((-1.0, 1.0)), 0.5).unwrap();
        assert_eq!(p.regularizer().kind(), RegularizerKind::L1 { weight: 0.1 });
        assert_eq!(p.feasible().kind(), FeasibleKind::Box);
        assert_eq!(p.dim(), 6);
        assert_abs_diff_eq!(p.sigma_bar_sq(), 1.5, epsilon = 1e-15);
    }

    /// Empirical checks of unbiasedness and bounded variance for every built-in objective.
    #[test]
    fn sampling_oracles_are_unbiased_with_bounded_variance() {
        let problems = [
            make_piecewise_cubic_problem(None).unwrap(),
            make_quadratic_consensus_problem(2, 3, 9, 2.0).unwrap(),
            make_lasso_problem(2, 3, 8, 9, 0.1, None, 0.7).unwrap(),
        ];
        let draws = 100_000;
        for p in &problems {
            for i in 0..p.n() {
                let f = p.local(i);
                for &x in &[0.0, 1.0, -1.0, 3.0, -3.0] {
                    let x = DVector::from_element(p.dim(), x);
                    let exact = f.expected_gradient(&x);
                    let mut sum = DVector::zeros(p.dim());
                    let mut sum_sq_dev = 0.0;
                    let mut coord_sq = DVector::zeros(p.dim());
                    for t in 0..draws {
                        let xi = noise::standard_normals(1, Stream::Fresh, i, t, f.noise_dim());
                        let g = f.sample_gradient(&x, &xi);
                        let dev = &g - &exact;
                        sum_sq_dev += dev.norm_squared();
                        coord_sq += dev.component_mul(&dev);
                        sum += g;
                    }
                    let mean = sum / draws as f64;
                    for k in 0..p.dim() {
                        let se = (coord_sq[k] / draws as f64 / draws as f64).sqrt();
                        assert!(
                            (mean[k] - exact[k]).abs() <= 4.0 * se.max(1e-15),
                            "{}: bias at node {i}",
                            p.name()
                        );
                    }
                    let var = sum_sq_dev / draws as f64;
                    assert!(
                        var <= 1.05 * f.variance(),
                        "{}: variance {var} > {}",
                        p.name(),
                        f.variance()
                    );
                }
            }
        }
    }
}
