//! Built-in local objectives.
//!
//! Every built-in uses an additive linear noise term `f(x, xi) = u(x) + s * <xi, x>` with
//! `xi` standard normal, so the gradient noise `s * xi` is state independent, unbiased,
//! and has `E||.||^2 = s^2 * noise_dim`.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Local objective `u_i(x) = E[f_i(x, xi)]` with a sampling oracle.
///
/// A noise draw is a slice of `noise_dim()` independent standard normals.
pub trait StochasticObjective: Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn sample_value(&self, x: &DVector<f64>, noise: &[f64]) -> f64;

    fn sample_gradient(&self, x: &DVector<f64>, noise: &[f64]) -> DVector<f64>;

    fn expected_value(&self, x: &DVector<f64>) -> f64;

    fn expected_gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Mean-squared smoothness modulus.
    fn smoothness(&self) -> f64;

    /// Upper bound on `E||sample_gradient - expected_gradient||^2`.
    fn variance(&self) -> f64;
}

fn noise_dot(scale: f64, x: &DVector<f64>, noise: &[f64]) -> f64 {
    scale * x.iter().zip(noise).map(|(a, b)| a * b).sum::<f64>()
}

fn noise_vec(scale: f64, noise: &[f64]) -> DVector<f64> {
    DVector::from_iterator(noise.len(), noise.iter().map(|v| scale * v))
}

/// One-dimensional objective: a quartic polynomial on `|x| <= breakpoint` with affine
/// tails beyond, plus `xi * x`.
#[derive(Clone, Debug)]
pub struct PiecewiseQuartic {
    /// Interior coefficients, lowest degree first.
    interior: [f64; 5],
    /// `(slope, intercept)` for `x > breakpoint`.
    upper: (f64, f64),
    /// `(slope, intercept)` for `x < -breakpoint`.
    lower: (f64, f64),
    breakpoint: f64,
    smoothness: f64,
}

impl PiecewiseQuartic {
    pub fn new(interior: [f64; 5], upper: (f64, f64), lower: (f64, f64), breakpoint: f64) -> Self {
        let mut f = PiecewiseQuartic {
            interior,
            upper,
            lower,
            breakpoint,
            smoothness: 0.0,
        };
        f.smoothness = f.max_curvature();
        f
    }

    /// `(x^3 - 16x)(x + 2)`, tails `4248x - 32400` and `-3112x - 25040`.
    pub fn node_one() -> Self {
        PiecewiseQuartic::new(
            [0.0, -32.0, -16.0, 2.0, 1.0],
            (4248.0, -32400.0),
            (-3112.0, -25040.0),
            10.0,
        )
    }

    /// `(0.5x^3 + x^2)(x - 4)`, tails `1620x - 12600` and `-2220x - 16600`.
    pub fn node_two() -> Self {
        PiecewiseQuartic::new(
            [0.0, 0.0, -4.0, -1.0, 0.5],
            (1620.0, -12600.0),
            (-2220.0, -16600.0),
            10.0,
        )
    }

    /// Same interior as [`Self::node_one`], tails `288x - 2016` and `228x - 2624`.
    pub fn node_three() -> Self {
        PiecewiseQuartic::new([0.0, -32.0, -16.0, 2.0, 1.0], (288.0, -2016.0), (228.0, -2624.0), 10.0)
    }

    pub fn value_at(&self, x: f64) -> f64 {
        if x > self.breakpoint {
            self.upper.0 * x + self.upper.1
        } else if x < -self.breakpoint {
            self.lower.0 * x + self.lower.1
        } else {
            self.interior.iter().rev().fold(0.0, |acc, c| acc * x + c)
        }
    }

    pub fn interior_value(&self, x: f64) -> f64 {
        self.interior.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        if x > self.breakpoint {
            self.upper.0
        } else if x < -self.breakpoint {
            self.lower.0
        } else {
            let c = &self.interior;
            ((4.0 * c[4] * x + 3.0 * c[3]) * x + 2.0 * c[2]) * x + c[1]
        }
    }

    /// `max |u''|` over the smooth interior; `u''` is a quadratic so the extremes sit at
    /// the breakpoints or its vertex.
    fn max_curvature(&self) -> f64 {
        let c = &self.interior;
        let curv = |x: f64| (12.0 * c[4] * x + 6.0 * c[3]) * x + 2.0 * c[2];
        let b = self.breakpoint;
        let mut candidates = vec![-b, b];
        if c[4] != 0.0 {
            let v = -c[3] / (4.0 * c[4]);
            if v.abs() <= b {
                candidates.push(v);
            }
        }
        candidates.into_iter().map(|x| curv(x).abs()).fold(0.0, f64::max)
    }
}

impl StochasticObjective for PiecewiseQuartic {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn sample_value(&self, x: &DVector<f64>, noise: &[f64]) -> f64 {
        self.value_at(x[0]) + noise_dot(1.0, x, noise)
    }

    fn sample_gradient(&self, x: &DVector<f64>, noise: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.derivative_at(x[0]) + noise[0])
    }

    fn expected_value(&self, x: &DVector<f64>) -> f64 {
        self.value_at(x[0])
    }

    fn expected_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.derivative_at(x[0]))
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn variance(&self) -> f64 {
        1.0
    }
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// `u(x) = 0.5 (x - c)^T A (x - c)` with isotropic Gaussian gradient noise of total
/// variance `noise_variance`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    a: DMatrix<f64>,
    center: DVector<f64>,
    noise_scale: f64,
    noise_variance: f64,
    smoothness: f64,
}

impl Quadratic {
    pub fn new(a: DMatrix<f64>, center: DVector<f64>, noise_variance: f64) -> Self {
        let d = center.len();
        assert_eq!(a.shape(), (d, d), "curvature matrix must be d x d");
        let smoothness = max_eigenvalue(&a);
        Quadratic {
            noise_scale: (noise_variance / d as f64).sqrt(),
            a,
            center,
            noise_variance,
            smoothness,
        }
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl StochasticObjective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn noise_dim(&self) -> usize {
        self.center.len()
    }

    fn sample_value(&self, x: &DVector<f64>, noise: &[f64]) -> f64 {
        self.expected_value(x) + noise_dot(self.noise_scale, x, noise)
    }

    fn sample_gradient(&self, x: &DVector<f64>, noise: &[f64]) -> DVector<f64> {
        self.expected_gradient(x) + noise_vec(self.noise_scale, noise)
    }

    fn expected_value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.center;
        0.5 * r.dot(&(&self.a * &r))
    }

    fn expected_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.center)
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn variance(&self) -> f64 {
        self.noise_variance
    }
}

/// `u(x) = ||B x - b||^2 / (2m)` for an `m x d` design `B`, with isotropic gradient noise.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    design: DMatrix<f64>,
    target: DVector<f64>,
    noise_scale: f64,
    noise_variance: f64,
    smoothness: f64,
}

impl LeastSquares {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>, noise_variance: f64) -> Self {
        assert_eq!(design.nrows(), target.len(), "design rows must match targets");
        let m = design.nrows() as f64;
        let d = design.ncols();
        let smoothness = max_eigenvalue(&(design.transpose() * &design)) / m;
        LeastSquares {
            noise_scale: (noise_variance / d as f64).sqrt(),
            design,
            target,
            noise_variance,
            smoothness,
        }
    }
}

impl StochasticObjective for LeastSquares {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn noise_dim(&self) -> usize {
        self.design.ncols()
    }

    fn sample_value(&self, x: &DVector<f64>, noise: &[f64]) -> f64 {
        self.expected_value(x) + noise_dot(self.noise_scale, x, noise)
    }

    fn sample_gradient(&self, x: &DVector<f64>, noise: &[f64]) -> DVector<f64> {
        self.expected_gradient(x) + noise_vec(self.noise_scale, noise)
    }

    fn expected_value(&self, x: &DVector<f64>) -> f64 {
        (&self.design * x - &self.target).norm_squared() / (2.0 * self.design.nrows() as f64)
    }

    fn expected_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.design.tr_mul(&(&self.design * x - &self.target)) / self.design.nrows() as f64
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn variance(&self) -> f64 {
        self.noise_variance
    }
}
