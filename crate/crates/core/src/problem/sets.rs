//! Convex regularizers `h` and closed convex feasible sets.

use std::fmt::Debug;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind tag of a regularizer. `Other` marks implementations the closed-form subproblem
/// path knows nothing about.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    Zero,
    L1 { weight: f64 },
    Other,
}

/// Convex, possibly non-smooth regularizer with a single-valued proximal map.
pub trait Regularizer: Debug + Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;

    /// `argmin_u h(u) + ||u - v||^2 / (2 rho)`.
    fn prox(&self, v: &DVector<f64>, rho: f64) -> DVector<f64>;

    fn kind(&self) -> RegularizerKind;

    /// True if `h` is a sum of functions of single coordinates.
    fn is_separable(&self) -> bool {
        !matches!(self.kind(), RegularizerKind::Other)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroRegularizer;

impl Regularizer for ZeroRegularizer {
    fn value(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn prox(&self, v: &DVector<f64>, _rho: f64) -> DVector<f64> {
        v.clone()
    }

    fn kind(&self) -> RegularizerKind {
        RegularizerKind::Zero
    }
}

/// `weight * ||x||_1`.
#[derive(Clone, Copy, Debug)]
pub struct L1Regularizer {
    weight: f64,
}

impl L1Regularizer {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "l1 weight",
                reason: format!("must be finite and nonnegative, got {weight}"),
            });
        }
        Ok(L1Regularizer { weight })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

impl Regularizer for L1Regularizer {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.weight * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, v: &DVector<f64>, rho: f64) -> DVector<f64> {
        let tau = self.weight * rho;
        v.map(|vi| soft_threshold(vi, tau))
    }

    fn kind(&self) -> RegularizerKind {
        RegularizerKind::L1 { weight: self.weight }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleKind {
    Unbounded,
    Box,
    Other,
}

/// Closed convex set with a Euclidean projection.
pub trait FeasibleSet: Debug + Send + Sync {
    fn contains(&self, x: &DVector<f64>) -> bool;

    fn project(&self, x: &DVector<f64>) -> DVector<f64>;

    fn kind(&self) -> FeasibleKind;

    /// Membership up to an absolute slack, for points produced by floating-point
    /// convex combinations of members.
    fn contains_within(&self, x: &DVector<f64>, tol: f64) -> bool {
        (x - self.project(x)).amax() <= tol
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Unbounded;

impl FeasibleSet for Unbounded {
    fn contains(&self, _x: &DVector<f64>) -> bool {
        true
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn kind(&self) -> FeasibleKind {
        FeasibleKind::Unbounded
    }
}

/// Coordinatewise interval constraints `lo <= x <= hi`.
#[derive(Clone, Debug)]
pub struct BoxSet {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxSet {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if let Some(k) = (0..lo.len()).find(|&k| !(lo[k] <= hi[k])) {
            return Err(Error::InvalidParameter {
                name: "box",
                reason: format!("empty interval at coordinate {k}: [{}, {}]", lo[k], hi[k]),
            });
        }
        Ok(BoxSet { lo, hi })
    }

    pub fn uniform(d: usize, lo: f64, hi: f64) -> Result<Self> {
        BoxSet::new(DVector::from_element(d, lo), DVector::from_element(d, hi))
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }
}

impl FeasibleSet for BoxSet {
    fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }

    fn kind(&self) -> FeasibleKind {
        FeasibleKind::Box
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = DVector<f64>> {
        prop::collection::vec(-10.0..10.0f64, 3).prop_map(DVector::from_vec)
    }

    /// Minimizes `weight |u| + (u - v)^2 / (2 rho)` over a fine grid around `v`.
    fn grid_prox_1d(weight: f64, v: f64, rho: f64) -> f64 {
        let obj = |u: f64| weight * u.abs() + (u - v).powi(2) / (2.0 * rho);
        let (mut lo, mut hi) = (v - weight * rho - 1.0, v + weight * rho + 1.0);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            let best = (0..=1000)
                .map(|k| lo + k as f64 * step)
                .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
                .unwrap();
            lo = best - step;
            hi = best + step;
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.5, 0.5), 1.0);
        assert_eq!(soft_threshold(-1.5, 0.5), -1.0);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
    }

    #[test]
    fn rejects_negative_l1_weight_and_empty_box() {
        assert!(L1Regularizer::new(-1.0).is_err());
        assert!(BoxSet::uniform(2, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn l1_prox_matches_grid_minimizer(weight in 0.0..3.0f64, v in -5.0..5.0f64, rho in 0.05..2.0f64) {
            let h = L1Regularizer::new(weight).unwrap();
            let p = h.prox(&DVector::from_element(1, v), rho)[0];
            prop_assert!((p - grid_prox_1d(weight, v, rho)).abs() < 1e-6);
        }

        #[test]
        fn l1_prox_is_nonexpansive(a in vec3(), b in vec3(), weight in 0.0..3.0f64, rho in 0.01..5.0f64) {
            let h = L1Regularizer::new(weight).unwrap();
            prop_assert!((h.prox(&a, rho) - h.prox(&b, rho)).norm() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn box_projection_properties(a in vec3(), b in vec3()) {
            let set = BoxSet::new(
                DVector::from_vec(vec![-1.0, -2.25, 0.0]),
                DVector::from_vec(vec![1.0, 2.25, 5.0]),
            ).unwrap();
            let pa = set.project(&a);
            prop_assert!(set.contains(&pa));
            prop_assert_eq!(set.project(&pa), pa.clone());
            prop_assert!((pa - set.project(&b)).norm() <= (&a - &b).norm() + 1e-12);
            for k in 0..3 {
                prop_assert_eq!(set.project(&a)[k], a[k].clamp(set.lo()[k], set.hi()[k]));
            }
        }
    }
}
