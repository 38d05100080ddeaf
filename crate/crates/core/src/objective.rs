//! The regularized SVM cost.
//!
//! For a weighted set `(P, u)` the per-point cost is
//! `f(p, w) = ||w_{1:d}||^2 / (2 U) + lambda * h(p, w)` with hinge loss
//! `h(p, w) = max(0, 1 - y <x, w>)`, and the aggregate is
//! `F(P, w) = sum_p u(p) f(p, w)`. The bias coordinate `w_{d+1}` is not
//! regularized.
//!
//! `U` is a field of [`ObjectiveContext`] rather than the total weight of the
//! set being evaluated: a coreset is always evaluated with the total weight
//! of the set it was drawn from, which keeps its objective an unbiased
//! estimate of the full objective.

use serde::{Deserialize, Serialize};

use crate::data::{PointRef, WeightedDataset};
use crate::error::{Error, Result};
use crate::par;

/// A query vector of length `d + 1`; the last entry is the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
}

impl Hyperplane {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::ZeroDimension);
        }
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { w })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim + 1],
        }
    }

    /// Raw feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.w.len() - 1
    }

    pub fn normal(&self) -> &[f64] {
        &self.w[..self.w.len() - 1]
    }

    pub fn bias(&self) -> f64 {
        self.w[self.w.len() - 1]
    }

    /// `||w_{1:d}||^2`.
    pub fn normal_sq(&self) -> f64 {
        self.normal().iter().map(|v| v * v).sum()
    }
}

/// Regularization parameter and normalization constant for evaluating `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveContext {
    pub lambda: f64,
    pub u_norm: f64,
}

impl ObjectiveContext {
    pub fn new(lambda: f64, u_norm: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::param(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        if !(u_norm > 0.0 && u_norm.is_finite()) {
            return Err(Error::param(format!(
                "normalization weight must be positive, got {u_norm}"
            )));
        }
        Ok(Self { lambda, u_norm })
    }

    /// Context for evaluating a set against itself.
    pub fn for_dataset(lambda: f64, ds: &WeightedDataset) -> Result<Self> {
        Self::new(lambda, ds.total_weight())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn hinge_raw(x: &[f64], y: f64, w: &[f64]) -> f64 {
    (1.0 - y * dot(x, w)).max(0.0)
}

/// `max(0, 1 - y <x, w>)`.
pub fn hinge_loss(p: &PointRef<'_>, w: &Hyperplane) -> Result<f64> {
    if p.x.len() != w.w.len() {
        return Err(Error::DimensionMismatch {
            expected: p.x.len(),
            got: w.w.len(),
        });
    }
    Ok(hinge_raw(p.x, p.y.sign(), &w.w))
}

/// Per-point cost `f(p, w)` (unweighted).
pub fn point_cost(p: &PointRef<'_>, w: &Hyperplane, ctx: &ObjectiveContext) -> Result<f64> {
    if ctx.u_norm <= 0.0 {
        return Err(Error::param("normalization weight must be positive"));
    }
    Ok(w.normal_sq() / (2.0 * ctx.u_norm) + ctx.lambda * hinge_loss(p, w)?)
}

fn check_dims(ds: &WeightedDataset, w: &Hyperplane) -> Result<()> {
    if ds.width() != w.w.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.width(),
            got: w.w.len(),
        });
    }
    Ok(())
}

/// Weighted hinge sum `sum_p u(p) h(p, w)`.
pub fn weighted_hinge(ds: &WeightedDataset, w: &[f64]) -> f64 {
    par::chunked_sum(ds.len(), |r| {
        r.map(|i| ds.weight(i) * hinge_raw(ds.x(i), ds.y(i), w)).sum()
    })
}

/// `F(S, w) = sum_p u(p) f(p, w)` evaluated with `ctx.u_norm` as `U`.
pub fn svm_objective(ds: &WeightedDataset, w: &Hyperplane, ctx: &ObjectiveContext) -> Result<f64> {
    check_dims(ds, w)?;
    if ds.is_empty() {
        log::warn!("objective of an empty collection is 0");
        return Ok(0.0);
    }
    Ok(objective_unchecked(ds, &w.w, ctx))
}

pub(crate) fn objective_unchecked(ds: &WeightedDataset, w: &[f64], ctx: &ObjectiveContext) -> f64 {
    let d = w.len() - 1;
    let norm_sq: f64 = w[..d].iter().map(|v| v * v).sum();
    ds.total_weight() / (2.0 * ctx.u_norm) * norm_sq + ctx.lambda * weighted_hinge(ds, w)
}

/// A subgradient of `F(S, .)` at `w`. At margin exactly 1 the hinge
/// contributes 0.
pub fn subgradient(ds: &WeightedDataset, w: &Hyperplane, ctx: &ObjectiveContext) -> Result<Vec<f64>> {
    check_dims(ds, w)?;
    let width = ds.width();
    let hinge_part = par::chunked_vec_sum(ds.len(), width, |r| {
        let mut acc = vec![0.0; width];
        for i in r {
            let y = ds.y(i);
            let x = ds.x(i);
            if y * dot(x, &w.w) < 1.0 {
                let c = ds.weight(i) * y;
                for (a, xv) in acc.iter_mut().zip(x) {
                    *a += c * xv;
                }
            }
        }
        acc
    });
    let scale = ds.total_weight() / ctx.u_norm;
    let d = width - 1;
    let mut g: Vec<f64> = hinge_part.iter().map(|h| -ctx.lambda * h).collect();
    for j in 0..d {
        g[j] += scale * w.w[j];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: &[f64], y: Label) -> crate::data::LabeledPoint {
        crate::data::LabeledPoint {
            id: 0,
            x: x.to_vec(),
            y,
            u: 1.0,
        }
    }

    #[test]
    fn hinge_examples() {
        let w = Hyperplane::new(vec![1.0, 0.0]).unwrap();
        let p0 = pt(&[0.0, 1.0], Label::Pos);
        let p1 = pt(&[1.0, 1.0], Label::Pos);
        let p2 = pt(&[0.5, 1.0], Label::Neg);
        fn r(p: &crate::data::LabeledPoint) -> PointRef<'_> {
            PointRef {
                id: p.id,
                x: &p.x,
                y: p.y,
                u: p.u,
            }
        }
        assert_eq!(hinge_loss(&r(&p0), &w).unwrap(), 1.0);
        assert_eq!(hinge_loss(&r(&p1), &w).unwrap(), 0.0);
        assert_eq!(hinge_loss(&r(&p2), &w).unwrap(), 1.5);
        let bad = Hyperplane::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(hinge_loss(&r(&p0), &bad).is_err());
    }

    #[test]
    fn point_cost_examples() {
        let ctx = ObjectiveContext::new(0.5, 2.0).unwrap();
        let p = pt(&[1.0, 1.0, 1.0], Label::Pos);
        let r = PointRef {
            id: 0,
            x: &p.x,
            y: p.y,
            u: 1.0,
        };
        assert_eq!(point_cost(&r, &Hyperplane::zeros(2), &ctx).unwrap(), 0.5);
        // ||w_{1:d}||^2 = 2, margin 2 >= 1, U = 2, lambda = 1.
        let ctx1 = ObjectiveContext::new(1.0, 2.0).unwrap();
        let w = Hyperplane::new(vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(point_cost(&r, &w, &ctx1).unwrap(), 0.5);
        assert!(ObjectiveContext::new(0.0, 1.0).is_err());
        assert!(ObjectiveContext::new(1.0, 0.0).is_err());
    }

    #[test]
    fn bias_is_not_regularized() {
        let ctx = ObjectiveContext::new(1.0, 1.0).unwrap();
        let p = pt(&[0.0, 1.0], Label::Pos);
        let r = PointRef {
            id: 0,
            x: &p.x,
            y: p.y,
            u: 1.0,
        };
        let w = Hyperplane::new(vec![0.0, 5.0]).unwrap();
        assert_eq!(point_cost(&r, &w, &ctx).unwrap(), 0.0);
    }

    fn random_ds(rng: &mut ChaCha8Rng, n: usize, d: usize) -> WeightedDataset {
        let raw: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Pos } else { Label::Neg })
            .collect();
        let weights = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        WeightedDataset::from_raw(d, &raw, labels, Some(weights)).unwrap()
    }

    #[test]
    fn objective_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_ds(&mut rng, 3, 2);
        let ctx = ObjectiveContext::for_dataset(0.7, &ds).unwrap();
        let w = Hyperplane::new(vec![0.3, -1.2, 0.4]).unwrap();
        let mut brute = 0.0;
        for i in 0..3 {
            let x = ds.x(i);
            let m = ds.y(i) * (x[0] * w.w[0] + x[1] * w.w[1] + x[2] * w.w[2]);
            let reg = (w.w[0] * w.w[0] + w.w[1] * w.w[1]) / (2.0 * ds.total_weight());
            brute += ds.weight(i) * (reg + 0.7 * f64::max(0.0, 1.0 - m));
        }
        let got = svm_objective(&ds, &w, &ctx).unwrap();
        assert!((got - brute).abs() < 1e-12 * brute.max(1.0));
    }

    #[test]
    fn full_set_decomposition_and_zero_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_ds(&mut rng, 40, 3);
        let ctx = ObjectiveContext::for_dataset(0.3, &ds).unwrap();
        let zero = Hyperplane::zeros(3);
        let f0 = svm_objective(&ds, &zero, &ctx).unwrap();
        assert!((f0 - 0.3 * ds.total_weight()).abs() < 1e-12 * f0);
        let w = Hyperplane::new(vec![0.5, 1.0, -0.25, 0.1]).unwrap();
        let f = svm_objective(&ds, &w, &ctx).unwrap();
        let decomposed = w.normal_sq() / 2.0 + 0.3 * weighted_hinge(&ds, &w.w);
        assert!((f - decomposed).abs() < 1e-12 * f);
    }

    #[test]
    fn subgradient_simple_cases() {
        let ds = WeightedDataset::from_raw(1, &[0.0], vec![Label::Pos], None).unwrap();
        let ctx = ObjectiveContext::new(0.5, 1.0).unwrap();
        let g = subgradient(&ds, &Hyperplane::zeros(1), &ctx).unwrap();
        assert_eq!(g, vec![-0.0, -0.5]);

        let sep = WeightedDataset::from_raw(1, &[3.0, -3.0], vec![Label::Pos, Label::Neg], None).unwrap();
        let ctx = ObjectiveContext::for_dataset(1.0, &sep).unwrap();
        let w = Hyperplane::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(subgradient(&sep, &w, &ctx).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn subgradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 20 {
            let ds = random_ds(&mut rng, 15, 3);
            let ctx = ObjectiveContext::for_dataset(0.8, &ds).unwrap();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let near_kink = (0..ds.len()).any(|i| (ds.y(i) * dot(ds.x(i), &w) - 1.0).abs() < 1e-4);
            if near_kink {
                continue;
            }
            let wp = Hyperplane::new(w.clone()).unwrap();
            let g = subgradient(&ds, &wp, &ctx).unwrap();
            let h = 1e-6;
            for j in 0..4 {
                let mut a = w.clone();
                let mut b = w.clone();
                a[j] += h;
                b[j] -= h;
                let fa = svm_objective(&ds, &Hyperplane::new(a).unwrap(), &ctx).unwrap();
                let fb = svm_objective(&ds, &Hyperplane::new(b).unwrap(), &ctx).unwrap();
                let fd = (fa - fb) / (2.0 * h);
                let scale = g[j].abs().max(1.0);
                assert!((fd - g[j]).abs() / scale < 1e-5, "j={j} fd={fd} g={}", g[j]);
            }
            checked += 1;
        }
    }

    #[test]
    fn objective_is_nonnegative_and_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_ds(&mut rng, 30, 2);
        let ctx = ObjectiveContext::for_dataset(0.6, &ds).unwrap();
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let fa = objective_unchecked(&ds, &a, &ctx);
            let fb = objective_unchecked(&ds, &b, &ctx);
            let fm = objective_unchecked(&ds, &mid, &ctx);
            assert!(fa >= 0.0 && fb >= 0.0);
            assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (fa + fb));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn permutation_and_zero_weights_do_not_matter(
            seed in 0u64..1000,
            n in 1usize..40,
            shift in 0usize..40,
            w in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ds(&mut rng, n, 2);
            let ctx = ObjectiveContext::for_dataset(0.5, &ds).unwrap();
            let f = objective_unchecked(&ds, &w, &ctx);
            let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let weights = order.iter().map(|&i| ds.weight(i)).collect();
            let rotated = ds.select(&order, weights).unwrap();
            let fr = objective_unchecked(&rotated, &w, &ctx);
            proptest::prop_assert!((f - fr).abs() <= 1e-12 * f.max(1.0));
            let mut idx: Vec<usize> = (0..n).collect();
            idx.push(0);
            let mut weights: Vec<f64> = (0..n).map(|i| ds.weight(i)).collect();
            weights.push(0.0);
            let padded = ds.select(&idx, weights).unwrap();
            let fp = objective_unchecked(&padded, &w, &ctx);
            proptest::prop_assert!((f - fp).abs() <= 1e-12 * f.max(1.0));
        }
    }
}
