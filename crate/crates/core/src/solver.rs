//! SVM solvers.
//!
//! Both solvers run dual coordinate descent for a fixed bias, nested in a
//! bisection over the bias. [`reference_solve`] runs it to a tight tolerance
//! and is used as ground truth and for training on subsets; [`approx_svm`]
//! stops early and is used for the coarse solution that seeds the
//! sensitivity bounds. Both report a certified lower bound on the optimum.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::objective::{dot, objective_unchecked, Hyperplane, ObjectiveContext};
use crate::rng::{rng_for, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Epoch budget per bias value of the coarse solver.
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Stopping tolerance of the reference solver (max KKT violation, in
    /// margin units).
    pub tolerance: f64,
    /// Stopping tolerance of the coarse solver.
    pub coarse_tolerance: f64,
    /// Certified relative gap at which the coarse solver stops searching
    /// for the bias.
    pub coarse_gap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lambda: 1.0,
            seed: 0,
            tolerance: 1e-9,
            coarse_tolerance: 1e-3,
            coarse_gap: 5e-2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if !(self.tolerance > 0.0 && self.coarse_tolerance > 0.0) {
            return Err(Error::param("solver tolerances must be positive"));
        }
        if !(self.coarse_gap >= 0.0) {
            return Err(Error::param("coarse gap must be nonnegative"));
        }
        ObjectiveContext::new(self.lambda, 1.0)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub w: Hyperplane,
    /// `F(S, w)` at the returned `w`.
    pub objective: f64,
    /// Certified lower bound on `min_w F(S, w)`.
    pub lower_bound: f64,
    /// Total coordinate-descent epochs.
    pub iterations: usize,
}

impl SolveOutput {
    /// Certified sub-optimality of `w`.
    pub fn gap(&self) -> f64 {
        (self.objective - self.lower_bound).max(0.0)
    }
}

/// Positions of the points sorted by id (ties by position). Solvers walk
/// the points in an order derived from this one so their trajectory does not
/// depend on how the points happen to be stored.
fn id_order(ds: &WeightedDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.id(i), i));
    order
}

/// Coarse solution of the SVM on `(P, u)` evaluated with `U = U[P]`.
pub fn approx_svm(ds: &WeightedDataset, cfg: &SolverConfig) -> Result<SolveOutput> {
    approx_svm_with_norm(ds, ds.total_weight(), cfg)
}

/// Coarse solve with normalization `u_norm`: loose KKT tolerance, at most
/// `cfg.epochs` epochs per bias value, bias bisection to relative `1e-6` or
/// until the certified gap drops below `cfg.coarse_gap`.
pub fn approx_svm_with_norm(
    ds: &WeightedDataset,
    u_norm: f64,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    cfg.validate()?;
    dual_solve(ds, u_norm, cfg, cfg.coarse_tolerance, cfg.epochs, 1e-6, cfg.coarse_gap)
}

/// Ground-truth solve of the SVM on `(P, u)` with `U = U[P]`.
pub fn reference_solve(ds: &WeightedDataset, cfg: &SolverConfig) -> Result<SolveOutput> {
    reference_solve_with_norm(ds, ds.total_weight(), cfg)
}

/// High-accuracy solve of `min_w F(S, w)` with normalization `u_norm`.
pub fn reference_solve_with_norm(
    ds: &WeightedDataset,
    u_norm: f64,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    cfg.validate()?;
    dual_solve(ds, u_norm, cfg, cfg.tolerance.max(1e-14), 20_000, 1e-12, 0.0)
}

/// Sub-optimality `xi` of a coarse solution, certified by duality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub coarse: SolveOutput,
    pub xi: f64,
}

/// Runs [`approx_svm_with_norm`]; `xi = F(w~) - (dual lower bound)`, so
/// `F(w~) - xi <= opt` holds exactly.
pub fn estimate_xi(ds: &WeightedDataset, u_norm: f64, cfg: &SolverConfig) -> Result<XiEstimate> {
    let coarse = approx_svm_with_norm(ds, u_norm, cfg)?;
    Ok(XiEstimate {
        xi: coarse.gap(),
        coarse,
    })
}

/// `F(w~) - xi`, floored at `1e-12 F(w~)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptTilde {
    pub value: f64,
    /// Set when the floor was applied.
    pub clamped: bool,
}

pub fn opt_tilde(f_coarse: f64, xi: f64) -> Result<OptTilde> {
    if !(xi >= 0.0) {
        return Err(Error::param(format!("xi must be nonnegative, got {xi}")));
    }
    if f_coarse < 0.0 {
        return Err(Error::param("objective values are nonnegative"));
    }
    let floor = if f_coarse > 0.0 { 1e-12 * f_coarse } else { 1e-12 };
    let raw = f_coarse - xi;
    if raw < floor || raw <= 0.0 {
        log::warn!("opt estimate {raw} clamped to {floor}; sensitivities will be conservative");
        Ok(OptTilde {
            value: floor,
            clamped: true,
        })
    } else {
        Ok(OptTilde {
            value: raw,
            clamped: false,
        })
    }
}

/// Dual state for a fixed bias.
struct DualState<'a> {
    ds: &'a WeightedDataset,
    order: Vec<usize>,
    cap: Vec<f64>,
    diag: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    rng: crate::rng::Rng,
}

impl<'a> DualState<'a> {
    fn new(ds: &'a WeightedDataset, cap: Vec<f64>, seed: u64) -> Self {
        let d = ds.dim();
        let diag = (0..ds.len())
            .map(|i| ds.x(i)[..d].iter().map(|v| v * v).sum())
            .collect();
        Self {
            ds,
            order: id_order(ds),
            alpha: vec![0.0; ds.len()],
            w: vec![0.0; d],
            cap,
            diag,
            rng: rng_for(seed, stream::REFERENCE),
        }
    }

    /// Coordinate descent on
    /// `max sum_i a_i (1 - y_i b) - ||sum_i a_i y_i x_i||^2 / 2, 0 <= a <= C`,
    /// with shrinking of coordinates stuck at a bound. Returns the number of
    /// epochs.
    fn solve(&mut self, bias: f64, tol: f64, max_epochs: usize) -> usize {
        let ds = self.ds;
        let d = ds.dim();
        let n = self.order.len();
        let mut active = n;
        let mut pg_max_old = f64::INFINITY;
        let mut pg_min_old = f64::NEG_INFINITY;
        let mut epoch = 0;
        while epoch < max_epochs {
            epoch += 1;
            self.order[..active].shuffle(&mut self.rng);
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            let mut k = 0;
            while k < active {
                let i = self.order[k];
                let x = &ds.x(i)[..d];
                let y = ds.y(i);
                let g = y * dot(&self.w, x) - (1.0 - y * bias);
                let a = self.alpha[i];
                let c = self.cap[i];
                let pg;
                if a <= 0.0 {
                    if g > pg_max_old {
                        active -= 1;
                        self.order.swap(k, active);
                        continue;
                    }
                    pg = g.min(0.0);
                } else if a >= c {
                    if g < pg_min_old {
                        active -= 1;
                        self.order.swap(k, active);
                        continue;
                    }
                    pg = g.max(0.0);
                } else {
                    pg = g;
                }
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                k += 1;
                if pg == 0.0 {
                    continue;
                }
                let q = self.diag[i];
                let next = if q > 0.0 {
                    (a - g / q).clamp(0.0, c)
                } else if g < 0.0 {
                    c
                } else {
                    0.0
                };
                let delta = (next - a) * y;
                if delta != 0.0 {
                    for (wv, xv) in self.w.iter_mut().zip(x) {
                        *wv += delta * xv;
                    }
                }
                self.alpha[i] = next;
            }
            if active == 0 || pg_max - pg_min <= tol {
                if active == n {
                    return epoch;
                }
                active = n;
                pg_max_old = f64::INFINITY;
                pg_min_old = f64::NEG_INFINITY;
                continue;
            }
            pg_max_old = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
            pg_min_old = if pg_min >= 0.0 { f64::NEG_INFINITY } else { pg_min };
        }
        max_epochs
    }

    /// `sum_i a_i y_i`; the negative derivative of the partial minimum in
    /// the bias.
    fn balance(&self) -> f64 {
        (0..self.ds.len())
            .map(|i| self.alpha[i] * self.ds.y(i))
            .sum()
    }

    fn hyperplane(&self, bias: f64) -> Vec<f64> {
        let mut w = self.w.clone();
        w.push(bias);
        w
    }
}

/// Dual objective `sum a - ||sum a y x||^2 / 2` of the problem with bias.
/// Only a lower bound when `sum a y = 0`.
fn full_dual(ds: &WeightedDataset, alpha: &[f64]) -> f64 {
    let d = ds.dim();
    let mut v = vec![0.0; d];
    let mut lin = 0.0;
    for (i, &a) in alpha.iter().enumerate() {
        lin += a;
        let ay = a * ds.y(i);
        for (vj, xj) in v.iter_mut().zip(&ds.x(i)[..d]) {
            *vj += ay * xj;
        }
    }
    lin - 0.5 * v.iter().map(|z| z * z).sum::<f64>()
}

fn class_sums(ds: &WeightedDataset, alpha: &[f64]) -> (f64, f64) {
    let (mut pos, mut neg) = (0.0, 0.0);
    for (i, &a) in alpha.iter().enumerate() {
        if ds.y(i) > 0.0 {
            pos += a;
        } else {
            neg += a;
        }
    }
    (pos, neg)
}

/// Feasible point obtained by shrinking the heavier class.
fn rescaled(ds: &WeightedDataset, alpha: &[f64]) -> Vec<f64> {
    let (pos, neg) = class_sums(ds, alpha);
    let (sp, sn) = if pos > neg {
        (if pos > 0.0 { neg / pos } else { 0.0 }, 1.0)
    } else {
        (1.0, if neg > 0.0 { pos / neg } else { 0.0 })
    };
    alpha
        .iter()
        .enumerate()
        .map(|(i, a)| a * if ds.y(i) > 0.0 { sp } else { sn })
        .collect()
}

/// Best certified dual value from the dual points with positive and
/// negative balance: each rescaled on its own, and their balanced convex
/// combination.
fn certified_dual(ds: &WeightedDataset, above: Option<&[f64]>, below: Option<&[f64]>) -> f64 {
    let mut best = 0.0f64;
    for a in [above, below].into_iter().flatten() {
        best = best.max(full_dual(ds, &rescaled(ds, a)));
    }
    if let (Some(a), Some(b)) = (above, below) {
        let ga: f64 = a.iter().enumerate().map(|(i, v)| v * ds.y(i)).sum();
        let gb: f64 = b.iter().enumerate().map(|(i, v)| v * ds.y(i)).sum();
        if ga > 0.0 && gb < 0.0 {
            let theta = -gb / (ga - gb);
            let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect();
            best = best.max(full_dual(ds, &rescaled(ds, &mix)));
        }
    }
    best
}

/// Bias search state: the dual solver plus the best primal point seen and
/// the latest dual points on each side of the balance root.
struct BiasSearch<'a> {
    ds: &'a WeightedDataset,
    ctx: ObjectiveContext,
    state: DualState<'a>,
    scale: f64,
    tol: f64,
    max_epochs: usize,
    best_w: Vec<f64>,
    best_f: f64,
    epochs: usize,
    above: Option<Vec<f64>>,
    below: Option<Vec<f64>>,
}

impl BiasSearch<'_> {
    /// Solves the dual at `bias` and returns the balance `sum_i a_i y_i`,
    /// which is nonincreasing in the bias.
    fn visit(&mut self, bias: f64) -> f64 {
        self.epochs += self.state.solve(bias, self.tol, self.max_epochs);
        let w = self.state.hyperplane(bias);
        let f = objective_unchecked(self.ds, &w, &self.ctx);
        if f < self.best_f {
            self.best_f = f;
            self.best_w = w;
        }
        let g = self.state.balance();
        if g >= 0.0 {
            self.above = Some(self.state.alpha.clone());
        }
        if g <= 0.0 {
            self.below = Some(self.state.alpha.clone());
        }
        g
    }

    fn lower_bound(&self) -> f64 {
        let dual = certified_dual(self.ds, self.above.as_deref(), self.below.as_deref());
        (self.scale * dual).min(self.best_f)
    }

    fn gap(&self) -> f64 {
        (self.best_f - self.lower_bound()) / self.best_f.max(f64::MIN_POSITIVE)
    }
}

/// Writing `F = s (||w_{1:d}||^2 / 2 + sum_i C_i h_i)` with `s = V / U` and
/// `C_i = lambda u_i / s`, the bias is found by bisection on the sign of the
/// derivative of the partial minimum, and each partial minimum is solved in
/// the dual by warm-started coordinate descent. The bisection stops when the
/// bias interval is below `bias_tol` (relative) or the certified relative
/// gap is below `gap_tol`. Returns the best primal point evaluated and the
/// certified dual bound.
fn dual_solve(
    ds: &WeightedDataset,
    u_norm: f64,
    cfg: &SolverConfig,
    tol: f64,
    max_epochs: usize,
    bias_tol: f64,
    gap_tol: f64,
) -> Result<SolveOutput> {
    let ctx = ObjectiveContext::new(cfg.lambda, u_norm)?;
    let total = ds.total_weight();
    if ds.is_empty() || total <= 0.0 {
        return Ok(SolveOutput {
            w: Hyperplane::zeros(ds.dim()),
            objective: 0.0,
            lower_bound: 0.0,
            iterations: 0,
        });
    }
    let scale = total / u_norm;
    let cap: Vec<f64> = ds.weights().iter().map(|u| cfg.lambda * u / scale).collect();
    let best_w = vec![0.0; ds.width()];
    let best_f = objective_unchecked(ds, &best_w, &ctx);
    let mut search = BiasSearch {
        ds,
        ctx,
        state: DualState::new(ds, cap, cfg.seed),
        scale,
        tol,
        max_epochs,
        best_w,
        best_f,
        epochs: 0,
        above: None,
        below: None,
    };

    // Bracket the root of the balance.
    let mut lo = 0.0;
    let mut hi = 0.0;
    let g0 = search.visit(0.0);
    if g0 > 0.0 {
        let mut step = 1.0;
        loop {
            hi = step;
            let g = search.visit(hi);
            if g <= 0.0 || step > 1e12 {
                break;
            }
            lo = hi;
            step *= 2.0;
        }
    } else if g0 < 0.0 {
        let mut step = 1.0;
        loop {
            lo = -step;
            let g = search.visit(lo);
            if g >= 0.0 || step > 1e12 {
                break;
            }
            hi = lo;
            step *= 2.0;
        }
    }
    let mut bisections = 0;
    while hi - lo > bias_tol * (1.0 + lo.abs().max(hi.abs())) && bisections < 200 {
        if search.gap() <= gap_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g = search.visit(mid);
        if g > 0.0 {
            lo = mid;
        } else if g < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
        }
        bisections += 1;
        log::trace!("bisection {bisections}: [{lo}, {hi}], gap {}, epochs {}", search.gap(), search.epochs);
    }
    Ok(SolveOutput {
        lower_bound: search.lower_bound(),
        w: Hyperplane::new(search.best_w)?,
        objective: search.best_f,
        iterations: search.epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::datagen::gen_blobs;

    #[test]
    fn opt_tilde_examples() {
        assert_eq!(opt_tilde(10.0, 1.0).unwrap(), OptTilde { value: 9.0, clamped: false });
        let c = opt_tilde(1.0, 2.0).unwrap();
        assert!(c.clamped);
        assert_eq!(c.value, 1e-12);
        assert_eq!(opt_tilde(3.5, 0.0).unwrap().value, 3.5);
        assert!(opt_tilde(1.0, -1.0).is_err());
    }

    /// Two points at x = +1 (y = +1) and x = -1 (y = -1), U = 2, lambda = 1.
    /// By symmetry b* = 0 and F(w) = w^2/2 + 2 max(0, 1 - w), minimized at
    /// w = 1 with F = 0.5.
    #[test]
    fn reference_matches_analytic_1d() {
        let ds = WeightedDataset::from_raw(1, &[1.0, -1.0], vec![Label::Pos, Label::Neg], None).unwrap();
        let out = reference_solve(&ds, &SolverConfig::default()).unwrap();
        assert!((out.objective - 0.5).abs() < 1e-3, "{}", out.objective);
        assert!((out.w.w[0] - 1.0).abs() < 1e-3);
        assert!(out.lower_bound <= out.objective + 1e-12);
        assert!(out.lower_bound > 0.5 - 1e-6);
    }

    /// Asymmetric weights move the analytic optimum: points at +1 (u = 3)
    /// and -1 (u = 1), lambda = 0.5. Minimizing over (w, b) in closed form:
    /// the objective is w^2/2 + 1.5 (1 - w - b)_+ + 0.5 (1 - w + b)_+;
    /// at the optimum both margins are tight (b = 0 side) or the heavy
    /// point is tight. Brute-force grid search supplies the reference.
    #[test]
    fn reference_matches_grid_search_weighted() {
        let ds = WeightedDataset::from_raw(
            1,
            &[1.0, -1.0],
            vec![Label::Pos, Label::Neg],
            Some(vec![3.0, 1.0]),
        )
        .unwrap();
        let cfg = SolverConfig {
            lambda: 0.5,
            ..Default::default()
        };
        let ctx = ObjectiveContext::for_dataset(0.5, &ds).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..=600 {
            for j in 0..=600 {
                let w = -1.0 + i as f64 * 0.005;
                let b = -1.5 + j as f64 * 0.005;
                best = best.min(objective_unchecked(&ds, &[w, b], &ctx));
            }
        }
        let out = reference_solve(&ds, &cfg).unwrap();
        assert!(out.objective <= best + 1e-9);
        assert!((out.objective - best).abs() < 1e-3);
    }

    #[test]
    fn approx_within_five_percent_of_reference_on_blobs() {
        let ds = gen_blobs(100, 2, 10.0, 1).unwrap();
        let cfg = SolverConfig::default();
        let approx = approx_svm(&ds, &cfg).unwrap();
        let reference = reference_solve(&ds, &cfg).unwrap();
        assert!(approx.objective >= reference.objective - 1e-9);
        assert!(
            approx.objective <= 1.05 * reference.objective,
            "approx {} ref {}",
            approx.objective,
            reference.objective
        );
    }

    #[test]
    fn single_point_does_not_exceed_zero_query() {
        let ds = WeightedDataset::from_raw(1, &[0.0], vec![Label::Pos], None).unwrap();
        let cfg = SolverConfig::default();
        assert!(approx_svm(&ds, &cfg).unwrap().objective <= 1.0);
        assert!(reference_solve(&ds, &cfg).unwrap().objective <= 1.0);
    }

    #[test]
    fn solvers_are_deterministic_and_order_invariant() {
        let ds = gen_blobs(60, 3, 4.0, 9).unwrap();
        let cfg = SolverConfig {
            seed: 5,
            ..Default::default()
        };
        let a = approx_svm(&ds, &cfg).unwrap();
        let b = approx_svm(&ds, &cfg).unwrap();
        assert_eq!(a, b);

        let rev: Vec<usize> = (0..ds.len()).rev().collect();
        let permuted = ds.select(&rev, rev.iter().map(|&i| ds.weight(i)).collect()).unwrap();
        let c = approx_svm(&permuted, &cfg).unwrap();
        for (x, y) in a.w.w.iter().zip(&c.w.w) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
        let ra = reference_solve(&ds, &cfg).unwrap();
        let rc = reference_solve(&permuted, &cfg).unwrap();
        assert!((ra.objective - rc.objective).abs() < 1e-9 * ra.objective);
    }

    #[test]
    fn reference_certified_gap_is_small() {
        let ds = gen_blobs(400, 4, 3.0, 2).unwrap();
        let out = reference_solve(&ds, &SolverConfig::default()).unwrap();
        let lb = out.lower_bound;
        assert!(lb <= out.objective);
        assert!((out.objective - lb) / out.objective < 1e-6, "{} {}", out.objective, lb);
    }

    #[test]
    fn coarse_solution_is_certified() {
        let ds = gen_blobs(1000, 3, 4.0, 3).unwrap();
        let cfg = SolverConfig::default();
        let reference = reference_solve(&ds, &cfg).unwrap();
        let est = estimate_xi(&ds, ds.total_weight(), &cfg).unwrap();
        assert!(est.coarse.objective >= reference.objective - 1e-9);
        assert!(est.coarse.objective <= 1.05 * reference.objective);
        let opt = opt_tilde(est.coarse.objective, est.xi).unwrap();
        assert!(opt.value <= reference.objective + 1e-9);
        assert!(opt.value >= 0.9 * reference.objective, "{} {}", opt.value, reference.objective);
    }

    #[test]
    fn frozen_normalization_scales_regularizer() {
        let ds = gen_blobs(40, 2, 2.0, 5).unwrap();
        let cfg = SolverConfig::default();
        let a = reference_solve_with_norm(&ds, 400.0, &cfg).unwrap();
        let ctx = ObjectiveContext::new(1.0, 400.0).unwrap();
        assert!((objective_unchecked(&ds, &a.w.w, &ctx) - a.objective).abs() < 1e-12);
        assert!(a.gap() < 1e-6 * a.objective);
    }
}
