//! Limited-memory BFGS with simple bounds (L-BFGS-B).
//!
//! Follows the Byrd–Lu–Nocedal–Zhu scheme: generalized Cauchy point along the
//! projected steepest-descent path, direct primal subspace minimization over
//! the free variables, then a strong-Wolfe line search on the segment towards
//! the subspace minimizer. The compact form `B = θI - W M Wᵀ` is rebuilt from
//! the stored pairs each iteration; memory is small so this stays cheap.
//!
//! Callers maximize; internally the negated function is minimized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ClusterError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self { lower: vec![lo; n], upper: vec![hi; n] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *l <= *v && *v <= *u)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(ClusterError::DimensionMismatch { expected: n, got: self.lower.len() });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(ClusterError::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Tolerance on the infinity norm of the projected gradient.
    pub grad_tol: f64,
    /// Tolerance on the relative change of the objective.
    pub f_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { memory: 10, max_iters: 100, grad_tol: 1e-6, f_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No further progress along any descent direction.
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptTrace {
    /// Objective at the start point followed by every accepted iterate.
    pub values: Vec<f64>,
    pub projected_grad_norms: Vec<f64>,
    pub termination: Termination,
    pub evaluations: usize,
}

/// Maximizes `f` subject to `bounds`, with `f` and `grad` supplied separately.
pub fn maximize<F, G>(mut f: F, mut grad: G, x0: &[f64], bounds: &Bounds, cfg: &OptimizerConfig) -> Result<(Vec<f64>, OptTrace)>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    maximize_with(|x| (f(x), grad(x)), x0, bounds, cfg)
}

/// Maximizes with a combined value-and-gradient callback.
pub fn maximize_with<FG>(mut fg: FG, x0: &[f64], bounds: &Bounds, cfg: &OptimizerConfig) -> Result<(Vec<f64>, OptTrace)>
where
    FG: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    bounds.validate(n)?;
    if cfg.memory == 0 || cfg.max_iters == 0 {
        return Err(ClusterError::InvalidArgument("optimizer memory and iteration cap must be positive".into()));
    }
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let (v, g) = fg(x);
        (-v, g.into_iter().map(|v| -v).collect::<Vec<f64>>())
    };

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut gx) = eval(&x);
    if !fx.is_finite() || gx.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NumericalFailure {
            message: "non-finite objective or gradient at the start point".into(),
            iterate: Some(x),
        });
    }

    let mut mem = Memory::new(n, cfg.memory);
    let mut values = vec![-fx];
    let mut pg_norms = vec![projected_grad_norm(&x, &gx, bounds)];
    let mut termination = Termination::MaxIterations;

    let mut iter = 0;
    while iter < cfg.max_iters {
        if *pg_norms.last().unwrap() <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let compact = mem.compact();
        let xcp = cauchy_point(&x, &gx, bounds, &compact);
        let xbar = subspace_minimum(&x, &gx, bounds, &compact, &xcp);
        let d: Vec<f64> = xbar.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slope: f64 = d.iter().zip(&gx).map(|(a, b)| a * b).sum();
        let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dnorm == 0.0 || !(slope < 0.0) {
            if mem.is_empty() {
                termination = Termination::LineSearchFailure;
                break;
            }
            mem.clear();
            continue;
        }

        let max_step = max_feasible_step(&x, &d, bounds).min(1e10);
        let init = if mem.is_empty() { (1.0 / dnorm).min(1.0) } else { 1.0 };
        let init = init.min(max_step);
        let search = wolfe_search(&mut eval, &x, &d, bounds, fx, slope, init, max_step);
        let Some((x_new, f_new, g_new)) = search else {
            if mem.is_empty() {
                termination = Termination::LineSearchFailure;
                break;
            }
            mem.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        mem.push(s, y);

        let f_old = fx;
        x = x_new;
        fx = f_new;
        gx = g_new;
        iter += 1;
        values.push(-fx);
        pg_norms.push(projected_grad_norm(&x, &gx, bounds));

        if (f_old - fx) <= cfg.f_tol * f_old.abs().max(fx.abs()).max(1.0) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }
    if termination == Termination::MaxIterations && *pg_norms.last().unwrap() <= cfg.grad_tol {
        termination = Termination::GradientTolerance;
    }
    Ok((x, OptTrace { values, projected_grad_norms: pg_norms, termination, evaluations }))
}

fn projected_grad_norm(x: &[f64], g: &[f64], b: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .zip(b.lower.iter().zip(&b.upper))
        .map(|((xi, gi), (l, u))| ((xi - gi).clamp(*l, *u) - xi).abs())
        .fold(0.0, f64::max)
}

fn max_feasible_step(x: &[f64], d: &[f64], b: &Bounds) -> f64 {
    let mut step = f64::INFINITY;
    for i in 0..x.len() {
        if d[i] > 0.0 && b.upper[i].is_finite() {
            step = step.min((b.upper[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 && b.lower[i].is_finite() {
            step = step.min((b.lower[i] - x[i]) / d[i]);
        }
    }
    step.max(0.0)
}

struct Memory {
    n: usize,
    cap: usize,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

/// `B = θI - W M Wᵀ`; `w` is n×2m (empty when no pairs are stored).
struct Compact {
    theta: f64,
    w: DMatrix<f64>,
    m: DMatrix<f64>,
}

impl Compact {
    fn cols(&self) -> usize {
        self.w.ncols()
    }
}

impl Memory {
    fn new(n: usize, cap: usize) -> Self {
        Self { n, cap, s: Vec::new(), y: Vec::new() }
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        // curvature condition; skip the pair otherwise
        if !(sy > f64::EPSILON * yy) || !sy.is_finite() {
            return;
        }
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
    }

    fn compact(&self) -> Compact {
        let m = self.s.len();
        if m == 0 {
            return Compact { theta: 1.0, w: DMatrix::zeros(self.n, 0), m: DMatrix::zeros(0, 0) };
        }
        let s = DMatrix::from_fn(self.n, m, |r, c| self.s[c][r]);
        let y = DMatrix::from_fn(self.n, m, |r, c| self.y[c][r]);
        let last_y = y.column(m - 1);
        let theta = last_y.norm_squared() / last_y.dot(&s.column(m - 1));
        let sty = s.transpose() * &y;
        let sts = s.transpose() * &s;
        let mut inner = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            inner[(i, i)] = -sty[(i, i)];
            for j in 0..i {
                // L = strictly lower part of SᵀY
                inner[(m + i, j)] = sty[(i, j)];
                inner[(j, m + i)] = sty[(i, j)];
            }
            for j in 0..m {
                inner[(m + i, m + j)] = theta * sts[(i, j)];
            }
        }
        let mut w = DMatrix::zeros(self.n, 2 * m);
        w.columns_mut(0, m).copy_from(&y);
        w.columns_mut(m, m).copy_from(&(s * theta));
        let minv = inner.try_inverse().unwrap_or_else(|| DMatrix::zeros(2 * m, 2 * m));
        Compact { theta, w, m: minv }
    }
}

fn cauchy_point(x: &[f64], g: &[f64], b: &Bounds, cp: &Compact) -> Vec<f64> {
    let n = x.len();
    let theta = cp.theta;
    let mut t = vec![f64::INFINITY; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        if g[i] < 0.0 && b.upper[i].is_finite() {
            t[i] = (x[i] - b.upper[i]) / g[i];
        } else if g[i] > 0.0 && b.lower[i].is_finite() {
            t[i] = (x[i] - b.lower[i]) / g[i];
        }
        if t[i] > 0.0 {
            d[i] = -g[i];
        } else {
            t[i] = 0.0;
        }
    }
    let mut xcp = x.to_vec();
    if d.iter().all(|v| *v == 0.0) {
        return xcp;
    }
    let cols = cp.cols();
    let dvec = DVector::from_column_slice(&d);
    let mut p = if cols > 0 { cp.w.tr_mul(&dvec) } else { DVector::zeros(0) };
    let mut c = DVector::zeros(cols);
    let mut fp = -dvec.norm_squared();
    let fpp0 = -theta * fp;
    let mut fpp = if cols > 0 { fpp0 - p.dot(&(&cp.m * &p)) } else { fpp0 };
    fpp = fpp.max(f64::EPSILON * fpp0);
    let mut dtm = -fp / fpp;

    let mut order: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0 && t[i].is_finite()).collect();
    order.sort_by(|&a, &bb| t[a].total_cmp(&t[bb]).then(a.cmp(&bb)));
    let mut fixed = vec![false; n];
    let mut t_old = 0.0;
    for &bi in &order {
        let dt = t[bi] - t_old;
        if dtm < dt {
            break;
        }
        let xb = if d[bi] > 0.0 { b.upper[bi] } else { b.lower[bi] };
        let zb = xb - x[bi];
        xcp[bi] = xb;
        fixed[bi] = true;
        let gb = g[bi];
        if cols > 0 {
            c += &p * dt;
            let wb = cp.w.row(bi).transpose();
            let mwb = &cp.m * &wb;
            fp += dt * fpp + gb * gb + theta * gb * zb - gb * mwb.dot(&c);
            fpp += -theta * gb * gb - 2.0 * gb * mwb.dot(&p) - gb * gb * mwb.dot(&wb);
            p += &wb * gb;
        } else {
            fp += dt * fpp + gb * gb + theta * gb * zb;
            fpp -= theta * gb * gb;
        }
        fpp = fpp.max(f64::EPSILON * fpp0);
        d[bi] = 0.0;
        dtm = -fp / fpp;
        t_old = t[bi];
    }
    let dtm = dtm.max(0.0);
    let t_final = t_old + dtm;
    for i in 0..n {
        if !fixed[i] && d[i] != 0.0 {
            xcp[i] = (x[i] + t_final * d[i]).clamp(b.lower[i], b.upper[i]);
        }
    }
    xcp
}

/// `c = Wᵀ(xcp - x)` is recomputed directly rather than threaded through the
/// breakpoint loop; it is a single n×2m product.
fn subspace_minimum(x: &[f64], g: &[f64], b: &Bounds, cp: &Compact, xcp: &[f64]) -> Vec<f64> {
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|&i| xcp[i] > b.lower[i] && xcp[i] < b.upper[i]).collect();
    if free.is_empty() {
        return xcp.to_vec();
    }
    let theta = cp.theta;
    let cols = cp.cols();
    let dx = DVector::from_iterator(n, xcp.iter().zip(x).map(|(a, bb)| a - bb));
    let mut rhat = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i] + theta * dx[i]));
    let dhat = if cols > 0 {
        let c = cp.w.tr_mul(&dx);
        let mc = &cp.m * c;
        let wz = DMatrix::from_fn(free.len(), cols, |r, col| cp.w[(free[r], col)]);
        rhat -= &wz * &mc;
        let v = &cp.m * wz.tr_mul(&rhat);
        let nmat = DMatrix::identity(cols, cols) - (&cp.m * wz.tr_mul(&wz)) / theta;
        match nmat.lu().solve(&v) {
            Some(v) => -&rhat / theta - (&wz * v) / (theta * theta),
            None => -&rhat / theta,
        }
    } else {
        -&rhat / theta
    };
    let mut alpha: f64 = 1.0;
    for (r, &i) in free.iter().enumerate() {
        if dhat[r] > 0.0 {
            alpha = alpha.min((b.upper[i] - xcp[i]) / dhat[r]);
        } else if dhat[r] < 0.0 {
            alpha = alpha.min((b.lower[i] - xcp[i]) / dhat[r]);
        }
    }
    let alpha = alpha.max(0.0);
    let mut xbar = xcp.to_vec();
    for (r, &i) in free.iter().enumerate() {
        xbar[i] = (xcp[i] + alpha * dhat[r]).clamp(b.lower[i], b.upper[i]);
    }
    xbar
}

const C1: f64 = 1e-3;
const C2: f64 = 0.9;
const MAX_LS_EVALS: usize = 30;

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Strong-Wolfe search on `x + α d`, `α ∈ (0, max_step]`.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<E>(
    eval: &mut E,
    x: &[f64],
    d: &[f64],
    b: &Bounds,
    f0: f64,
    slope0: f64,
    init: f64,
    max_step: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut evals = 0;
    let mut probe = |alpha: f64, evals: &mut usize| -> Probe {
        *evals += 1;
        let mut xn: Vec<f64> = x.iter().zip(d).map(|(a, bb)| a + alpha * bb).collect();
        b.project(&mut xn);
        let (f, g) = eval(&xn);
        let ok = f.is_finite() && g.iter().all(|v| v.is_finite());
        let slope = if ok { g.iter().zip(d).map(|(a, bb)| a * bb).sum() } else { f64::NAN };
        Probe { alpha, f: if ok { f } else { f64::INFINITY }, slope, x: xn, g }
    };
    let armijo = |p: &Probe| p.f <= f0 + C1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -C2 * slope0;

    let mut best: Option<Probe> = None;
    let keep = |best: &mut Option<Probe>, p: &Probe| {
        if p.f < f0 + C1 * p.alpha * slope0 && best.as_ref().is_none_or(|bp| p.f < bp.f) {
            *best = Some(Probe { alpha: p.alpha, f: p.f, slope: p.slope, x: p.x.clone(), g: p.g.clone() });
        }
    };

    let mut prev = Probe { alpha: 0.0, f: f0, slope: slope0, x: x.to_vec(), g: Vec::new() };
    let mut alpha = init;
    let (mut lo, mut hi);
    loop {
        let cur = probe(alpha, &mut evals);
        keep(&mut best, &cur);
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Some((cur.x, cur.f, cur.g));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if alpha >= max_step || evals >= MAX_LS_EVALS {
            return Some((cur.x, cur.f, cur.g));
        }
        alpha = (alpha * 4.0).min(max_step);
        prev = cur;
    }

    while evals < MAX_LS_EVALS {
        let (a, bb) = (lo.alpha, hi.alpha);
        let width = (bb - a).abs();
        if width <= 1e-16 * a.abs().max(bb.abs()).max(1e-300) {
            break;
        }
        let mut trial = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + bb));
        let (mn, mx) = (a.min(bb), a.max(bb));
        if !(trial > mn + 0.1 * width && trial < mx - 0.1 * width) {
            trial = 0.5 * (a + bb);
        }
        let cur = probe(trial, &mut evals);
        keep(&mut best, &cur);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some((cur.x, cur.f, cur.g));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    best.map(|p| (p.x, p.f, p.g))
}

fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.slope.is_finite() && b.slope.is_finite()) {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.slope - a.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(c: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |x: &[f64]| {
            let f = -x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let g = x.iter().zip(&c).map(|(a, b)| -2.0 * (a - b)).collect();
            (f, g)
        }
    }

    #[test]
    fn quadratic_bowl_interior() {
        let c = vec![0.3, -1.2, 2.5, 0.0];
        let (x, trace) = maximize_with(bowl(c.clone()), &[0.0; 4], &Bounds::uniform(4, -5.0, 5.0), &OptimizerConfig::default()).unwrap();
        for (a, b) in x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(trace.values.len() < 50);
    }

    #[test]
    fn quadratic_bowl_outside_box_projects() {
        let c = vec![7.0, -9.0, 0.5];
        let b = Bounds::uniform(3, -1.0, 1.0);
        let (x, _) = maximize_with(bowl(c), &[0.0; 3], &b, &OptimizerConfig::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10);
        assert!((x[1] + 1.0).abs() < 1e-10);
        assert!((x[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn infeasible_start_is_projected() {
        let b = Bounds::uniform(2, 0.0, 1.0);
        let (x, _) = maximize_with(bowl(vec![0.5, 0.5]), &[10.0, -10.0], &b, &OptimizerConfig::default()).unwrap();
        assert!(b.contains(&x));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = maximize_with(|_x: &[f64]| (f64::NAN, vec![0.0]), &[0.0], &Bounds::unbounded(1), &OptimizerConfig::default());
        assert!(matches!(r, Err(ClusterError::NumericalFailure { .. })));
    }

    #[test]
    fn separate_callbacks() {
        let (x, _) = maximize(
            |x: &[f64]| -(x[0] - 2.0).powi(2),
            |x: &[f64]| vec![-2.0 * (x[0] - 2.0)],
            &[0.0],
            &Bounds::unbounded(1),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn concave_quadratic_iteration_budget() {
        // f = -½ xᵀ A x + bᵀx with A SPD, n = 8: budget n + memory iterations
        let n = 8;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 / (1.0 + (i as f64 - j as f64).abs()) });
        let bvec = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let fg = |x: &[f64]| {
            let xv = DVector::from_column_slice(x);
            let ax = &a * &xv;
            (-0.5 * xv.dot(&ax) + bvec.dot(&xv), (&bvec - ax).as_slice().to_vec())
        };
        let cfg = OptimizerConfig { grad_tol: 1e-8, f_tol: 0.0, ..Default::default() };
        let (x, trace) = maximize_with(fg, &vec![0.0; n], &Bounds::unbounded(n), &cfg).unwrap();
        let sol = a.clone().lu().solve(&bvec).unwrap();
        assert!((DVector::from_vec(x) - sol).amax() < 1e-7);
        assert!(trace.values.len() - 1 <= n + cfg.memory, "{} iterations", trace.values.len() - 1);
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
        (f, vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)])
    }

    /// Damped Newton on the (minimized) Rosenbrock function with its exact Hessian.
    fn newton_reference(mut x: [f64; 2]) -> [f64; 2] {
        let value = |p: [f64; 2]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        for _ in 0..200 {
            let (a, b) = (x[0], x[1]);
            let g = [-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            let h = [[2.0 - 400.0 * (b - 3.0 * a * a), -400.0 * a], [-400.0 * a, 200.0]];
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let step = [(h[1][1] * g[0] - h[0][1] * g[1]) / det, (h[0][0] * g[1] - h[1][0] * g[0]) / det];
            let mut t = 1.0;
            while value([a - t * step[0], b - t * step[1]]) > value(x) && t > 1e-12 {
                t *= 0.5;
            }
            x = [a - t * step[0], b - t * step[1]];
            if g[0].abs().max(g[1].abs()) < 1e-14 {
                break;
            }
        }
        x
    }

    #[test]
    fn rosenbrock_matches_newton_reference() {
        let b = Bounds::uniform(2, -5.0, 5.0);
        let cfg = OptimizerConfig { grad_tol: 1e-10, f_tol: 0.0, ..Default::default() };
        let (x, trace) = maximize_with(rosenbrock, &[-1.2, 1.0], &b, &cfg).unwrap();
        assert!(rosenbrock(&x).0 > -1e-6, "{:?}", trace.termination);
        let r = newton_reference([-1.2, 1.0]);
        assert!((x[0] - r[0]).abs() < 1e-4 && (x[1] - r[1]).abs() < 1e-4, "{x:?} vs {r:?}");
    }

    #[test]
    fn trace_is_monotone_and_iterates_feasible() {
        let b = Bounds::uniform(2, -5.0, 5.0);
        let mut all_feasible = true;
        let fg = |x: &[f64]| {
            all_feasible &= b.contains(x);
            let (a, bb) = (x[0], x[1]);
            let f = -((1.0 - a).powi(2) + 100.0 * (bb - a * a).powi(2));
            let g = vec![2.0 * (1.0 - a) + 400.0 * a * (bb - a * a), -200.0 * (bb - a * a)];
            (f, g)
        };
        let (_, trace) = maximize_with(fg, &[-1.2, 1.0], &b, &OptimizerConfig::default()).unwrap();
        assert!(all_feasible);
        for w in trace.values.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}
