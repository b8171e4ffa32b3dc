//! Minimization of the entropic objective `f(x) = b Σ x ln x − θ·x` over the
//! convex hull of a few points, parametrized by convex weights.
//!
//! Active-set Newton in weight space: a Newton direction on the support plus
//! the most promising outside point, followed by an exact line search that
//! stays inside the simplex. When the Newton step stalls a pairwise step
//! (from the worst support point to the best point overall) is taken instead.

use nalgebra::{DMatrix, DVector};

const MAX_STEPS: usize = 5000;
const LINE_SEARCH_STEPS: usize = 200;

/// The objective on the coordinates that can still move.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Entropic<'a> {
    pub b: f64,
    pub theta: &'a [f64],
}

impl Entropic<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.theta)
            .map(|(&v, t)| self.b * xlogx(v) - t * v)
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.theta)
            .map(|(&v, t)| self.b * (1.0 + v.ln()) - t)
            .collect()
    }

    /// Derivatives of `t ↦ f(x + t·dx)`.
    fn slope(&self, x: &[f64], dx: &[f64], t: f64) -> (f64, f64) {
        let mut first = 0.0;
        let mut second = 0.0;
        for ((&v, &d), th) in x.iter().zip(dx).zip(self.theta) {
            if d == 0.0 {
                continue;
            }
            let y = v + t * d;
            first += d * (self.b * (1.0 + y.ln()) - th);
            second += self.b * d * d / y;
        }
        (first, second)
    }

    /// Exact minimizer of `t ↦ f(x + t·dx)` on `[0, t_max]` by safeguarded
    /// Newton on the derivative.
    fn line_search(&self, x: &[f64], dx: &[f64], t_max: f64) -> f64 {
        let (d0, _) = self.slope(x, dx, 0.0);
        if !(d0 < 0.0) {
            return 0.0;
        }
        // a NaN slope means a coordinate hit 0, where the slope is +∞
        let (d_max, _) = self.slope(x, dx, t_max);
        if d_max <= 0.0 {
            return t_max;
        }
        let (mut lo, mut hi) = (0.0, t_max);
        let mut t = 0.5 * t_max;
        for _ in 0..LINE_SEARCH_STEPS {
            let (d, dd) = self.slope(x, dx, t);
            if d == 0.0 {
                return t;
            }
            if d < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - d / dd;
            t = if newton > lo && newton < hi && dd.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-16 * t_max {
                break;
            }
        }
        t.clamp(0.0, t_max)
    }
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InnerSolution {
    pub x: Vec<f64>,
    pub weights: Vec<f64>,
    /// `max_j ∇f(x)·(x − p_j)` over the given points.
    pub gap: f64,
    pub steps: usize,
}

fn combine(points: &[Vec<f64>], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        if w != 0.0 {
            for (xi, pi) in x.iter_mut().zip(p) {
                *xi += w * pi;
            }
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over `conv(points)` until the hull gap is at most `tol`.
/// `warm` seeds the weights when it has one entry per point, is a valid
/// convex combination and keeps every coordinate the hull can make positive
/// strictly positive; uniform weights are used otherwise.
pub(crate) fn inner_solve(f: &Entropic, points: &[Vec<f64>], warm: Option<&[f64]>, tol: f64) -> InnerSolution {
    let k = points.len();
    assert!(k > 0, "hull needs a point");
    let dim = f.theta.len();
    let uniform = vec![1.0 / k as f64; k];
    let mut weights = match warm {
        Some(w) if w.len() == k && w.iter().all(|&v| v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9 => {
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|v| v / total).collect();
            let x = combine(points, &w, dim);
            let reachable = combine(points, &uniform, dim);
            if x.iter().zip(&reachable).all(|(a, r)| *a > 0.0 || *r <= 0.0) {
                w
            } else {
                uniform.clone()
            }
        }
        _ => uniform.clone(),
    };
    let mut x = combine(points, &weights, dim);
    let mut steps = 0;
    let mut gap;
    loop {
        let grad = f.gradient(&x);
        let scores: Vec<f64> = points.iter().map(|p| dot(&grad, p)).collect();
        let current: f64 = dot(&grad, &x);
        let (best, &low) = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty hull");
        gap = current - low;
        if gap <= tol || steps >= MAX_STEPS || !gap.is_finite() {
            break;
        }
        steps += 1;
        let mut support: Vec<usize> = (0..k).filter(|&j| weights[j] > 0.0).collect();
        if !support.contains(&best) {
            support.push(best);
        }
        let moved = newton_step(f, points, &mut weights, &mut x, &support, &scores);
        if !moved {
            let away = (0..k)
                .filter(|&j| weights[j] > 0.0)
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .expect("support is nonempty");
            if away == best || !pairwise_step(f, points, &mut weights, &mut x, away, best) {
                break;
            }
        }
    }
    InnerSolution { x, weights, gap, steps }
}

/// Newton direction on `support` restricted to `Σ d = 0`, then an exact line
/// search capped where a weight reaches 0. Returns false if it made no
/// progress.
fn newton_step(
    f: &Entropic,
    points: &[Vec<f64>],
    weights: &mut [f64],
    x: &mut Vec<f64>,
    support: &[usize],
    scores: &[f64],
) -> bool {
    let s = support.len();
    if s < 2 {
        return false;
    }
    let dim = x.len();
    // H = Vᵀ diag(b/x) V on the support
    let scaled = DMatrix::from_fn(dim, s, |i, j| points[support[j]][i] * (f.b / x[i]).sqrt());
    let h = scaled.transpose() * &scaled;
    let g = DVector::from_iterator(s, support.iter().map(|&j| scores[j]));
    let max_diag = (0..s).map(|j| h[(j, j)]).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 1e-12 * max_diag;
    let chol = loop {
        let mut reg = h.clone();
        for j in 0..s {
            reg[(j, j)] += ridge;
        }
        if let Some(c) = reg.cholesky() {
            break c;
        }
        ridge *= 100.0;
        if ridge > max_diag {
            return false;
        }
    };
    let a = chol.solve(&g);
    let w = chol.solve(&DVector::from_element(s, 1.0));
    let nu = a.sum() / w.sum();
    let d: Vec<f64> = (0..s).map(|j| nu * w[j] - a[j]).collect();
    let mut t_max = f64::INFINITY;
    let mut blocking = None;
    for (j, &dj) in d.iter().enumerate() {
        if dj < 0.0 {
            let limit = weights[support[j]] / -dj;
            if limit < t_max {
                t_max = limit;
                blocking = Some(j);
            }
        }
    }
    if t_max <= 0.0 {
        return false;
    }
    let mut dx = vec![0.0; dim];
    for (j, &dj) in d.iter().enumerate() {
        for (v, p) in dx.iter_mut().zip(&points[support[j]]) {
            *v += dj * p;
        }
    }
    // the full Newton step is t = 1; without a blocking weight search up to 2
    let t = f.line_search(x, &dx, t_max.min(2.0));
    if t <= 0.0 {
        return false;
    }
    let before = f.value(x);
    let moved: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + t * b).collect();
    if f.value(&moved) > before || moved.iter().any(|v| !(*v >= 0.0)) {
        return false;
    }
    for (j, &dj) in d.iter().enumerate() {
        weights[support[j]] = (weights[support[j]] + t * dj).max(0.0);
    }
    if t >= t_max {
        if let Some(j) = blocking {
            weights[support[j]] = 0.0;
        }
    }
    renormalize(weights);
    *x = combine(points, weights, dim);
    true
}

/// Moves weight from `away` to `toward` with an exact line search.
fn pairwise_step(
    f: &Entropic,
    points: &[Vec<f64>],
    weights: &mut [f64],
    x: &mut Vec<f64>,
    away: usize,
    toward: usize,
) -> bool {
    let t_max = weights[away];
    let dx: Vec<f64> = points[toward].iter().zip(&points[away]).map(|(a, b)| a - b).collect();
    let t = f.line_search(x, &dx, t_max);
    if t <= 0.0 {
        return false;
    }
    if t >= t_max {
        weights[toward] += weights[away];
        weights[away] = 0.0;
    } else {
        weights[away] -= t;
        weights[toward] += t;
    }
    renormalize(weights);
    *x = combine(points, weights, x.len());
    true
}

fn renormalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
}
