//! Adaptive Gauss-Legendre quadrature over breakpoint-delimited pieces.
//!
//! Integrands built from piecewise polynomials are smooth between
//! breakpoints, so each piece is integrated separately. A 16-point rule is
//! exact for polynomials up to degree 31; non-polynomial factors (survival
//! exponentials, matrix exponentials) are handled by bisection until two
//! successive estimates agree.

use std::sync::OnceLock;

const ORDER: usize = 16;
const MAX_DEPTH: u32 = 24;

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(ORDER))
}

/// Nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn fixed<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

fn adaptive<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = fixed(f, a, mid);
    let right = fixed(f, mid, b);
    let refined = left + right;
    if depth >= MAX_DEPTH || (refined - whole).abs() <= tol * refined.abs().max(1e-300) + 1e-300 {
        return refined;
    }
    adaptive(f, a, mid, left, tol, depth + 1) + adaptive(f, mid, b, right, tol, depth + 1)
}

/// Integrates `f` over `[a, b]` to relative tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let whole = fixed(&mut f, a, b);
    adaptive(&mut f, a, b, whole, tol, 0)
}

/// Integrates over consecutive pieces `[p0,p1], [p1,p2], ...`.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breakpoints: &[f64], tol: f64) -> f64 {
    breakpoints
        .windows(2)
        .map(|w| integrate(&mut f, w[0], w[1], tol))
        .sum()
}

fn fixed_vec<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize) -> Vec<f64> {
    let (nodes, weights) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for (x, w) in nodes.iter().zip(weights) {
        buf.iter_mut().for_each(|v| *v = 0.0);
        f(mid + half * x, &mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += w * v * half;
        }
    }
    acc
}

fn adaptive_vec<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: Vec<f64>,
    tol: f64,
    depth: u32,
) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let dim = whole.len();
    let left = fixed_vec(f, a, mid, dim);
    let right = fixed_vec(f, mid, b, dim);
    let refined: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
    let scale = refined.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = refined.iter().zip(&whole).fold(0.0f64, |m, (r, w)| m.max((r - w).abs()));
    if depth >= MAX_DEPTH || err <= tol * scale.max(1e-300) + 1e-300 {
        return refined;
    }
    let l = adaptive_vec(f, a, mid, left, tol, depth + 1);
    let r = adaptive_vec(f, mid, b, right, tol, depth + 1);
    l.iter().zip(&r).map(|(x, y)| x + y).collect()
}

/// Component-wise integral of a vector-valued function over consecutive
/// pieces. The callback writes the integrand into the provided buffer.
pub fn integrate_vec_pieces<F: FnMut(f64, &mut [f64])>(mut f: F, breakpoints: &[f64], dim: usize, tol: f64) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    for w in breakpoints.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let whole = fixed_vec(&mut f, w[0], w[1], dim);
        let piece = adaptive_vec(&mut f, w[0], w[1], whole, tol, 0);
        for (t, p) in total.iter_mut().zip(&piece) {
            *t += p;
        }
    }
    total
}

/// Sorted union of breakpoint lists, deduplicated.
pub fn merge_breakpoints(lists: &[Vec<f64>]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));
    all
}
