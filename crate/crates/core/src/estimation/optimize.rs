//! Box-constrained minimization for small dense problems.
//!
//! A projected Newton method: the Hessian is built from central differences
//! of the analytic gradient, restricted to the variables that are not held
//! at a bound, and Levenberg-shifted until its Cholesky factorization
//! succeeds. Steps are projected back onto the box and accepted by Armijo
//! backtracking along the projection arc.

use rand::seq::SliceRandom;
use rand::Rng;

pub trait Objective<const N: usize> {
    fn value(&self, x: &[f64; N]) -> f64;
    fn gradient(&self, x: &[f64; N]) -> [f64; N];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSettings {
    pub max_iter: usize,
    /// Stop once the projected gradient's infinity norm falls below this.
    pub gtol: f64,
    /// A run that stalls is still reported converged below this threshold.
    pub accept_gtol: f64,
}

impl Default for BoxSettings {
    fn default() -> Self {
        BoxSettings { max_iter: 500, gtol: 1e-9, accept_gtol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxMinimum<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project<const N: usize>(x: [f64; N], lo: &[f64; N], hi: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| x[i].clamp(lo[i], hi[i]))
}

/// Gradient with components zeroed where a bound blocks descent.
pub fn projected_gradient<const N: usize>(x: &[f64; N], g: &[f64; N], lo: &[f64; N], hi: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| {
        if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
            0.0
        } else {
            g[i]
        }
    })
}

fn inf_norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// In-place Cholesky of a dense row-major `n x n` matrix. Returns false if
/// the matrix is not numerically positive definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0 && d.is_finite()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn fd_hessian<const N: usize, F: Objective<N>>(f: &F, x: &[f64; N], lo: &[f64; N], hi: &[f64; N]) -> [[f64; N]; N] {
    let mut h = [[0.0; N]; N];
    for j in 0..N {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut up = *x;
        let mut down = *x;
        up[j] = (x[j] + step).min(hi[j]);
        down[j] = (x[j] - step).max(lo[j]);
        let span = up[j] - down[j];
        if span <= 0.0 {
            continue;
        }
        let (gu, gd) = (f.gradient(&up), f.gradient(&down));
        for i in 0..N {
            h[i][j] = (gu[i] - gd[i]) / span;
        }
    }
    for i in 0..N {
        for j in 0..i {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    h
}

/// Newton direction on the free variables, zero on the rest.
fn newton_direction<const N: usize>(h: &[[f64; N]; N], g: &[f64; N], free: &[usize]) -> [f64; N] {
    let n = free.len();
    let mut dir = [0.0; N];
    if n == 0 {
        return dir;
    }
    let scale = free.iter().map(|&i| h[i][i].abs()).fold(0.0, f64::max).max(1e-12);
    let mut shift = 0.0;
    for _ in 0..60 {
        let mut a = vec![0.0; n * n];
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                a[r * n + c] = h[i][j];
            }
            a[r * n + r] += shift;
        }
        if cholesky(&mut a, n) {
            let mut b: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            cholesky_solve(&a, n, &mut b);
            for (r, &i) in free.iter().enumerate() {
                dir[i] = b[r];
            }
            return dir;
        }
        shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
    }
    for &i in free {
        dir[i] = -g[i];
    }
    dir
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0` (projected first).
pub fn minimize_box<const N: usize, F: Objective<N>>(
    f: &F,
    x0: [f64; N],
    lo: &[f64; N],
    hi: &[f64; N],
    settings: &BoxSettings,
) -> BoxMinimum<N> {
    let mut x = project(x0, lo, hi);
    let mut fx = f.value(&x);
    let mut g = f.gradient(&x);
    let mut pg = projected_gradient(&x, &g, lo, hi);
    let mut iterations = 0;

    while iterations < settings.max_iter && inf_norm(&pg) > settings.gtol {
        iterations += 1;
        let free: Vec<usize> = (0..N).filter(|&i| pg[i] != 0.0 || (x[i] > lo[i] && x[i] < hi[i])).collect();
        let h = fd_hessian(f, &x, lo, hi);

        let mut accepted = None;
        for dir in [newton_direction(&h, &pg, &free), pg.map(|v| -v)] {
            if let Some(step) = line_search(f, &x, fx, &g, &dir, lo, hi) {
                accepted = Some(step);
                break;
            }
        }
        match accepted {
            Some((xn, fn_)) => {
                x = xn;
                fx = fn_;
                g = f.gradient(&x);
                pg = projected_gradient(&x, &g, lo, hi);
            }
            None => break,
        }
    }

    let norm = inf_norm(&pg);
    BoxMinimum {
        x,
        value: fx,
        projected_gradient_norm: norm,
        iterations,
        converged: norm <= settings.accept_gtol,
    }
}

fn line_search<const N: usize, F: Objective<N>>(
    f: &F,
    x: &[f64; N],
    fx: f64,
    g: &[f64; N],
    dir: &[f64; N],
    lo: &[f64; N],
    hi: &[f64; N],
) -> Option<([f64; N], f64)> {
    if dir.iter().all(|&d| d == 0.0) {
        return None;
    }
    // Cap the first trial so it never travels more than one box width.
    let mut t: f64 = 1.0;
    for i in 0..N {
        let width = hi[i] - lo[i];
        if dir[i].abs() * t > width && width > 0.0 {
            t = width / dir[i].abs();
        }
    }
    for _ in 0..60 {
        let trial = project(std::array::from_fn(|i| x[i] + t * dir[i]), lo, hi);
        let moved: f64 = (0..N).map(|i| g[i] * (trial[i] - x[i])).sum();
        if trial == *x {
            return None;
        }
        let ft = f.value(&trial);
        if ft.is_finite() && moved < 0.0 && ft <= fx + 1e-4 * moved {
            return Some((trial, ft));
        }
        // Sub-ulp improvements with no measurable Armijo decrease still count.
        if ft.is_finite() && ft < fx && moved < 0.0 && (fx - ft) <= 1e-14 * fx.abs().max(1.0) {
            return Some((trial, ft));
        }
        t *= 0.5;
    }
    None
}

/// `n` Latin-hypercube points in the box: each axis is cut into `n` equal
/// strata and every stratum is used exactly once.
pub fn latin_hypercube<const N: usize, R: Rng>(n: usize, lo: &[f64; N], hi: &[f64; N], rng: &mut R) -> Vec<[f64; N]> {
    let mut columns: Vec<Vec<f64>> = (0..N)
        .map(|d| {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            strata
                .into_iter()
                .map(|s| {
                    let u = (s as f64 + rng.random::<f64>()) / n as f64;
                    lo[d] + u * (hi[d] - lo[d])
                })
                .collect()
        })
        .collect();
    (0..n)
        .map(|k| std::array::from_fn(|d| std::mem::take(&mut columns[d][k])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Rosenbrock;
    impl Objective<2> for Rosenbrock {
        fn value(&self, x: &[f64; 2]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn gradient(&self, x: &[f64; 2]) -> [f64; 2] {
            [
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        }
    }

    struct Quadratic([f64; 3]);
    impl Objective<3> for Quadratic {
        fn value(&self, x: &[f64; 3]) -> f64 {
            (0..3).map(|i| (x[i] - self.0[i]).powi(2) * (i + 1) as f64).sum()
        }
        fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
            std::array::from_fn(|i| 2.0 * (x[i] - self.0[i]) * (i + 1) as f64)
        }
    }

    #[test]
    fn finds_interior_minimum() {
        let m = minimize_box(&Rosenbrock, [-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &BoxSettings::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 1.0).abs() < 1e-7, "{:?}", m);
    }

    #[test]
    fn stops_on_active_bounds() {
        let q = Quadratic([-5.0, 0.5, 9.0]);
        let m = minimize_box(&q, [0.0, 0.0, 0.0], &[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0], &BoxSettings::default());
        assert!(m.converged);
        assert_eq!(m.x[0], -1.0);
        assert!((m.x[1] - 0.5).abs() < 1e-10);
        assert_eq!(m.x[2], 1.0);
    }

    #[test]
    fn latin_hypercube_covers_every_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lo = [0.0, 10.0];
        let hi = [1.0, 20.0];
        let pts = latin_hypercube(16, &lo, &hi, &mut rng);
        assert_eq!(pts.len(), 16);
        for d in 0..2 {
            let mut hit = [false; 16];
            for p in &pts {
                let s = ((p[d] - lo[d]) / (hi[d] - lo[d]) * 16.0).floor() as usize;
                hit[s.min(15)] = true;
            }
            assert!(hit.iter().all(|&h| h));
        }
    }
}
