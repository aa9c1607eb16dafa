//! No-U-turn Hamiltonian Monte Carlo.
//!
//! Multinomial trajectory sampling with the generalized no-U-turn criterion,
//! a diagonal mass matrix estimated in expanding warmup windows and
//! dual-averaging step-size adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{effective_sample_size, split_r_hat};

/// An unnormalized log density with its gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutsSettings {
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_depth: u32,
    pub adapt_mass: bool,
}

impl Default for NutsSettings {
    fn default() -> Self {
        NutsSettings { warmup: 1000, samples: 1000, target_accept: 0.8, max_depth: 10, adapt_mass: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// `draws[i]` is the position after post-warmup iteration `i`.
    pub draws: Vec<Vec<f64>>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub divergences: usize,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiChainOutput {
    pub chains: Vec<ChainOutput>,
}

impl MultiChainOutput {
    /// Draws of coordinate `k`, one vector per chain.
    pub fn coordinate(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| d[k]).collect()).collect()
    }

    pub fn r_hat(&self, k: usize) -> f64 {
        split_r_hat(&self.coordinate(k))
    }

    pub fn ess(&self, k: usize) -> f64 {
        effective_sample_size(&self.coordinate(k))
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergences).sum()
    }
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    left: Point,
    right: Point,
    proposal: Point,
    log_weight: f64,
    rho: Vec<f64>,
    /// `M^-1 p` at the two ends.
    sharp_left: Vec<f64>,
    sharp_right: Vec<f64>,
    sum_accept: f64,
    n_leapfrog: usize,
}

enum Built {
    Ok(Tree),
    /// Divergence or an internal U-turn; carries the work done for adaptation.
    Stop { diverged: bool, sum_accept: f64, n_leapfrog: usize },
}

const MAX_ENERGY_ERROR: f64 = 1000.0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Integrator<'a, D: LogDensity> {
    density: &'a D,
    inv_mass: &'a [f64],
}

impl<D: LogDensity> Integrator<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_mass).map(|(p, m)| p * m).collect()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        -z.logp + self.kinetic(&z.p)
    }

    fn leapfrog(&self, z: &Point, eps: f64) -> Point {
        let mut next = z.clone();
        for i in 0..next.p.len() {
            next.p[i] += 0.5 * eps * next.grad[i];
        }
        for i in 0..next.q.len() {
            next.q[i] += eps * self.inv_mass[i] * next.p[i];
        }
        next.logp = self.density.logp_and_grad(&next.q, &mut next.grad);
        for i in 0..next.p.len() {
            next.p[i] += 0.5 * eps * next.grad[i];
        }
        next
    }

    fn no_u_turn(&self, sharp_left: &[f64], sharp_right: &[f64], rho: &[f64]) -> bool {
        dot(sharp_left, rho) > 0.0 && dot(sharp_right, rho) > 0.0
    }

    /// Builds a subtree of `2^depth` leapfrog steps continuing from `start`
    /// in direction `dir` (+1 forward, -1 backward).
    fn build<R: Rng>(&self, start: &Point, depth: u32, dir: f64, eps: f64, h0: f64, rng: &mut R) -> Built {
        if depth == 0 {
            let z = self.leapfrog(start, dir * eps);
            let h = self.hamiltonian(&z);
            let h = if h.is_nan() { f64::INFINITY } else { h };
            let accept = (h0 - h).exp().min(1.0);
            if h - h0 > MAX_ENERGY_ERROR {
                return Built::Stop { diverged: true, sum_accept: accept, n_leapfrog: 1 };
            }
            let sharp = self.sharp(&z.p);
            return Built::Ok(Tree {
                left: z.clone(),
                right: z.clone(),
                proposal: z.clone(),
                log_weight: h0 - h,
                rho: z.p.clone(),
                sharp_left: sharp.clone(),
                sharp_right: sharp,
                sum_accept: accept,
                n_leapfrog: 1,
            });
        }

        let first = match self.build(start, depth - 1, dir, eps, h0, rng) {
            Built::Ok(t) => t,
            stop => return stop,
        };
        let outer = if dir > 0.0 { &first.right } else { &first.left };
        let second = match self.build(outer, depth - 1, dir, eps, h0, rng) {
            Built::Ok(t) => t,
            Built::Stop { diverged, sum_accept, n_leapfrog } => {
                return Built::Stop {
                    diverged,
                    sum_accept: sum_accept + first.sum_accept,
                    n_leapfrog: n_leapfrog + first.n_leapfrog,
                }
            }
        };
        // Orient so that `lo` precedes `hi` in trajectory order.
        let (lo, hi) = if dir > 0.0 { (first, second) } else { (second, first) };
        let log_weight = log_add(lo.log_weight, hi.log_weight);
        let newer = if dir > 0.0 { &hi } else { &lo };
        let take_newer = rng.random::<f64>() < (newer.log_weight - log_weight).exp();
        let proposal = if take_newer { newer.proposal.clone() } else if dir > 0.0 { lo.proposal.clone() } else { hi.proposal.clone() };
        let rho: Vec<f64> = lo.rho.iter().zip(&hi.rho).map(|(a, b)| a + b).collect();
        let sum_accept = lo.sum_accept + hi.sum_accept;
        let n_leapfrog = lo.n_leapfrog + hi.n_leapfrog;
        if !self.joined_ok(&lo, &hi, &rho) {
            return Built::Stop { diverged: false, sum_accept, n_leapfrog };
        }
        Built::Ok(Tree {
            left: lo.left,
            right: hi.right,
            proposal,
            log_weight,
            rho,
            sharp_left: lo.sharp_left,
            sharp_right: hi.sharp_right,
            sum_accept,
            n_leapfrog,
        })
    }

    /// No-U-turn check on the union of two adjacent trees (`lo` first in
    /// trajectory order): the full span plus two cross checks that catch
    /// U-turns straddling the junction.
    fn joined_ok(&self, lo: &Tree, hi: &Tree, rho: &[f64]) -> bool {
        if !self.no_u_turn(&lo.sharp_left, &hi.sharp_right, rho) {
            return false;
        }
        let rho_lo_ext: Vec<f64> = lo.rho.iter().zip(&hi.left.p).map(|(a, b)| a + b).collect();
        if !self.no_u_turn(&lo.sharp_left, &self.sharp(&hi.left.p), &rho_lo_ext) {
            return false;
        }
        let rho_hi_ext: Vec<f64> = hi.rho.iter().zip(&lo.right.p).map(|(a, b)| a + b).collect();
        self.no_u_turn(&self.sharp(&lo.right.p), &hi.sharp_right, &rho_hi_ext)
    }
}

struct Transition {
    point: Point,
    accept_stat: f64,
    diverged: bool,
    depth: u32,
}

fn transition<D: LogDensity, R: Rng>(
    integrator: &Integrator<'_, D>,
    current: &Point,
    eps: f64,
    max_depth: u32,
    rng: &mut R,
) -> Transition {
    let mut z0 = current.clone();
    for (p, m) in z0.p.iter_mut().zip(integrator.inv_mass) {
        let n: f64 = StandardNormal.sample(rng);
        *p = n / m.sqrt();
    }
    let h0 = integrator.hamiltonian(&z0);
    let sharp0 = integrator.sharp(&z0.p);
    let mut tree = Tree {
        left: z0.clone(),
        right: z0.clone(),
        proposal: z0.clone(),
        log_weight: 0.0,
        rho: z0.p.clone(),
        sharp_left: sharp0.clone(),
        sharp_right: sharp0,
        sum_accept: 0.0,
        n_leapfrog: 0,
    };
    let mut diverged = false;
    let mut depth = 0;

    while depth < max_depth {
        let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let start = if dir > 0.0 { &tree.right } else { &tree.left };
        let sub = integrator.build(start, depth, dir, eps, h0, rng);
        depth += 1;
        let sub = match sub {
            Built::Ok(sub) => sub,
            Built::Stop { diverged: d, sum_accept, n_leapfrog } => {
                diverged = d;
                tree.sum_accept += sum_accept;
                tree.n_leapfrog += n_leapfrog;
                break;
            }
        };
        // Progressive sampling biased towards the new subtree.
        if rng.random::<f64>() < (sub.log_weight - tree.log_weight).exp() {
            tree.proposal = sub.proposal.clone();
        }
        tree.log_weight = log_add(tree.log_weight, sub.log_weight);
        tree.sum_accept += sub.sum_accept;
        tree.n_leapfrog += sub.n_leapfrog;
        let rho: Vec<f64> = tree.rho.iter().zip(&sub.rho).map(|(a, b)| a + b).collect();
        let ok = if dir > 0.0 {
            integrator.joined_ok(&tree, &sub, &rho)
        } else {
            integrator.joined_ok(&sub, &tree, &rho)
        };
        tree.rho = rho;
        if dir > 0.0 {
            tree.right = sub.right;
            tree.sharp_right = sub.sharp_right;
        } else {
            tree.left = sub.left;
            tree.sharp_left = sub.sharp_left;
        }
        if !ok {
            break;
        }
    }
    Transition {
        accept_stat: if tree.n_leapfrog > 0 { tree.sum_accept / tree.n_leapfrog as f64 } else { 0.0 },
        point: tree.proposal,
        diverged,
        depth,
    }
}

struct DualAveraging {
    mu: f64,
    target: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging { mu: (10.0 * eps).ln(), target, log_eps: eps.ln(), log_eps_bar: 0.0, h_bar: 0.0, count: 0.0 }
    }

    fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let eta = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Step size whose single leapfrog acceptance is close to one half.
fn initial_step_size<D: LogDensity, R: Rng>(integrator: &Integrator<'_, D>, z: &Point, rng: &mut R) -> f64 {
    let mut eps: f64 = 0.1;
    let mut z0 = z.clone();
    for (p, m) in z0.p.iter_mut().zip(integrator.inv_mass) {
        let n: f64 = StandardNormal.sample(rng);
        *p = n / m.sqrt();
    }
    let h0 = integrator.hamiltonian(&z0);
    let log_accept = |eps: f64| {
        let h = integrator.hamiltonian(&integrator.leapfrog(&z0, eps));
        if h.is_finite() { h0 - h } else { f64::NEG_INFINITY }
    };
    let half = 0.5f64.ln();
    let up = log_accept(eps) > half;
    for _ in 0..100 {
        let la = log_accept(eps);
        if up != (la > half) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps
}

/// Warmup schedule: a fast initial buffer, slow windows that double in
/// length, and a final fast buffer. Returns the `[start, end)` iteration
/// ranges of the slow windows, over which the mass matrix is estimated.
fn slow_windows(warmup: usize) -> Vec<(usize, usize)> {
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if warmup < 20 {
        return Vec::new();
    }
    if init + term + base > warmup {
        init = warmup * 15 / 100;
        term = warmup / 10;
        base = warmup - init - term;
    }
    let last = warmup - term;
    let mut windows = Vec::new();
    let (mut start, mut size) = (init, base);
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Variance shrunk towards 1e-3, as a regularized inverse mass.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Runs one chain from `init`.
pub fn sample_chain<D: LogDensity>(density: &D, init: &[f64], settings: &NutsSettings, rng: &mut ChaCha8Rng) -> ChainOutput {
    let dim = density.dim();
    assert_eq!(init.len(), dim, "initial point has the wrong dimension");
    let mut inv_mass = vec![1.0; dim];
    let mut grad = vec![0.0; dim];
    let logp = density.logp_and_grad(init, &mut grad);
    let mut current = Point { q: init.to_vec(), p: vec![0.0; dim], grad, logp };

    let mut eps = initial_step_size(&Integrator { density, inv_mass: &inv_mass }, &current, rng);
    let mut adapt = DualAveraging::new(eps, settings.target_accept);
    let windows = if settings.adapt_mass { slow_windows(settings.warmup) } else { Vec::new() };
    let mut window = Welford::new(dim);

    for it in 0..settings.warmup {
        let t = transition(&Integrator { density, inv_mass: &inv_mass }, &current, eps, settings.max_depth, rng);
        current = t.point;
        adapt.update(t.accept_stat);
        eps = adapt.current();

        if let Some(&(_, end)) = windows.iter().find(|(s, e)| (*s..*e).contains(&it)) {
            window.push(&current.q);
            if it + 1 == end {
                inv_mass = window.regularized_variance();
                window = Welford::new(dim);
                eps = initial_step_size(&Integrator { density, inv_mass: &inv_mass }, &current, rng);
                adapt = DualAveraging::new(eps, settings.target_accept);
            }
        }
    }
    if settings.warmup > 0 {
        eps = adapt.final_step();
    }

    let integrator = Integrator { density, inv_mass: &inv_mass };
    let mut draws = Vec::with_capacity(settings.samples);
    let (mut divergences, mut accept_sum, mut depth_sum) = (0, 0.0, 0.0);
    for _ in 0..settings.samples {
        let t = transition(&integrator, &current, eps, settings.max_depth, rng);
        current = t.point;
        divergences += usize::from(t.diverged);
        accept_sum += t.accept_stat;
        depth_sum += f64::from(t.depth);
        draws.push(current.q.clone());
    }
    let n = settings.samples.max(1) as f64;
    ChainOutput {
        draws,
        step_size: eps,
        inv_mass: inv_mass.clone(),
        divergences,
        mean_accept: accept_sum / n,
        mean_tree_depth: depth_sum / n,
    }
}

/// Runs independent chains in parallel; chain `k` uses stream `k` of the
/// ChaCha generator seeded with `seed`.
pub fn sample_chains<D: LogDensity>(density: &D, inits: &[Vec<f64>], settings: &NutsSettings, seed: u64) -> MultiChainOutput {
    let chains = inits
        .par_iter()
        .enumerate()
        .map(|(k, init)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            sample_chain(density, init, settings, &mut rng)
        })
        .collect();
    MultiChainOutput { chains }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);
    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad.iter_mut().zip(x).for_each(|(g, x)| *g = -x);
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    /// Correlated, badly scaled Gaussian.
    struct Skewed;
    impl LogDensity for Skewed {
        fn dim(&self) -> usize {
            2
        }
        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            // Covariance [[100, 9.5], [9.5, 1]] (correlation 0.95).
            let det = 100.0 - 9.5 * 9.5;
            let (a, b, d) = (1.0 / det, -9.5 / det, 100.0 / det);
            grad[0] = -(a * x[0] + b * x[1]);
            grad[1] = -(b * x[0] + d * x[1]);
            -0.5 * (a * x[0] * x[0] + 2.0 * b * x[0] * x[1] + d * x[1] * x[1])
        }
    }

    #[test]
    fn windows_tile_the_slow_phase() {
        let w = slow_windows(1000);
        assert_eq!(w.first().unwrap().0, 75);
        assert_eq!(w.last().unwrap().1, 950);
        for pair in w.windows(2) {
            assert_eq!(pair[0].1, pair[1].0);
        }
        assert!(slow_windows(10).is_empty());
        let short = slow_windows(100);
        assert_eq!(short.first().unwrap().0, 15);
        assert_eq!(short.last().unwrap().1, 90);
    }

    #[test]
    fn standard_normal_moments() {
        let inits = vec![vec![2.0, -2.0, 0.5]; 4];
        let out = sample_chains(&StdNormal(3), &inits, &NutsSettings::default(), 11);
        for k in 0..3 {
            let all: Vec<f64> = out.coordinate(k).concat();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (all.len() - 1) as f64;
            assert!(m.abs() < 0.05, "mean {m}");
            assert!((v - 1.0).abs() < 0.1, "var {v}");
            assert!(out.r_hat(k) < 1.01);
            assert!(out.ess(k) > 1000.0);
        }
        assert_eq!(out.divergences(), 0);
    }

    #[test]
    fn correlated_gaussian_moments() {
        let inits = vec![vec![0.0, 0.0]; 4];
        let out = sample_chains(&Skewed, &inits, &NutsSettings::default(), 5);
        let x: Vec<f64> = out.coordinate(0).concat();
        let y: Vec<f64> = out.coordinate(1).concat();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        assert!((vx / 100.0 - 1.0).abs() < 0.15, "{vx}");
        assert!((cxy / 9.5 - 1.0).abs() < 0.15, "{cxy}");
        assert!(out.r_hat(0) < 1.05 && out.r_hat(1) < 1.05);
        // The adapted mass matrix should pick up the 100:1 scale difference.
        let m = &out.chains[0].inv_mass;
        assert!(m[0] / m[1] > 20.0, "{m:?}");
    }

    #[test]
    fn same_seed_same_draws() {
        let settings = NutsSettings { warmup: 100, samples: 50, ..NutsSettings::default() };
        let a = sample_chains(&StdNormal(2), &[vec![0.0, 0.0]], &settings, 3);
        let b = sample_chains(&StdNormal(2), &[vec![0.0, 0.0]], &settings, 3);
        assert_eq!(a, b);
    }
}
