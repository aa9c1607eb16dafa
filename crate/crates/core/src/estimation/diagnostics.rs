//! Convergence diagnostics for multi-chain MCMC output.
//!
//! Both statistics work on split chains: every chain is cut into two halves
//! so that drift inside a chain shows up as between-chain disagreement.

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split potential scale reduction factor.
pub fn split_r_hat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let m = parts.len() as f64;
    let n = parts.first().map_or(0, |p| p.len()) as f64;
    if m < 2.0 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| sample_var(p)).sum::<f64>() / m;
    let b_over_n = sample_var(&means);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Biased autocovariance at lags `0..n`.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n)
        .map(|lag| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Effective sample size from the multi-chain autocorrelation estimate,
/// truncated with Geyer's initial monotone sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let m = parts.len();
    let n = parts.first().map_or(0, |p| p.len());
    if m < 2 || n < 4 {
        return f64::NAN;
    }
    let acov: Vec<Vec<f64>> = parts.iter().map(|p| autocovariance(p)).collect();
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let var_plus = w * (nf - 1.0) / nf + sample_var(&means);
    let total = (m * n) as f64;
    if var_plus == 0.0 {
        return total;
    }

    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    rho_hat[1] = rho(1);
    let mut t = 1;
    while t + 2 < n {
        let even = rho(t + 1);
        let odd = rho(t + 2);
        if even + odd < 0.0 {
            break;
        }
        rho_hat[t + 1] = even;
        rho_hat[t + 2] = odd;
        t += 2;
    }
    let max_t = t;
    // Force the paired sums to be non-increasing.
    let mut s = 1;
    while s + 2 <= max_t {
        let prev = rho_hat[s - 1] + rho_hat[s];
        let cur = rho_hat[s + 1] + rho_hat[s + 2];
        if cur > prev {
            rho_hat[s + 1] = prev / 2.0;
            rho_hat[s + 2] = prev / 2.0;
        }
        s += 2;
    }
    let mut tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>();
    if max_t + 1 < n {
        tau += rho_hat[max_t + 1];
    }
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn iid_draws_have_full_ess_and_unit_rhat() {
        let chains = iid_chains(4, 1000, 1);
        let ess = effective_sample_size(&chains);
        assert!(ess > 3000.0 && ess < 5500.0, "{ess}");
        let r = split_r_hat(&chains);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with phi = 0.9 has integrated autocorrelation time 19.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi: f64 = 0.9;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + (1.0 - phi * phi).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = effective_sample_size(&chains);
        let expected = 80_000.0 / 19.0;
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn shifted_chain_inflates_rhat() {
        let mut chains = iid_chains(4, 500, 3);
        chains[0].iter_mut().for_each(|x| *x += 3.0);
        assert!(split_r_hat(&chains) > 1.5);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.125), 0.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
