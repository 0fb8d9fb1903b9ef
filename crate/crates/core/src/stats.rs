//! Goodness-of-fit and trend statistics used by the verification suites.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

/// Asymptotic Kolmogorov tail with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> TestResult {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    TestResult { statistic: d, p_value: kolmogorov_p_value(d, x.len()) }
}

/// KS test of lattice-valued samples (spacing `h`) against a normal law
/// fitted to the data, after adding an independent uniform on `[−h/2, h/2)`
/// to every sample so that the comparison is between continuous laws.
pub fn ks_normal_dithered(samples: &[f64], h: f64, rng: &mut StreamRng) -> TestResult {
    let x: Vec<f64> = samples.iter().map(|v| v + h * (rng.random::<f64>() - 0.5)).collect();
    let m = mean(&x);
    let s = variance(&x).sqrt();
    let normal = Normal::new(m, s).expect("positive variance");
    ks_test(&x, |v| normal.cdf(v))
}

/// Pearson chi-square goodness of fit; bins with expected count below 5 are
/// merged into their successor. `estimated` parameters reduce the degrees
/// of freedom.
pub fn chi_square_gof(observed: &[u64], expected_prob: &[f64], estimated: usize) -> Result<TestResult> {
    if observed.len() != expected_prob.len() {
        return Err(Error::Parameter("bin count mismatch".into()));
    }
    let total: u64 = observed.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, p) in observed.iter().zip(expected_prob) {
        acc.0 += *o as f64;
        acc.1 += p * total as f64;
        if acc.1 >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => bins.push(acc),
        }
    }
    if bins.len() < 2 + estimated {
        return Err(Error::Parameter("too few bins for chi-square test".into()));
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() - 1 - estimated) as f64;
    let chi = ChiSquared::new(dof).expect("positive dof");
    Ok(TestResult { statistic: stat, p_value: 1.0 - chi.cdf(stat) })
}

/// Poisson probabilities `P(N = k)` for `k < kmax` plus the tail at `kmax`.
pub fn poisson_bins(lambda: f64, kmax: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    let mut p = (-lambda).exp();
    let mut cum = 0.0;
    for k in 0..kmax {
        out.push(p);
        cum += p;
        p *= lambda / (k as f64 + 1.0);
    }
    out.push((1.0 - cum).max(0.0));
    out
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Two-sample energy statistic from pooled pairwise distances and labels.
fn energy_from_matrix(dist: &[f64], weights: &[(f64, f64)], n: f64, m: f64) -> f64 {
    let u = weights.len();
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..u {
        let (ai, bi) = weights[i];
        let row = &dist[i * u..(i + 1) * u];
        for j in 0..u {
            let (aj, bj) = weights[j];
            let dij = row[j];
            xy += ai * bj * dij;
            xx += ai * aj * dij;
            yy += bi * bj * dij;
        }
    }
    (n * m / (n + m)) * (2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m))
}

/// Two-sample energy-distance permutation test. Identical points are
/// grouped into weighted atoms, which keeps lattice-valued data cheap.
pub fn energy_distance_test(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, seed: u64) -> TestResult {
    let mut atoms: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::with_capacity(x.len() + y.len());
    for p in x.iter().chain(y) {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let next = points.len();
        let id = *atoms.entry(key).or_insert_with(|| {
            points.push(p.clone());
            next
        });
        labels.push(id);
    }
    let u = points.len();
    let mut dist = vec![0.0; u * u];
    for i in 0..u {
        for j in 0..u {
            dist[i * u + j] = euclid(&points[i], &points[j]);
        }
    }
    let n = x.len();
    let m = y.len();
    let counts = |labels: &[usize]| {
        let mut w = vec![(0.0, 0.0); u];
        for (k, &l) in labels.iter().enumerate() {
            if k < n {
                w[l].0 += 1.0;
            } else {
                w[l].1 += 1.0;
            }
        }
        w
    };
    let observed = energy_from_matrix(&dist, &counts(&labels), n as f64, m as f64);
    let mut rng = stream(seed, &[]);
    let mut pooled = labels.clone();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        if energy_from_matrix(&dist, &counts(&pooled), n as f64, m as f64) >= observed {
            exceed += 1;
        }
    }
    TestResult {
        statistic: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
    }
}

/// Samples from `N(mean, cov)` via a Cholesky factor.
pub fn gaussian_samples(mean: &[f64], cov: &[Vec<f64>], count: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    let d = mean.len();
    let chol = cholesky(cov)?;
    Ok((0..count)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            (0..d)
                .map(|i| mean[i] + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
                .collect()
        })
        .collect())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return Err(Error::Parameter("matrix is not positive definite".into()));
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric 2×2 or general symmetric matrix by Jacobi
/// rotations.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    off += m[i][j] * m[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..d).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Least-squares slope of `log y` against `log n` with a one-sided t-test
/// for a positive slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub slope: f64,
    pub std_error: f64,
    pub t: f64,
    /// One-sided p-value for `slope > 0`.
    pub p_value: f64,
    /// True when no increasing trend is detected at the given level.
    pub no_increase: bool,
}

pub fn trend_test(points: &[(f64, f64)], level: f64) -> Result<TrendTest> {
    if points.len() < 3 {
        return Err(Error::Parameter("trend test needs at least three points".into()));
    }
    if points.iter().any(|&(n, y)| !(n > 0.0) || !(y > 0.0) || !y.is_finite()) {
        return Err(Error::Parameter("trend test needs positive finite values".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = mean(&xs);
    let my = mean(&ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("trend test needs at least two scales".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = points.len() as f64 - 2.0;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / dof / sxx).sqrt();
    let (t, p) = if se == 0.0 {
        let t = if slope > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        (t, if slope > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        (t, 1.0 - dist.cdf(t))
    };
    Ok(TrendTest {
        slope,
        std_error: se,
        t,
        p_value: p,
        no_increase: !(p < level && slope > 0.0),
    })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn ks_accepts_exponential_and_rejects_shifted() {
        let mut rng = stream(1, &[]);
        let e = Exp::new(4.0).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| e.sample(&mut rng)).collect();
        let r = ks_test(&xs, |x| 1.0 - (-4.0 * x).exp());
        assert!(r.p_value > 0.01);
        let r = ks_test(&xs, |x| 1.0 - (-3.6 * x).exp());
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.36) ≈ 0.05 asymptotically
        let p = kolmogorov_p_value(1.358 / 10_000f64.sqrt(), 10_000);
        assert!((p - 0.05).abs() < 0.003, "{p}");
    }

    #[test]
    fn chi_square_on_exact_counts() {
        let probs = poisson_bins(3.0, 12);
        let obs: Vec<u64> = probs.iter().map(|p| (p * 1e5).round() as u64).collect();
        let r = chi_square_gof(&obs, &probs, 0).unwrap();
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn energy_test_separates_shifted_samples() {
        let mut rng = stream(2, &[]);
        let a: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(0..5) as f64]).collect();
        let b: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(0..5) as f64]).collect();
        let c: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(1..6) as f64]).collect();
        assert!(energy_distance_test(&a, &b, 199, 1).p_value > 0.01);
        assert!(energy_distance_test(&a, &c, 199, 1).p_value < 0.01);
    }

    #[test]
    fn trend_detection() {
        let up: Vec<(f64, f64)> = [8.0, 16.0, 32.0].iter().flat_map(|&n: &f64| (0..5).map(move |s| (n, n * (1.0 + 0.01 * s as f64)))).collect();
        assert!(!trend_test(&up, 0.05).unwrap().no_increase);
        let flat: Vec<(f64, f64)> = [8.0, 16.0, 32.0].iter().flat_map(|&n: &f64| (0..5).map(move |s| (n, 1.0 + 0.1 * ((s * 7 + n as usize) % 5) as f64))).collect();
        assert!(trend_test(&flat, 0.05).unwrap().no_increase);
    }

    #[test]
    fn linear_algebra_helpers() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        let l = cholesky(&a).unwrap();
        assert!((l[1][0] * l[1][0] + l[1][1] * l[1][1] - 2.0).abs() < 1e-14);
        assert!(cholesky(&[vec![-1.0]]).is_err());
    }
}
