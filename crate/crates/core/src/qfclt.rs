//! Desk-scale statistical checks of the quenched invariance principle:
//! diffusive covariance, Gaussianity of the rescaled endpoint, agreement
//! with the corrector covariance formula and stationarity of the
//! environment seen from the walker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{corrector_control, covariance_estimate, frobenius_relative, sample_covariance, solve_corrector, Quantiles, DEFAULT_TOL};
use crate::environment::{sample_environment, ConductanceField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::rng::{mix, stream, TAG_SUITE};
use crate::stats::{energy_distance_test, gaussian_samples, ks_normal_dithered, mean, normal_quantile, std_error, symmetric_eigenvalues, TestResult};
use crate::walker::{displacements_at, ensemble, run_vsrw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: EnvironmentModel,
    pub env_seed: u64,
    pub walk_seed: u64,
    pub dim: usize,
    /// Torus side.
    pub side: usize,
    pub dt: f64,
    /// Environment grid intervals; with `periodic` the field repeats.
    pub intervals: usize,
    pub periodic: bool,
    pub n_list: Vec<usize>,
    pub walkers: usize,
    /// Horizon multiplier `T`: walks run for `T·n²`.
    pub horizon: f64,
    /// Family-wise significance level of the Gaussianity tests.
    pub level: f64,
    pub permutations: usize,
    /// Endpoints used in the energy-distance test.
    pub energy_samples: usize,
    /// Paths used for the corrector-control statistic (0 skips it).
    pub control_paths: usize,
    /// Relative Frobenius tolerance between empirical and formula
    /// covariance.
    pub covariance_tolerance: f64,
    /// Cap on the expected total number of jumps; larger scales are
    /// skipped and the report is marked partial.
    pub jump_budget: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.dim < 2 || self.side < 4 {
            return Err(Error::Parameter(format!("dim {} / side {}", self.dim, self.side)));
        }
        if !(self.dt > 0.0) || self.intervals == 0 {
            return Err(Error::Parameter("dt and intervals must be positive".into()));
        }
        if self.n_list.is_empty() || self.walkers < 2 {
            return Err(Error::Parameter("need at least one scale and two walkers".into()));
        }
        if !(self.horizon > 0.0) || !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Parameter("horizon must be positive and level in (0, 1)".into()));
        }
        for &n in &self.n_list {
            if n < 1 || 4 * n > self.side {
                return Err(Error::Parameter(format!("scale n = {n} needs 4n ≤ L = {}", self.side)));
            }
            let span = self.horizon * (n * n) as f64;
            if !self.periodic && !self.model.is_time_constant() && span > self.intervals as f64 * self.dt {
                return Err(Error::Parameter(format!("horizon T·n² = {span} exceeds K·Δt = {}", self.intervals as f64 * self.dt)));
            }
        }
        Ok(())
    }
}

/// Empirical versus limiting value of one bounded test functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalStat {
    pub label: String,
    pub empirical: f64,
    pub limit: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementStat {
    /// `Cov(ΔX)/|window|` per window `[0,¼], [¼,½], [½,1]`.
    pub scaled_covariance: Vec<Vec<Vec<f64>>>,
    /// Largest `|corr|·√m` between coordinates of different windows.
    pub max_cross_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub n: usize,
    pub walkers: usize,
    pub covariance: Vec<Vec<f64>>,
    /// Standard errors of the covariance entries.
    pub covariance_se: Vec<Vec<f64>>,
    pub ks: Vec<TestResult>,
    pub ks_pass: bool,
    pub energy: TestResult,
    pub energy_pass: bool,
    pub increments: IncrementStat,
    pub functionals: Vec<FunctionalStat>,
    pub formula_distance: Option<f64>,
    pub control: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStat {
    pub n_small: usize,
    pub n_large: usize,
    /// Largest entrywise `|Δ|/SE`.
    pub max_z: f64,
    pub critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfcltReport {
    pub formula_covariance: Option<Vec<Vec<f64>>>,
    pub formula_min_eigenvalue: Option<f64>,
    pub scales: Vec<ScaleReport>,
    pub consistency: Vec<ConsistencyStat>,
    pub partial: bool,
    pub pass: bool,
}

fn covariance_se(samples: &[Vec<f64>], cov: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = cov.len();
    let m = samples.len() as f64;
    let mu: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / m).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let v = samples
                .iter()
                .map(|s| ((s[i] - mu[i]) * (s[j] - mu[j]) - cov[i][j]).powi(2))
                .sum::<f64>()
                / (m - 1.0);
            out[i][j] = (v / m).sqrt();
        }
    }
    out
}

fn increment_stat(windows: &[Vec<Vec<f64>>; 3], lengths: [f64; 3], critical: f64) -> IncrementStat {
    let d = windows[0][0].len();
    let m = windows[0].len();
    let scaled_covariance = windows
        .iter()
        .zip(lengths)
        .map(|(w, len)| sample_covariance(w).into_iter().map(|row| row.into_iter().map(|v| v / len).collect()).collect())
        .collect();
    let mut max_cross_z: f64 = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            for i in 0..d {
                for j in 0..d {
                    let x: Vec<f64> = windows[a].iter().map(|s| s[i]).collect();
                    let y: Vec<f64> = windows[b].iter().map(|s| s[j]).collect();
                    let (mx, my) = (mean(&x), mean(&y));
                    let sxy: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
                    let sxx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
                    let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
                    let corr = sxy / (sxx * syy).sqrt();
                    max_cross_z = max_cross_z.max(corr.abs() * (m as f64).sqrt());
                }
            }
        }
    }
    IncrementStat {
        scaled_covariance,
        max_cross_z,
        pass: max_cross_z <= critical,
    }
}

/// Coordinate CDFs at `{−1, 0, 1}·σ_i` and radial indicators at
/// `{½, 1, 3/2}·√(tr Σ/d)`, empirical against Gaussian `N(0, reference)`.
fn functionals(samples: &[Vec<f64>], reference: &[Vec<f64>], seed: u64) -> Result<Vec<FunctionalStat>> {
    let d = reference.len();
    let mut rng = stream(seed, &[TAG_SUITE, 7]);
    let gauss = gaussian_samples(&vec![0.0; d], reference, 200_000, &mut rng)?;
    let mut out = Vec::new();
    let m = samples.len() as f64;
    let g = gauss.len() as f64;
    let mut push = |label: String, f: &dyn Fn(&[f64]) -> bool| {
        let e = samples.iter().filter(|s| f(s)).count() as f64 / m;
        let l = gauss.iter().filter(|s| f(s)).count() as f64 / g;
        let se = (e * (1.0 - e) / m + l * (1.0 - l) / g).sqrt();
        let z = if se > 0.0 { (e - l) / se } else { 0.0 };
        out.push(FunctionalStat { label, empirical: e, limit: l, z });
    };
    for i in 0..d {
        let s = reference[i][i].sqrt();
        for c in [-1.0, 0.0, 1.0] {
            push(format!("cdf_{i}_{c}"), &|x: &[f64]| x[i] <= c * s);
        }
    }
    let scale = ((0..d).map(|i| reference[i][i]).sum::<f64>() / d as f64).sqrt();
    for c in [0.5, 1.0, 1.5] {
        let r = c * scale;
        push(format!("ball_{c}"), &|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r);
    }
    Ok(out)
}

pub fn run_qfclt(config: &ExperimentConfig) -> Result<QfcltReport> {
    config.validate()?;
    let lat = TorusLattice::new(config.dim, config.side)?;
    let omega = sample_environment(&config.model, &lat, config.intervals as f64 * config.dt, config.dt, config.periodic, config.env_seed)?;
    let d = config.dim;
    let solution = if omega.is_time_constant() || omega.is_periodic() {
        Some(solve_corrector(&omega, DEFAULT_TOL)?)
    } else {
        None
    };
    let formula = match &solution {
        Some(sol) => Some(covariance_estimate(sol, &omega)?),
        None => None,
    };
    let formula_min_eigenvalue = formula.as_ref().map(|f| symmetric_eigenvalues(f).into_iter().fold(f64::INFINITY, f64::min));
    let tests = (config.n_list.len() * d) as f64;
    let ks_level = config.level / tests;
    let energy_level = config.level / config.n_list.len() as f64;
    let cross_critical = normal_quantile(1.0 - config.level / (2.0 * 3.0 * (d * d) as f64 * config.n_list.len() as f64));
    let mean_rate = omega.mean_mu();
    let mut partial = false;
    let mut scales = Vec::new();
    let mut spent = 0.0;
    for &n in &config.n_list {
        let nf = n as f64;
        let span = config.horizon * nf * nf;
        let cost = mean_rate * span * config.walkers as f64;
        if spent + cost > config.jump_budget {
            partial = true;
            continue;
        }
        spent += cost;
        let seed = mix(config.walk_seed, &[n as u64]);
        let x0 = 0;
        let offsets = [0.25 * span, 0.5 * span, span];
        let runs: Vec<Vec<Vec<i64>>> = ensemble(config.walkers, seed, |_, rng| displacements_at(&omega, 0.0, x0, &offsets, rng))
            .into_iter()
            .collect::<Result<_>>()?;
        let scaled = |v: &[i64]| -> Vec<f64> { v.iter().map(|&c| c as f64 / nf).collect() };
        let endpoints: Vec<Vec<f64>> = runs.iter().map(|r| scaled(&r[2])).collect();
        let windows: [Vec<Vec<f64>>; 3] = [0, 1, 2].map(|w| {
            runs.iter()
                .map(|r| {
                    let hi = scaled(&r[w]);
                    if w == 0 {
                        hi
                    } else {
                        let lo = scaled(&r[w - 1]);
                        hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
                    }
                })
                .collect()
        });
        let covariance = sample_covariance(&endpoints);
        let covariance_se = covariance_se(&endpoints, &covariance);
        let mut rng = stream(seed, &[TAG_SUITE, 1]);
        let ks: Vec<TestResult> = (0..d)
            .map(|i| {
                let coord: Vec<f64> = endpoints.iter().map(|s| s[i]).collect();
                ks_normal_dithered(&coord, 1.0 / nf, &mut rng)
            })
            .collect();
        let ks_pass = ks.iter().all(|t| t.passes(ks_level));
        let take = config.energy_samples.min(endpoints.len());
        let mut grng = stream(seed, &[TAG_SUITE, 2]);
        let gauss = gaussian_samples(&vec![0.0; d], &covariance, take, &mut grng)?;
        let energy = energy_distance_test(&endpoints[..take], &gauss, config.permutations, mix(seed, &[3]));
        let energy_pass = energy.passes(energy_level);
        let horizon_len = config.horizon;
        let increments = increment_stat(&windows, [0.25 * horizon_len, 0.25 * horizon_len, 0.5 * horizon_len], cross_critical);
        let reference: Vec<Vec<f64>> = match &formula {
            Some(f) => f.iter().map(|row| row.iter().map(|v| v * config.horizon).collect()).collect(),
            None => covariance.clone(),
        };
        let functionals = functionals(&endpoints, &reference, seed)?;
        let formula_distance = formula.as_ref().map(|f| {
            let target: Vec<Vec<f64>> = f.iter().map(|row| row.iter().map(|v| v * config.horizon).collect()).collect();
            frobenius_relative(&covariance, &target)
        });
        let control = match &solution {
            Some(sol) if config.control_paths > 0 => Some(corrector_control(sol, &omega, nf, config.horizon, config.control_paths, x0, mix(seed, &[4]))?),
            _ => None,
        };
        scales.push(ScaleReport {
            n,
            walkers: config.walkers,
            covariance,
            covariance_se,
            ks,
            ks_pass,
            energy,
            energy_pass,
            increments,
            functionals,
            formula_distance,
            control,
        });
    }
    let entries = (d * (d + 1) / 2) as f64;
    let critical = normal_quantile(1.0 - config.level / (2.0 * entries * scales.len().max(2) as f64));
    let consistency: Vec<ConsistencyStat> = scales
        .windows(2)
        .map(|w| {
            let mut max_z: f64 = 0.0;
            for i in 0..d {
                for j in i..d {
                    let se = (w[0].covariance_se[i][j].powi(2) + w[1].covariance_se[i][j].powi(2)).sqrt();
                    max_z = max_z.max((w[0].covariance[i][j] - w[1].covariance[i][j]).abs() / se);
                }
            }
            ConsistencyStat {
                n_small: w[0].n,
                n_large: w[1].n,
                max_z,
                critical,
                pass: max_z <= critical,
            }
        })
        .collect();
    let pass = !scales.is_empty()
        && scales.iter().all(|s| s.ks_pass && s.energy_pass && s.increments.pass && s.formula_distance.is_none_or(|f| f <= config.covariance_tolerance))
        && consistency.iter().all(|c| c.pass)
        && formula_min_eigenvalue.is_none_or(|e| e > 0.0);
    Ok(QfcltReport {
        formula_covariance: formula,
        formula_min_eigenvalue,
        scales,
        consistency,
        partial,
        pass,
    })
}

/// Bounded local functionals of the environment seen from the walker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalFunctional {
    One,
    /// `ω_t(x, x + e₁)`.
    ForwardConductance,
    /// `μ_t(x)`.
    Mu,
}

impl LocalFunctional {
    pub fn eval(&self, omega: &ConductanceField, t: f64, x: usize) -> Result<f64> {
        Ok(match self {
            LocalFunctional::One => 1.0,
            LocalFunctional::ForwardConductance => omega.conductance_at(t, omega.lattice().edge(x, 0))?,
            LocalFunctional::Mu => omega.mu(omega.interval_at(t)?, x),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProcessReport {
    pub t_list: Vec<f64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Exact space average `(1/|V|)Σ_x φ(τ_{t,x}ω)` at each `t`.
    pub predicted: Vec<f64>,
    /// Largest `|mean_t − predicted_t|/SE_t`.
    pub max_prediction_z: f64,
    /// Largest pairwise `|mean_s − mean_t|/SE`.
    pub max_pairwise_z: f64,
    pub pass: bool,
}

/// Starts walkers uniformly on the torus at the field's origin time and
/// evaluates `φ(τ_{t,X_t}ω)` at each `t` with an independent ensemble.
/// The counting measure is invariant for every `𝓛_t`, so each mean must
/// match the space average of `φ` at time `t`; for time-constant fields
/// this makes the means constant in `t`.
pub fn environment_process_check(omega: &ConductanceField, n_paths: usize, t_list: &[f64], phi: LocalFunctional, seed: u64) -> Result<EnvironmentProcessReport> {
    if n_paths < 2 || t_list.is_empty() {
        return Err(Error::Parameter("need two paths and one time".into()));
    }
    let lat = omega.lattice();
    let nv = lat.num_vertices();
    let s = omega.t_start();
    let mut means = Vec::new();
    let mut ses = Vec::new();
    let mut predicted = Vec::new();
    for (ti, &t) in t_list.iter().enumerate() {
        let values: Vec<f64> = ensemble(n_paths, mix(seed, &[ti as u64]), |_, rng| {
            let x = rng.random_range(0..nv);
            let end = run_vsrw(omega, s, x, s + t, rng, |_| {})?;
            phi.eval(omega, s + t, end)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        means.push(mean(&values));
        ses.push(std_error(&values));
        let avg: f64 = (0..nv).map(|x| phi.eval(omega, s + t, x)).collect::<Result<Vec<_>>>()?.iter().sum::<f64>() / nv as f64;
        predicted.push(avg);
    }
    let z = |diff: f64, se: f64| if se > 0.0 { diff.abs() / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let max_prediction_z = means.iter().zip(&predicted).zip(&ses).map(|((m, p), se)| z(m - p, *se)).fold(0.0, f64::max);
    let mut max_pairwise_z: f64 = 0.0;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            max_pairwise_z = max_pairwise_z.max(z(means[a] - means[b], (ses[a].powi(2) + ses[b].powi(2)).sqrt()));
        }
    }
    let pass = max_prediction_z <= 3.0 && (!omega.is_time_constant() || max_pairwise_z <= 3.0);
    Ok(EnvironmentProcessReport {
        t_list: t_list.to_vec(),
        means,
        std_errors: ses,
        predicted,
        max_prediction_z,
        max_pairwise_z,
        pass,
    })
}
