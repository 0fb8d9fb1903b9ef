//! Correctors on the space-time torus.
//!
//! For each coordinate `j` the corrector solves `∂_t u + 𝓛_t u = 𝓛_t Π^j`
//! where `𝓛_t Π^j = −∇*(ω_t ∇Π^j)` is computed from the edge-local
//! displacement. Three solvers are provided: a time-periodic Euler scheme, a
//! static conjugate-gradient solve and the β-regularized space-time system.
//!
//! Time convention: slice `k` of a solution covers `[t_k, t_{k+1})` and holds
//! the scheme value `u_{k+1}`, so along a walk `Φ = Π − χ` is a martingale
//! up to `O(Δt)` terms.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{sample_environment, ConductanceField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::{SpaceTimeCylinder, TorusLattice};
use crate::linalg::{self, conjugate_gradient, gmres, max_abs, Compensated};
use crate::rng::stream;
use crate::spacetime::SpaceTimeField;
use crate::walker::{ensemble, run_vsrw};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_ITER: usize = 20_000;
const RESTART: usize = 150;

/// Corrector `χ` with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSolution {
    /// One field per coordinate.
    pub chi: Vec<SpaceTimeField>,
    pub meta: CorrectorMeta,
}

/// Sidecar record of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorMeta {
    pub solver: String,
    /// Max-abs harmonic residual over the grid.
    pub residual: f64,
    pub tol: f64,
    pub beta: f64,
    pub dt: f64,
    /// Solver steps per environment interval.
    pub substeps: usize,
    pub iterations: Vec<usize>,
    /// Max-abs slice mean of χ per coordinate after gauge fixing.
    pub gauge: Vec<f64>,
    /// Max spread over slices of the slice sums before gauge fixing.
    pub mass_drift: f64,
}

impl CorrectorSolution {
    pub fn dim(&self) -> usize {
        self.chi.len()
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.chi[0].lattice
    }

    pub fn slices(&self) -> usize {
        self.chi[0].slices
    }

    #[inline]
    pub fn slice_at(&self, t: f64) -> Result<usize> {
        self.chi[0].slice_at(t)
    }

    /// `χ^i` on slice `k` at `x`.
    #[inline]
    pub fn value(&self, i: usize, k: usize, x: usize) -> f64 {
        self.chi[i].values[k * self.chi[i].num_vertices() + x]
    }

    pub fn chi_at(&self, t: f64, x: usize) -> Result<Vec<f64>> {
        let k = self.slice_at(t)?;
        Ok((0..self.dim()).map(|i| self.value(i, k, x)).collect())
    }

    /// `Φ^i(y) − Φ^i(x)` across the edge `x → y = x ± e_axis` on slice `k`.
    #[inline]
    pub fn phi_increment(&self, i: usize, k: usize, x: usize, y: usize, axis: usize, forward: bool) -> f64 {
        let step = if i == axis {
            if forward {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        step - (self.value(i, k, y) - self.value(i, k, x))
    }

    pub fn max_abs(&self) -> f64 {
        self.chi.iter().map(|f| max_abs(&f.values)).fold(0.0, f64::max)
    }

    /// Whether slice `k` of this solution maps to environment interval
    /// `k / substeps`, or the solution is static.
    fn env_interval(&self, omega: &ConductanceField, k: usize) -> usize {
        if self.slices() == 1 {
            0
        } else {
            (k / self.meta.substeps) % omega.intervals()
        }
    }

    fn check_grid(&self, omega: &ConductanceField) -> Result<()> {
        if self.lattice() != omega.lattice() {
            return Err(Error::GridMismatch("lattice differs".into()));
        }
        if self.slices() == 1 {
            if !omega.is_time_constant() {
                return Err(Error::GridMismatch("static solution for a time-dependent field".into()));
            }
            return Ok(());
        }
        let m = self.meta.substeps;
        let aligned = (self.meta.dt * m as f64 - omega.dt()).abs() <= 1e-12 * omega.dt()
            && self.slices() == omega.intervals() * m
            && (self.chi[0].t_start - omega.t_start()).abs() <= 1e-12 * omega.dt().max(omega.t_start().abs());
        if aligned {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{} slices of {} vs {} intervals of {}",
                self.slices(),
                self.meta.dt,
                omega.intervals(),
                omega.dt()
            )))
        }
    }
}

/// `b = 𝓛Π^j`: `b(x) = ω(x, x+e_j) − ω(x−e_j, x)`.
pub fn coordinate_rhs(lattice: &TorusLattice, w: &[f64], j: usize) -> Vec<f64> {
    (0..lattice.num_vertices())
        .map(|x| w[lattice.edge(x, j)] - w[lattice.edge(lattice.neighbor(x, j, false), j)])
        .collect()
}

/// Solver steps per environment interval so that `Δt · max μ ≤ 1`.
pub fn default_substeps(omega: &ConductanceField) -> usize {
    (omega.dt() * omega.max_mu()).ceil().max(1.0) as usize
}

fn slab_rhs(omega: &ConductanceField, j: usize) -> Vec<Vec<f64>> {
    (0..omega.num_slabs())
        .map(|s| coordinate_rhs(omega.lattice(), omega.slab(s), j))
        .collect()
}

/// Backward sweep `u_k = u_{k+1} + Δt(𝓛_k u_{k+1} − b_k)` from `u_N = start`.
/// Returns `u_0`; when `store` is given, slot `k` receives `u_{k+1}`.
fn sweep(omega: &ConductanceField, m: usize, dt: f64, rhs: Option<&[Vec<f64>]>, start: &[f64], mut store: Option<&mut Vec<f64>>) -> Vec<f64> {
    let lat = omega.lattice();
    let n = lat.num_vertices();
    let slices = omega.intervals() * m;
    let mut v = start.to_vec();
    let mut lv = vec![0.0; n];
    for k in (0..slices).rev() {
        if let Some(buf) = store.as_deref_mut() {
            buf[k * n..(k + 1) * n].copy_from_slice(&v);
        }
        let env = k / m;
        lat.apply_generator_into(omega.weights(env), &v, &mut lv);
        match rhs {
            Some(b) => {
                let bk = &b[omega.schedule()[env]];
                v.iter_mut().zip(&lv).zip(bk).for_each(|((vi, li), bi)| *vi += dt * (li - bi));
            }
            None => v.iter_mut().zip(&lv).for_each(|(vi, li)| *vi += dt * li),
        }
    }
    v
}

fn gauge_fix(values: &mut [f64], n: usize) -> (f64, f64) {
    let sums: Vec<f64> = values.chunks(n).map(linalg::sum).collect();
    let spread = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut worst: f64 = 0.0;
    for chunk in values.chunks_mut(n) {
        linalg::project_mean_zero(chunk);
        worst = worst.max((linalg::sum(chunk) / n as f64).abs());
    }
    (spread, worst)
}

/// Time-periodic corrector on the grid of `omega` refined by `substeps`
/// (defaults to [`default_substeps`]).
pub fn solve_poisson_time_periodic(omega: &ConductanceField, substeps: Option<usize>, tol: f64) -> Result<CorrectorSolution> {
    if !omega.is_periodic() {
        return Err(Error::NotPeriodic);
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol}")));
    }
    let m = substeps.unwrap_or_else(|| default_substeps(omega)).max(1);
    let dt = omega.dt() / m as f64;
    let lat = omega.lattice();
    let n = lat.num_vertices();
    let slices = omega.intervals() * m;
    let mut chi = Vec::with_capacity(lat.dim());
    let mut iterations = Vec::new();
    let mut gauge = Vec::new();
    let mut mass_drift: f64 = 0.0;
    for j in 0..lat.dim() {
        let b = slab_rhs(omega, j);
        let zero = vec![0.0; n];
        let mut c = sweep(omega, m, dt, Some(&b), &zero, None);
        linalg::project_mean_zero(&mut c);
        // (I − S) x = c on mean-zero vectors
        let apply = |x: &[f64], y: &mut [f64]| {
            let sx = sweep(omega, m, dt, None, x, None);
            y.iter_mut().zip(x).zip(&sx).for_each(|((yi, xi), si)| *yi = xi - si);
        };
        let target = 0.5 * tol * dt;
        let accept = |x: &[f64]| {
            let u0 = sweep(omega, m, dt, Some(&b), x, None);
            let r = u0.iter().zip(x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            (r <= target, r / dt)
        };
        let mut x = vec![0.0; n];
        let stats = gmres(apply, &c, &mut x, RESTART, MAX_ITER, target, true, accept)?;
        iterations.push(stats.iterations);
        let mut values = vec![0.0; slices * n];
        sweep(omega, m, dt, Some(&b), &x, Some(&mut values));
        let (spread, worst) = gauge_fix(&mut values, n);
        mass_drift = mass_drift.max(spread);
        gauge.push(worst);
        chi.push(SpaceTimeField {
            lattice: lat.clone(),
            t_start: omega.t_start(),
            dt,
            periodic: true,
            slices,
            values,
        });
    }
    let mut sol = CorrectorSolution {
        chi,
        meta: CorrectorMeta {
            solver: "time_periodic".into(),
            residual: 0.0,
            tol,
            beta: 0.0,
            dt,
            substeps: m,
            iterations,
            gauge,
            mass_drift,
        },
    };
    sol.meta.residual = harmonic_residual(&sol, omega)?;
    Ok(sol)
}

/// Corrector of a time-constant field by conjugate gradients on `−𝓛u = −b`.
pub fn solve_static_corrector(omega: &ConductanceField, tol: f64) -> Result<CorrectorSolution> {
    if !omega.is_time_constant() {
        return Err(Error::NotTimeConstant);
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol}")));
    }
    let lat = omega.lattice();
    let w = omega.weights(0);
    let n = lat.num_vertices();
    let mut chi = Vec::new();
    let mut iterations = Vec::new();
    let mut gauge = Vec::new();
    let mut mass_drift: f64 = 0.0;
    for j in 0..lat.dim() {
        let neg_b: Vec<f64> = coordinate_rhs(lat, w, j).iter().map(|v| -v).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            lat.apply_generator_into(w, x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        };
        let mut x = vec![0.0; n];
        let stats = conjugate_gradient(apply, &neg_b, &mut x, 0.5 * tol, MAX_ITER, true)?;
        iterations.push(stats.iterations);
        let (spread, worst) = gauge_fix(&mut x, n);
        mass_drift = mass_drift.max(spread);
        gauge.push(worst);
        chi.push(SpaceTimeField::time_constant(lat.clone(), x));
    }
    for f in &mut chi {
        f.t_start = omega.t_start();
        f.dt = omega.dt();
    }
    let mut sol = CorrectorSolution {
        chi,
        meta: CorrectorMeta {
            solver: "static".into(),
            residual: 0.0,
            tol,
            beta: 0.0,
            dt: omega.dt(),
            substeps: 1,
            iterations,
            gauge,
            mass_drift,
        },
    };
    sol.meta.residual = harmonic_residual(&sol, omega)?;
    Ok(sol)
}

/// Static solver for time-constant fields, time-periodic solver otherwise.
pub fn solve_corrector(omega: &ConductanceField, tol: f64) -> Result<CorrectorSolution> {
    if omega.is_time_constant() {
        solve_static_corrector(omega, tol)
    } else {
        solve_poisson_time_periodic(omega, None, tol)
    }
}

/// Max over the grid of `|(Φ_{k+1} − Φ_k)/Δt + 𝓛_{t_k}Φ_{k+1}|`, evaluated
/// on the stored slices (slice `k` holds `u_{k+1}`).
pub fn harmonic_residual(sol: &CorrectorSolution, omega: &ConductanceField) -> Result<f64> {
    sol.check_grid(omega)?;
    let lat = omega.lattice();
    let n = lat.num_vertices();
    let slices = sol.slices();
    let static_sol = slices == 1;
    let mut worst: f64 = 0.0;
    let mut lv = vec![0.0; n];
    for j in 0..sol.dim() {
        let f = &sol.chi[j];
        for k in 0..slices {
            let env = sol.env_interval(omega, k);
            let w = omega.weights(env);
            let cur = f.slice(k);
            let prev = f.slice((k + slices - 1) % slices);
            // residual of Φ = Π − χ is minus the residual of χ against 𝓛Π
            let b = coordinate_rhs(lat, w, j);
            lat.apply_generator_into(w, cur, &mut lv);
            for x in 0..n {
                let time = if static_sol { 0.0 } else { (cur[x] - prev[x]) / sol.meta.dt };
                worst = worst.max((time + lv[x] - b[x]).abs());
            }
        }
    }
    Ok(worst)
}

/// β-regularized solution together with the terms of the energy bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedSolution {
    pub solution: CorrectorSolution,
    /// Per coordinate: `(energy, β‖D₀ψ‖², β‖ψ‖², bound)`.
    pub energy: Vec<EnergyTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub dirichlet: f64,
    pub time_term: f64,
    pub mass_term: f64,
    pub bound: f64,
}

impl EnergyTerms {
    pub fn lhs(&self) -> f64 {
        self.dirichlet + self.time_term + self.mass_term
    }

    pub fn holds(&self) -> bool {
        self.lhs() <= self.bound * (1.0 + 1e-9)
    }
}

/// Centered periodic time difference `(ψ_{k+1} − ψ_{k−1})/(2Δt)` per slice.
fn centered_difference(psi: &[f64], n: usize, slices: usize, dt: f64, out: &mut [f64]) {
    for k in 0..slices {
        let up = (k + 1) % slices;
        let down = (k + slices - 1) % slices;
        for x in 0..n {
            out[k * n + x] = (psi[up * n + x] - psi[down * n + x]) / (2.0 * dt);
        }
    }
}

/// Solves `−D₀ψ − 𝓛ψ + (β/2)(D₀ᵀD₀ + I)ψ = ∇*(ω∇Π^j)` on the periodic grid
/// of `omega`, the finite form of the regularized corrector equation.
pub fn solve_regularized(omega: &ConductanceField, beta: f64, tol: f64) -> Result<RegularizedSolution> {
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta = {beta} must be positive")));
    }
    if !omega.is_periodic() {
        return Err(Error::NotPeriodic);
    }
    let lat = omega.lattice();
    let n = lat.num_vertices();
    let slices = omega.intervals();
    let dt = omega.dt();
    let total = n * slices;
    let apply = |psi: &[f64], out: &mut [f64]| {
        let mut d0 = vec![0.0; total];
        centered_difference(psi, n, slices, dt, &mut d0);
        let mut d0d0 = vec![0.0; total];
        centered_difference(&d0, n, slices, dt, &mut d0d0);
        let mut lv = vec![0.0; n];
        for k in 0..slices {
            lat.apply_generator_into(omega.weights(k), &psi[k * n..(k + 1) * n], &mut lv);
            for x in 0..n {
                let i = k * n + x;
                // D₀ᵀD₀ = −D₀²
                out[i] = -d0[i] - lv[x] + 0.5 * beta * (-d0d0[i] + psi[i]);
            }
        }
    };
    let mut fields = Vec::new();
    let mut energy = Vec::new();
    let mut iterations = Vec::new();
    let mut worst_res: f64 = 0.0;
    let mean_mu = omega.mean_mu();
    for j in 0..lat.dim() {
        let mut rhs = vec![0.0; total];
        for k in 0..slices {
            let b = coordinate_rhs(lat, omega.weights(k), j);
            for x in 0..n {
                rhs[k * n + x] = -b[x];
            }
        }
        let accept = |psi: &[f64]| {
            let mut out = vec![0.0; total];
            apply(psi, &mut out);
            let r = out.iter().zip(&rhs).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            (r <= tol, r)
        };
        let mut psi = vec![0.0; total];
        let stats = gmres(apply, &rhs, &mut psi, RESTART, MAX_ITER, 0.25 * tol, false, accept)?;
        iterations.push(stats.iterations);
        worst_res = worst_res.max(stats.residual);
        // energy terms, averaged over the space-time torus
        let scale = 1.0 / total as f64;
        let mut dirichlet = 0.0;
        for k in 0..slices {
            let s = &psi[k * n..(k + 1) * n];
            dirichlet += 2.0 * lat.dirichlet_form_unchecked(omega.weights(k), s, s);
        }
        let mut d0 = vec![0.0; total];
        centered_difference(&psi, n, slices, dt, &mut d0);
        energy.push(EnergyTerms {
            dirichlet: dirichlet * scale,
            time_term: beta * linalg::dot(&d0, &d0) * scale,
            mass_term: beta * linalg::dot(&psi, &psi) * scale,
            bound: mean_mu,
        });
        fields.push(SpaceTimeField {
            lattice: lat.clone(),
            t_start: omega.t_start(),
            dt,
            periodic: true,
            slices,
            values: psi,
        });
    }
    let gauge = fields
        .iter()
        .map(|f| f.values.chunks(n).map(|c| (linalg::sum(c) / n as f64).abs()).fold(0.0, f64::max))
        .collect();
    Ok(RegularizedSolution {
        solution: CorrectorSolution {
            chi: fields,
            meta: CorrectorMeta {
                solver: "regularized".into(),
                residual: worst_res,
                tol,
                beta,
                dt,
                substeps: 1,
                iterations,
                gauge,
                mass_drift: 0.0,
            },
        },
        energy,
    })
}

/// Max-abs difference of `∇χ^j` between two solutions over all slices of
/// `a`, matched by time.
pub fn gradient_distance(a: &CorrectorSolution, b: &CorrectorSolution) -> Result<f64> {
    let lat = a.lattice();
    if lat != b.lattice() || a.dim() != b.dim() {
        return Err(Error::GridMismatch("solutions on different lattices".into()));
    }
    let mut worst: f64 = 0.0;
    for j in 0..a.dim() {
        for k in 0..a.slices() {
            let t = a.chi[j].t_start + (k as f64 + 0.5) * a.chi[j].dt;
            let kb = b.chi[j].slice_at(t)?;
            let ga = lat.grad(a.chi[j].slice(k));
            let gb = lat.grad(b.chi[j].slice(kb));
            worst = worst.max(ga.iter().zip(&gb).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())));
        }
    }
    Ok(worst)
}

/// `Σ²_ij` as the space-time torus average of
/// `Σ_{y∼x} ω_t(x,y)(Φ^i(y)−Φ^i(x))(Φ^j(y)−Φ^j(x))`.
pub fn covariance_estimate(sol: &CorrectorSolution, omega: &ConductanceField) -> Result<Vec<Vec<f64>>> {
    sol.check_grid(omega)?;
    let lat = omega.lattice();
    let d = lat.dim();
    let slices = sol.slices();
    let per_slice: Vec<Vec<Compensated>> = (0..slices)
        .into_par_iter()
        .map(|k| {
            let w = omega.weights(sol.env_interval(omega, k));
            let mut acc = vec![Compensated::default(); d * d];
            let mut inc = vec![0.0; d];
            for x in 0..lat.num_vertices() {
                for axis in 0..d {
                    let y = lat.neighbor(x, axis, true);
                    let we = w[lat.edge(x, axis)];
                    for (i, v) in inc.iter_mut().enumerate() {
                        *v = sol.phi_increment(i, k, x, y, axis, true);
                    }
                    for i in 0..d {
                        for jj in 0..d {
                            acc[i * d + jj].add(we * inc[i] * inc[jj]);
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let cells = (slices * lat.num_vertices()) as f64;
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut total = Compensated::default();
            per_slice.iter().for_each(|a| total.add(a[i * d + j].value()));
            out[i][j] = 2.0 * (total.value() / cells);
        }
    }
    Ok(out)
}

/// Sample covariance (normalized by `m − 1`) of the rows of `samples`.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = samples.first().map(|s| s.len()).unwrap_or(0);
    let m = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / m).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).sum::<f64>() / (m - 1.0);
        }
    }
    out
}

/// `X^{(n)}_1 = (X_{s+n²} − x)/n` for `n_paths` independent walkers.
pub fn rescaled_endpoints(omega: &ConductanceField, s: f64, x: usize, n: f64, n_paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let offsets = [n * n];
    let runs = ensemble(n_paths, seed, |_, rng| crate::walker::displacements_at(omega, s, x, &offsets, rng));
    runs.into_iter()
        .map(|r| r.map(|v| v[0].iter().map(|&c| c as f64 / n).collect()))
        .collect()
}

/// Monte Carlo covariance of `X^{(n)}_1` started at `(0, x)`.
pub fn covariance_empirical(omega: &ConductanceField, x: usize, n: f64, n_paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(sample_covariance(&rescaled_endpoints(omega, 0.0, x, n, n_paths, seed)?))
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn frobenius_relative(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

/// Sublinearity statistics of one solved instance over `Q(n)` centred at `x0`:
/// `max |χ|/n` and `(1/n³)∫₀^{n²} (1/|B(n)|) Σ_{B(n)} |χ| dt`.
pub fn sublinearity_stats(sol: &CorrectorSolution, n: f64, x0: usize) -> Result<(f64, f64)> {
    let lat = sol.lattice();
    let ball = lat.ball(x0, n)?;
    let f = &sol.chi[0];
    let weights = f.slice_weights(0.0, n * n)?;
    let mut max: f64 = 0.0;
    let mut integral = 0.0;
    let mut total = 0.0;
    for &(k, w) in &weights {
        let mut avg = 0.0;
        for &x in &ball {
            let norm = (0..sol.dim()).map(|i| sol.value(i, k, x).powi(2)).sum::<f64>().sqrt();
            max = max.max(norm);
            avg += norm;
        }
        integral += w * avg / ball.len() as f64;
        total += w;
    }
    Ok((max / n, integral / (total * n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SublinearityOptions {
    /// Environment grid step.
    pub dt: f64,
    /// Grid intervals per period for time-dependent models.
    pub period_intervals: usize,
    pub tol: f64,
    /// Skip scales whose space-time grid exceeds this many cells.
    pub max_cells: usize,
}

impl Default for SublinearityOptions {
    fn default() -> Self {
        Self {
            dt: 1.0,
            period_intervals: 4,
            tol: DEFAULT_TOL,
            max_cells: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityRow {
    pub n: f64,
    pub seed: u64,
    pub side: usize,
    pub max_stat: f64,
    pub l1_stat: f64,
    pub residual: f64,
    /// Set when the row was skipped for exceeding the resource cap.
    pub skipped: bool,
}

/// For each scale `n` and seed: samples the model on a torus of side `4n`,
/// solves the corrector and reports both sublinearity statistics.
pub fn sublinearity_profile(model: &EnvironmentModel, dim: usize, n_list: &[usize], seeds: &[u64], opts: &SublinearityOptions) -> Result<Vec<SublinearityRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let side = 4 * n;
        let lat = TorusLattice::new(dim, side)?;
        let intervals = if model.is_time_constant() { 1 } else { opts.period_intervals.max(1) };
        for &seed in seeds {
            let omega = sample_environment(model, &lat, intervals as f64 * opts.dt, opts.dt, true, seed)?;
            let slices = if model.is_time_constant() { 1 } else { intervals * default_substeps(&omega) };
            if slices * lat.num_vertices() > opts.max_cells {
                rows.push(SublinearityRow {
                    n: n as f64,
                    seed,
                    side,
                    max_stat: f64::NAN,
                    l1_stat: f64::NAN,
                    residual: f64::NAN,
                    skipped: true,
                });
                continue;
            }
            let sol = solve_corrector(&omega, opts.tol)?;
            let (max_stat, l1_stat) = sublinearity_stats(&sol, n as f64, 0)?;
            rows.push(SublinearityRow {
                n: n as f64,
                seed,
                side,
                max_stat,
                l1_stat,
                residual: sol.meta.residual,
                skipped: false,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleOptions {
    pub n_paths: usize,
    /// Increasing observation times; the walk starts at the first one.
    pub t_grid: Vec<f64>,
    pub start: usize,
    /// Direction `v` of the quadratic-variation check.
    pub direction: Vec<f64>,
    /// Adds `c·t` to every coordinate of χ; a deliberate corruption for
    /// negative controls, 0 otherwise.
    #[serde(default)]
    pub time_tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementStat {
    pub t0: f64,
    pub t1: f64,
    pub coordinate: usize,
    pub mean: f64,
    pub std_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub increments: Vec<IncrementStat>,
    pub qv_empirical: f64,
    pub qv_predicted: f64,
    pub qv_relative_error: f64,
    pub qv_pass: bool,
    pub pass: bool,
}

struct PathMartingale {
    values: Vec<Vec<f64>>,
    qv: f64,
    predicted: f64,
}

/// `Σ_y ω_t(x,y) (v·(Φ(y) − Φ(x)))²` on slice `k`.
fn qv_rate(sol: &CorrectorSolution, w: &[f64], k: usize, x: usize, v: &[f64]) -> f64 {
    let lat = sol.lattice();
    let mut acc = 0.0;
    for axis in 0..lat.dim() {
        for forward in [true, false] {
            let y = lat.neighbor(x, axis, forward);
            let inc: f64 = (0..sol.dim()).map(|i| v[i] * sol.phi_increment(i, k, x, y, axis, forward)).sum();
            acc += w[lat.incident_edge(x, axis, forward)] * inc * inc;
        }
    }
    acc
}

/// `∫_a^b` of the quadratic-variation rate at fixed position `x`, exact for
/// the piecewise-constant slices.
fn qv_integral(sol: &CorrectorSolution, omega: &ConductanceField, x: usize, a: f64, b: f64, v: &[f64]) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    if sol.slices() == 1 {
        return Ok((b - a) * qv_rate(sol, omega.weights(0), 0, x, v));
    }
    let f = &sol.chi[0];
    let mut acc = 0.0;
    for (k, w) in f.slice_weights(a, b)? {
        acc += w * qv_rate(sol, omega.weights(sol.env_interval(omega, k)), k, x, v);
    }
    Ok(acc)
}

fn simulate_martingale<R: Rng + ?Sized>(sol: &CorrectorSolution, omega: &ConductanceField, opts: &MartingaleOptions, rng: &mut R) -> Result<PathMartingale> {
    let lat = omega.lattice();
    let d = lat.dim();
    let s = opts.t_grid[0];
    let t_end = *opts.t_grid.last().unwrap();
    let mut lift: Vec<f64> = lat.coords(opts.start).iter().map(|&c| c as f64).collect();
    let mut pos = opts.start;
    let mut last = s;
    let mut values = Vec::with_capacity(opts.t_grid.len());
    let mut next = 0;
    let mut qv = 0.0;
    let mut predicted = 0.0;
    let mut err: Option<Error> = None;
    let record = |t: f64, pos: usize, lift: &[f64], values: &mut Vec<Vec<f64>>| -> Result<()> {
        let chi = sol.chi_at(t, pos)?;
        values.push((0..d).map(|i| lift[i] - chi[i] - opts.time_tilt * t).collect());
        Ok(())
    };
    run_vsrw(omega, s, opts.start, t_end, rng, |j| {
        if err.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            while next < opts.t_grid.len() && opts.t_grid[next] < j.time {
                record(opts.t_grid[next], pos, &lift, &mut values)?;
                next += 1;
            }
            predicted += qv_integral(sol, omega, pos, last, j.time, &opts.direction)?;
            let k = sol.slice_at(j.time)?;
            let inc: f64 = (0..d).map(|i| opts.direction[i] * sol.phi_increment(i, k, j.from, j.to, j.axis, j.forward)).sum();
            qv += inc * inc;
            Ok(())
        };
        if let Err(e) = step() {
            err = Some(e);
            return;
        }
        lift[j.axis] += if j.forward { 1.0 } else { -1.0 };
        pos = j.to;
        last = j.time;
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    predicted += qv_integral(sol, omega, pos, last, t_end, &opts.direction)?;
    while next < opts.t_grid.len() {
        record(opts.t_grid[next], pos, &lift, &mut values)?;
        next += 1;
    }
    Ok(PathMartingale { values, qv, predicted })
}

/// Tests that `M_t = X_t − χ(t, X_t)` has centred increments and that the
/// quadratic variation of `v·M` matches its predicted compensator.
pub fn martingale_check(sol: &CorrectorSolution, omega: &ConductanceField, opts: &MartingaleOptions, seed: u64) -> Result<MartingaleReport> {
    sol.check_grid(omega)?;
    if opts.t_grid.len() < 2 || opts.t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("time grid must be increasing with at least two points".into()));
    }
    if opts.direction.len() != omega.lattice().dim() {
        return Err(Error::Parameter("direction has wrong dimension".into()));
    }
    let paths: Vec<PathMartingale> = ensemble(opts.n_paths, seed, |_, rng| simulate_martingale(sol, omega, opts, rng))
        .into_iter()
        .collect::<Result<_>>()?;
    let m = paths.len() as f64;
    let d = omega.lattice().dim();
    let mut increments = Vec::new();
    for (a, w) in opts.t_grid.windows(2).enumerate() {
        for i in 0..d {
            let inc: Vec<f64> = paths.iter().map(|p| p.values[a + 1][i] - p.values[a][i]).collect();
            let mean = inc.iter().sum::<f64>() / m;
            let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            increments.push(IncrementStat {
                t0: w[0],
                t1: w[1],
                coordinate: i,
                mean,
                std_error: se,
                pass: mean.abs() <= 3.0 * se,
            });
        }
    }
    let qv_empirical = paths.iter().map(|p| p.qv).sum::<f64>() / m;
    let qv_predicted = paths.iter().map(|p| p.predicted).sum::<f64>() / m;
    let qv_relative_error = (qv_empirical / qv_predicted - 1.0).abs();
    let qv_pass = qv_relative_error <= 0.05;
    let pass = qv_pass && increments.iter().all(|s| s.pass);
    Ok(MartingaleReport {
        increments,
        qv_empirical,
        qv_predicted,
        qv_relative_error,
        qv_pass,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub mean: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let at = |q: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: at(0.5),
            q90: at(0.9),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

fn chi_norm(sol: &CorrectorSolution, k: usize, x: usize) -> f64 {
    (0..sol.dim()).map(|i| sol.value(i, k, x).powi(2)).sum::<f64>().sqrt()
}

/// `sup_{t ≤ horizon} |χ(n²t, n X^{(n)}_t)|/n` along one path from `(0, x)`.
fn control_path<R: Rng + ?Sized>(sol: &CorrectorSolution, omega: &ConductanceField, n: f64, horizon: f64, x: usize, rng: &mut R) -> Result<f64> {
    let t_end = n * n * horizon;
    let static_sol = sol.slices() == 1;
    let f = &sol.chi[0];
    let hold_max = |pos: usize, a: f64, b: f64| -> Result<f64> {
        if static_sol {
            return Ok(chi_norm(sol, 0, pos));
        }
        let ws = if b > a { f.slice_weights(a, b)? } else { vec![(f.slice_at(a)?, 0.0)] };
        Ok(ws.iter().map(|&(k, _)| chi_norm(sol, k, pos)).fold(0.0, f64::max))
    };
    let mut best: f64 = 0.0;
    let mut pos = x;
    let mut last = 0.0;
    let mut err = None;
    run_vsrw(omega, 0.0, x, t_end, rng, |j| {
        match hold_max(pos, last, j.time) {
            Ok(v) => best = best.max(v),
            Err(e) => err = Some(e),
        }
        pos = j.to;
        last = j.time;
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    best = best.max(hold_max(pos, last, t_end)?);
    Ok(best / n)
}

/// Ensemble distribution of the path-wise corrector-control statistic.
pub fn corrector_control(sol: &CorrectorSolution, omega: &ConductanceField, n: f64, horizon: f64, n_paths: usize, x: usize, seed: u64) -> Result<Quantiles> {
    sol.check_grid(omega)?;
    let values: Vec<f64> = ensemble(n_paths, seed, |_, rng| control_path(sol, omega, n, horizon, x, rng))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Quantiles::of(&values))
}

/// The reflected field `ω'(x, x+e_j) = ω(−x−e_j, −x)`.
pub fn reflect(omega: &ConductanceField) -> Result<ConductanceField> {
    let lat = omega.lattice();
    let e_count = lat.num_edges();
    let mut slabs = Vec::with_capacity(omega.num_slabs() * e_count);
    for s in 0..omega.num_slabs() {
        let w = omega.slab(s);
        for e in 0..e_count {
            let x = lat.edge_tail(e);
            let j = lat.edge_direction(e);
            let src = lat.neighbor(lat.negate(x), j, false);
            slabs.push(w[lat.edge(src, j)]);
        }
    }
    ConductanceField::from_slabs(lat.clone(), omega.t_start(), omega.dt(), omega.is_periodic(), omega.schedule().to_vec(), slabs)
}

/// Signed sum of `∇χ^j` around every unit plaquette of every slice; the max
/// modulus is the curl defect of the gradient field.
pub fn curl_defect(sol: &CorrectorSolution) -> f64 {
    let lat = sol.lattice();
    let d = lat.dim();
    let mut worst: f64 = 0.0;
    for f in &sol.chi {
        for k in 0..f.slices {
            let g = lat.grad(f.slice(k));
            for x in 0..lat.num_vertices() {
                for a in 0..d {
                    for b in a + 1..d {
                        let xa = lat.neighbor(x, a, true);
                        let xb = lat.neighbor(x, b, true);
                        let c = g[lat.edge(x, a)] + g[lat.edge(xa, b)] - g[lat.edge(xb, a)] - g[lat.edge(x, b)];
                        worst = worst.max(c.abs());
                    }
                }
            }
        }
    }
    worst
}

/// Cylinder `Q(n)` at time 0 around vertex `x0`.
pub fn diffusive_cylinder(n: f64, x0: usize) -> Result<SpaceTimeCylinder> {
    SpaceTimeCylinder::new(0.0, n, x0, 1.0)
}

/// Reproducible random periodic test environment for small instances.
pub fn random_periodic_field(lattice: &TorusLattice, intervals: usize, dt: f64, low: f64, high: f64, seed: u64) -> Result<ConductanceField> {
    let mut rng = stream(seed, &[]);
    let values = (0..intervals * lattice.num_edges()).map(|_| rng.random_range(low..high)).collect();
    ConductanceField::from_intervals(lattice.clone(), 0.0, dt, true, values)
}
