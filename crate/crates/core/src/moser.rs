//! Both sides of the inequalities in the Moser chain on concrete instances,
//! the iteration parameter algebra and the cut-off functions.
//!
//! Constants that are only asserted to exist are tracked empirically: each
//! check returns the two sides without constant and their ratio.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_member, spacetime_member};
use crate::corrector::{harmonic_residual, solve_corrector, CorrectorSolution, DEFAULT_TOL};
use crate::environment::{conjugate, measure_norms, one_plus_recip, recip, sample_environment, ConductanceField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::{SpaceTimeCylinder, TorusLattice};
use crate::rng::{stream, StreamRng, TAG_SUITE};
use crate::spacetime::{combine_time, space_norm, spacetime_norm, NormSpec, SpaceTimeField};
use crate::stats::{trend_test, TrendTest};

/// Sobolev exponent `ρ = d'/(d' − 2 + d'/q)`.
pub fn rho(d_prime: f64, q: f64) -> Result<f64> {
    if !(d_prime >= 2.0) || !d_prime.is_finite() {
        return Err(Error::Parameter(format!("d' = {d_prime} must be at least 2")));
    }
    if !(q >= 1.0) {
        return Err(Error::Exponent(format!("q = {q} must be at least 1")));
    }
    if q.is_infinite() && d_prime == 2.0 {
        return Err(Error::Exponent("q = ∞ requires d' > 2".into()));
    }
    Ok(d_prime / (d_prime - 2.0 + d_prime * recip(q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoserParams {
    pub p: f64,
    pub p_prime: f64,
    pub q: f64,
    pub q_prime: f64,
    pub d_prime: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
}

impl MoserParams {
    /// `p = q = 4`, `p' = q' = ∞`, `σ = 1`, `σ' = 1/2`.
    pub fn lattice_default(d: usize) -> Self {
        Self {
            p: 4.0,
            p_prime: f64::INFINITY,
            q: 4.0,
            q_prime: f64::INFINITY,
            d_prime: d as f64,
            sigma: 1.0,
            sigma_prime: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("p'", self.p_prime), ("q", self.q), ("q'", self.q_prime)] {
            if !(v > 1.0) {
                return Err(Error::Exponent(format!("{name} = {v} must exceed 1")));
            }
        }
        if !(0.5 <= self.sigma_prime && self.sigma_prime < self.sigma && self.sigma <= 1.0) {
            return Err(Error::Parameter(format!("need 1/2 ≤ σ' < σ ≤ 1, got σ' = {}, σ = {}", self.sigma_prime, self.sigma)));
        }
        Ok(())
    }

    pub fn sigma_k(&self, k: usize) -> f64 {
        self.sigma_prime + (self.sigma - self.sigma_prime) * 0.5f64.powi(k as i32)
    }

    pub fn tau_k(&self, k: usize) -> f64 {
        (self.sigma - self.sigma_prime) * 0.5f64.powi(k as i32 + 1)
    }

    /// `(1/p)·p'_*·(q'+1)/q' + 1/q` against `2/d'`.
    pub fn condition_margin(&self) -> f64 {
        let lhs = recip(self.p) * conjugate(self.p_prime) * one_plus_recip(self.q_prime) + recip(self.q);
        2.0 / self.d_prime - lhs
    }
}

/// Derived constants of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConstants {
    pub rho: f64,
    pub p_star: f64,
    pub p_prime_star: f64,
    pub alpha: f64,
    /// `2ρ·max{1, p'_*/p_*}`.
    pub beta: f64,
    pub condition_margin: f64,
    /// First `k` with `α^k ≥ ln n`.
    pub k_stop: usize,
    pub alpha_k: Vec<f64>,
    pub sigma_k: Vec<f64>,
    pub tau_k: Vec<f64>,
    /// `½ Σ_{k≥0} 1/α^k`.
    pub kappa: f64,
    /// `½ Σ_{k≤K_stop} 1/α^k`.
    pub kappa_partial: f64,
    /// `Π_{1≤k≤K_stop} (1 − 1/α^k)`.
    pub gamma_partial: f64,
    /// `Π_{k≥1} (1 − 1/α^k)`.
    pub gamma: f64,
}

pub fn iteration_constants(params: &MoserParams, n: f64) -> Result<IterationConstants> {
    params.validate()?;
    if !(n >= 2.0) {
        return Err(Error::Parameter(format!("scale n = {n} must be at least 2")));
    }
    let margin = params.condition_margin();
    if !(margin > 0.0) {
        return Err(Error::Condition {
            what: "moment condition with d'".into(),
            margin,
        });
    }
    let rho = rho(params.d_prime, params.q)?;
    let p_star = conjugate(params.p);
    let p_prime_star = conjugate(params.p_prime);
    let w = 1.0 / one_plus_recip(params.q_prime);
    let alpha = 1.0 / p_star + (1.0 / p_prime_star) * (1.0 - 1.0 / rho) * w;
    if !(alpha > 1.0) {
        return Err(Error::Condition {
            what: "α > 1".into(),
            margin: alpha - 1.0,
        });
    }
    if alpha * p_star > rho * (1.0 + 1e-12) {
        return Err(Error::Condition {
            what: "α·p_* ≤ ρ".into(),
            margin: rho - alpha * p_star,
        });
    }
    if !(alpha * p_prime_star > w) {
        return Err(Error::Condition {
            what: "α·p'_* > q'/(q'+1)".into(),
            margin: alpha * p_prime_star - w,
        });
    }
    let ln_n = n.ln();
    let mut k_stop = 0;
    while alpha.powi(k_stop as i32) < ln_n {
        k_stop += 1;
    }
    let alpha_k: Vec<f64> = (0..=k_stop).map(|k| alpha.powi(k as i32)).collect();
    let kappa_partial = 0.5 * alpha_k.iter().map(|a| 1.0 / a).sum::<f64>();
    let gamma_partial = alpha_k.iter().skip(1).map(|a| 1.0 - 1.0 / a).product();
    let mut gamma = 1.0;
    let mut k = 1;
    loop {
        let f = 1.0 - alpha.powi(-k);
        gamma *= f;
        if 1.0 - f < 1e-17 || k > 100_000 {
            break;
        }
        k += 1;
    }
    Ok(IterationConstants {
        rho,
        p_star,
        p_prime_star,
        alpha,
        beta: 2.0 * rho * 1f64.max(p_prime_star / p_star),
        condition_margin: margin,
        k_stop,
        sigma_k: (0..=k_stop + 1).map(|k| params.sigma_k(k)).collect(),
        tau_k: (0..=k_stop).map(|k| params.tau_k(k)).collect(),
        alpha_k,
        kappa: 0.5 * alpha / (alpha - 1.0),
        kappa_partial,
        gamma_partial,
        gamma,
    })
}

/// `½ Σ_{k<terms} α^{−k}`.
pub fn kappa_partial_sum(alpha: f64, terms: usize) -> f64 {
    0.5 * (0..terms).map(|k| alpha.powi(-(k as i32))).sum::<f64>()
}

/// Space cut-off `η_k` and time cut-off `ζ_k` of step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    pub k: usize,
    pub n: f64,
    pub x0: usize,
    pub t0: f64,
    pub sigma_k: f64,
    pub sigma_next: f64,
    pub tau_k: f64,
    /// `⌊σ_k n⌋`.
    pub outer: usize,
    /// `⌊σ_{k+1} n⌋`.
    pub inner: usize,
    pub eta: Vec<f64>,
}

impl CutoffPair {
    /// ζ is 1 up to here.
    pub fn zeta_one(&self) -> f64 {
        self.t0 + self.sigma_next * self.n * self.n
    }

    /// ζ is 0 from here on.
    pub fn zeta_zero(&self) -> f64 {
        self.t0 + self.sigma_k * self.n * self.n
    }

    pub fn zeta(&self, t: f64) -> f64 {
        let (a, b) = (self.zeta_one(), self.zeta_zero());
        if t <= a {
            1.0
        } else if t >= b {
            0.0
        } else {
            (b - t) / (b - a)
        }
    }

    /// a.e. slope magnitude of ζ on the ramp.
    pub fn zeta_slope(&self) -> f64 {
        1.0 / (self.zeta_zero() - self.zeta_one())
    }

    pub fn eta_slope(&self) -> f64 {
        1.0 / (self.outer - self.inner) as f64
    }

    /// Cylinder `Q_k = [t0, t0 + σ_k n²] × B(x0, σ_k n)`.
    pub fn cylinder(&self) -> Result<SpaceTimeCylinder> {
        SpaceTimeCylinder::new(self.t0, self.n, self.x0, self.sigma_k)
    }

    /// Checks the four support and slope conditions pointwise.
    pub fn check(&self, lattice: &TorusLattice) -> Result<()> {
        let bound = 1.0 / (self.tau_k * self.n);
        for y in 0..lattice.num_vertices() {
            let r = lattice.distance(self.x0, y);
            let v = self.eta[y];
            if r >= self.outer && v != 0.0 {
                return Err(Error::Support(format!("η = {v} at distance {r} ≥ {}", self.outer)));
            }
            if r <= self.inner && v != 1.0 {
                return Err(Error::Support(format!("η = {v} at distance {r} ≤ {}", self.inner)));
            }
        }
        let g = lattice.grad(&self.eta);
        let steep = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if steep > bound {
            return Err(Error::Geometry(format!("|∇η| = {steep} exceeds 1/(τ_k n) = {bound}")));
        }
        if self.zeta_slope() > 1.0 / (self.tau_k * self.n * self.n) * (1.0 + 1e-12) {
            return Err(Error::Geometry("|ζ'| exceeds 1/(τ_k n²)".into()));
        }
        if self.zeta(self.zeta_one()) != 1.0 || self.zeta(self.zeta_zero()) != 0.0 {
            return Err(Error::Support("ζ endpoints".into()));
        }
        Ok(())
    }
}

/// Clipped linear ramp in graph distance between radii `⌊σ_{k+1}n⌋` and
/// `⌊σ_k n⌋`, and the matching linear time ramp.
pub fn build_cutoffs(k: usize, params: &MoserParams, n: f64, lattice: &TorusLattice, x0: usize, t0: f64) -> Result<CutoffPair> {
    params.validate()?;
    let sigma_k = params.sigma_k(k);
    let sigma_next = params.sigma_k(k + 1);
    let tau_k = params.tau_k(k);
    let outer = lattice.ball_radius(sigma_k * n)?;
    let inner = lattice.ball_radius(sigma_next * n)?;
    if outer <= inner || ((outer - inner) as f64) < tau_k * n {
        return Err(Error::Geometry(format!(
            "radii {outer} and {inner} at step {k} cannot carry a ramp of slope 1/(τ_k n) with τ_k n = {}",
            tau_k * n
        )));
    }
    let span = (outer - inner) as f64;
    let eta = (0..lattice.num_vertices())
        .map(|y| {
            let r = lattice.distance(x0, y) as f64;
            ((outer as f64 - r) / span).clamp(0.0, 1.0)
        })
        .collect();
    Ok(CutoffPair {
        k,
        n,
        x0,
        t0,
        sigma_k,
        sigma_next,
        tau_k,
        outer,
        inner,
        eta,
    })
}

/// `ã^α = |a|^α · sign a`.
#[inline]
pub fn tilde_pow(a: f64, alpha: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.abs().powf(alpha).copysign(a)
    }
}

/// Two sides of an inequality, without any unknown constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs/rhs`, with `0/0 = 0`.
    pub ratio: f64,
}

impl Sides {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        Self { lhs, rhs, ratio }
    }
}

/// Time pieces of `[a, b)` on which all listed grids are constant.
fn pieces(a: f64, b: f64, grids: &[(f64, f64)], extra: &[f64]) -> Vec<(f64, f64)> {
    let mut pts = vec![a, b];
    for &(origin, dt) in grids {
        let mut raw = ((a - origin) / dt).floor() as i64 + 1;
        loop {
            let t = origin + raw as f64 * dt;
            if t >= b {
                break;
            }
            if t > a {
                pts.push(t);
            }
            raw += 1;
        }
    }
    pts.extend(extra.iter().copied().filter(|&t| t > a && t < b));
    pts.sort_by(f64::total_cmp);
    let scale = (b - a).abs().max(1.0) * 1e-12;
    pts.dedup_by(|x, y| (*x - *y).abs() <= scale);
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}

fn field_grid(u: &SpaceTimeField) -> Option<(f64, f64)> {
    (u.slices > 1).then_some((u.t_start, u.dt))
}

fn omega_grid(omega: &ConductanceField) -> Option<(f64, f64)> {
    (!omega.is_time_constant()).then(|| (omega.interval_start(0), omega.dt()))
}

fn ball_mask(lattice: &TorusLattice, ball: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; lattice.num_vertices()];
    for &x in ball {
        mask[x] = true;
    }
    mask
}

/// Each edge with at least one endpoint in the ball, once.
fn edges_touching(lattice: &TorusLattice, ball: &[usize], mask: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    for &x in ball {
        for j in 0..lattice.dim() {
            out.push(lattice.edge(x, j));
            let down = lattice.neighbor(x, j, false);
            if !mask[down] {
                out.push(lattice.edge(down, j));
            }
        }
    }
    out
}

/// ℓ¹-Poincaré: `Σ_B |u − ū_B|` against `n·Σ_{edges in B} |∇u|`, each
/// edge with both ends in `B` counted once.
pub fn poincare_check(u: &[f64], lattice: &TorusLattice, x0: usize, n: f64) -> Result<Sides> {
    let ball = lattice.ball(x0, n)?;
    let mask = ball_mask(lattice, &ball);
    let mean = ball.iter().map(|&x| u[x]).sum::<f64>() / ball.len() as f64;
    let lhs = ball.iter().map(|&x| (u[x] - mean).abs()).sum::<f64>();
    let mut grad = 0.0;
    for &x in &ball {
        for j in 0..lattice.dim() {
            let y = lattice.neighbor(x, j, true);
            if mask[y] {
                grad += (u[y] - u[x]).abs();
            }
        }
    }
    Ok(Sides::new(lhs, n * grad))
}

/// Verifies that `u` vanishes off the open cylinder: outside the time
/// interval and at graph distance `≥ ⌊radius⌋`.
fn check_strict_support(u: &SpaceTimeField, q: &SpaceTimeCylinder) -> Result<()> {
    let lat = &u.lattice;
    let radius = lat.ball_radius(q.radius())?;
    let (a, b) = q.time_interval();
    let tol = 1e-12 * u.dt;
    let nv = u.num_vertices();
    for k in 0..u.slices {
        let lo = u.t_start + k as f64 * u.dt;
        let hi = lo + u.dt;
        let inside_time = lo >= a - tol && hi <= b + tol;
        for x in 0..nv {
            let v = u.values[k * nv + x];
            if v == 0.0 {
                continue;
            }
            if !inside_time {
                return Err(Error::Support(format!("u ≠ 0 on [{lo}, {hi}) outside [{a}, {b}]")));
            }
            if lat.distance(q.x0, x) >= radius {
                return Err(Error::Support(format!("u ≠ 0 at distance {} ≥ {radius}", lat.distance(q.x0, x))));
            }
        }
    }
    Ok(())
}

/// Space-time Sobolev inequality on `Q = I × B(x0, r)`, `r` the cylinder
/// radius: `‖u²‖_{ρ, q'/(q'+1)}` against
/// `r²·‖1∨ν‖_{q,q'}·(1/|I|)∫ 𝓔_t(u_t)/|B| dt`.
pub fn sobolev_check(u: &SpaceTimeField, omega: &ConductanceField, q: &SpaceTimeCylinder, q_exp: f64, q_prime: f64) -> Result<Sides> {
    let (_, nu) = measure_norms(omega, (1.0, 1.0), (q_exp, q_prime), q, true)?;
    sobolev_with_norm(u, omega, q, q_exp, q_prime, nu)
}

/// As [`sobolev_check`] with `‖1∨ν‖_{q,q',Q}` supplied by the caller.
pub fn sobolev_with_norm(u: &SpaceTimeField, omega: &ConductanceField, q: &SpaceTimeCylinder, q_exp: f64, q_prime: f64, nu_norm: f64) -> Result<Sides> {
    let lat = omega.lattice();
    if &u.lattice != lat {
        return Err(Error::GridMismatch("lattice differs".into()));
    }
    check_strict_support(u, q)?;
    let rho = rho(lat.dim() as f64, q_exp)?;
    let w = 1.0 / one_plus_recip(q_prime);
    let ball = q.ball(lat)?;
    let mask = ball_mask(lat, &ball);
    let edges = edges_touching(lat, &ball, &mask);
    let (a, b) = q.time_interval();
    let grids: Vec<(f64, f64)> = field_grid(u).into_iter().chain(omega_grid(omega)).collect();
    let mut sq = vec![0.0; lat.num_vertices()];
    let mut per_piece = Vec::new();
    let mut energy = 0.0;
    // (u slice, ω interval) → (‖u²‖_ρ, 𝓔)
    let mut cache: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    for (lo, hi) in pieces(a, b, &grids, &[]) {
        let mid = 0.5 * (lo + hi);
        let len = hi - lo;
        let Ok(ku) = u.slice_at(mid) else {
            per_piece.push((0.0, len));
            continue;
        };
        let kw = omega.interval_at(mid)?;
        let (norm, e) = *cache.entry((ku, kw)).or_insert_with(|| {
            let s = u.slice(ku);
            for &x in &ball {
                sq[x] = s[x] * s[x];
            }
            let wts = omega.weights(kw);
            let e: f64 = edges
                .iter()
                .map(|&e| {
                    let g = s[lat.edge_head(e)] - s[lat.edge_tail(e)];
                    wts[e] * g * g
                })
                .sum();
            (space_norm(&sq, &ball, rho), e)
        });
        per_piece.push((norm, len));
        energy += len * e;
    }
    let lhs = combine_time(&per_piece, w);
    let r = q.radius();
    let rhs = r * r * nu_norm * energy / ((b - a) * ball.len() as f64);
    Ok(Sides::new(lhs, rhs))
}

/// `γ₂` solving `1/γ₁ + (1/γ₂)(1 − 1/ρ)·q'/(q'+1) = 1`.
pub fn interpolation_gamma2(gamma1: f64, rho: f64, q_prime: f64) -> f64 {
    (1.0 - 1.0 / rho) / one_plus_recip(q_prime) / (1.0 - 1.0 / gamma1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationResult {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖u‖_{γ₁,γ₂,Q} ≤ ‖u‖_{1,∞,Q} + ‖u‖_{ρ,q'/(q'+1),Q}`.
pub fn interpolation_check(u: &SpaceTimeField, rho: f64, q_prime: f64, gamma1: f64, gamma2: f64, q: &SpaceTimeCylinder) -> Result<InterpolationResult> {
    let w = 1.0 / one_plus_recip(q_prime);
    if !(rho > 1.0) {
        return Err(Error::Exponent(format!("ρ = {rho} must exceed 1")));
    }
    if !(gamma1 > 1.0 && gamma1 <= rho) {
        return Err(Error::Exponent(format!("need 1 < γ₁ ≤ ρ, got γ₁ = {gamma1}, ρ = {rho}")));
    }
    if !(gamma2 >= w && gamma2.is_finite()) {
        return Err(Error::Exponent(format!("need q'/(q'+1) ≤ γ₂ < ∞, got γ₂ = {gamma2}")));
    }
    let cond = 1.0 / gamma1 + (1.0 / gamma2) * (1.0 - 1.0 / rho) * w;
    if (cond - 1.0).abs() > 1e-12 {
        return Err(Error::Condition {
            what: "1/γ₁ + (1/γ₂)(1−1/ρ)q'/(q'+1) = 1".into(),
            margin: cond - 1.0,
        });
    }
    let norm = |p: f64, pp: f64| spacetime_norm(u, &NormSpec::new(p, pp, *q)?);
    let lhs = norm(gamma1, gamma2)?;
    let rhs = norm(1.0, f64::INFINITY)? + norm(rho, w)?;
    Ok(InterpolationResult {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// Terms of the energy estimate for `u = −χ^j/n`, the solution with
/// right-hand side `∇*(ω∇f)`, `f = Π^j/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    /// `(1/|I|)‖ζ(ηũ^α)²‖_{1,∞}`.
    pub lhs_sup: f64,
    /// `(1/|I|)∫ ζ 𝓔_{t,η²}(ũ^α)/|B| dt`.
    pub lhs_energy: f64,
    /// `α²‖1∨μ‖_{p,p'}(‖∇η‖²_∞ + ‖ζ'‖_∞)‖|u|^{2α}‖_{p_*,p'_*}`.
    pub rhs_cutoff: f64,
    /// `α²‖1∨μ‖_{p,p'}‖∇η∇f‖_∞‖|u|^{2α−1}‖_{p_*,p'_*}`.
    pub rhs_cross: f64,
    /// `α²‖1∨μ‖_{p,p'}‖∇f‖²_∞‖|u|^{2α−2}‖_{p_*,p'_*}`, with `|u|⁰ = 1`.
    pub rhs_gradient: f64,
    pub mu_norm: f64,
    /// Smallest constant making the inequality hold.
    pub c2: f64,
    pub residual: f64,
}

impl EnergyCheck {
    pub fn lhs(&self) -> f64 {
        self.lhs_sup + self.lhs_energy
    }

    pub fn rhs(&self) -> f64 {
        self.rhs_cutoff + self.rhs_cross + self.rhs_gradient
    }
}

#[allow(clippy::too_many_arguments)]
pub fn energy_estimate_check(sol: &CorrectorSolution, omega: &ConductanceField, j: usize, cutoffs: &CutoffPair, alpha: f64, p: f64, p_prime: f64, tol: f64) -> Result<EnergyCheck> {
    if !(alpha >= 1.0) {
        return Err(Error::Parameter(format!("α = {alpha} must be at least 1")));
    }
    let lat = omega.lattice();
    if j >= lat.dim() {
        return Err(Error::Parameter(format!("direction {j} out of range")));
    }
    let n = cutoffs.n;
    let residual = harmonic_residual(sol, omega)? / n;
    if residual > tol {
        return Err(Error::NotASolution { residual, tol });
    }
    cutoffs.check(lat)?;
    let q = cutoffs.cylinder()?;
    let ball = q.ball(lat)?;
    let mask = ball_mask(lat, &ball);
    let edges = edges_touching(lat, &ball, &mask);
    let (a, b) = q.time_interval();
    let len_i = b - a;
    let chi = &sol.chi[j];
    let grids: Vec<(f64, f64)> = field_grid(chi).into_iter().chain(omega_grid(omega)).collect();
    let eta2: Vec<f64> = cutoffs.eta.iter().map(|v| v * v).collect();
    let p_star = conjugate(p);
    let pp_star = conjugate(p_prime);
    let nv = lat.num_vertices();
    let mut g = vec![0.0; nv];
    let mut powers = [vec![0.0; nv], vec![0.0; nv], vec![0.0; nv]];
    let mut norm_pieces: [Vec<(f64, f64)>; 3] = Default::default();
    let mut sup: f64 = 0.0;
    let mut energy = 0.0;
    // (χ slice, ω interval) → (avg η²ũ^{2α}, 𝓔_{η²}(ũ^α), three power norms)
    let mut cache: HashMap<(usize, usize), (f64, f64, [f64; 3])> = HashMap::new();
    for (lo, hi) in pieces(a, b, &grids, &[cutoffs.zeta_one()]) {
        let mid = 0.5 * (lo + hi);
        let kc = chi.slice_at(mid)?;
        let kw = omega.interval_at(mid)?;
        let (avg, e, pn) = *cache.entry((kc, kw)).or_insert_with(|| {
            let s = chi.slice(kc);
            let wts = omega.weights(kw);
            for &x in &ball {
                let u = -s[x] / n;
                g[x] = tilde_pow(u, alpha);
                let m = u.abs();
                powers[0][x] = m.powf(2.0 * alpha);
                powers[1][x] = m.powf(2.0 * alpha - 1.0);
                powers[2][x] = m.powf(2.0 * alpha - 2.0);
            }
            let avg = ball.iter().map(|&x| eta2[x] * g[x] * g[x]).sum::<f64>() / ball.len() as f64;
            // edges leaving the ball carry ⟨η²⟩ = 0, so g off the ball is never read
            let e: f64 = edges
                .iter()
                .map(|&e| {
                    let (t, h) = (lat.edge_tail(e), lat.edge_head(e));
                    let weight = 0.5 * (eta2[t] + eta2[h]);
                    if weight == 0.0 {
                        return 0.0;
                    }
                    let d = g[h] - g[t];
                    weight * wts[e] * d * d
                })
                .sum();
            let pn = [0, 1, 2].map(|i| space_norm(&powers[i], &ball, p_star));
            (avg, e, pn)
        });
        sup = sup.max(cutoffs.zeta(lo) * avg);
        energy += (hi - lo) * 0.5 * (cutoffs.zeta(lo) + cutoffs.zeta(hi)) * e;
        for (slot, v) in norm_pieces.iter_mut().zip(pn) {
            slot.push((v, hi - lo));
        }
    }
    let norms: Vec<f64> = norm_pieces.iter().map(|ps| combine_time(ps, pp_star)).collect();
    let (mu_norm, _) = measure_norms(omega, (p, p_prime), (1.0, 1.0), &q, true)?;
    let grad_eta = lat.grad(&cutoffs.eta);
    let eta_sup = grad_eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cross_sup = grad_eta
        .iter()
        .enumerate()
        .filter(|(e, _)| lat.edge_direction(*e) == j)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
        / n;
    let front = alpha * alpha * mu_norm;
    let rhs_cutoff = front * (eta_sup * eta_sup + cutoffs.zeta_slope()) * norms[0];
    let rhs_cross = front * cross_sup * norms[1];
    let rhs_gradient = front * norms[2] / (n * n);
    let lhs_sup = sup / len_i;
    let lhs_energy = energy / (len_i * ball.len() as f64);
    let lhs = lhs_sup + lhs_energy;
    let rhs = rhs_cutoff + rhs_cross + rhs_gradient;
    Ok(EnergyCheck {
        lhs_sup,
        lhs_energy,
        rhs_cutoff,
        rhs_cross,
        rhs_gradient,
        mu_norm,
        c2: if lhs == 0.0 { 0.0 } else { lhs / rhs },
        residual,
    })
}

/// Maximal inequality for a given space-time field `u` on `Q(n)` based at
/// `(t0, x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub mu_norm: f64,
    pub nu_norm: f64,
    pub u_norm: f64,
    pub kappa: f64,
    pub gamma: f64,
}

pub fn maximal_ratio(u: &SpaceTimeField, omega: &ConductanceField, n: f64, x0: usize, t0: f64, params: &MoserParams, alpha_norm: f64) -> Result<MaximalCheck> {
    if !(alpha_norm > 0.0) {
        return Err(Error::Exponent(format!("α = {alpha_norm} must be positive")));
    }
    let consts = iteration_constants(params, n)?;
    let full = SpaceTimeCylinder::new(t0, n, x0, 1.0)?;
    let outer = full.shrink(params.sigma)?;
    let inner = full.shrink(params.sigma_prime)?;
    let lhs = spacetime_norm(u, &NormSpec::new(f64::INFINITY, f64::INFINITY, inner)?)?;
    let u_norm = spacetime_norm(u, &NormSpec::new(alpha_norm, alpha_norm, outer)?)?;
    let (mu_norm, nu_norm) = measure_norms(omega, (params.p, params.p_prime), (params.q, params.q_prime), &full, true)?;
    let gap = params.sigma - params.sigma_prime;
    let rhs = (mu_norm * nu_norm / (gap * gap)).powf(consts.kappa) * u_norm.powf(consts.gamma);
    let s = Sides::new(lhs, rhs);
    Ok(MaximalCheck {
        lhs,
        rhs,
        ratio: s.ratio,
        mu_norm,
        nu_norm,
        u_norm,
        kappa: consts.kappa,
        gamma: consts.gamma,
    })
}

/// `u = −χ^j/n` as a field.
pub fn scaled_corrector(sol: &CorrectorSolution, j: usize, n: f64) -> SpaceTimeField {
    let mut u = sol.chi[j].clone();
    u.values.iter_mut().for_each(|v| *v = -*v / n);
    u
}

/// Solves for the corrector and evaluates the maximal inequality for
/// `u = −χ^j/n` on `Q(n)` at the field's origin.
pub fn maximal_inequality_check(omega: &ConductanceField, n: f64, params: &MoserParams, alpha_norm: f64, j: usize) -> Result<MaximalCheck> {
    let sol = solve_corrector(omega, DEFAULT_TOL)?;
    let u = scaled_corrector(&sol, j, n);
    maximal_ratio(&u, omega, n, 0, omega.t_start(), params, alpha_norm)
}

/// Outcome of sampling one appendix inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixStat {
    pub name: String,
    pub trials: u64,
    pub violations: u64,
    /// Largest `(lhs − rhs)/(rounding bound)` seen; violations have > 1.
    pub worst_excess: f64,
    pub worst_sample: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub seed: u64,
    pub stats: Vec<AppendixStat>,
}

impl AppendixReport {
    pub fn passes(&self) -> bool {
        self.stats.iter().all(|s| s.violations == 0)
    }
}

const EPS4: f64 = 4.0 * f64::EPSILON;

/// Sign-symmetric magnitude `10^U(−3,1)`; a quarter of the `b` draws are a
/// relative perturbation of `a` and an eighth are `−a`.
fn sample_pair(rng: &mut StreamRng, nonnegative: bool) -> (f64, f64) {
    let mag = |rng: &mut StreamRng| 10f64.powf(rng.random_range(-3.0..1.0));
    let sign = |rng: &mut StreamRng| if nonnegative || rng.random::<bool>() { 1.0 } else { -1.0 };
    let a = sign(rng) * mag(rng);
    let u: f64 = rng.random();
    let b = if u < 0.25 {
        let delta = 10f64.powf(rng.random_range(-8.0..-1.0)) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        a * (1.0 + delta)
    } else if u < 0.375 && !nonnegative {
        -a
    } else {
        sign(rng) * mag(rng)
    };
    (a, b)
}

/// `(lhs, rhs, bound)` where `bound` dominates the rounding error of
/// `lhs − rhs`.
fn chain_ub1(a: f64, b: f64, alpha: f64, beta: f64) -> (f64, f64, f64) {
    let (ta, tb) = (tilde_pow(a, alpha), tilde_pow(b, alpha));
    let (sa, sb) = (tilde_pow(a, beta), tilde_pow(b, beta));
    let c = 1f64.max((alpha / beta).abs());
    let weight = a.abs().powf(alpha - beta) + b.abs().powf(alpha - beta);
    let lhs = (ta - tb).abs();
    let rhs = c * (sa - sb).abs() * weight;
    let err = EPS4 * (ta.abs() + tb.abs()) + c * EPS4 * (sa.abs() + sb.abs()) * weight + EPS4 * rhs;
    (lhs, rhs, err)
}

fn pol_ub(a: f64, b: f64, alpha: f64) -> (f64, f64, f64) {
    let (ta, tb) = (tilde_pow(a, alpha), tilde_pow(b, alpha));
    let (sa, sb) = (tilde_pow(a, 2.0 * alpha - 1.0), tilde_pow(b, 2.0 * alpha - 1.0));
    let c = (alpha * alpha / (2.0 * alpha - 1.0)).abs();
    let d1 = ta - tb;
    let e1 = EPS4 * (ta.abs() + tb.abs());
    let lhs = d1 * d1;
    // the product is ≥ 0 for α > 1/2; for a, b > 0 and α < 1/2 only its
    // modulus carries the bound
    let rhs = c * ((a - b) * (sa - sb)).abs();
    let err = 2.0 * d1.abs() * e1 + e1 * e1 + c * ((a - b).abs() * EPS4 * (sa.abs() + sb.abs()) + (sa - sb).abs() * EPS4 * (a.abs() + b.abs())) + EPS4 * (lhs + rhs.abs());
    (lhs, rhs, err)
}

fn chain_ub2(a: f64, b: f64, alpha: f64) -> (f64, f64, f64) {
    let (ta, tb) = (tilde_pow(a, alpha), tilde_pow(b, alpha));
    let s = a.abs().powf(2.0 * alpha - 1.0) + b.abs().powf(2.0 * alpha - 1.0);
    let m = a.abs().powf(alpha) + b.abs().powf(alpha);
    let lhs = s * (a - b).abs();
    let rhs = 4.0 * (ta - tb).abs() * m;
    let err = s * EPS4 * (a.abs() + b.abs()) + 4.0 * EPS4 * (ta.abs() + tb.abs()) * m + EPS4 * (lhs + rhs);
    (lhs, rhs, err)
}

const SUITE_CHUNK: u64 = 10_000;

fn run_inequality<F>(name: &str, id: u64, trials: u64, seed: u64, sample: F) -> AppendixStat
where
    F: Fn(&mut StreamRng) -> ([f64; 4], (f64, f64, f64)) + Sync,
{
    let chunks = trials.div_ceil(SUITE_CHUNK);
    let parts: Vec<(u64, f64, [f64; 4])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[TAG_SUITE, id, c]);
            let count = SUITE_CHUNK.min(trials - c * SUITE_CHUNK);
            let mut violations = 0;
            let mut worst = f64::NEG_INFINITY;
            let mut worst_sample = [0.0; 4];
            for _ in 0..count {
                let (args, (lhs, rhs, err)) = sample(&mut rng);
                let excess = (lhs - rhs) / err.max(f64::MIN_POSITIVE);
                if !(lhs <= rhs + err) {
                    violations += 1;
                }
                if excess > worst || excess.is_nan() {
                    worst = excess;
                    worst_sample = args;
                }
            }
            (violations, worst, worst_sample)
        })
        .collect();
    let mut stat = AppendixStat {
        name: name.into(),
        trials,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_sample: [0.0; 4],
    };
    for (v, w, s) in parts {
        stat.violations += v;
        if w > stat.worst_excess || w.is_nan() {
            stat.worst_excess = w;
            stat.worst_sample = s;
        }
    }
    stat
}

/// Samples the three two-point inequalities used for the discrete chain
/// rule. Ranges: `|a|, |b| ∈ [10⁻³, 10]`; the chain bound takes
/// `|α|, |β| ∈ [0.1, 5]` of either sign; the polarisation bound takes
/// `α ∈ (1/2, 5]`, or on a quarter of the draws `a, b > 0` with
/// `α ∈ [−3, 0.45]` away from 0; the second chain bound takes
/// `α ∈ [1/2, 5]`.
pub fn appendix_inequality_suite(trials: u64, seed: u64) -> AppendixReport {
    let signed = |rng: &mut StreamRng| rng.random_range(0.1..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let s1 = run_inequality("chain_bound", 1, trials, seed, |rng| {
        let (a, b) = sample_pair(rng, false);
        let (alpha, beta) = (signed(rng), signed(rng));
        ([a, b, alpha, beta], chain_ub1(a, b, alpha, beta))
    });
    let s2 = run_inequality("polarisation_bound", 2, trials, seed, |rng| {
        let nonneg = rng.random::<f64>() < 0.25;
        let (a, b) = sample_pair(rng, nonneg);
        let alpha = if nonneg {
            let v: f64 = rng.random_range(-3.0..0.45);
            if v.abs() < 0.05 {
                0.05f64.copysign(v)
            } else {
                v
            }
        } else {
            5.0 - rng.random_range(0.0..4.5)
        };
        ([a, b, alpha, 0.0], pol_ub(a, b, alpha))
    });
    let s3 = run_inequality("second_chain_bound", 3, trials, seed, |rng| {
        let (a, b) = sample_pair(rng, false);
        let alpha = rng.random_range(0.5..=5.0);
        ([a, b, alpha, 0.0], chain_ub2(a, b, alpha))
    });
    AppendixReport { seed, stats: vec![s1, s2, s3] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSuite {
    pub seed: u64,
    pub trials: u64,
    pub violations: u64,
    /// Largest `lhs/rhs` seen.
    pub worst_ratio: f64,
}

impl InterpolationSuite {
    pub fn passes(&self) -> bool {
        self.violations == 0
    }
}

/// One random instance: `q ∈ (1, 30)`, `q'` finite or infinite, `γ₁` uniform
/// in `(1, ρ]` and `γ₂` from the exponent relation, with a dense or sparse,
/// bounded or heavy-tailed field on a `16²` torus and cylinder radius 6.
fn interpolation_instance(seed: u64, i: u64) -> Result<InterpolationResult> {
    let lat = TorusLattice::new(2, 16)?;
    let q = SpaceTimeCylinder::new(0.0, 6.0, lat.index(&[8, 8]), 1.0)?;
    let mut rng = stream(seed, &[TAG_SUITE, 10, i]);
    let q_exp = rng.random_range(1.05..30.0);
    let q_prime = if rng.random::<bool>() { f64::INFINITY } else { rng.random_range(1.01..30.0) };
    let r = rho(2.0, q_exp)?;
    let gamma1 = 1.0 + (r - 1.0) * rng.random_range(0.01..=1.0);
    let gamma2 = interpolation_gamma2(gamma1, r, q_prime);
    let dt = [0.5, 1.0, 3.0][rng.random_range(0..3)];
    let slices = (36.0 / dt) as usize + 2;
    let heavy = rng.random::<bool>();
    let sparsity = rng.random_range(0.0..0.95);
    let nv = lat.num_vertices();
    let values: Vec<f64> = (0..slices * nv)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else if heavy {
                (1.0 - rng.random::<f64>()).powf(-2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    let u = SpaceTimeField {
        lattice: lat,
        t_start: -dt,
        dt,
        periodic: false,
        slices,
        values,
    };
    interpolation_check(&u, r, q_prime, gamma1, gamma2, &q)
}

/// Interpolation inequality with constant 1 on `trials` random instances.
pub fn interpolation_suite(trials: u64, seed: u64) -> Result<InterpolationSuite> {
    let results: Vec<InterpolationResult> = (0..trials)
        .into_par_iter()
        .map(|i| interpolation_instance(seed, i))
        .collect::<Result<_>>()?;
    Ok(InterpolationSuite {
        seed,
        trials,
        violations: results.iter().filter(|r| !r.holds).count() as u64,
        worst_ratio: results.iter().map(|r| if r.lhs == 0.0 { 0.0 } else { r.lhs / r.rhs }).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityKind {
    Poincare,
    Sobolev,
    Energy,
    Maximal,
}

/// Settings of a corpus trend study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendOptions {
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Test functions per `(n, seed)` for the Poincaré and Sobolev corpora.
    pub corpus_size: usize,
    /// Environment grid step; environments repeat with period
    /// `period_intervals · dt`.
    pub dt: f64,
    pub period_intervals: usize,
    pub params: MoserParams,
    /// Norm exponents for the maximal inequality.
    pub alpha_norms: Vec<f64>,
    pub level: f64,
}

impl TrendOptions {
    pub fn standard(d: usize) -> Self {
        Self {
            n_list: vec![8, 16, 32],
            seeds: vec![1, 2, 3, 4, 5],
            corpus_size: 40,
            dt: 1.0,
            period_intervals: 4,
            params: MoserParams::lattice_default(d),
            alpha_norms: vec![1.0],
            level: 0.05,
        }
    }
}

/// One series of per-`(n, seed)` maximal ratios and its trend test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub label: String,
    /// `(n, seed, statistic)`.
    pub points: Vec<(usize, u64, f64)>,
    pub all_finite: bool,
    pub trend: Option<TrendTest>,
}

impl TrendSeries {
    pub fn passes(&self) -> bool {
        self.all_finite && self.trend.is_some_and(|t| t.no_increase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub kind: InequalityKind,
    pub series: Vec<TrendSeries>,
}

impl TrendReport {
    pub fn passes(&self) -> bool {
        self.series.iter().all(TrendSeries::passes)
    }
}

fn finish_series(label: String, points: Vec<(usize, u64, f64)>, level: f64) -> TrendSeries {
    let all_finite = points.iter().all(|p| p.2.is_finite());
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.0 as f64, p.2)).collect();
    let trend = if all_finite { trend_test(&pts, level).ok() } else { None };
    TrendSeries { label, points, all_finite, trend }
}

/// Largest empirical constant per `(n, seed)` over corpora on torus side
/// `4n`, with a trend test of its logarithm against `log n`.
pub fn corpus_trend(kind: InequalityKind, model: &EnvironmentModel, dim: usize, opts: &TrendOptions) -> Result<TrendReport> {
    model.validate()?;
    opts.params.validate()?;
    let mut jobs = Vec::new();
    for &n in &opts.n_list {
        for &seed in &opts.seeds {
            jobs.push((n, seed));
        }
    }
    let rows: Vec<Vec<f64>> = jobs
        .iter()
        .map(|&(n, seed)| trend_point(kind, model, dim, n, seed, opts))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = match kind {
        InequalityKind::Poincare | InequalityKind::Sobolev => vec!["max_ratio".into()],
        InequalityKind::Energy => vec!["c2_schedule".into()],
        InequalityKind::Maximal => opts.alpha_norms.iter().map(|a| format!("ratio_alpha_{a}")).collect(),
    };
    let series = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let points = jobs.iter().zip(&rows).map(|(&(n, s), r)| (n, s, r[i])).collect();
            finish_series(label, points, opts.level)
        })
        .collect();
    Ok(TrendReport { kind, series })
}

fn trend_point(kind: InequalityKind, model: &EnvironmentModel, dim: usize, n: usize, seed: u64, opts: &TrendOptions) -> Result<Vec<f64>> {
    let lat = TorusLattice::new(dim, 4 * n)?;
    let nf = n as f64;
    let x0 = 0;
    let env = || sample_environment(model, &lat, opts.period_intervals as f64 * opts.dt, opts.dt, true, seed);
    match kind {
        InequalityKind::Poincare => {
            let ratios: Vec<f64> = (0..opts.corpus_size as u64)
                .into_par_iter()
                .map(|i| {
                    let (_, u) = corpus_member(&lat, x0, n, false, seed, i)?;
                    Ok(poincare_check(&u, &lat, x0, nf)?.ratio)
                })
                .collect::<Result<_>>()?;
            Ok(vec![ratios.into_iter().fold(0.0, f64::max)])
        }
        InequalityKind::Sobolev => {
            let omega = env()?;
            let q = SpaceTimeCylinder::new(0.0, nf, x0, 1.0)?;
            let dt_u = nf * nf / 16.0;
            let (_, nu) = measure_norms(&omega, (1.0, 1.0), (opts.params.q, opts.params.q_prime), &q, true)?;
            let ratios: Vec<f64> = (0..opts.corpus_size as u64)
                .into_par_iter()
                .map(|i| {
                    let (_, u) = spacetime_member(&lat, &q, dt_u, true, seed, i)?;
                    Ok(sobolev_with_norm(&u, &omega, &q, opts.params.q, opts.params.q_prime, nu)?.ratio)
                })
                .collect::<Result<_>>()?;
            Ok(vec![ratios.into_iter().fold(0.0, f64::max)])
        }
        InequalityKind::Energy => {
            // sup over the iteration steps k ≤ K_stop with α = α_k
            let omega = env()?;
            let sol = solve_corrector(&omega, DEFAULT_TOL)?;
            let consts = iteration_constants(&opts.params, nf)?;
            let mut worst: f64 = 0.0;
            for k in 0..=consts.k_stop {
                let cut = build_cutoffs(k, &opts.params, nf, &lat, x0, 0.0)?;
                for j in 0..dim {
                    let c = energy_estimate_check(&sol, &omega, j, &cut, consts.alpha_k[k], opts.params.p, opts.params.p_prime, 1e-8)?;
                    worst = worst.max(c.c2);
                }
            }
            Ok(vec![worst])
        }
        InequalityKind::Maximal => {
            let omega = env()?;
            let sol = solve_corrector(&omega, DEFAULT_TOL)?;
            opts.alpha_norms
                .iter()
                .map(|&alpha| {
                    let mut worst: f64 = 0.0;
                    for j in 0..dim {
                        let u = scaled_corrector(&sol, j, nf);
                        worst = worst.max(maximal_ratio(&u, &omega, nf, x0, 0.0, &opts.params, alpha)?.ratio);
                    }
                    Ok(worst)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_examples() {
        assert_eq!(rho(2.0, 2.0).unwrap(), 2.0);
        assert_eq!(rho(3.0, f64::INFINITY).unwrap(), 3.0);
        assert!((rho(4.0, 4.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(rho(2.0, f64::INFINITY), Err(Error::Exponent(_))));
    }

    #[test]
    fn worked_iteration_example() {
        let c = iteration_constants(&MoserParams::lattice_default(2), 100.0).unwrap();
        assert_eq!(c.rho, 4.0);
        assert!((c.alpha - 1.5).abs() < 1e-15);
        assert!((c.kappa - 1.5).abs() < 1e-15);
        assert!(c.gamma > 0.0 && c.gamma <= c.gamma_partial && c.gamma_partial <= 1.0);
        assert!(c.alpha_k[c.k_stop] >= 100f64.ln());
        assert!(c.k_stop == 0 || c.alpha_k[c.k_stop - 1] < 100f64.ln());
        // β = 2ρ·max{1, p'_*/p_*} = 8·max{1, 3/4}
        assert_eq!(c.beta, 8.0);
    }

    #[test]
    fn infinite_exponents_limit() {
        let p = MoserParams {
            p: f64::INFINITY,
            p_prime: f64::INFINITY,
            q: f64::INFINITY,
            q_prime: f64::INFINITY,
            d_prime: 3.0,
            sigma: 1.0,
            sigma_prime: 0.5,
        };
        let c = iteration_constants(&p, 10.0).unwrap();
        assert_eq!((c.p_star, c.p_prime_star), (1.0, 1.0));
        assert!((c.alpha - (2.0 - 1.0 / c.rho)).abs() < 1e-15);
    }

    #[test]
    fn violated_condition_reports_margin() {
        let mut p = MoserParams::lattice_default(2);
        p.p = 1.5;
        p.q = 1.5;
        match iteration_constants(&p, 10.0) {
            Err(Error::Condition { margin, .. }) => assert!(margin < 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dyadic_schedule() {
        let p = MoserParams::lattice_default(2);
        for k in 0..40 {
            assert_eq!(p.sigma_k(k), 0.5 + 0.5f64.powi(k as i32 + 1));
            assert_eq!(p.tau_k(k), 0.5f64.powi(k as i32 + 2));
            assert_eq!(p.sigma_k(k), p.sigma_k(k + 1) + p.tau_k(k));
        }
    }

    #[test]
    fn cutoffs_at_n16() {
        let lat = TorusLattice::new(2, 64).unwrap();
        let p = MoserParams::lattice_default(2);
        let c = build_cutoffs(0, &p, 16.0, &lat, lat.index(&[5, 60]), 3.0).unwrap();
        c.check(&lat).unwrap();
        assert_eq!((c.outer, c.inner), (16, 12));
        let steep = lat.grad(&c.eta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(steep, 1.0 / (c.tau_k * 16.0));
        assert!(matches!(build_cutoffs(3, &p, 4.0, &lat, 0, 0.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn appendix_examples_and_small_suite() {
        let (l, r, _) = chain_ub1(1.0, 0.0, 2.0, 1.0);
        assert_eq!((l, r), (1.0, 2.0));
        let (l, r, _) = pol_ub(1.0, -1.0, 1.0);
        assert_eq!((l, r), (4.0, 4.0));
        assert_eq!(tilde_pow(-2.0, 2.0), -4.0);
        let rep = appendix_inequality_suite(50_000, 3);
        assert!(rep.passes(), "{rep:?}");
    }

    #[test]
    fn poincare_constant_is_zero() {
        let lat = TorusLattice::new(2, 32).unwrap();
        let s = poincare_check(&vec![3.0; lat.num_vertices()], &lat, 0, 8.0).unwrap();
        assert_eq!(s.ratio, 0.0);
    }

    #[test]
    fn interpolation_worked_example() {
        assert!((interpolation_gamma2(4.0 / 3.0, 2.0, f64::INFINITY) - 2.0).abs() < 1e-14);
        let lat = TorusLattice::new(2, 16).unwrap();
        let q = SpaceTimeCylinder::new(0.0, 4.0, 0, 1.0).unwrap();
        let u = SpaceTimeField::from_fn(lat, 0.0, 1.0, 16, false, |k, x| ((k * 31 + x * 17) % 13) as f64 - 6.0);
        let r = interpolation_check(&u, 2.0, f64::INFINITY, 4.0 / 3.0, 2.0, &q).unwrap();
        assert!(r.holds);
        assert!(interpolation_check(&u, 2.0, f64::INFINITY, 4.0 / 3.0, 3.0, &q).is_err());
    }

    #[test]
    fn sobolev_support_and_zero() {
        let lat = TorusLattice::new(2, 32).unwrap();
        let omega = ConductanceField::constant(lat.clone(), 1.0).unwrap();
        let q = SpaceTimeCylinder::new(0.0, 8.0, 0, 1.0).unwrap();
        let zero = SpaceTimeField::zeros(lat.clone(), 0.0, 4.0, 16, false);
        assert_eq!(sobolev_check(&zero, &omega, &q, 4.0, f64::INFINITY).unwrap().ratio, 0.0);
        let edge = lat.index(&[8, 0]);
        let bad = SpaceTimeField::from_fn(lat, 0.0, 4.0, 16, false, |_, x| if x == edge { 1.0 } else { 0.0 });
        assert!(matches!(sobolev_check(&bad, &omega, &q, 4.0, f64::INFINITY), Err(Error::Support(_))));
    }
}
