//! Time-dependent conductance fields, the models that generate them, the
//! space-time shift group and moment diagnostics.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{check_positive, SpaceTimeCylinder, TorusLattice};
use crate::rng::{stream, StreamRng, TAG_EDGE, TAG_TIME};
use crate::spacetime::{spacetime_norm_on, time_weights, SpaceTimeField};

/// Single-site law of a conductance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    TwoPoint { low: f64, high: f64, p_high: f64 },
    /// `scale · U^{−1/alpha}`: tail `P(ω > x) = (scale/x)^alpha`.
    Pareto { alpha: f64, scale: f64 },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Constant { value } => value > 0.0 && value.is_finite(),
            Law::Uniform { low, high } => low > 0.0 && high >= low && high.is_finite(),
            Law::TwoPoint { low, high, p_high } => low > 0.0 && high > 0.0 && high.is_finite() && (0.0..=1.0).contains(&p_high),
            Law::Pareto { alpha, scale } => alpha > 0.0 && scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("law {self:?} is not a positive law")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Law::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < p_high {
                    high
                } else {
                    low
                }
            }
            Law::Pareto { alpha, scale } => {
                // U in (0, 1]
                let u = 1.0 - rng.random::<f64>();
                scale * u.powf(-1.0 / alpha)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { low, high } => 0.5 * (low + high),
            Law::TwoPoint { low, high, p_high } => low + p_high * (high - low),
            Law::Pareto { alpha, scale } => {
                if alpha > 1.0 {
                    scale * alpha / (alpha - 1.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Constant { .. } => 0.0,
            Law::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Law::TwoPoint { low, high, p_high } => p_high * (1.0 - p_high) * (high - low).powi(2),
            Law::Pareto { alpha, scale } => {
                if alpha > 2.0 {
                    scale * scale * alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0))
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Families of stationary environments on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentModel {
    Constant { value: f64 },
    /// iid per edge, constant in time.
    StaticErgodic { law: Law },
    /// `ω_t(e) = f(e)·g(k)` with `f` iid over edges and `g` iid over grid
    /// intervals.
    ProductSeparable { space: Law, time: Law },
    /// iid law; each edge is resampled at the rings of an independent
    /// rate-`rate` Poisson clock, rounded up to the next grid interval.
    TimeRefresh { law: Law, rate: f64 },
    /// Static `ω = X/Y` with `X ~ Pareto(alpha_upper)`, `Y ~ Pareto(alpha_lower)`
    /// independent: `E[ω^p] < ∞ ⇔ p < alpha_upper` and
    /// `E[ω^{−q}] < ∞ ⇔ q < alpha_lower`.
    HeavyTail { alpha_upper: f64, alpha_lower: f64 },
}

impl EnvironmentModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvironmentModel::Constant { value } => Law::Constant { value: *value }.validate(),
            EnvironmentModel::StaticErgodic { law } => law.validate(),
            EnvironmentModel::ProductSeparable { space, time } => {
                space.validate()?;
                time.validate()
            }
            EnvironmentModel::TimeRefresh { law, rate } => {
                law.validate()?;
                if *rate > 0.0 && rate.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("refresh rate {rate}")))
                }
            }
            EnvironmentModel::HeavyTail { alpha_upper, alpha_lower } => {
                if *alpha_upper > 0.0 && *alpha_lower > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter("heavy-tail exponents must be positive".into()))
                }
            }
        }
    }

    pub fn is_time_constant(&self) -> bool {
        matches!(
            self,
            EnvironmentModel::Constant { .. } | EnvironmentModel::StaticErgodic { .. } | EnvironmentModel::HeavyTail { .. }
        )
    }

    /// Whether `E[ω^p]` and `E[ω^{−q}]` are finite, when the model documents it.
    pub fn finite_moments(&self, p: f64, q: f64) -> Option<(bool, bool)> {
        match *self {
            EnvironmentModel::Constant { .. } => Some((true, true)),
            EnvironmentModel::StaticErgodic { law: Law::Uniform { .. } | Law::TwoPoint { .. } | Law::Constant { .. } } => {
                Some((true, true))
            }
            EnvironmentModel::HeavyTail { alpha_upper, alpha_lower } => Some((p < alpha_upper, q < alpha_lower)),
            _ => None,
        }
    }
}

/// Positive, piecewise-constant-in-time conductances on the torus edges.
///
/// Grid interval `k` covers `[origin + (first + k)Δt, origin + (first + k + 1)Δt)`
/// and carries slab `schedule[k]`. Periodic fields repeat with period `KΔt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductanceField {
    lattice: TorusLattice,
    origin: f64,
    first: i64,
    dt: f64,
    periodic: bool,
    schedule: Vec<usize>,
    slabs: Vec<f64>,
}

impl ConductanceField {
    pub fn from_slabs(lattice: TorusLattice, t_start: f64, dt: f64, periodic: bool, schedule: Vec<usize>, slabs: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("time step {dt}")));
        }
        let e = lattice.num_edges();
        if slabs.is_empty() || slabs.len() % e != 0 {
            return Err(Error::GridMismatch(format!("{} values for {} edges", slabs.len(), e)));
        }
        let n_slabs = slabs.len() / e;
        if schedule.is_empty() || schedule.iter().any(|&s| s >= n_slabs) {
            return Err(Error::GridMismatch("schedule refers to missing slab".into()));
        }
        check_positive(&slabs)?;
        Ok(Self {
            lattice,
            origin: t_start,
            first: 0,
            dt,
            periodic,
            schedule,
            slabs,
        })
    }

    /// One slab per interval.
    pub fn from_intervals(lattice: TorusLattice, t_start: f64, dt: f64, periodic: bool, values: Vec<f64>) -> Result<Self> {
        let k = values.len() / lattice.num_edges().max(1);
        Self::from_slabs(lattice, t_start, dt, periodic, (0..k).collect(), values)
    }

    /// Static field, periodic with a single interval.
    pub fn time_constant(lattice: TorusLattice, values: Vec<f64>) -> Result<Self> {
        Self::from_slabs(lattice, 0.0, 1.0, true, vec![0], values)
    }

    pub fn constant(lattice: TorusLattice, value: f64) -> Result<Self> {
        let e = lattice.num_edges();
        Self::time_constant(lattice, vec![value; e])
    }

    #[inline]
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn intervals(&self) -> usize {
        self.schedule.len()
    }

    #[inline]
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn t_start(&self) -> f64 {
        self.interval_start(self.first)
    }

    /// End of the support; infinite for periodic fields.
    pub fn t_end(&self) -> f64 {
        if self.periodic {
            f64::INFINITY
        } else {
            self.interval_start(self.first + self.intervals() as i64)
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.periodic.then(|| self.dt * self.intervals() as f64)
    }

    pub fn num_slabs(&self) -> usize {
        self.slabs.len() / self.lattice.num_edges()
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn slab(&self, s: usize) -> &[f64] {
        let e = self.lattice.num_edges();
        &self.slabs[s * e..(s + 1) * e]
    }

    /// Conductances on grid interval `k ∈ [0, K)`.
    #[inline]
    pub fn weights(&self, k: usize) -> &[f64] {
        self.slab(self.schedule[k])
    }

    #[inline]
    pub fn value(&self, k: usize, e: usize) -> f64 {
        self.slabs[self.schedule[k] * self.lattice.num_edges() + e]
    }

    /// Start time of absolute grid cell `raw`.
    #[inline]
    pub fn interval_start(&self, raw: i64) -> f64 {
        self.origin + raw as f64 * self.dt
    }

    /// Absolute grid cell containing `t`.
    #[inline]
    pub fn raw_interval(&self, t: f64) -> i64 {
        ((t - self.origin) / self.dt).floor() as i64
    }

    /// Stored interval of absolute cell `raw`, if inside the support.
    #[inline]
    pub fn wrap(&self, raw: i64) -> Option<usize> {
        let rel = raw - self.first;
        let k = self.intervals() as i64;
        if self.periodic {
            Some(rel.rem_euclid(k) as usize)
        } else if (0..k).contains(&rel) {
            Some(rel as usize)
        } else {
            None
        }
    }

    pub fn interval_at(&self, t: f64) -> Result<usize> {
        self.wrap(self.raw_interval(t)).ok_or(Error::OutsideSupport {
            time: t,
            start: self.t_start(),
            end: self.t_end(),
        })
    }

    pub fn conductance_at(&self, t: f64, e: usize) -> Result<f64> {
        Ok(self.value(self.interval_at(t)?, e))
    }

    pub fn is_time_constant(&self) -> bool {
        let first = self.schedule[0];
        self.schedule.iter().all(|&s| s == first) || (0..self.num_slabs()).all(|s| self.slab(s) == self.slab(first))
    }

    /// Declares periodic closure in time with period `KΔt`.
    pub fn into_periodic(mut self) -> Self {
        self.periodic = true;
        self
    }

    /// Total jump rate `μ_k(x)` (no floor).
    #[inline]
    pub fn mu(&self, k: usize, x: usize) -> f64 {
        self.lattice.vertex_measures(self.weights(k), x).0
    }

    /// Space-time shift `(τ_{s,z}ω)_t(x,y) = ω_{t+s}(x+z, y+z)`; `s` must be
    /// a multiple of Δt.
    pub fn shift(&self, s: f64, z: usize) -> Result<Self> {
        let m = s / self.dt;
        let steps = m.round();
        if (m - steps).abs() > 1e-9 * m.abs().max(1.0) {
            return Err(Error::UnalignedShift(s));
        }
        let steps = steps as i64;
        let lat = &self.lattice;
        let e_count = lat.num_edges();
        let d = lat.dim();
        let mut slabs = vec![0.0; self.slabs.len()];
        for s_idx in 0..self.num_slabs() {
            let src = self.slab(s_idx);
            let dst = &mut slabs[s_idx * e_count..(s_idx + 1) * e_count];
            for x in 0..lat.num_vertices() {
                let xz = lat.translate(x, z);
                for j in 0..d {
                    dst[lat.edge(x, j)] = src[lat.edge(xz, j)];
                }
            }
        }
        let mut out = Self {
            slabs,
            ..self.clone()
        };
        if self.periodic {
            let k = self.intervals() as i64;
            out.schedule = (0..k)
                .map(|i| self.schedule[(i + steps).rem_euclid(k) as usize])
                .collect();
        } else {
            out.first = self.first - steps;
        }
        Ok(out)
    }

    /// Equality of the conductance functions `(t, e) ↦ ω_t(e)` on the grid.
    pub fn same_values(&self, other: &Self) -> bool {
        if self.lattice != other.lattice
            || self.dt != other.dt
            || self.origin != other.origin
            || self.periodic != other.periodic
            || self.intervals() != other.intervals()
        {
            return false;
        }
        if !self.periodic && self.first != other.first {
            return false;
        }
        let k = self.intervals() as i64;
        (0..k).all(|i| {
            let raw = self.first + i;
            let a = self.wrap(raw).unwrap();
            let b = other.wrap(raw).unwrap();
            self.weights(a) == other.weights(b)
        })
    }

    /// μ or ν (optionally floored at 1) as a space-time field over the grid
    /// cells meeting `[a, b)`. Time-constant fields collapse to one slice.
    pub fn measure_field(&self, measure: Measure, floor: bool, a: f64, b: f64) -> Result<SpaceTimeField> {
        let lat = &self.lattice;
        let eval = |w: &[f64], x: usize| {
            let (m, n) = lat.vertex_measures(w, x);
            let v = match measure {
                Measure::Mu => m,
                Measure::Nu => n,
            };
            if floor {
                v.max(1.0)
            } else {
                v
            }
        };
        if self.is_time_constant() {
            let w = self.weights(0);
            let values = (0..lat.num_vertices()).map(|x| eval(w, x)).collect();
            return Ok(SpaceTimeField::time_constant(lat.clone(), values));
        }
        let first = self.raw_interval(a);
        let last = self.raw_interval(b - 1e-12 * self.dt);
        let mut values = Vec::new();
        for raw in first..=last {
            let k = self.wrap(raw).ok_or(Error::OutsideSupport {
                time: self.interval_start(raw),
                start: self.t_start(),
                end: self.t_end(),
            })?;
            let w = self.weights(k);
            values.extend((0..lat.num_vertices()).map(|x| eval(w, x)));
        }
        Ok(SpaceTimeField {
            lattice: lat.clone(),
            t_start: self.interval_start(first),
            dt: self.dt,
            periodic: false,
            slices: (last - first + 1) as usize,
            values,
        })
    }

    /// Grid cells meeting `[a, b)` as `(interval, overlap)` pairs.
    pub fn interval_weights(&self, a: f64, b: f64) -> Result<Vec<(usize, f64)>> {
        time_weights(self.origin, self.dt, b, a, |raw| self.wrap(raw), self.t_end())
    }

    /// Space-time average of `μ` (no floor) over one period or the support.
    pub fn mean_mu(&self) -> f64 {
        let lat = &self.lattice;
        let mut acc = 0.0;
        for k in 0..self.intervals() {
            let w = self.weights(k);
            acc += (0..lat.num_vertices()).map(|x| lat.vertex_measures(w, x).0).sum::<f64>();
        }
        acc / (self.intervals() * lat.num_vertices()) as f64
    }

    pub fn max_mu(&self) -> f64 {
        let lat = &self.lattice;
        (0..self.num_slabs())
            .flat_map(|s| {
                let w = self.slab(s);
                (0..lat.num_vertices()).map(move |x| lat.vertex_measures(w, x).0)
            })
            .fold(0.0, f64::max)
    }

    /// View of `τ_{s,z}ω` without materializing it.
    pub fn view(&self, s: f64, z: usize) -> EnvironmentView<'_> {
        EnvironmentView { field: self, s, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Mu,
    Nu,
}

/// Lazily shifted environment `τ_{s,z}ω`.
#[derive(Debug, Clone, Copy)]
pub struct EnvironmentView<'a> {
    field: &'a ConductanceField,
    s: f64,
    z: usize,
}

impl EnvironmentView<'_> {
    pub fn lattice(&self) -> &TorusLattice {
        self.field.lattice()
    }

    /// `ω_{t+s}(x+z, x+z+e_j)`.
    pub fn conductance(&self, t: f64, x: usize, j: usize) -> Result<f64> {
        let lat = self.field.lattice();
        let e = lat.edge(lat.translate(x, self.z), j);
        self.field.conductance_at(t + self.s, e)
    }

    /// `μ_{t+s}(x+z)` without floor.
    pub fn mu(&self, t: f64, x: usize) -> Result<f64> {
        let k = self.field.interval_at(t + self.s)?;
        Ok(self.field.mu(k, self.field.lattice().translate(x, self.z)))
    }
}

fn sample_iid_edges(law: &Law, lattice: &TorusLattice, seed: u64) -> Vec<f64> {
    (0..lattice.num_edges())
        .into_par_iter()
        .map(|e| law.sample(&mut stream(seed, &[TAG_EDGE, e as u64])))
        .collect()
}

fn heavy_tail_value(rng: &mut StreamRng, alpha_upper: f64, alpha_lower: f64) -> f64 {
    let x = Law::Pareto { alpha: alpha_upper, scale: 1.0 }.sample(rng);
    let y = Law::Pareto { alpha: alpha_lower, scale: 1.0 }.sample(rng);
    x / y
}

/// Space and time factors `(f, g)` of a product-separable sample.
pub fn product_factors(space: &Law, time: &Law, lattice: &TorusLattice, intervals: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let f = sample_iid_edges(space, lattice, seed);
    let g = (0..intervals)
        .map(|k| time.sample(&mut stream(seed, &[TAG_TIME, k as u64])))
        .collect();
    (f, g)
}

/// Samples `model` on `[0, horizon)` with grid step `dt`.
pub fn sample_environment(model: &EnvironmentModel, lattice: &TorusLattice, horizon: f64, dt: f64, periodic: bool, seed: u64) -> Result<ConductanceField> {
    model.validate()?;
    if !(horizon > 0.0) || !(dt > 0.0) || !horizon.is_finite() {
        return Err(Error::Parameter(format!("horizon {horizon} / dt {dt}")));
    }
    let k = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let e_count = lattice.num_edges();
    let lat = lattice.clone();
    match *model {
        EnvironmentModel::Constant { value } => ConductanceField::from_slabs(lat, 0.0, dt, periodic, vec![0; k], vec![value; e_count]),
        EnvironmentModel::StaticErgodic { law } => {
            let values = sample_iid_edges(&law, lattice, seed);
            ConductanceField::from_slabs(lat, 0.0, dt, periodic, vec![0; k], values)
        }
        EnvironmentModel::HeavyTail { alpha_upper, alpha_lower } => {
            let values = (0..e_count)
                .into_par_iter()
                .map(|e| heavy_tail_value(&mut stream(seed, &[TAG_EDGE, e as u64]), alpha_upper, alpha_lower))
                .collect();
            ConductanceField::from_slabs(lat, 0.0, dt, periodic, vec![0; k], values)
        }
        EnvironmentModel::ProductSeparable { space, time } => {
            let (f, g) = product_factors(&space, &time, lattice, k, seed);
            let mut values = Vec::with_capacity(k * e_count);
            for gk in &g {
                values.extend(f.iter().map(|fe| fe * gk));
            }
            ConductanceField::from_intervals(lat, 0.0, dt, periodic, values)
        }
        EnvironmentModel::TimeRefresh { law, rate } => {
            let keep = (-rate * dt).exp();
            let columns: Vec<Vec<f64>> = (0..e_count)
                .into_par_iter()
                .map(|e| {
                    let mut rng = stream(seed, &[TAG_EDGE, e as u64]);
                    let mut current = law.sample(&mut rng);
                    let mut col = Vec::with_capacity(k);
                    col.push(current);
                    for _ in 1..k {
                        if rng.random::<f64>() >= keep {
                            current = law.sample(&mut rng);
                        }
                        col.push(current);
                    }
                    col
                })
                .collect();
            let mut values = vec![0.0; k * e_count];
            for (e, col) in columns.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    values[i * e_count + e] = *v;
                }
            }
            ConductanceField::from_intervals(lat, 0.0, dt, periodic, values)
        }
    }
}

/// Exponents `p, p', q, q' ∈ (1, ∞]` of the moment condition in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentExponents {
    pub p: f64,
    pub p_prime: f64,
    pub q: f64,
    pub q_prime: f64,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// The `p = p'`, `q = q'` specialization `1/(p−1) + 1/((p−1)q) + 1/q`,
    /// when it applies.
    pub symmetric_lhs: Option<f64>,
    pub symmetric_holds: Option<bool>,
}

/// `1/x` with `1/∞ = 0`.
#[inline]
pub fn recip(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

/// Hölder conjugate `x/(x−1)`, equal to 1 at `x = ∞`.
#[inline]
pub fn conjugate(x: f64) -> f64 {
    if x.is_infinite() {
        1.0
    } else {
        x / (x - 1.0)
    }
}

/// `(q'+1)/q'`, equal to 1 at `q' = ∞`.
#[inline]
pub fn one_plus_recip(x: f64) -> f64 {
    1.0 + recip(x)
}

/// Evaluates `(1/p)·(p'/(p'−1))·((q'+1)/q') + 1/q < 2/d`.
pub fn moment_condition_check(e: &MomentExponents) -> Result<MomentCheck> {
    for (name, v) in [("p", e.p), ("p'", e.p_prime), ("q", e.q), ("q'", e.q_prime)] {
        if !(v > 1.0) {
            return Err(Error::Exponent(format!("{name} = {v} must exceed 1")));
        }
    }
    if e.d < 1 {
        return Err(Error::Exponent("dimension must be positive".into()));
    }
    let lhs = recip(e.p) * conjugate(e.p_prime) * one_plus_recip(e.q_prime) + recip(e.q);
    let rhs = 2.0 / e.d as f64;
    let symmetric = (e.p == e.p_prime && e.q == e.q_prime).then(|| {
        let pm1 = recip(e.p - 1.0);
        pm1 + pm1 * recip(e.q) + recip(e.q)
    });
    Ok(MomentCheck {
        holds: lhs < rhs,
        lhs,
        rhs,
        margin: rhs - lhs,
        symmetric_lhs: symmetric,
        symmetric_holds: symmetric.map(|s| s < rhs),
    })
}

/// `(‖μ‖_{p,p',Q}, ‖ν‖_{q,q',Q})` without floor.
pub fn empirical_moment_norms(omega: &ConductanceField, e: &MomentExponents, q: &SpaceTimeCylinder) -> Result<(f64, f64)> {
    measure_norms(omega, (e.p, e.p_prime), (e.q, e.q_prime), q, false)
}

pub(crate) fn measure_norms(omega: &ConductanceField, mu_exp: (f64, f64), nu_exp: (f64, f64), q: &SpaceTimeCylinder, floor: bool) -> Result<(f64, f64)> {
    let ball = q.ball(omega.lattice())?;
    let (a, b) = q.time_interval();
    let mu = omega.measure_field(Measure::Mu, floor, a, b)?;
    let nu = omega.measure_field(Measure::Nu, floor, a, b)?;
    let wm = mu.slice_weights(a, b)?;
    let wn = nu.slice_weights(a, b)?;
    Ok((
        spacetime_norm_on(&mu, &ball, &wm, mu_exp.0, mu_exp.1),
        spacetime_norm_on(&nu, &ball, &wn, nu_exp.0, nu_exp.1),
    ))
}

/// `(1/n²)∫₀^{n²} (1/|B(n)|) Σ_{x∈B(n)} φ(τ_{t,x}ω) dt`, with `φ(τ_{t,·}ω)`
/// evaluated once per grid cell (at the cell's first time inside `[0, n²)`).
pub fn ergodic_average<F>(phi: F, omega: &ConductanceField, n: f64) -> Result<f64>
where
    F: Fn(&EnvironmentView<'_>) -> f64 + Sync,
{
    let lat = omega.lattice();
    let origin = lat.index(&vec![0; lat.dim()]);
    let ball = lat.ball(origin, n)?;
    let horizon = n * n;
    if omega.t_start() > 0.0 || omega.t_end() < horizon {
        return Err(Error::OutsideSupport {
            time: horizon,
            start: omega.t_start(),
            end: omega.t_end(),
        });
    }
    let first = omega.raw_interval(0.0);
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut raw = first;
    loop {
        let lo = omega.interval_start(raw).max(0.0);
        if lo >= horizon {
            break;
        }
        let hi = omega.interval_start(raw + 1).min(horizon);
        let w = hi - lo;
        if w > 0.0 {
            let partial: Vec<f64> = ball.par_iter().map(|&x| phi(&omega.view(lo, x))).collect();
            total += w * partial.iter().sum::<f64>() / ball.len() as f64;
            weight += w;
        }
        raw += 1;
    }
    Ok(total / weight)
}

/// Exponential clock helper shared by the samplers.
#[inline]
pub(crate) fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(l: usize) -> TorusLattice {
        TorusLattice::new(2, l).unwrap()
    }

    #[test]
    fn constant_and_product_models() {
        let l = lat(8);
        let f = sample_environment(&EnvironmentModel::Constant { value: 1.0 }, &l, 3.0, 0.5, false, 1).unwrap();
        assert_eq!(f.intervals(), 6);
        assert!((0..6).all(|k| f.weights(k).iter().all(|&w| w == 1.0)));
        let m = EnvironmentModel::ProductSeparable {
            space: Law::Constant { value: 2.0 },
            time: Law::Constant { value: 3.0 },
        };
        let f = sample_environment(&m, &l, 2.0, 0.5, false, 1).unwrap();
        assert!((0..f.intervals()).all(|k| f.weights(k).iter().all(|&w| w == 6.0)));
    }

    #[test]
    fn product_separable_factorizes_exactly() {
        let l = lat(8);
        let space = Law::Uniform { low: 1.0, high: 2.0 };
        let time = Law::Uniform { low: 0.5, high: 1.5 };
        let m = EnvironmentModel::ProductSeparable { space, time };
        let f = sample_environment(&m, &l, 5.0, 1.0, true, 42).unwrap();
        let (fs, gs) = product_factors(&space, &time, &l, 5, 42);
        for k in 0..5 {
            for e in 0..l.num_edges() {
                assert_eq!(f.value(k, e), fs[e] * gs[k]);
            }
        }
    }

    #[test]
    fn static_models_are_constant_in_time_and_positive() {
        let l = lat(16);
        for m in [
            EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 1.0, high: 3.0 } },
            EnvironmentModel::HeavyTail { alpha_upper: 1.5, alpha_lower: 0.7 },
        ] {
            let f = sample_environment(&m, &l, 10.0, 1.0, false, 5).unwrap();
            assert!(f.is_time_constant());
            assert!(f.slab(0).iter().all(|&w| w > 0.0 && w.is_finite()));
        }
        let tr = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 1.0, high: 2.0 }, rate: 0.5 };
        let f = sample_environment(&tr, &l, 20.0, 1.0, false, 5).unwrap();
        assert!(!f.is_time_constant());
        // some but not all edges refresh across one interval
        let changed = (0..l.num_edges()).filter(|&e| f.value(0, e) != f.value(1, e)).count();
        let frac = changed as f64 / l.num_edges() as f64;
        assert!((frac - (1.0 - (-0.5f64).exp())).abs() < 0.06, "{frac}");
    }

    #[test]
    fn static_uniform_mean_within_three_sigma() {
        let l = lat(64);
        let m = EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 1.0, high: 3.0 } };
        let f = sample_environment(&m, &l, 1.0, 1.0, true, 11).unwrap();
        let w = f.slab(0);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = (4.0f64 / 12.0).sqrt() / (w.len() as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let l = lat(8);
        let m = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 1.0, high: 2.0 }, rate: 1.0 };
        let a = sample_environment(&m, &l, 4.0, 0.5, true, 3).unwrap();
        let b = sample_environment(&m, &l, 4.0, 0.5, true, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_group_laws() {
        let l = lat(8);
        let m = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 1.0, high: 2.0 }, rate: 1.0 };
        for periodic in [false, true] {
            let f = sample_environment(&m, &l, 4.0, 0.5, periodic, 3).unwrap();
            assert!(f.shift(0.0, 0).unwrap().same_values(&f));
            let z = l.index(&[3, 5]);
            let there = f.shift(1.5, z).unwrap();
            assert!(!there.same_values(&f));
            let back = there.shift(-1.5, l.negate(z)).unwrap();
            assert!(back.same_values(&f));
            let z2 = l.index(&[7, 1]);
            let composed = f.shift(1.5, z).unwrap().shift(0.5, z2).unwrap();
            let direct = f.shift(2.0, l.translate(z, z2)).unwrap();
            assert!(composed.same_values(&direct));
            // pointwise definition
            for t in [0.25, 1.75] {
                if !periodic && t + 1.5 >= 4.0 {
                    continue;
                }
                for x in [0, 9, 40] {
                    let e = l.edge(x, 1);
                    let src = l.edge(l.translate(x, z), 1);
                    assert_eq!(there.conductance_at(t, e).unwrap(), f.conductance_at(t + 1.5, src).unwrap());
                }
            }
            assert!(matches!(f.shift(0.3, 0), Err(Error::UnalignedShift(_))));
        }
        let c = ConductanceField::constant(l.clone(), 2.5).unwrap();
        assert!(c.shift(7.0, l.index(&[1, 2])).unwrap().same_values(&c));
    }

    #[test]
    fn moment_condition_examples() {
        let inf = f64::INFINITY;
        let c = moment_condition_check(&MomentExponents { p: 4.0, p_prime: inf, q: 4.0, q_prime: inf, d: 2 }).unwrap();
        assert!(c.holds);
        assert!((c.lhs - 0.5).abs() < 1e-15 && (c.margin - 0.5).abs() < 1e-15);
        let c = moment_condition_check(&MomentExponents { p: 2.0, p_prime: 2.0, q: 2.0, q_prime: 2.0, d: 2 }).unwrap();
        assert!(!c.holds);
        assert!((c.lhs - 2.0).abs() < 1e-15);
        let c = moment_condition_check(&MomentExponents { p: 4.0, p_prime: 4.0, q: 4.0, q_prime: 4.0, d: 2 }).unwrap();
        assert!((c.symmetric_lhs.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.symmetric_holds, Some(true));
        assert!(moment_condition_check(&MomentExponents { p: 1.0, p_prime: 2.0, q: 2.0, q_prime: 2.0, d: 2 }).is_err());
    }

    #[test]
    fn moment_norm_examples() {
        let l = lat(16);
        let q = SpaceTimeCylinder::new(0.0, 4.0, 0, 1.0).unwrap();
        let one = ConductanceField::constant(l.clone(), 1.0).unwrap();
        let e = MomentExponents { p: 3.0, p_prime: 5.0, q: 2.0, q_prime: f64::INFINITY, d: 2 };
        let (m, n) = empirical_moment_norms(&one, &e, &q).unwrap();
        assert!((m - 4.0).abs() < 1e-14 && (n - 4.0).abs() < 1e-14);
        let two = ConductanceField::constant(l, 2.0).unwrap();
        let e = MomentExponents { p: 1.0, p_prime: 1.0, q: 1.0, q_prime: 1.0, d: 2 };
        let (m, n) = empirical_moment_norms(&two, &e, &q).unwrap();
        assert!((m - 8.0).abs() < 1e-14 && (n - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ergodic_average_examples() {
        let l = lat(16);
        let c = ConductanceField::constant(l.clone(), 1.7).unwrap();
        for n in [1.0, 3.0, 7.0] {
            let v = ergodic_average(|w| w.conductance(0.0, 0, 0).unwrap(), &c, n).unwrap();
            assert!((v - 1.7).abs() < 1e-14);
            assert_eq!(ergodic_average(|_| 1.0, &c, n).unwrap(), 1.0);
        }
        assert!(ergodic_average(|_| 1.0, &c, 8.0).is_err());
        let bounded = sample_environment(&EnvironmentModel::Constant { value: 1.0 }, &l, 4.0, 1.0, false, 0).unwrap();
        assert!(ergodic_average(|_| 1.0, &bounded, 3.0).is_err());
    }
}
