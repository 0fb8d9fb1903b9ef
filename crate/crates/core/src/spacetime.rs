//! Fields on a time grid × torus and the space-time averaged norms
//! `‖u‖_{p,p',I×B}`.
//!
//! A field holds one vertex vector per grid slice; slice `k` is taken to be
//! constant on `[t_start + kΔt, t_start + (k+1)Δt)`. Time integrals are
//! computed exactly for this piecewise-constant structure, which coincides
//! with a Δt-weighted grid sum whenever the interval is grid aligned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{SpaceTimeCylinder, TorusLattice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub lattice: TorusLattice,
    pub t_start: f64,
    pub dt: f64,
    /// Wrap slice indices modulo `slices` outside the stored window.
    pub periodic: bool,
    pub slices: usize,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(lattice: TorusLattice, t_start: f64, dt: f64, slices: usize, periodic: bool) -> Self {
        let n = lattice.num_vertices();
        Self {
            lattice,
            t_start,
            dt,
            periodic,
            slices,
            values: vec![0.0; n * slices],
        }
    }

    pub fn from_fn<F>(lattice: TorusLattice, t_start: f64, dt: f64, slices: usize, periodic: bool, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64,
    {
        let n = lattice.num_vertices();
        let mut values = Vec::with_capacity(n * slices);
        for k in 0..slices {
            for x in 0..n {
                values.push(f(k, x));
            }
        }
        Self {
            lattice,
            t_start,
            dt,
            periodic,
            slices,
            values,
        }
    }

    /// A field that is the same vertex vector at every time.
    pub fn time_constant(lattice: TorusLattice, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), lattice.num_vertices());
        Self {
            lattice,
            t_start: 0.0,
            dt: 1.0,
            periodic: true,
            slices: 1,
            values,
        }
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.lattice.num_vertices()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.num_vertices();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.num_vertices();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn end_time(&self) -> f64 {
        self.t_start + self.dt * self.slices as f64
    }

    /// Slice index holding time `t`.
    pub fn slice_at(&self, t: f64) -> Result<usize> {
        let raw = ((t - self.t_start) / self.dt).floor() as i64;
        self.wrap_slice(raw).ok_or(Error::OutsideSupport {
            time: t,
            start: self.t_start,
            end: self.end_time(),
        })
    }

    pub(crate) fn wrap_slice(&self, raw: i64) -> Option<usize> {
        if self.periodic {
            Some(raw.rem_euclid(self.slices as i64) as usize)
        } else if raw >= 0 && (raw as usize) < self.slices {
            Some(raw as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn value_at(&self, t: f64, x: usize) -> Result<f64> {
        let k = self.slice_at(t)?;
        Ok(self.values[k * self.num_vertices() + x])
    }

    /// Slices meeting `[a, b)` with their overlap lengths.
    pub fn slice_weights(&self, a: f64, b: f64) -> Result<Vec<(usize, f64)>> {
        time_weights(self.t_start, self.dt, b, a, |raw| self.wrap_slice(raw), self.end_time())
    }
}

/// Overlaps of `[a, b)` with grid cells `[t_start + kΔt, t_start + (k+1)Δt)`,
/// mapped through `wrap`.
pub(crate) fn time_weights<W>(t_start: f64, dt: f64, b: f64, a: f64, wrap: W, end: f64) -> Result<Vec<(usize, f64)>>
where
    W: Fn(i64) -> Option<usize>,
{
    if !(b > a) {
        return Err(Error::EmptyRegion(format!("time interval [{a}, {b}]")));
    }
    let first = ((a - t_start) / dt).floor() as i64;
    let mut out = Vec::new();
    let mut raw = first;
    loop {
        let lo = t_start + raw as f64 * dt;
        if lo >= b {
            break;
        }
        let hi = lo + dt;
        let w = hi.min(b) - lo.max(a);
        if w > 1e-12 * dt {
            let k = wrap(raw).ok_or(Error::OutsideSupport {
                time: lo.max(a),
                start: t_start,
                end,
            })?;
            out.push((k, w));
        }
        raw += 1;
    }
    if out.is_empty() {
        return Err(Error::EmptyRegion(format!("time interval [{a}, {b}]")));
    }
    Ok(out)
}

/// Exponent pair and region of a space-time norm. `f64::INFINITY` selects
/// the max-norm in either slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub p: f64,
    pub p_prime: f64,
    pub region: SpaceTimeCylinder,
}

impl NormSpec {
    pub fn new(p: f64, p_prime: f64, region: SpaceTimeCylinder) -> Result<Self> {
        if !(p > 0.0) || !(p_prime > 0.0) {
            return Err(Error::Exponent(format!("norm exponents ({p}, {p_prime}) must be > 0")));
        }
        Ok(Self { p, p_prime, region })
    }
}

/// Spatial average norm `‖f‖_{p,B}`.
pub fn space_norm(f: &[f64], ball: &[usize], p: f64) -> f64 {
    if p.is_infinite() {
        return ball.iter().map(|&x| f[x].abs()).fold(0.0, f64::max);
    }
    let mean = ball.iter().map(|&x| f[x].abs().powf(p)).sum::<f64>() / ball.len() as f64;
    mean.powf(1.0 / p)
}

/// Combines per-slice spatial norms with overlap weights into the
/// `p'`-average over time.
pub(crate) fn combine_time(per_slice: &[(f64, f64)], p_prime: f64) -> f64 {
    if p_prime.is_infinite() {
        return per_slice.iter().map(|&(v, _)| v).fold(0.0, f64::max);
    }
    let total: f64 = per_slice.iter().map(|&(_, w)| w).sum();
    let acc: f64 = per_slice.iter().map(|&(v, w)| w * v.powf(p_prime)).sum();
    (acc / total).powf(1.0 / p_prime)
}

/// `‖u‖_{p,p',I×B}` for `I × B` the cylinder of `spec`.
pub fn spacetime_norm(u: &SpaceTimeField, spec: &NormSpec) -> Result<f64> {
    let ball = spec.region.ball(&u.lattice)?;
    let (a, b) = spec.region.time_interval();
    let weights = u.slice_weights(a, b)?;
    Ok(spacetime_norm_on(u, &ball, &weights, spec.p, spec.p_prime))
}

pub(crate) fn spacetime_norm_on(u: &SpaceTimeField, ball: &[usize], weights: &[(usize, f64)], p: f64, p_prime: f64) -> f64 {
    let per_slice: Vec<(f64, f64)> = weights
        .iter()
        .map(|&(k, w)| (space_norm(u.slice(k), ball, p), w))
        .collect();
    combine_time(&per_slice, p_prime)
}
