//! Reproducible random test-function corpora on balls and cylinders.
//!
//! Every generator is keyed by `(seed, index)` so a corpus can be
//! regenerated member by member.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::{SpaceTimeCylinder, TorusLattice};
use crate::rng::{stream, StreamRng, TAG_CORPUS};
use crate::spacetime::SpaceTimeField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Random low Fourier modes at wavelength ∼ radius, times a tent.
    Smooth,
    /// iid Gaussians smoothed by two applications of `I + 𝓛/(4d)`, times
    /// a tent.
    SmoothedGaussian,
    /// One to three random point masses.
    Spikes,
    /// Signed first coordinate relative to the centre.
    Coordinate,
    /// Indicator of a random half ball.
    HalfBall,
}

pub const SHAPES: [Shape; 5] = [Shape::Smooth, Shape::SmoothedGaussian, Shape::Spikes, Shape::Coordinate, Shape::HalfBall];

fn offsets(lattice: &TorusLattice, x0: usize, y: usize) -> Vec<f64> {
    let l = lattice.side() as i64;
    (0..lattice.dim())
        .map(|j| {
            let mut d = lattice.coord(y, j) as i64 - lattice.coord(x0, j) as i64;
            if d > l / 2 {
                d -= l;
            } else if d < -l / 2 {
                d += l;
            }
            d as f64
        })
        .collect()
}

/// `max(0, 1 − d(x0, y)/(R+1))` scaled so it vanishes from distance `R+1`
/// on, and `tent(R) > 0`; with `strict` it vanishes already at distance `R`.
fn tent(lattice: &TorusLattice, x0: usize, y: usize, radius: usize, strict: bool) -> f64 {
    let r = lattice.distance(x0, y) as f64;
    let edge = if strict { radius as f64 } else { radius as f64 + 1.0 };
    (1.0 - r / edge).max(0.0)
}

/// Vertex function on the torus supported in `B(x0, radius)`; with `strict`
/// it also vanishes on the boundary sphere.
pub fn vertex_function(lattice: &TorusLattice, x0: usize, radius: usize, shape: Shape, strict: bool, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let ball = lattice.ball(x0, radius as f64)?;
    let nv = lattice.num_vertices();
    let d = lattice.dim();
    let mut f = vec![0.0; nv];
    let inner = if strict { radius.saturating_sub(1) } else { radius };
    match shape {
        Shape::Smooth => {
            let modes: Vec<(Vec<f64>, f64, f64)> = (0..4)
                .map(|_| {
                    let k: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0) * std::f64::consts::PI / radius.max(1) as f64).collect();
                    (k, rng.random_range(0.0..std::f64::consts::TAU), rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            for &y in &ball {
                let z = offsets(lattice, x0, y);
                let mut v = 0.0;
                for (k, phase, amp) in &modes {
                    let dotp: f64 = k.iter().zip(&z).map(|(a, b)| a * b).sum();
                    v += amp * (dotp + phase).cos();
                }
                f[y] = v * tent(lattice, x0, y, radius, strict);
            }
        }
        Shape::SmoothedGaussian => {
            let mut g = vec![0.0; nv];
            for &y in &ball {
                g[y] = rng.sample(StandardNormal);
            }
            let ones = vec![1.0 / (4.0 * d as f64); lattice.num_edges()];
            for _ in 0..2 {
                let lg = lattice.generator_apply(&ones, &g)?;
                g.iter_mut().zip(&lg).for_each(|(a, b)| *a += b);
            }
            for &y in &ball {
                f[y] = g[y] * tent(lattice, x0, y, radius, strict);
            }
        }
        Shape::Spikes => {
            let inner_ball = lattice.ball(x0, inner as f64)?;
            let count = rng.random_range(1..=3);
            for _ in 0..count {
                let y = inner_ball[rng.random_range(0..inner_ball.len())];
                f[y] += rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        Shape::Coordinate => {
            let axis = rng.random_range(0..d);
            for &y in &ball {
                if lattice.distance(x0, y) <= inner {
                    f[y] = offsets(lattice, x0, y)[axis];
                }
            }
        }
        Shape::HalfBall => {
            let normal: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for &y in &ball {
                if lattice.distance(x0, y) <= inner {
                    let z = offsets(lattice, x0, y);
                    let s: f64 = z.iter().zip(&normal).map(|(a, b)| a * b).sum();
                    f[y] = if s >= 0.0 { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Ok(f)
}

/// Member `index` of the corpus keyed by `seed`; shapes cycle with `index`.
pub fn corpus_member(lattice: &TorusLattice, x0: usize, radius: usize, strict: bool, seed: u64, index: u64) -> Result<(Shape, Vec<f64>)> {
    let shape = SHAPES[(index % SHAPES.len() as u64) as usize];
    let mut rng = stream(seed, &[TAG_CORPUS, index]);
    Ok((shape, vertex_function(lattice, x0, radius, shape, strict, &mut rng)?))
}

/// Space-time test function supported in the cylinder `q` with time grid
/// step `dt` starting at `q.t0`: a corpus vertex function times a random
/// nonnegative time profile.
pub fn spacetime_member(lattice: &TorusLattice, q: &SpaceTimeCylinder, dt: f64, strict: bool, seed: u64, index: u64) -> Result<(Shape, SpaceTimeField)> {
    let radius = lattice.ball_radius(q.radius())?;
    let (shape, f) = corpus_member(lattice, q.x0, radius, strict, seed, index)?;
    let (a, b) = q.time_interval();
    let slices = ((b - a) / dt).round().max(1.0) as usize;
    let mut rng = stream(seed, &[TAG_CORPUS, index, 1]);
    let kind = rng.random_range(0..3);
    let freq = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let profile: Vec<f64> = (0..slices)
        .map(|k| {
            let s = (k as f64 + 0.5) / slices as f64;
            match kind {
                0 => 1.0,
                1 => 1.0 - s,
                _ => 1.0 + 0.9 * (std::f64::consts::TAU * freq * s + phase).sin(),
            }
        })
        .collect();
    Ok((shape, SpaceTimeField::from_fn(lattice.clone(), a, dt, slices, false, |k, x| profile[k] * f[x])))
}
