//! Discrete torus geometry and the potential-theoretic calculus on it.
//!
//! Vertices of `{0,…,L−1}^d` are stored row-major. Each vertex `x` owns the
//! `d` edges `{x, x+e_j}`; edge `x·d + j` has tail `e⁻ = x` and head
//! `e⁺ = x + e_j`, so gradients of coordinate functions are `+1` on every
//! edge of their own direction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex loops below this size run serially.
pub(crate) const PAR_THRESHOLD: usize = 1 << 13;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusLattice {
    dim: usize,
    side: usize,
    strides: Vec<usize>,
    n_vertices: usize,
}

impl TorusLattice {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Lattice(format!("dimension {dim} < 2")));
        }
        if side < 4 || side % 2 != 0 {
            return Err(Error::Lattice(format!("side {side} must be even and >= 4")));
        }
        let n_vertices = side
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Lattice("vertex count overflows".into()))?;
        let mut strides = vec![1usize; dim];
        for j in (0..dim - 1).rev() {
            strides[j] = strides[j + 1] * side;
        }
        Ok(Self {
            dim,
            side,
            strides,
            n_vertices,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.n_vertices
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.n_vertices * self.dim
    }

    #[inline]
    pub fn coord(&self, v: usize, j: usize) -> usize {
        (v / self.strides[j]) % self.side
    }

    pub fn coords(&self, v: usize) -> Vec<usize> {
        (0..self.dim).map(|j| self.coord(v, j)).collect()
    }

    /// Flat index of a coordinate vector; coordinates are reduced mod L.
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| (c % self.side) * s)
            .sum()
    }

    /// Index of a signed integer point, wrapped onto the torus.
    pub fn index_wrapped(&self, point: &[i64]) -> usize {
        let l = self.side as i64;
        point
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| (c.rem_euclid(l) as usize) * s)
            .sum()
    }

    #[inline]
    pub fn neighbor(&self, v: usize, j: usize, forward: bool) -> usize {
        let stride = self.strides[j];
        let c = (v / stride) % self.side;
        let nc = if forward {
            if c + 1 == self.side {
                0
            } else {
                c + 1
            }
        } else if c == 0 {
            self.side - 1
        } else {
            c - 1
        };
        v - c * stride + nc * stride
    }

    #[inline]
    pub fn edge(&self, tail: usize, j: usize) -> usize {
        tail * self.dim + j
    }

    /// `e⁻` of an edge.
    #[inline]
    pub fn edge_tail(&self, e: usize) -> usize {
        e / self.dim
    }

    /// `e⁺` of an edge.
    #[inline]
    pub fn edge_head(&self, e: usize) -> usize {
        self.neighbor(e / self.dim, e % self.dim, true)
    }

    #[inline]
    pub fn edge_direction(&self, e: usize) -> usize {
        e % self.dim
    }

    /// Edge joining `v` to its neighbour in direction `j` (forward or back).
    #[inline]
    pub fn incident_edge(&self, v: usize, j: usize, forward: bool) -> usize {
        if forward {
            self.edge(v, j)
        } else {
            self.edge(self.neighbor(v, j, false), j)
        }
    }

    /// `x + z` on the torus.
    pub fn translate(&self, x: usize, z: usize) -> usize {
        let mut out = 0;
        for (j, &s) in self.strides.iter().enumerate() {
            out += ((self.coord(x, j) + self.coord(z, j)) % self.side) * s;
        }
        out
    }

    /// `−z` on the torus.
    pub fn negate(&self, z: usize) -> usize {
        let mut out = 0;
        for (j, &s) in self.strides.iter().enumerate() {
            out += ((self.side - self.coord(z, j)) % self.side) * s;
        }
        out
    }

    /// ℓ¹ torus distance.
    pub fn distance(&self, x: usize, y: usize) -> usize {
        (0..self.dim)
            .map(|j| {
                let a = self.coord(x, j);
                let b = self.coord(y, j);
                let diff = a.abs_diff(b);
                diff.min(self.side - diff)
            })
            .sum()
    }

    /// Closed graph ball `{y : d(x,y) ≤ ⌊r⌋}`, sorted by vertex index.
    pub fn ball(&self, x: usize, r: f64) -> Result<Vec<usize>> {
        let radius = self.ball_radius(r)?;
        let mut out: Vec<usize> = ball_offsets(self.dim, radius)
            .iter()
            .map(|off| {
                let point: Vec<i64> = off
                    .iter()
                    .enumerate()
                    .map(|(j, &o)| self.coord(x, j) as i64 + o)
                    .collect();
                self.index_wrapped(&point)
            })
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Integer radius of `B(x, r)`, validated against the torus size.
    pub fn ball_radius(&self, r: f64) -> Result<usize> {
        if !(r >= 0.0) || r.is_infinite() {
            return Err(Error::Parameter(format!("ball radius {r}")));
        }
        if r >= self.side as f64 / 2.0 {
            return Err(Error::BallWrapsTorus {
                radius: r,
                side: self.side,
            });
        }
        Ok(r.floor() as usize)
    }

    /// ∇f(e) = f(e⁺) − f(e⁻).
    pub fn grad(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n_vertices);
        let d = self.dim;
        let mut out = vec![0.0; self.num_edges()];
        let fill = |(x, chunk): (usize, &mut [f64])| {
            for (j, slot) in chunk.iter_mut().enumerate() {
                *slot = f[self.neighbor(x, j, true)] - f[x];
            }
        };
        if self.n_vertices >= PAR_THRESHOLD {
            out.par_chunks_mut(d).enumerate().for_each(fill);
        } else {
            out.chunks_mut(d).enumerate().for_each(fill);
        }
        out
    }

    /// ∇*F(x) = Σ_{e⁺=x} F(e) − Σ_{e⁻=x} F(e).
    pub fn div(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.num_edges());
        let mut out = vec![0.0; self.n_vertices];
        self.for_each_vertex(&mut out, |x| {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += field[self.edge(self.neighbor(x, j, false), j)] - field[self.edge(x, j)];
            }
            acc
        });
        out
    }

    /// (𝓛f)(x) = Σ_{y∼x} ω(x,y)(f(y) − f(x)).
    pub fn generator_apply(&self, omega: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        check_positive(omega)?;
        let mut out = vec![0.0; self.n_vertices];
        self.apply_generator_into(omega, f, &mut out);
        Ok(out)
    }

    /// Unchecked generator; weights must already be validated.
    pub(crate) fn apply_generator_into(&self, omega: &[f64], f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(omega.len(), self.num_edges());
        self.for_each_vertex(out, |x| {
            let fx = f[x];
            let mut acc = 0.0;
            for j in 0..self.dim {
                let up = self.neighbor(x, j, true);
                let down = self.neighbor(x, j, false);
                acc += omega[self.edge(x, j)] * (f[up] - fx);
                acc += omega[self.edge(down, j)] * (f[down] - fx);
            }
            acc
        });
    }

    /// 𝓔(f,g) = ⟨∇f, ω∇g⟩_E.
    pub fn dirichlet_form(&self, omega: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
        check_positive(omega)?;
        Ok(self.dirichlet_form_unchecked(omega, f, g))
    }

    pub(crate) fn dirichlet_form_unchecked(&self, omega: &[f64], f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for x in 0..self.n_vertices {
            for j in 0..self.dim {
                let y = self.neighbor(x, j, true);
                acc += omega[self.edge(x, j)] * (f[y] - f[x]) * (g[y] - g[x]);
            }
        }
        acc
    }

    /// ⟨f⟩(e) = ½(f(e⁺) + f(e⁻)).
    pub fn edge_average(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n_vertices);
        (0..self.num_edges())
            .map(|e| 0.5 * (f[self.edge_head(e)] + f[self.edge_tail(e)]))
            .collect()
    }

    /// Vertex measures `μ(x) = Σ ω(x,y)` and `ν(x) = Σ 1/ω(x,y)`, each
    /// replaced by `1 ∨ ·` when `floor` is set.
    pub fn measures_mu_nu(&self, omega: &[f64], floor: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        check_positive(omega)?;
        let mut mu = vec![0.0; self.n_vertices];
        let mut nu = vec![0.0; self.n_vertices];
        for x in 0..self.n_vertices {
            let (m, n) = self.vertex_measures(omega, x);
            mu[x] = if floor { m.max(1.0) } else { m };
            nu[x] = if floor { n.max(1.0) } else { n };
        }
        Ok((mu, nu))
    }

    #[inline]
    pub(crate) fn vertex_measures(&self, omega: &[f64], x: usize) -> (f64, f64) {
        let mut m = 0.0;
        let mut n = 0.0;
        for j in 0..self.dim {
            for forward in [true, false] {
                let w = omega[self.incident_edge(x, j, forward)];
                m += w;
                n += 1.0 / w;
            }
        }
        (m, n)
    }

    /// Edge-local displacement ∇Π^j: +1 on direction-j edges, 0 elsewhere.
    pub fn coordinate_gradient(&self, j: usize) -> Vec<f64> {
        (0..self.num_edges())
            .map(|e| if self.edge_direction(e) == j { 1.0 } else { 0.0 })
            .collect()
    }

    pub(crate) fn for_each_vertex<F>(&self, out: &mut [f64], f: F)
    where
        F: Fn(usize) -> f64 + Sync,
    {
        if out.len() >= PAR_THRESHOLD {
            out.par_iter_mut().enumerate().for_each(|(x, o)| *o = f(x));
        } else {
            out.iter_mut().enumerate().for_each(|(x, o)| *o = f(x));
        }
    }
}

pub(crate) fn check_positive(omega: &[f64]) -> Result<()> {
    match omega.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
        Some(edge) => Err(Error::DegenerateConductance {
            edge,
            value: omega[edge],
        }),
        None => Ok(()),
    }
}

/// All integer offsets `z ∈ ℤ^d` with `Σ|z_i| ≤ radius`.
pub fn ball_offsets(dim: usize, radius: usize) -> Vec<Vec<i64>> {
    fn rec(dim: usize, budget: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for z in -budget..=budget {
            prefix.push(z);
            rec(dim, budget - z.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, radius as i64, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// Space-time cylinder `[t0, t0 + σn²] × B(x0, σn)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeCylinder {
    pub t0: f64,
    pub n: f64,
    pub x0: usize,
    pub sigma: f64,
}

impl SpaceTimeCylinder {
    pub fn new(t0: f64, n: f64, x0: usize, sigma: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Parameter(format!("cylinder scale n = {n}")));
        }
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::Parameter(format!("cylinder fraction sigma = {sigma}")));
        }
        Ok(Self { t0, n, x0, sigma })
    }

    pub fn time_interval(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.sigma * self.n * self.n)
    }

    pub fn radius(&self) -> f64 {
        self.sigma * self.n
    }

    /// The same cylinder at a smaller fraction `σ'`.
    pub fn shrink(&self, sigma: f64) -> Result<Self> {
        Self::new(self.t0, self.n, self.x0, sigma)
    }

    pub fn ball(&self, lattice: &TorusLattice) -> Result<Vec<usize>> {
        lattice.ball(self.x0, self.radius())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lat(d: usize, l: usize) -> TorusLattice {
        TorusLattice::new(d, l).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    #[test]
    fn counts_and_degree() {
        for (d, l) in [(2, 4), (2, 16), (3, 6)] {
            let g = lat(d, l);
            assert_eq!(g.num_vertices(), l.pow(d as u32));
            assert_eq!(g.num_edges(), d * l.pow(d as u32));
            let mut degree = vec![0usize; g.num_vertices()];
            for e in 0..g.num_edges() {
                degree[g.edge_head(e)] += 1;
                degree[g.edge_tail(e)] += 1;
            }
            assert!(degree.iter().all(|&k| k == 2 * d));
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(TorusLattice::new(1, 8).is_err());
        assert!(TorusLattice::new(2, 5).is_err());
        assert!(TorusLattice::new(2, 2).is_err());
    }

    #[test]
    fn distance_is_l1_torus_metric() {
        let g = lat(2, 16);
        let x = g.index(&[1, 15]);
        let y = g.index(&[14, 2]);
        assert_eq!(g.distance(x, y), 3 + 3);
        assert_eq!(g.distance(x, x), 0);
    }

    #[test]
    fn ball_sizes() {
        let g = lat(2, 16);
        let o = g.index(&[0, 0]);
        assert_eq!(g.ball(o, 0.0).unwrap(), vec![o]);
        assert_eq!(g.ball(o, 1.0).unwrap().len(), 5);
        // brute-force enumeration of the l1 ball
        for r in 0..8usize {
            let brute = (0..g.num_vertices()).filter(|&y| g.distance(o, y) <= r).count();
            assert_eq!(g.ball(o, r as f64 + 0.5).unwrap().len(), brute);
            assert_eq!(brute, 2 * r * r + 2 * r + 1);
        }
        assert_eq!(g.ball(g.index(&[5, 9]), 3.0).unwrap().len(), 25);
        assert!(matches!(g.ball(o, 8.0), Err(Error::BallWrapsTorus { .. })));
    }

    #[test]
    fn grad_examples() {
        let g = lat(2, 8);
        assert!(g.grad(&vec![3.5; g.num_vertices()]).iter().all(|&v| v == 0.0));
        let x0 = g.index(&[3, 4]);
        let mut ind = vec![0.0; g.num_vertices()];
        ind[x0] = 1.0;
        let gr = g.grad(&ind);
        for e in 0..g.num_edges() {
            let expected = if g.edge_head(e) == x0 {
                1.0
            } else if g.edge_tail(e) == x0 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(gr[e], expected);
        }
        assert_eq!(g.coordinate_gradient(0).iter().filter(|&&v| v == 1.0).count(), 64);
    }

    #[test]
    fn div_of_indicator_gradient() {
        let g = lat(2, 8);
        let x0 = g.index(&[2, 2]);
        let mut ind = vec![0.0; g.num_vertices()];
        ind[x0] = 1.0;
        let dv = g.div(&g.grad(&ind));
        assert_eq!(dv[x0], 4.0);
        assert!(g.div(&vec![0.0; g.num_edges()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_examples() {
        let g = lat(2, 8);
        let ones = vec![1.0; g.num_edges()];
        let x0 = g.index(&[1, 6]);
        let mut ind = vec![0.0; g.num_vertices()];
        ind[x0] = 1.0;
        let lf = g.generator_apply(&ones, &ind).unwrap();
        assert_eq!(lf[x0], -4.0);
        let lc = g.generator_apply(&ones, &vec![2.0; g.num_vertices()]).unwrap();
        assert!(lc.iter().all(|&v| v == 0.0));
        let mut bad = ones.clone();
        bad[7] = 0.0;
        assert!(matches!(
            g.generator_apply(&bad, &ind),
            Err(Error::DegenerateConductance { edge: 7, .. })
        ));
    }

    #[test]
    fn dirichlet_form_examples() {
        let g = lat(2, 8);
        let ones = vec![1.0; g.num_edges()];
        let x0 = g.index(&[4, 4]);
        let mut ind = vec![0.0; g.num_vertices()];
        ind[x0] = 1.0;
        assert_eq!(g.dirichlet_form(&ones, &ind, &ind).unwrap(), 4.0);
        let c = vec![1.0; g.num_vertices()];
        assert_eq!(g.dirichlet_form(&ones, &c, &ind).unwrap(), 0.0);
    }

    #[test]
    fn measures_examples() {
        let g = lat(2, 8);
        let (mu, nu) = g.measures_mu_nu(&vec![1.0; g.num_edges()], false).unwrap();
        assert!(mu.iter().chain(&nu).all(|&v| v == 4.0));
        for floor in [false, true] {
            let (mu, nu) = g.measures_mu_nu(&vec![0.5; g.num_edges()], floor).unwrap();
            assert!(mu.iter().all(|&v| v == 2.0));
            assert!(nu.iter().all(|&v| v == 8.0));
        }
        let (mu, nu) = g.measures_mu_nu(&vec![0.125; g.num_edges()], true).unwrap();
        assert!(mu.iter().all(|&v| v == 1.0));
        assert!(nu.iter().all(|&v| v == 32.0));
        let (mu, _) = g.measures_mu_nu(&vec![0.125; g.num_edges()], false).unwrap();
        assert!(mu.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn edge_average_and_product_rule() {
        let g = lat(2, 6);
        assert!(g.edge_average(&vec![1.0; g.num_vertices()]).iter().all(|&v| v == 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let f = random_vec(&mut rng, g.num_vertices(), -1.0, 1.0);
            let h = random_vec(&mut rng, g.num_vertices(), -1.0, 1.0);
            let fh: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
            let lhs = g.grad(&fh);
            let (af, ah) = (g.edge_average(&f), g.edge_average(&h));
            let (gf, gh) = (g.grad(&f), g.grad(&h));
            for e in 0..g.num_edges() {
                let rhs = af[e] * gh[e] + ah[e] * gf[e];
                assert!((lhs[e] - rhs).abs() <= 1e-15);
            }
            // <eta>^2 <= 2 <eta^2> for eta in [0,1]
            let eta = random_vec(&mut rng, g.num_vertices(), 0.0, 1.0);
            let eta2: Vec<f64> = eta.iter().map(|v| v * v).collect();
            let (a, a2) = (g.edge_average(&eta), g.edge_average(&eta2));
            assert!(a.iter().zip(&a2).all(|(x, y)| x * x <= 2.0 * y));
        }
    }

    #[test]
    fn translate_and_negate() {
        let g = lat(3, 6);
        let x = g.index(&[1, 5, 3]);
        let z = g.index(&[4, 2, 5]);
        assert_eq!(g.coords(g.translate(x, z)), vec![5, 1, 2]);
        assert_eq!(g.translate(z, g.negate(z)), 0);
    }
}
