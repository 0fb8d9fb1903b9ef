//! Matrix-free Krylov solvers with reductions whose summation order does not
//! depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

/// `Σ a_i b_i` summed in fixed chunks, then sequentially over chunks.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn sum(a: &[f64]) -> f64 {
    if a.len() <= CHUNK {
        return a.iter().sum();
    }
    let partial: Vec<f64> = a.par_chunks(CHUNK).map(|x| x.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// Neumaier compensated accumulator; exact whenever the true sum of the
/// added terms is representable.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += s·x`.
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += s * xi);
}

/// Removes the mean.
pub fn project_mean_zero(v: &mut [f64]) {
    let m = sum(v) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for a symmetric positive semidefinite operator,
/// restricted to the mean-zero subspace when `mean_zero` is set. Stops when
/// the max-abs residual `‖b − Ax‖_∞ ≤ tol`.
pub fn conjugate_gradient<A>(apply: A, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize, mean_zero: bool) -> Result<SolveStats>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut ax = vec![0.0; n];
    let residual_of = |x: &[f64], ax: &mut Vec<f64>| {
        apply(x, ax);
        let mut r: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
        if mean_zero {
            project_mean_zero(&mut r);
        }
        r
    };
    if mean_zero {
        project_mean_zero(x);
    }
    let mut r = residual_of(x, &mut ax);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if max_abs(&r) <= tol {
            // confirm against the true residual
            let true_r = residual_of(x, &mut ax);
            let res = max_abs(&true_r);
            if res <= tol {
                return Ok(SolveStats { iterations: it, residual: res });
            }
            r = true_r;
            rr = dot(&r, &r);
            p.clone_from(&r);
        }
        apply(&p, &mut ap);
        if mean_zero {
            project_mean_zero(&mut ap);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        axpy(a, &p, x);
        axpy(-a, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    let res = max_abs(&residual_of(x, &mut ax));
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, residual: res });
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

/// Restarted GMRES with classical Gram-Schmidt applied twice.
///
/// Each cycle runs until the estimated 2-norm residual falls below
/// `inner_tol` or `restart` steps are taken; after each cycle `accept(x)`
/// reports whether the caller's true criterion holds, together with the
/// residual value to report.
pub fn gmres<A, C>(apply: A, b: &[f64], x: &mut [f64], restart: usize, max_iter: usize, inner_tol: f64, mean_zero: bool, accept: C) -> Result<SolveStats>
where
    A: Fn(&[f64], &mut [f64]),
    C: Fn(&[f64]) -> (bool, f64),
{
    let n = b.len();
    let mut total = 0;
    let mut w = vec![0.0; n];
    let mut last_res = f64::INFINITY;
    loop {
        let (ok, res) = accept(x);
        last_res = if res.is_finite() { res } else { last_res };
        if ok {
            return Ok(SolveStats { iterations: total, residual: res });
        }
        if total >= max_iter {
            return Err(Error::NoConvergence { iterations: total, residual: last_res });
        }
        apply(x, &mut w);
        let mut r: Vec<f64> = b.iter().zip(&w).map(|(bi, wi)| bi - wi).collect();
        if mean_zero {
            project_mean_zero(&mut r);
        }
        let beta = norm2(&r);
        if beta == 0.0 {
            return Ok(SolveStats { iterations: total, residual: res });
        }
        let m = restart.min(max_iter - total).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..m {
            apply(&basis[j], &mut w);
            if mean_zero {
                project_mean_zero(&mut w);
            }
            for _pass in 0..2 {
                let coeffs: Vec<f64> = basis.iter().map(|v| dot(v, &w)).collect();
                for (i, c) in coeffs.iter().enumerate() {
                    h[i][j] += c;
                    axpy(-c, &basis[i], &mut w);
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            if g[j + 1].abs() <= inner_tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in i + 1..steps {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, &basis[i], x);
        }
        if mean_zero {
            project_mean_zero(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_sum_matches_sequential_order() {
        let v: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        let a = sum(&v);
        let b = sum(&v);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - v.iter().sum::<f64>()).abs() < 1e-8);
    }

    #[test]
    fn cg_and_gmres_solve_small_systems() {
        // 1-d periodic Laplacian, singular on constants
        let n = 50;
        let lap = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = 2.0 * x[i] - x[(i + 1) % n] - x[(i + n - 1) % n];
            }
        };
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        project_mean_zero(&mut b);
        let mut x = vec![0.0; n];
        let st = conjugate_gradient(lap, &b, &mut x, 1e-12, 1000, true).unwrap();
        assert!(st.residual <= 1e-12);
        let mut y = vec![0.0; n];
        // nonsymmetric perturbation
        let op = |x: &[f64], y: &mut [f64]| {
            lap(x, y);
            for i in 0..n {
                y[i] += 0.3 * (x[(i + 1) % n] - x[(i + n - 1) % n]);
            }
        };
        let accept = |x: &[f64]| {
            let mut w = vec![0.0; n];
            op(x, &mut w);
            let r: Vec<f64> = b.iter().zip(&w).map(|(a, c)| a - c).collect();
            let m = max_abs(&r);
            (m <= 1e-11, m)
        };
        let st = gmres(op, &b, &mut y, 20, 2000, 1e-13, true, accept).unwrap();
        assert!(st.residual <= 1e-11);
    }
}
