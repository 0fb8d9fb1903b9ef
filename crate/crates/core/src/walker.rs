//! Exact simulation of the variable-speed random walk among time-dependent
//! conductances, of its slowed-down companion and of the time change that
//! relates them.
//!
//! With ω piecewise constant in time the compensator `∫ μ_u(X) du` is
//! piecewise linear, so the jump times are obtained by inverting it exactly
//! against standard exponential variables, one grid interval at a time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{exp1, ConductanceField};
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::rng::walker_rng;

/// One jump `from → to` across the edge in direction `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub axis: usize,
    pub forward: bool,
    /// Grid interval of ω in force at the jump.
    pub interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// `J_0 = s < J_1 < …`; `positions[k]` is held on `[J_k, J_{k+1})`.
    pub jump_times: Vec<f64>,
    pub positions: Vec<usize>,
    pub end_time: f64,
}

impl TrajectorySample {
    pub fn start_time(&self) -> f64 {
        self.jump_times[0]
    }

    pub fn start(&self) -> usize {
        self.positions[0]
    }

    pub fn num_jumps(&self) -> usize {
        self.positions.len() - 1
    }

    /// Index `k` with `J_k ≤ t < J_{k+1}`.
    fn segment(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&j| j <= t).saturating_sub(1)
    }

    pub fn position_at(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.positions[self.segment(t)])
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.start_time() || t > self.end_time {
            return Err(Error::OutsideSupport {
                time: t,
                start: self.start_time(),
                end: self.end_time,
            });
        }
        Ok(())
    }

    /// Positions lifted to `ℤ^d` by accumulating the unit displacements.
    pub fn lift(&self, lattice: &TorusLattice) -> Vec<Vec<i64>> {
        let mut cur: Vec<i64> = lattice.coords(self.start()).iter().map(|&c| c as i64).collect();
        let mut out = Vec::with_capacity(self.positions.len());
        out.push(cur.clone());
        for w in self.positions.windows(2) {
            let (axis, step) = unit_step(lattice, w[0], w[1]);
            cur[axis] += step;
            out.push(cur.clone());
        }
        out
    }

    /// Jump sequence with axis and direction, as seen by a jump callback.
    pub fn jumps(&self, lattice: &TorusLattice) -> Vec<(f64, usize, usize, usize, bool)> {
        (1..self.positions.len())
            .map(|k| {
                let (axis, step) = unit_step(lattice, self.positions[k - 1], self.positions[k]);
                (self.jump_times[k], self.positions[k - 1], self.positions[k], axis, step > 0)
            })
            .collect()
    }
}

/// Axis and sign of the unit move `a → b`; panics if not nearest neighbours.
pub fn unit_step(lattice: &TorusLattice, a: usize, b: usize) -> (usize, i64) {
    for j in 0..lattice.dim() {
        if lattice.neighbor(a, j, true) == b {
            return (j, 1);
        }
        if lattice.neighbor(a, j, false) == b {
            return (j, -1);
        }
    }
    panic!("{a} and {b} are not nearest neighbours");
}

fn check_window(omega: &ConductanceField, s: f64, t_end: f64) -> Result<()> {
    if !(t_end >= s) || s < omega.t_start() || t_end > omega.t_end() || !s.is_finite() || !t_end.is_finite() {
        return Err(Error::OutsideSupport {
            time: if s < omega.t_start() { s } else { t_end },
            start: omega.t_start(),
            end: omega.t_end(),
        });
    }
    Ok(())
}

/// End of the stretch of constant rates starting at time `t`.
#[inline]
fn stretch_end(omega: &ConductanceField, raw: i64, static_field: bool) -> f64 {
    if static_field {
        f64::INFINITY
    } else {
        omega.interval_start(raw + 1)
    }
}

/// Draws a neighbour of `x` with probability `ω(x,y)/μ(x)`.
#[inline]
fn choose_target<R: Rng + ?Sized>(lattice: &TorusLattice, w: &[f64], x: usize, mu: f64, rng: &mut R) -> (usize, usize, bool) {
    let target = rng.random::<f64>() * mu;
    let mut acc = 0.0;
    let d = lattice.dim();
    let mut last = (0, true);
    for j in 0..d {
        for forward in [true, false] {
            acc += w[lattice.incident_edge(x, j, forward)];
            last = (j, forward);
            if target < acc {
                return (lattice.neighbor(x, j, forward), j, forward);
            }
        }
    }
    (lattice.neighbor(x, last.0, last.1), last.0, last.1)
}

/// Runs the walk from `(s, x)` up to `t_end`, reporting each jump; returns
/// the final position.
pub fn run_vsrw<R, F>(omega: &ConductanceField, s: f64, x: usize, t_end: f64, rng: &mut R, mut on_jump: F) -> Result<usize>
where
    R: Rng + ?Sized,
    F: FnMut(&Jump),
{
    check_window(omega, s, t_end)?;
    let lattice = omega.lattice();
    let static_field = omega.is_time_constant();
    let mut pos = x;
    let mut t = s;
    let mut raw = omega.raw_interval(t);
    let mut budget = exp1(rng);
    loop {
        let k = omega.wrap(raw).expect("inside support");
        let w = omega.weights(k);
        let mu = lattice.vertex_measures(w, pos).0;
        let end = stretch_end(omega, raw, static_field).min(t_end);
        let capacity = mu * (end - t);
        if budget < capacity {
            let jt = t + budget / mu;
            if jt >= end {
                // rounding at the interval edge: move on
                t = end;
                budget = 0.0;
            } else {
                let (to, axis, forward) = choose_target(lattice, w, pos, mu, rng);
                on_jump(&Jump { time: jt, from: pos, to, axis, forward, interval: k });
                pos = to;
                t = jt;
                budget = exp1(rng);
                continue;
            }
        } else {
            budget -= capacity;
            t = end;
        }
        if t >= t_end {
            return Ok(pos);
        }
        raw += 1;
    }
}

/// Exact path of the variable-speed walk started at `(s, x)` on `[s, t_end]`.
pub fn simulate_vsrw<R: Rng + ?Sized>(omega: &ConductanceField, s: f64, x: usize, t_end: f64, rng: &mut R) -> Result<TrajectorySample> {
    let mut jump_times = vec![s];
    let mut positions = vec![x];
    run_vsrw(omega, s, x, t_end, rng, |j| {
        jump_times.push(j.time);
        positions.push(j.to);
    })?;
    Ok(TrajectorySample { jump_times, positions, end_time: t_end })
}

/// Path of the slowed-down process `Y` together with its clock `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowedTrajectory {
    /// Start time `s` of the environment clock.
    pub start_time: f64,
    /// `Y` in its own time, starting at 0.
    pub path: TrajectorySample,
    /// Knots `(u, T_u)` of the piecewise-linear clock, increasing in `u`.
    pub clock: Vec<(f64, f64)>,
}

impl SlowedTrajectory {
    /// `T_u`, linear between knots.
    pub fn clock_at(&self, u: f64) -> f64 {
        let i = self.clock.partition_point(|&(a, _)| a <= u);
        if i == 0 {
            return self.clock[0].1;
        }
        if i == self.clock.len() {
            return self.clock[i - 1].1;
        }
        let (u0, t0) = self.clock[i - 1];
        let (u1, t1) = self.clock[i];
        t0 + (t1 - t0) * (u - u0) / (u1 - u0)
    }

    pub fn clock_end(&self) -> f64 {
        self.clock.last().map(|&(_, t)| t).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
enum SlowedStop {
    Own(f64),
    Clock(f64),
}

fn run_slowed<R: Rng + ?Sized>(omega: &ConductanceField, s: f64, x: usize, stop: SlowedStop, rng: &mut R) -> Result<SlowedTrajectory> {
    let clock_limit = match stop {
        SlowedStop::Own(u) => u,
        SlowedStop::Clock(c) => c,
    };
    check_window(omega, s, s + clock_limit)?;
    let lattice = omega.lattice();
    let static_field = omega.is_time_constant();
    let mut pos = x;
    // environment time τ = s + T_u, own time u
    let mut tau = s;
    let mut u = 0.0;
    let mut raw = omega.raw_interval(tau);
    let mut jump_times = vec![0.0];
    let mut positions = vec![x];
    let mut clock = vec![(0.0, 0.0)];
    let mut budget = exp1(rng);
    loop {
        let k = omega.wrap(raw).expect("inside support");
        let w = omega.weights(k);
        let mu = lattice.vertex_measures(w, pos).0;
        let m = mu.max(1.0);
        // Y's total rate is μ/m and T advances at 1/m, so in environment
        // time the compensator grows at rate μ, as for X.
        let mut end = stretch_end(omega, raw, static_field);
        let mut stop_here = false;
        let limit = match stop {
            SlowedStop::Own(u_end) => tau + (u_end - u) / m,
            SlowedStop::Clock(c) => s + c,
        };
        if limit <= end {
            end = limit;
            stop_here = true;
        }
        let capacity = mu * (end - tau);
        if budget < capacity && tau + budget / mu < end {
            let dtau = budget / mu;
            tau += dtau;
            u += dtau * m;
            let (to, _, _) = choose_target(lattice, w, pos, mu, rng);
            jump_times.push(u);
            positions.push(to);
            clock.push((u, tau - s));
            pos = to;
            budget = exp1(rng);
            continue;
        }
        budget = (budget - capacity).max(0.0);
        match stop {
            SlowedStop::Own(u_end) if stop_here => u = u_end,
            _ => u += (end - tau) * m,
        }
        tau = end;
        clock.push((u, tau - s));
        if stop_here {
            break;
        }
        raw += 1;
    }
    Ok(SlowedTrajectory {
        start_time: s,
        path: TrajectorySample { jump_times, positions, end_time: u },
        clock,
    })
}

/// `Y` from `(s, x)` for own time `[0, u_end]`.
pub fn simulate_slowed<R: Rng + ?Sized>(omega: &ConductanceField, s: f64, x: usize, u_end: f64, rng: &mut R) -> Result<SlowedTrajectory> {
    run_slowed(omega, s, x, SlowedStop::Own(u_end), rng)
}

/// `Y` from `(s, x)` until its clock reaches `clock_end`.
pub fn simulate_slowed_to_clock<R: Rng + ?Sized>(omega: &ConductanceField, s: f64, x: usize, clock_end: f64, rng: &mut R) -> Result<SlowedTrajectory> {
    run_slowed(omega, s, x, SlowedStop::Clock(clock_end), rng)
}

/// `t ↦ Y_{T^{-1}(t − s)}` as a trajectory in environment time.
pub fn time_change_compose(slowed: &SlowedTrajectory) -> TrajectorySample {
    let s = slowed.start_time;
    TrajectorySample {
        jump_times: slowed.path.jump_times.iter().map(|&u| s + slowed.clock_at(u)).collect(),
        positions: slowed.path.positions.clone(),
        end_time: s + slowed.clock_end(),
    }
}

/// `t ↦ X_{s + n²t}/n` on the lift of the trajectory, `t ∈ [0, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledPath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub t_max: f64,
}

impl RescaledPath {
    pub fn at(&self, t: f64) -> &[f64] {
        let i = self.times.partition_point(|&a| a <= t).saturating_sub(1);
        &self.points[i]
    }
}

pub fn rescale(traj: &TrajectorySample, lattice: &TorusLattice, n: f64, t_max: f64) -> Result<RescaledPath> {
    if !(n > 0.0) {
        return Err(Error::Parameter(format!("scale {n}")));
    }
    let s = traj.start_time();
    let needed = s + n * n * t_max;
    if traj.end_time < needed * (1.0 - 1e-12) {
        return Err(Error::OutsideSupport { time: needed, start: s, end: traj.end_time });
    }
    let lift = traj.lift(lattice);
    let mut times = Vec::new();
    let mut points = Vec::new();
    for (k, &j) in traj.jump_times.iter().enumerate() {
        let t = (j - s) / (n * n);
        if t > t_max {
            break;
        }
        times.push(t);
        points.push(lift[k].iter().map(|&c| c as f64 / n).collect());
    }
    Ok(RescaledPath { times, points, t_max })
}

/// Lifted displacements `X_{s+t_i} − X_s` at the given offsets, simulating
/// without storing the path.
pub fn displacements_at<R: Rng + ?Sized>(omega: &ConductanceField, s: f64, x: usize, offsets: &[f64], rng: &mut R) -> Result<Vec<Vec<i64>>> {
    let d = omega.lattice().dim();
    let t_end = s + offsets.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![vec![0i64; d]; offsets.len()];
    let mut cur = vec![0i64; d];
    let mut idx: Vec<usize> = (0..offsets.len()).collect();
    idx.sort_by(|&a, &b| offsets[a].total_cmp(&offsets[b]));
    let mut next = 0;
    run_vsrw(omega, s, x, t_end, rng, |j| {
        while next < idx.len() && s + offsets[idx[next]] < j.time {
            out[idx[next]].clone_from(&cur);
            next += 1;
        }
        cur[j.axis] += if j.forward { 1 } else { -1 };
    })?;
    while next < idx.len() {
        out[idx[next]].clone_from(&cur);
        next += 1;
    }
    Ok(out)
}

/// Runs `f(id, rng)` for walkers `0..count` in parallel, collecting in id order.
pub fn ensemble<T, F>(count: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut crate::rng::StreamRng) -> T + Sync,
{
    (0..count as u64)
        .into_par_iter()
        .map(|id| f(id, &mut walker_rng(seed, id)))
        .collect()
}
