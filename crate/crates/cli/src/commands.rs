//! One function per subcommand: typed config in, [`Outcome`] out.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dynrcm::corrector::{covariance_estimate, curl_defect, solve_corrector, sublinearity_profile, SublinearityOptions};
use dynrcm::environment::{sample_environment, EnvironmentModel};
use dynrcm::io::{save_corrector, write_fields, write_fields_csv, write_trajectory_csv};
use dynrcm::moser::{appendix_inequality_suite, corpus_trend, interpolation_suite, InequalityKind, MoserParams, TrendOptions};
use dynrcm::qfclt::{run_qfclt, ExperimentConfig};
use dynrcm::rng::{mix, walker_rng};
use dynrcm::walker::{ensemble, run_vsrw, simulate_vsrw};
use dynrcm::{ConductanceField, SpaceTimeField, TorusLattice};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// What a command hands back for the report and manifest.
pub struct Outcome {
    pub pass: bool,
    pub result: Value,
    pub seeds: Vec<u64>,
    /// Files written besides the report and manifest, relative to the
    /// output directory.
    pub artifacts: Vec<String>,
    pub budget: Value,
}

fn write_csv(out: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_path(out.join(name)).with_context(|| format!("creating {name}"))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

/// Environment block shared by the sampling, walking and solving commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSection {
    pub model: EnvironmentModel,
    pub dim: usize,
    /// Torus side `L`.
    pub side: usize,
    pub dt: f64,
    pub horizon: f64,
    pub periodic: bool,
}

impl EnvSection {
    fn lattice(&self) -> Result<TorusLattice> {
        ensure!(self.dim >= 2, "key `dim` must be at least 2, got {}", self.dim);
        ensure!(self.side >= 4 && self.side % 2 == 0, "key `side` must be even and at least 4, got {}", self.side);
        ensure!(self.dt > 0.0 && self.dt.is_finite(), "key `dt` must be positive, got {}", self.dt);
        ensure!(self.horizon > 0.0 && self.horizon.is_finite(), "key `horizon` must be positive, got {}", self.horizon);
        Ok(TorusLattice::new(self.dim, self.side)?)
    }

    fn sample(&self, seed: u64) -> Result<ConductanceField> {
        let lat = self.lattice()?;
        self.model.validate().context("key `model`")?;
        Ok(sample_environment(&self.model, &lat, self.horizon, self.dt, self.periodic, seed)?)
    }
}

/// Component `j` holds `ω(x, x + e_j)` on each grid interval.
fn conductance_components(omega: &ConductanceField) -> Vec<SpaceTimeField> {
    let lat = omega.lattice();
    (0..lat.dim())
        .map(|j| {
            SpaceTimeField::from_fn(lat.clone(), omega.t_start(), omega.dt(), omega.intervals(), omega.is_periodic(), |k, x| {
                omega.weights(k)[lat.edge(x, j)]
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Binary,
    Csv,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnvSampleConfig {
    pub seed: u64,
    pub format: FieldFormat,
    pub env: EnvSection,
}

pub fn env_sample(c: &EnvSampleConfig, out: &Path) -> Result<Outcome> {
    let omega = c.env.sample(c.seed)?;
    let comps = conductance_components(&omega);
    let name = match c.format {
        FieldFormat::Binary => {
            write_fields(File::create(out.join("field.bin"))?, &comps)?;
            "field.bin"
        }
        FieldFormat::Csv => {
            write_fields_csv(File::create(out.join("field.csv"))?, &comps)?;
            "field.csv"
        }
    };
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for k in 0..omega.intervals() {
        for &v in omega.weights(k) {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
    }
    let count = (omega.intervals() * omega.lattice().num_edges()) as f64;
    Ok(Outcome {
        pass: true,
        result: json!({
            "intervals": omega.intervals(),
            "distinct_slabs": omega.num_slabs(),
            "edges": omega.lattice().num_edges(),
            "time_constant": omega.is_time_constant(),
            "conductance_min": min,
            "conductance_max": max,
            "conductance_mean": sum / count,
            "mu_mean": omega.mean_mu(),
            "mu_max": omega.max_mu(),
        }),
        seeds: vec![c.seed],
        artifacts: vec![name.to_string()],
        budget: json!({}),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WalkConfig {
    pub seed: u64,
    pub env: EnvSection,
    pub walkers: usize,
    /// Starting vertex as torus coordinates.
    pub start: Vec<usize>,
    pub t_start: f64,
    pub t_end: f64,
    /// Trajectories written as CSV, the first ones of the ensemble.
    pub save_paths: usize,
}

pub fn walk_simulate(c: &WalkConfig, out: &Path) -> Result<Outcome> {
    let omega = c.env.sample(c.seed)?;
    let lat = omega.lattice();
    ensure!(c.walkers > 0, "key `walkers` must be positive");
    ensure!(
        c.start.len() == lat.dim() && c.start.iter().all(|&s| s < lat.side()),
        "key `start` must hold {} coordinates below {}",
        lat.dim(),
        lat.side()
    );
    ensure!(c.t_end > c.t_start, "key `t_end` must exceed `t_start`");
    let x = lat.index(&c.start);
    let walk_seed = mix(c.seed, &[1]);
    let d = lat.dim();
    let runs: Vec<(u64, Vec<i64>)> = ensemble(c.walkers, walk_seed, |_, rng| {
        let mut jumps = 0u64;
        let mut disp = vec![0i64; d];
        run_vsrw(&omega, c.t_start, x, c.t_end, rng, |j| {
            jumps += 1;
            disp[j.axis] += if j.forward { 1 } else { -1 };
        })
        .map(|_| (jumps, disp))
    })
    .into_iter()
    .collect::<dynrcm::Result<_>>()?;
    let m = c.walkers as f64;
    let mean_jumps = runs.iter().map(|r| r.0 as f64).sum::<f64>() / m;
    let mean_disp: Vec<f64> = (0..d).map(|i| runs.iter().map(|r| r.1[i] as f64).sum::<f64>() / m).collect();
    let msd = runs.iter().map(|r| r.1.iter().map(|&v| (v * v) as f64).sum::<f64>()).sum::<f64>() / m;
    let mut artifacts = Vec::new();
    for id in 0..c.save_paths.min(c.walkers) {
        let path = simulate_vsrw(&omega, c.t_start, x, c.t_end, &mut walker_rng(walk_seed, id as u64))?;
        let name = format!("path_{id:04}.csv");
        write_trajectory_csv(File::create(out.join(&name))?, &path, lat)?;
        artifacts.push(name);
    }
    Ok(Outcome {
        pass: true,
        result: json!({
            "walkers": c.walkers,
            "duration": c.t_end - c.t_start,
            "mean_jumps": mean_jumps,
            "mean_displacement": mean_disp,
            "mean_square_displacement": msd,
            "msd_per_time": msd / (c.t_end - c.t_start),
        }),
        seeds: vec![c.seed, walk_seed],
        artifacts,
        budget: json!({ "expected_jumps": mean_jumps * m }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub seed: u64,
    pub tol: f64,
    pub env: EnvSection,
}

pub fn corrector_solve(c: &CorrectorConfig, out: &Path) -> Result<Outcome> {
    ensure!(c.tol > 0.0, "key `tol` must be positive");
    let omega = c.env.sample(c.seed)?;
    ensure!(
        omega.is_time_constant() || omega.is_periodic(),
        "key `env.periodic` must be true for a time-dependent model"
    );
    let sol = solve_corrector(&omega, c.tol)?;
    save_corrector(&out.join("corrector"), &sol)?;
    let cov = covariance_estimate(&sol, &omega)?;
    Ok(Outcome {
        pass: sol.meta.residual <= c.tol,
        result: json!({
            "meta": sol.meta,
            "max_abs": sol.max_abs(),
            "curl_defect": curl_defect(&sol),
            "covariance": cov,
        }),
        seeds: vec![c.seed],
        artifacts: vec!["corrector.bin".into(), "corrector.json".into()],
        budget: json!({ "tol": c.tol, "iterations": sol.meta.iterations }),
    })
}

fn seed_list(seed: u64, replicates: usize) -> Result<Vec<u64>> {
    ensure!(replicates > 0, "key `replicates` must be positive");
    Ok((0..replicates as u64).map(|i| seed + i).collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SublinearityConfig {
    pub seed: u64,
    pub replicates: usize,
    pub model: EnvironmentModel,
    pub dim: usize,
    pub n_list: Vec<usize>,
    pub dt: f64,
    pub period_intervals: usize,
    pub tol: f64,
    pub max_cells: usize,
}

pub fn corrector_sublinearity(c: &SublinearityConfig, out: &Path) -> Result<Outcome> {
    let seeds = seed_list(c.seed, c.replicates)?;
    ensure!(!c.n_list.is_empty(), "key `n_list` must not be empty");
    let opts = SublinearityOptions {
        dt: c.dt,
        period_intervals: c.period_intervals,
        tol: c.tol,
        max_cells: c.max_cells,
    };
    let rows = sublinearity_profile(&c.model, c.dim, &c.n_list, &seeds, &opts)?;
    let mut means = Vec::new();
    for &n in &c.n_list {
        let at: Vec<_> = rows.iter().filter(|r| r.n == n as f64 && !r.skipped).collect();
        let k = at.len() as f64;
        let max_mean = at.iter().map(|r| r.max_stat).sum::<f64>() / k;
        let l1_mean = at.iter().map(|r| r.l1_stat).sum::<f64>() / k;
        means.push(json!({ "n": n, "runs": at.len(), "max_stat": max_mean, "l1_stat": l1_mean }));
    }
    let series = |key: &str| means.iter().map(|m| m[key].as_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let decreasing = |v: &[f64]| v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing(&series("max_stat")) && decreasing(&series("l1_stat")) && rows.iter().all(|r| !r.skipped);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), r.seed.to_string(), r.side.to_string(), r.max_stat.to_string(), r.l1_stat.to_string(), r.residual.to_string(), r.skipped.to_string()])
        .collect();
    let csv = write_csv(out, "sublinearity.csv", &["n", "seed", "side", "max_stat", "l1_stat", "residual", "skipped"], &table)?;
    Ok(Outcome {
        pass,
        result: json!({ "rows": rows, "means": means }),
        seeds,
        artifacts: vec![csv],
        budget: json!({ "tol": c.tol, "max_cells": c.max_cells }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrendConfig {
    pub seed: u64,
    pub replicates: usize,
    pub model: EnvironmentModel,
    pub dim: usize,
    pub n_list: Vec<usize>,
    pub corpus_size: usize,
    pub dt: f64,
    pub period_intervals: usize,
    pub level: f64,
    pub alpha_norms: Vec<f64>,
    pub params: MoserParams,
}

pub fn verify_trend(kind: InequalityKind, c: &TrendConfig, out: &Path) -> Result<Outcome> {
    let seeds = seed_list(c.seed, c.replicates)?;
    ensure!(c.level > 0.0 && c.level < 1.0, "key `level` must lie in (0, 1)");
    c.params.validate().context("key `params`")?;
    let opts = TrendOptions {
        n_list: c.n_list.clone(),
        seeds: seeds.clone(),
        corpus_size: c.corpus_size,
        dt: c.dt,
        period_intervals: c.period_intervals,
        params: c.params,
        alpha_norms: c.alpha_norms.clone(),
        level: c.level,
    };
    let report = corpus_trend(kind, &c.model, c.dim, &opts)?;
    let mut table = Vec::new();
    for s in &report.series {
        for &(n, seed, stat) in &s.points {
            table.push(vec![s.label.clone(), n.to_string(), seed.to_string(), stat.to_string()]);
        }
    }
    let name = format!("{}.csv", serde_json::to_value(kind)?.as_str().unwrap_or("trend"));
    let csv = write_csv(out, &name, &["series", "n", "seed", "statistic"], &table)?;
    Ok(Outcome {
        pass: report.passes(),
        result: serde_json::to_value(&report)?,
        seeds,
        artifacts: vec![csv],
        budget: json!({ "corpus_size": c.corpus_size }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    pub trials: u64,
}

pub fn verify_interp(c: &SuiteConfig) -> Result<Outcome> {
    ensure!(c.trials > 0, "key `trials` must be positive");
    let suite = interpolation_suite(c.trials, c.seed)?;
    Ok(Outcome {
        pass: suite.passes(),
        result: serde_json::to_value(&suite)?,
        seeds: vec![c.seed],
        artifacts: vec![],
        budget: json!({ "trials": c.trials }),
    })
}

pub fn verify_appendix(c: &SuiteConfig) -> Result<Outcome> {
    ensure!(c.trials > 0, "key `trials` must be positive");
    let report = appendix_inequality_suite(c.trials, c.seed);
    Ok(Outcome {
        pass: report.passes(),
        result: serde_json::to_value(&report)?,
        seeds: vec![c.seed],
        artifacts: vec![],
        budget: json!({ "trials": c.trials }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QfcltConfig {
    pub seed: u64,
    pub model: EnvironmentModel,
    pub dim: usize,
    pub side: usize,
    pub dt: f64,
    pub intervals: usize,
    pub periodic: bool,
    pub n_list: Vec<usize>,
    pub walkers: usize,
    pub horizon: f64,
    pub level: f64,
    pub permutations: usize,
    pub energy_samples: usize,
    pub control_paths: usize,
    pub covariance_tolerance: f64,
    pub jump_budget: f64,
}

pub fn qfclt_run(c: &QfcltConfig, out: &Path) -> Result<Outcome> {
    let exp = ExperimentConfig {
        model: c.model,
        env_seed: c.seed,
        walk_seed: mix(c.seed, &[1]),
        dim: c.dim,
        side: c.side,
        dt: c.dt,
        intervals: c.intervals,
        periodic: c.periodic,
        n_list: c.n_list.clone(),
        walkers: c.walkers,
        horizon: c.horizon,
        level: c.level,
        permutations: c.permutations,
        energy_samples: c.energy_samples,
        control_paths: c.control_paths,
        covariance_tolerance: c.covariance_tolerance,
        jump_budget: c.jump_budget,
    };
    exp.validate()?;
    let report = run_qfclt(&exp)?;
    let mut table = Vec::new();
    for s in &report.scales {
        let mut row = vec![s.n.to_string(), s.walkers.to_string()];
        row.extend(s.covariance.iter().flatten().map(|v| v.to_string()));
        row.push(s.ks_pass.to_string());
        row.push(s.energy.p_value.to_string());
        row.push(s.formula_distance.map_or(String::new(), |v| v.to_string()));
        table.push(row);
    }
    let mut header: Vec<String> = vec!["n".into(), "walkers".into()];
    for i in 0..c.dim {
        for j in 0..c.dim {
            header.push(format!("cov_{}{}", i + 1, j + 1));
        }
    }
    header.extend(["ks_pass", "energy_p", "formula_distance"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = write_csv(out, "qfclt.csv", &header_refs, &table)?;
    Ok(Outcome {
        pass: report.pass,
        result: serde_json::to_value(&report)?,
        seeds: vec![exp.env_seed, exp.walk_seed],
        artifacts: vec![csv],
        budget: json!({ "jump_budget": c.jump_budget, "partial": report.partial }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Output directories of earlier runs, relative to the config file.
    pub runs: Vec<PathBuf>,
}

pub fn report(c: &ReportConfig, base: &Path, out: &Path) -> Result<Outcome> {
    ensure!(!c.runs.is_empty(), "key `runs` must list at least one directory");
    let mut entries = Vec::new();
    let mut table = Vec::new();
    for run in &c.runs {
        let dir = if run.is_absolute() { run.clone() } else { base.join(run) };
        let read = |name: &str| -> Result<Value> {
            let p = dir.join(name);
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        };
        let manifest = read("manifest.json")?;
        let rep = read("report.json")?;
        let Some(pass) = rep["pass"].as_bool() else {
            bail!("{} has no pass flag", dir.join("report.json").display());
        };
        let command = manifest["command"].as_str().unwrap_or_default().to_string();
        let hash = manifest["config_hash"].as_str().unwrap_or_default().to_string();
        table.push(vec![run.display().to_string(), command.clone(), pass.to_string(), hash.clone()]);
        entries.push(json!({ "run": run, "command": command, "pass": pass, "config_hash": hash }));
    }
    let pass = entries.iter().all(|e| e["pass"] == Value::Bool(true));
    let csv = write_csv(out, "summary.csv", &["run", "command", "pass", "config_hash"], &table)?;
    Ok(Outcome {
        pass,
        result: json!({ "runs": entries }),
        seeds: vec![],
        artifacts: vec![csv],
        budget: json!({}),
    })
}
