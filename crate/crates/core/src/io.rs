//! Field serialization: a flat little-endian binary layout and CSV, plus
//! the JSON sidecar of corrector solves.
//!
//! Binary layout: magic `DYNRCMF1`, then `d: u32`, `L: u64`, `Δt: f64`,
//! `t_start: f64`, `periodic: u8`, grid length `K: u64`, components
//! `c: u32`, followed by `c·K·L^d` values as `f64`, component-major, then
//! one block per grid point, row-major over vertices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corrector::{CorrectorMeta, CorrectorSolution};
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::spacetime::SpaceTimeField;
use crate::walker::TrajectorySample;

const MAGIC: &[u8; 8] = b"DYNRCMF1";

fn same_grid(a: &SpaceTimeField, b: &SpaceTimeField) -> bool {
    a.lattice == b.lattice && a.t_start == b.t_start && a.dt == b.dt && a.periodic == b.periodic && a.slices == b.slices
}

pub fn write_fields<W: Write>(out: W, fields: &[SpaceTimeField]) -> Result<()> {
    let first = fields.first().ok_or_else(|| Error::Format("no fields to write".into()))?;
    if fields.iter().any(|f| !same_grid(f, first)) {
        return Err(Error::GridMismatch("components must share one grid".into()));
    }
    let mut w = BufWriter::new(out);
    w.write_all(MAGIC)?;
    w.write_all(&(first.lattice.dim() as u32).to_le_bytes())?;
    w.write_all(&(first.lattice.side() as u64).to_le_bytes())?;
    w.write_all(&first.dt.to_le_bytes())?;
    w.write_all(&first.t_start.to_le_bytes())?;
    w.write_all(&[first.periodic as u8])?;
    w.write_all(&(first.slices as u64).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    for f in fields {
        for v in &f.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated header or data: {e}")))?;
    Ok(buf)
}

pub fn read_fields<R: Read>(input: R) -> Result<Vec<SpaceTimeField>> {
    let mut r = BufReader::new(input);
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let side = u64::from_le_bytes(take(&mut r)?) as usize;
    let dt = f64::from_le_bytes(take(&mut r)?);
    let t_start = f64::from_le_bytes(take(&mut r)?);
    let periodic = take::<1, _>(&mut r)?[0] != 0;
    let slices = u64::from_le_bytes(take(&mut r)?) as usize;
    let components = u32::from_le_bytes(take(&mut r)?) as usize;
    let lattice = TorusLattice::new(d, side)?;
    let count = lattice.num_vertices() * slices;
    let mut out = Vec::with_capacity(components);
    for _ in 0..components {
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(take(&mut r)?));
        }
        out.push(SpaceTimeField {
            lattice: lattice.clone(),
            t_start,
            dt,
            periodic,
            slices,
            values,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after field data".into()));
    }
    Ok(out)
}

/// CSV with a `#` header line, then `slice,time,vertex,x_1..x_d,c_1..c_m`.
pub fn write_fields_csv<W: Write>(out: W, fields: &[SpaceTimeField]) -> Result<()> {
    let first = fields.first().ok_or_else(|| Error::Format("no fields to write".into()))?;
    if fields.iter().any(|f| !same_grid(f, first)) {
        return Err(Error::GridMismatch("components must share one grid".into()));
    }
    let lat = &first.lattice;
    let d = lat.dim();
    let mut w = BufWriter::new(out);
    writeln!(w, "# d={} L={} dt={} t_start={} periodic={} slices={} components={}", d, lat.side(), first.dt, first.t_start, first.periodic, first.slices, fields.len())?;
    let coords: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let comps: Vec<String> = (1..=fields.len()).map(|i| format!("c{i}")).collect();
    writeln!(w, "slice,time,vertex,{},{}", coords.join(","), comps.join(","))?;
    let nv = lat.num_vertices();
    for k in 0..first.slices {
        let t = first.t_start + k as f64 * first.dt;
        for x in 0..nv {
            write!(w, "{k},{t},{x}")?;
            for c in lat.coords(x) {
                write!(w, ",{c}")?;
            }
            for f in fields {
                write!(w, ",{}", f.values[k * nv + x])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `<base>.bin` and the `<base>.json` sidecar.
pub fn save_corrector(base: &Path, sol: &CorrectorSolution) -> Result<()> {
    write_fields(File::create(base.with_extension("bin"))?, &sol.chi)?;
    let json = serde_json::to_string_pretty(&sol.meta)?;
    std::fs::write(base.with_extension("json"), json)?;
    Ok(())
}

pub fn load_corrector(base: &Path) -> Result<CorrectorSolution> {
    let chi = read_fields(File::open(base.with_extension("bin"))?)?;
    let meta: CorrectorMeta = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    if chi.len() != chi.first().map_or(0, |f| f.lattice.dim()) {
        return Err(Error::Format("one component per coordinate expected".into()));
    }
    Ok(CorrectorSolution { chi, meta })
}

/// Trajectory CSV: `k,time,vertex,x_1..x_d` with `x` the lifted position.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &TrajectorySample, lattice: &TorusLattice) -> Result<()> {
    let mut w = BufWriter::new(out);
    let d = lattice.dim();
    let coords: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(w, "k,time,vertex,{}", coords.join(","))?;
    let lift = traj.lift(lattice);
    for (k, (t, v)) in traj.jump_times.iter().zip(&traj.positions).enumerate() {
        write!(w, "{k},{t},{v}")?;
        for c in &lift[k] {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
