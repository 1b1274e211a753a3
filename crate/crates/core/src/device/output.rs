use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::experiments::{EnergyRun, IvRow, TransientRun};
use crate::error::Result;
use crate::flux::State;
use crate::mesh::{write_field_csv, Mesh};

/// Writes `fields_k####.csv` with the scaled fields of `state` into `dir`.
pub fn write_fields(dir: &Path, mesh: &Mesh, state: &State) -> Result<PathBuf> {
    let path = dir.join(format!("fields_k{:04}.csv", state.step));
    let spin = |i: usize| state.spin.cells.iter().map(|s| s[i]).collect::<Vec<f64>>();
    let (n1, n2, n3) = (spin(0), spin(1), spin(2));
    let cols: [(&str, &[f64]); 5] = [("n0", &state.n0.cells), ("n1", &n1), ("n2", &n2), ("n3", &n3), ("V", &state.potential.cells)];
    let mut w = BufWriter::new(File::create(&path)?);
    write_field_csv(mesh, &cols, &mut w)?;
    w.flush()?;
    Ok(path)
}

pub fn write_iv<W: Write>(mut w: W, rows: &[IvRow]) -> Result<()> {
    writeln!(w, "V_G,V_D,I_A_per_m,steps,converged")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{},{}", r.gate, r.drain, r.current, r.steps, r.converged)?;
    }
    Ok(())
}

pub fn write_transient<W: Write>(mut w: W, run: &TransientRun) -> Result<()> {
    writeln!(w, "t_ps,I_drain_A_per_m")?;
    for (t, i) in run.times_ps.iter().zip(&run.drain_current) {
        writeln!(w, "{t:e},{i:e}")?;
    }
    Ok(())
}

pub fn write_energy<W: Write>(mut w: W, run: &EnergyRun) -> Result<()> {
    writeln!(w, "k,E")?;
    for (k, e) in run.steps.iter().zip(&run.energy) {
        writeln!(w, "{k},{e:e}")?;
    }
    Ok(())
}
