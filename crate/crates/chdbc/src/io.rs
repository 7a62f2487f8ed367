//! CSV serialization: field snapshots with exact double round-trip and
//! the per-step energy/diagnostics series.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{ChdbcError, Result};
use crate::grid::{BoundaryField, BulkField, Mesh, State};

/// 17 significant digits: doubles survive a write/parse round trip exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a bulk field: header `# N=<N> kind=bulk`, then one CSV line per
/// j-row (j ascending), i ascending within the line.
pub fn write_bulk_field(path: &Path, f: &BulkField) -> Result<()> {
    let n = f.mesh().n;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# N={n} kind=bulk")?;
    for j in 0..=n {
        let line: Vec<String> = f.row(j).iter().map(|&v| format_f64(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_boundary_field(path: &Path, f: &BoundaryField) -> Result<()> {
    let n = f.mesh().n;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# N={n} kind=boundary")?;
    let line: Vec<String> = f.data().iter().map(|&v| format_f64(v)).collect();
    writeln!(w, "{}", line.join(","))?;
    w.flush()?;
    Ok(())
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, String)> {
    let bad = || {
        ChdbcError::Config(format!(
            "{}: malformed snapshot header '{line}'",
            path.display()
        ))
    };
    let rest = line.strip_prefix("# N=").ok_or_else(bad)?;
    let (n_str, kind_part) = rest.split_once(' ').ok_or_else(bad)?;
    let n: usize = n_str.parse().map_err(|_| bad())?;
    let kind = kind_part.strip_prefix("kind=").ok_or_else(bad)?;
    Ok((n, kind.to_string()))
}

/// Read a bulk-field snapshot, reconstructing its mesh from the header.
pub fn read_bulk_field(path: &Path) -> Result<BulkField> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| ChdbcError::Config(format!("{}: empty snapshot", path.display())))??;
    let (n, kind) = parse_header(&header, path)?;
    if kind != "bulk" {
        return Err(ChdbcError::Config(format!(
            "{}: expected kind=bulk, found kind={kind}",
            path.display()
        )));
    }
    let mesh = Mesh::new(n);
    let mut data = Vec::with_capacity(n * (n + 1));
    for (j, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    ChdbcError::Config(format!(
                        "{}: bad float '{s}' in row {j}",
                        path.display()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(ChdbcError::Config(format!(
                "{}: row {j} has {} values, expected {n}",
                path.display(),
                row.len()
            )));
        }
        data.extend(row);
    }
    if data.len() != n * (n + 1) {
        return Err(ChdbcError::Config(format!(
            "{}: expected {} rows of data, found {}",
            path.display(),
            n + 1,
            data.len() / n
        )));
    }
    Ok(BulkField::from_data(&mesh, data))
}

/// Read a snapshot into a state (traces taken from the wall rows, which is
/// exactly how they were written).
pub fn read_state(path: &Path) -> Result<State> {
    Ok(State::from_bulk(read_bulk_field(path)?))
}

pub const ENERGY_HEADER: &str = "step,t,e_h,e_h_modified,bulk_mass,bottom_mass,top_mass,\
dissipation_residual,positivity_margin,newton_iters";

/// One row of the energy/diagnostics series.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    pub e_h: f64,
    pub e_h_modified: f64,
    pub bulk_mass: f64,
    pub bottom_mass: f64,
    pub top_mass: f64,
    pub dissipation_residual: f64,
    pub positivity_margin: f64,
    pub newton_iters: usize,
}

impl EnergyRow {
    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            format_f64(self.t),
            format_f64(self.e_h),
            format_f64(self.e_h_modified),
            format_f64(self.bulk_mass),
            format_f64(self.bottom_mass),
            format_f64(self.top_mass),
            format_f64(self.dissipation_residual),
            format_f64(self.positivity_margin),
            self.newton_iters
        )
    }
}

/// Incremental writer for `energy.csv`.
pub struct EnergyWriter {
    w: BufWriter<File>,
}

impl EnergyWriter {
    pub fn create(path: &Path) -> Result<EnergyWriter> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{ENERGY_HEADER}")?;
        Ok(EnergyWriter { w })
    }

    pub fn write_row(&mut self, row: EnergyRow) -> Result<()> {
        writeln!(self.w, "{}", row.to_csv())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}
