//! Output writers: JSON documents, CSV time series and legacy VTK files.
//!
//! Floating-point values in CSV and VTK are written as `{:.16e}` so that
//! reruns of a deterministic configuration are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

/// CSV time series with a leading `# config_hash=` comment line.
pub struct SeriesWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl SeriesWriter {
    pub fn create(path: &Path, config_hash: &str, header: &[&str]) -> std::io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# config_hash={config_hash}")?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(SeriesWriter { inner })
    }

    pub fn row(&mut self, values: &[f64]) -> std::io::Result<()> {
        self.inner
            .write_record(values.iter().map(|&x| fmt_f64(x)))?;
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Cell data on a uniform box grid.
pub struct VtkGrid {
    pub cells: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

pub enum VtkField<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [[f64; 3]]),
}

/// Legacy ASCII `STRUCTURED_POINTS` with `CELL_DATA`, x fastest.
pub fn write_vtk(
    path: &Path,
    title: &str,
    grid: &VtkGrid,
    fields: &[VtkField<'_>],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny, nz] = grid.cells;
    let n = nx * ny * nz;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", nx + 1, ny + 1, nz + 1)?;
    let [ox, oy, oz] = grid.origin.map(fmt_f64);
    writeln!(w, "ORIGIN {ox} {oy} {oz}")?;
    let [sx, sy, sz] = grid.spacing.map(fmt_f64);
    writeln!(w, "SPACING {sx} {sy} {sz}")?;
    writeln!(w, "CELL_DATA {n}")?;
    for field in fields {
        match field {
            VtkField::Scalar(name, values) => {
                assert_eq!(values.len(), n, "scalar field {name} has wrong length");
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in values.iter() {
                    writeln!(w, "{}", fmt_f64(*v))?;
                }
            }
            VtkField::Vector(name, values) => {
                assert_eq!(values.len(), n, "vector field {name} has wrong length");
                writeln!(w, "VECTORS {name} double")?;
                for v in values.iter() {
                    writeln!(w, "{} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]))?;
                }
            }
        }
    }
    w.flush()
}
