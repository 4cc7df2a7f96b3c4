//! File output: the estimator log, per-step diagnostics, convergence tables
//! and VTK snapshots.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::boussinesq::StepDiagnostics;
use crate::coef::Point;
use crate::error::Result;
use crate::estimator::StepRecord;
use crate::fem::DgField;
use crate::fitting::Fitting;
use crate::stokes::StokesSolution;

pub const ESTIMATOR_SCHEMA: &str = "# dgfit estimator log v1";

/// Column names of the estimator log, in order.
pub const ESTIMATOR_COLUMNS: [&str; 15] = [
    "step",
    "t",
    "dt",
    "n_cells",
    "n_dofs",
    "zeta_S1",
    "zeta_S2",
    "zeta_S3",
    "zeta_S4",
    "zeta_T1",
    "zeta_T2",
    "zeta_S_acc",
    "zeta_T_acc",
    "exponent",
    "zeta_full",
];

pub const DIAGNOSTICS_COLUMNS: [&str; 10] = [
    "step",
    "n_refine",
    "n_coarsen",
    "mass",
    "mass_change",
    "u_min",
    "u_max",
    "max_speed",
    "max_peclet",
    "n_cells",
];

/// Shortest round-trip representation, so reruns are byte-identical and
/// values survive a parse.
fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn estimator_row(r: &StepRecord) -> String {
    let vals = [
        r.t, r.dt, r.s1, r.s2, r.s3, r.s4, r.t1, r.t2, r.s_acc, r.t_acc, r.exponent, r.full,
    ];
    let mut s = format!("{},{},{},{}", r.step, num(vals[0]), num(vals[1]), r.n_cells);
    write!(s, ",{}", r.n_dofs).unwrap();
    for v in &vals[2..] {
        write!(s, ",{}", num(*v)).unwrap();
    }
    s
}

/// Appends rows to a CSV file, flushing after each so a failed run keeps
/// its log.
pub struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    pub fn create(path: &Path, preamble: Option<&str>, columns: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        if let Some(p) = preamble {
            writeln!(out, "{p}")?;
        }
        writeln!(out, "{}", columns.join(","))?;
        out.flush()?;
        Ok(CsvLog { out })
    }

    pub fn estimator(path: &Path) -> Result<Self> {
        Self::create(path, Some(ESTIMATOR_SCHEMA), &ESTIMATOR_COLUMNS)
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        self.row(&estimator_row(r))
    }

    pub fn diagnostics(&mut self, d: &StepDiagnostics, n_cells: usize) -> Result<()> {
        self.row(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            d.step,
            d.n_refine,
            d.n_coarsen,
            num(d.mass),
            num(d.mass_change),
            num(d.u_min),
            num(d.u_max),
            num(d.max_speed),
            num(d.max_peclet),
            n_cells
        ))
    }
}

/// Parses an estimator log back into rows of numbers, checking the header.
pub fn read_estimator_log(text: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(ESTIMATOR_SCHEMA) {
        return Err("missing schema line".into());
    }
    let header = lines.next().ok_or("missing header")?;
    if header.split(',').collect::<Vec<_>>() != ESTIMATOR_COLUMNS {
        return Err(format!("unexpected header `{header}`"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect()
}

/// Fields written to a snapshot.
pub struct Snapshot<'a> {
    pub u: &'a DgField,
    pub t: f64,
    pub fitting: Option<&'a Fitting>,
    pub stokes: Option<&'a StokesSolution>,
    pub indicator: Option<&'a [f64]>,
}

/// Writes an ASCII VTK unstructured grid. Each cell is its own quad with
/// four private corner points, so discontinuous fields show their jumps.
pub fn write_vtu(path: &Path, snap: &Snapshot) -> Result<()> {
    let u = snap.u;
    let mesh = u.mesh();
    let n = mesh.n_cells();
    let r_corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\"?>\n");
    out.push_str("<VTKFile type=\"UnstructuredGrid\" version=\"0.1\" byte_order=\"LittleEndian\">\n");
    out.push_str("<UnstructuredGrid>\n");
    writeln!(out, "<FieldData><DataArray type=\"Float64\" Name=\"TIME\" NumberOfTuples=\"1\" format=\"ascii\">{}</DataArray></FieldData>", num(snap.t)).unwrap();
    writeln!(out, "<Piece NumberOfPoints=\"{}\" NumberOfCells=\"{}\">", 4 * n, n).unwrap();

    let array = |out: &mut String, name: &str, comps: usize, vals: &mut dyn Iterator<Item = f64>| {
        writeln!(
            out,
            "<DataArray type=\"Float64\" Name=\"{name}\" NumberOfComponents=\"{comps}\" format=\"ascii\">"
        )
        .unwrap();
        for (i, v) in vals.enumerate() {
            out.push_str(&num(v));
            out.push(if (i + 1) % (3 * comps.max(1)) == 0 { '\n' } else { ' ' });
        }
        out.push_str("\n</DataArray>\n");
    };

    out.push_str("<Points>\n");
    array(
        &mut out,
        "Points",
        3,
        &mut (0..n).flat_map(|c| {
            let rect = mesh.rect(c);
            r_corners.into_iter().flat_map(move |r| {
                let x = rect.map(r);
                [x[0], x[1], 0.0]
            })
        }),
    );
    out.push_str("</Points>\n<Cells>\n");
    out.push_str("<DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n");
    for c in 0..n {
        writeln!(out, "{} {} {} {}", 4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3).unwrap();
    }
    out.push_str("</DataArray>\n<DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n");
    for c in 0..n {
        writeln!(out, "{}", 4 * (c + 1)).unwrap();
    }
    out.push_str("</DataArray>\n<DataArray type=\"UInt8\" Name=\"types\" format=\"ascii\">\n");
    for _ in 0..n {
        out.push_str("9\n");
    }
    out.push_str("</DataArray>\n</Cells>\n");

    out.push_str("<PointData Scalars=\"u\">\n");
    array(
        &mut out,
        "u",
        1,
        &mut (0..n).flat_map(|c| r_corners.into_iter().map(move |r| u.value(c, r))),
    );
    if let Some(f) = snap.fitting {
        let fp = |c: usize, r: [f64; 2]| f.at(&Point::new(mesh, c, r, snap.t));
        array(
            &mut out,
            "omega",
            1,
            &mut (0..n).flat_map(|c| r_corners.into_iter().map(move |r| fp(c, r).omega)),
        );
        array(
            &mut out,
            "eta",
            1,
            &mut (0..n).flat_map(|c| {
                r_corners
                    .into_iter()
                    .map(move |r| f.potential.eval(&Point::new(mesh, c, r, snap.t)).eta)
            }),
        );
        array(
            &mut out,
            "L",
            1,
            &mut (0..n).flat_map(|c| r_corners.into_iter().map(move |r| fp(c, r).l)),
        );
        array(
            &mut out,
            "delta",
            1,
            &mut (0..n).flat_map(|c| r_corners.into_iter().map(move |r| fp(c, r).delta)),
        );
    }
    if let Some(s) = snap.stokes {
        if s.mesh().id() == mesh.id() {
            let [vx, vy] = &s.velocity;
            array(
                &mut out,
                "velocity",
                3,
                &mut (0..n).flat_map(|c| {
                    r_corners
                        .into_iter()
                        .flat_map(move |r| [vx.at(c, r).value, vy.at(c, r).value, 0.0])
                }),
            );
            array(
                &mut out,
                "pressure",
                1,
                &mut (0..n).flat_map(|c| r_corners.into_iter().map(move |r| s.pressure.at(c, r).value)),
            );
        }
    }
    out.push_str("</PointData>\n<CellData>\n");
    array(&mut out, "level", 1, &mut (0..n).map(|c| mesh.key(c).level as f64));
    if let Some(ind) = snap.indicator {
        if ind.len() == n {
            array(&mut out, "indicator", 1, &mut ind.iter().copied());
        }
    }
    out.push_str("</CellData>\n</Piece>\n</UnstructuredGrid>\n</VTKFile>\n");
    std::fs::write(path, out)?;
    Ok(())
}

pub fn snapshot_name(step: usize) -> String {
    format!("snap_{step:06}.vtu")
}
