//! Field and trajectory dumps for plotting.
//!
//! A field dump is a CSV with header `ix,iy,iz,x,y,z,value`, one row per
//! grid point in grid order (x fastest). Ground truth and reconstructions
//! share the format, so any two dumps of one world share a grid. A
//! trajectory dump has header `series,index,x,y,z` with series `true`,
//! `estimate` or `site`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use amap_core::gp::QueryGrid;
use amap_core::planner::MissionOutput;
use amap_core::sim::Environment;
use nalgebra::Vector3;

pub const FIELD_HEADER: &str = "ix,iy,iz,x,y,z,value";
pub const TRAJECTORY_HEADER: &str = "series,index,x,y,z";

pub fn write_field<W: Write>(grid: &QueryGrid, values: &[f64], mut out: W) -> io::Result<()> {
    if values.len() != grid.len() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{} values for {} grid points", values.len(), grid.len())));
    }
    writeln!(out, "{FIELD_HEADER}")?;
    let [nx, ny, nz] = grid.counts();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let k = grid.index(ix, iy, iz);
                let p = grid.points()[k];
                writeln!(out, "{ix},{iy},{iz},{},{},{},{}", p.x, p.y, p.z, values[k])?;
            }
        }
    }
    out.flush()
}

pub fn write_field_file(path: &Path, grid: &QueryGrid, values: &[f64]) -> io::Result<()> {
    write_field(grid, values, BufWriter::new(File::create(path)?))
}

/// Parsed field dump rows: grid index triple, position and value.
pub fn read_field(path: &Path) -> io::Result<Vec<([usize; 3], Vector3<f64>, f64)>> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header.join(",") != FIELD_HEADER {
        return Err(bad(format!("unexpected header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(e.to_string()));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(e.to_string()));
        rows.push(([u(0)?, u(1)?, u(2)?], Vector3::new(f(3)?, f(4)?, f(5)?), f(6)?));
    }
    Ok(rows)
}

pub fn write_trajectory<W: Write>(series: &[(&str, &[Vector3<f64>])], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (name, pts) in series {
        for (i, p) in pts.iter().enumerate() {
            writeln!(out, "{name},{i},{},{},{}", p.x, p.y, p.z)?;
        }
    }
    out.flush()
}

/// `<stem>_truth.csv`, `<stem>_estimate.csv` and `<stem>_path.csv`.
pub fn write_mission_dumps(stem: &Path, env: &Environment, out: &MissionOutput) -> io::Result<Vec<PathBuf>> {
    let with = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let (truth, estimate, path) = (with("_truth.csv"), with("_estimate.csv"), with("_path.csv"));
    write_field_file(&truth, &env.field.grid, env.field.values.as_slice())?;
    write_field_file(&estimate, &env.field.grid, &out.trace.final_mean)?;
    let t = &out.trace;
    write_trajectory(
        &[("true", &t.true_path), ("estimate", &t.estimated_path), ("site", &t.sites)],
        BufWriter::new(File::create(&path)?),
    )?;
    Ok(vec![truth, estimate, path])
}
