//! Trajectory, subset and grid serialization.
//!
//! Trajectories are stored either as CSV (`t,z,v,flag`) or as a
//! little-endian binary with the header
//! `{magic "LEVA", version u32, n_samples u64, dt f64, switch_index u64,
//! seed u64}` followed by the f64 position array. Bit 31 of the version
//! field marks an appended velocity array; otherwise velocities are
//! recomputed on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::ensemble::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::postselect::DensityGrid;

const MAGIC: &[u8; 4] = b"LEVA";
const FORMAT_VERSION: u32 = 1;
const HAS_VELOCITY: u32 = 1 << 31;

/// Write a trajectory as CSV with columns `t,z,v,flag`; `flag` is 1 at
/// boundary samples whose velocity estimate is one-sided, and `v` is empty
/// when no estimate has been computed.
pub fn write_trajectory_csv(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,z,v,flag")?;
    for (i, &z) in record.z.iter().enumerate() {
        let flag = u8::from(record.is_boundary(i));
        match &record.v {
            Some(v) => writeln!(w, "{:?},{:?},{:?},{}", record.time(i), z, v[i], flag)?,
            None => writeln!(w, "{:?},{:?},,{}", record.time(i), z, flag)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV trajectory written by [`write_trajectory_csv`]. The sample
/// interval is recovered from the time column; switch index and seed are not
/// part of the CSV format and default to zero.
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryRecord> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty trajectory CSV".into()))??;
    if header.trim() != "t,z,v,flag" {
        return Err(Error::Format(format!("unexpected CSV header: {header}")));
    }
    let mut times = Vec::new();
    let mut z = Vec::new();
    let mut v = Vec::new();
    let mut any_v = false;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("line {}: expected 4 fields", lineno + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad number {s}", lineno + 2)))
        };
        times.push(parse(fields[0])?);
        z.push(parse(fields[1])?);
        if fields[2].is_empty() {
            v.push(0.0);
        } else {
            any_v = true;
            v.push(parse(fields[2])?);
        }
    }
    if z.len() < 2 {
        return Err(Error::Format("trajectory CSV has fewer than 2 samples".into()));
    }
    let sample_dt = times[1] - times[0];
    if sample_dt <= 0.0 {
        return Err(Error::Format("non-increasing time column".into()));
    }
    Ok(TrajectoryRecord {
        z,
        v: any_v.then_some(v),
        sample_dt,
        switch_index: 0,
        seed: 0,
    })
}

/// Write a trajectory in the binary format described in the module docs.
pub fn write_trajectory_binary(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let version = FORMAT_VERSION | if record.v.is_some() { HAS_VELOCITY } else { 0 };
    w.write_u32::<LittleEndian>(version)?;
    w.write_u64::<LittleEndian>(record.z.len() as u64)?;
    w.write_f64::<LittleEndian>(record.sample_dt)?;
    w.write_u64::<LittleEndian>(record.switch_index as u64)?;
    w.write_u64::<LittleEndian>(record.seed)?;
    for &z in &record.z {
        w.write_f64::<LittleEndian>(z)?;
    }
    if let Some(v) = &record.v {
        for &vi in v {
            w.write_f64::<LittleEndian>(vi)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a binary trajectory written by [`write_trajectory_binary`].
pub fn read_trajectory_binary(path: &Path) -> Result<TrajectoryRecord> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic; not a trajectory file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version & !HAS_VELOCITY != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let sample_dt = r.read_f64::<LittleEndian>()?;
    let switch_index = r.read_u64::<LittleEndian>()? as usize;
    let seed = r.read_u64::<LittleEndian>()?;
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        z.push(r.read_f64::<LittleEndian>()?);
    }
    let v = if version & HAS_VELOCITY != 0 {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.read_f64::<LittleEndian>()?);
        }
        Some(v)
    } else {
        None
    };
    Ok(TrajectoryRecord { z, v, sample_dt, switch_index, seed })
}

/// Write selected trajectory indices as a one-column CSV.
pub fn write_indices_csv(path: &Path, indices: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "trajectory_index")?;
    for i in indices {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

/// Write a density grid as a CSV matrix: first row the v̄ axis, first column
/// the z̄ axis, cells the density values.
pub fn write_density_grid_csv(path: &Path, grid: &DensityGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "zbar\\vbar")?;
    for v in &grid.v_axis {
        write!(w, ",{v:?}")?;
    }
    writeln!(w)?;
    let nv = grid.v_axis.len();
    for (iz, z) in grid.z_axis.iter().enumerate() {
        write!(w, "{z:?}")?;
        for iv in 0..nv {
            write!(w, ",{:?}", grid.values[iz * nv + iv])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a generic CSV table of f64 rows.
pub fn write_table_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let columns = header.split(',').count();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        if row.len() != columns {
            return Err(Error::Format(format!(
                "row of {} values does not match {columns}-column header",
                row.len()
            )));
        }
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
