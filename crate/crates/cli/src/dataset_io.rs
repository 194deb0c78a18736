//! Dataset serialization: the bit-exact "LSD1" binary layout and a CSV
//! variant (one file per array plus a `meta.json` sidecar).
//!
//! Binary layout, all integers little-endian:
//! magic `LSD1` (4 bytes), format version `u32`, then `u32` fields
//! `d, l, r_meta, horizon, n, flags` (bit0: H present, bit1: Z present,
//! bit2: noisy one-step), `u64` seed, then row-major IEEE-754 binary64
//! arrays in order X, U, H (optional), Z (optional), each indexed
//! (trajectory, step, coordinate).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use linsub_core::model::{DatasetMetadata, TrajectoryDataset};
use linsub_core::rng::RNG_ID;

pub const MAGIC: &[u8; 4] = b"LSD1";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_H: u32 = 1;
const FLAG_Z: u32 = 1 << 1;
const FLAG_NOISY: u32 = 1 << 2;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("bad magic bytes; expected \"LSD1\"")]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated mid-array")]
    TruncatedFile,
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One array's logical shape inside a dataset.
struct ArraySpec {
    /// Number of time steps stored (horizon + 1 for states, horizon for
    /// controls).
    steps: usize,
    /// Coordinates per step.
    coords: usize,
}

fn array_specs(ds_d: usize, ds_l: usize, r_meta: usize, horizon: usize, flags: u32) -> Vec<(&'static str, ArraySpec)> {
    let mut specs = vec![
        ("x", ArraySpec { steps: horizon + 1, coords: ds_d }),
        ("u", ArraySpec { steps: horizon, coords: ds_l }),
    ];
    if flags & FLAG_H != 0 {
        specs.push(("h", ArraySpec { steps: horizon + 1, coords: r_meta }));
    }
    if flags & FLAG_Z != 0 {
        specs.push(("z", ArraySpec { steps: horizon + 1, coords: ds_d }));
    }
    specs
}

fn flags_of(ds: &TrajectoryDataset) -> u32 {
    let mut flags = 0;
    if ds.h.is_some() {
        flags |= FLAG_H;
    }
    if ds.z.is_some() {
        flags |= FLAG_Z;
    }
    if ds.metadata.noisy_one_step {
        flags |= FLAG_NOISY;
    }
    flags
}

/// Flatten a step-major array (`Vec` of `coords x n` matrices) into
/// (trajectory, step, coordinate) order.
fn flatten(mats: &[DMatrix<f64>], n: usize) -> Vec<f64> {
    let steps = mats.len();
    let coords = if steps == 0 { 0 } else { mats[0].nrows() };
    let mut out = Vec::with_capacity(n * steps * coords);
    for traj in 0..n {
        for mat in mats {
            for c in 0..coords {
                out.push(mat[(c, traj)]);
            }
        }
    }
    out
}

/// Inverse of [`flatten`].
fn unflatten(values: &[f64], n: usize, steps: usize, coords: usize) -> Vec<DMatrix<f64>> {
    let mut mats = vec![DMatrix::zeros(coords, n); steps];
    let mut idx = 0;
    for traj in 0..n {
        for mat in mats.iter_mut() {
            for c in 0..coords {
                mat[(c, traj)] = values[idx];
                idx += 1;
            }
        }
    }
    mats
}

pub fn write_binary(ds: &TrajectoryDataset, path: &Path) -> Result<(), DatasetIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for field in [
        ds.d as u32,
        ds.l as u32,
        ds.r_meta as u32,
        ds.horizon as u32,
        ds.n as u32,
        flags_of(ds),
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    w.write_all(&ds.seed.to_le_bytes())?;
    let mut write_array = |mats: &[DMatrix<f64>]| -> Result<(), DatasetIoError> {
        for v in flatten(mats, ds.n) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_array(&ds.x)?;
    write_array(&ds.u)?;
    if let Some(h) = &ds.h {
        write_array(h)?;
    }
    if let Some(z) = &ds.z {
        write_array(z)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DatasetIoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error) -> DatasetIoError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DatasetIoError::TruncatedFile
    } else {
        DatasetIoError::Io(e)
    }
}

pub fn read_binary(path: &Path) -> Result<TrajectoryDataset, DatasetIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DatasetIoError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(DatasetIoError::VersionUnsupported(version));
    }
    let d = read_u32(&mut r)? as usize;
    let l = read_u32(&mut r)? as usize;
    let r_meta = read_u32(&mut r)? as usize;
    let horizon = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let flags = read_u32(&mut r)?;
    let mut seed_buf = [0u8; 8];
    r.read_exact(&mut seed_buf).map_err(truncated)?;
    let seed = u64::from_le_bytes(seed_buf);

    let mut read_array = |spec: &ArraySpec| -> Result<Vec<DMatrix<f64>>, DatasetIoError> {
        let count = n * spec.steps * spec.coords;
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(truncated)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(unflatten(&values, n, spec.steps, spec.coords))
    };
    let specs = array_specs(d, l, r_meta, horizon, flags);
    let mut arrays = Vec::new();
    for (_, spec) in &specs {
        arrays.push(read_array(spec)?);
    }
    let mut iter = arrays.into_iter();
    let x = iter.next().expect("x array");
    let u = iter.next().expect("u array");
    let h = (flags & FLAG_H != 0).then(|| iter.next().expect("h array"));
    let z = (flags & FLAG_Z != 0).then(|| iter.next().expect("z array"));
    Ok(TrajectoryDataset {
        n,
        horizon,
        d,
        l,
        r_meta,
        seed,
        x,
        u,
        h,
        z,
        metadata: DatasetMetadata {
            rng: RNG_ID.to_string(),
            system_attempts: 0,
            noisy_one_step: flags & FLAG_NOISY != 0,
        },
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CsvMeta {
    format_version: u32,
    d: usize,
    l: usize,
    r_meta: usize,
    horizon: usize,
    n: usize,
    flags: u32,
    seed: u64,
}

fn write_csv_array(
    dir: &Path,
    name: &str,
    mats: &[DMatrix<f64>],
    n: usize,
) -> Result<(), DatasetIoError> {
    let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
    w.write_record(["trajectory", "step", "coordinate", "value"])?;
    let coords = if mats.is_empty() { 0 } else { mats[0].nrows() };
    for traj in 0..n {
        for (step, mat) in mats.iter().enumerate() {
            for c in 0..coords {
                // `{}` on f64 prints the shortest decimal that parses back
                // to the same bits.
                w.write_record([
                    traj.to_string(),
                    step.to_string(),
                    c.to_string(),
                    mat[(c, traj)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the CSV variant into a directory: `x.csv`, `u.csv`, optional
/// `h.csv` / `z.csv`, and a `meta.json` sidecar.
pub fn write_csv(ds: &TrajectoryDataset, dir: &Path) -> Result<(), DatasetIoError> {
    std::fs::create_dir_all(dir)?;
    let meta = CsvMeta {
        format_version: FORMAT_VERSION,
        d: ds.d,
        l: ds.l,
        r_meta: ds.r_meta,
        horizon: ds.horizon,
        n: ds.n,
        flags: flags_of(ds),
        seed: ds.seed,
    };
    let meta_file = File::create(dir.join("meta.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(meta_file), &meta)?;
    write_csv_array(dir, "x", &ds.x, ds.n)?;
    write_csv_array(dir, "u", &ds.u, ds.n)?;
    if let Some(h) = &ds.h {
        write_csv_array(dir, "h", h, ds.n)?;
    }
    if let Some(z) = &ds.z {
        write_csv_array(dir, "z", z, ds.n)?;
    }
    Ok(())
}

fn read_csv_array(
    dir: &Path,
    name: &str,
    n: usize,
    spec: &ArraySpec,
) -> Result<Vec<DMatrix<f64>>, DatasetIoError> {
    let mut mats = vec![DMatrix::zeros(spec.coords, n); spec.steps];
    let mut reader = csv::Reader::from_path(dir.join(format!("{name}.csv")))?;
    let mut seen = 0usize;
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<&str, DatasetIoError> {
            record
                .get(i)
                .ok_or_else(|| DatasetIoError::Malformed(format!("{name}.csv: short row")))
        };
        let traj: usize = parse(0)?.parse().map_err(bad_field(name))?;
        let step: usize = parse(1)?.parse().map_err(bad_field(name))?;
        let coord: usize = parse(2)?.parse().map_err(bad_field(name))?;
        let value: f64 = parse(3)?.parse().map_err(bad_field(name))?;
        if traj >= n || step >= spec.steps || coord >= spec.coords {
            return Err(DatasetIoError::Malformed(format!(
                "{name}.csv: index ({traj}, {step}, {coord}) out of range"
            )));
        }
        mats[step][(coord, traj)] = value;
        seen += 1;
    }
    let expected = n * spec.steps * spec.coords;
    if seen != expected {
        return Err(DatasetIoError::Malformed(format!(
            "{name}.csv: {seen} rows, expected {expected}"
        )));
    }
    Ok(mats)
}

fn bad_field<E: std::fmt::Display>(name: &str) -> impl Fn(E) -> DatasetIoError + '_ {
    move |e| DatasetIoError::Malformed(format!("{name}.csv: {e}"))
}

pub fn read_csv(dir: &Path) -> Result<TrajectoryDataset, DatasetIoError> {
    let meta_file = File::open(dir.join("meta.json"))?;
    let meta: CsvMeta = serde_json::from_reader(BufReader::new(meta_file))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(DatasetIoError::VersionUnsupported(meta.format_version));
    }
    let specs = array_specs(meta.d, meta.l, meta.r_meta, meta.horizon, meta.flags);
    let mut arrays = Vec::new();
    for (name, spec) in &specs {
        arrays.push(read_csv_array(dir, name, meta.n, spec)?);
    }
    let mut iter = arrays.into_iter();
    Ok(TrajectoryDataset {
        n: meta.n,
        horizon: meta.horizon,
        d: meta.d,
        l: meta.l,
        r_meta: meta.r_meta,
        seed: meta.seed,
        x: iter.next().expect("x array"),
        u: iter.next().expect("u array"),
        h: (meta.flags & FLAG_H != 0).then(|| iter.next().expect("h array")),
        z: (meta.flags & FLAG_Z != 0).then(|| iter.next().expect("z array")),
        metadata: DatasetMetadata {
            rng: RNG_ID.to_string(),
            system_attempts: 0,
            noisy_one_step: meta.flags & FLAG_NOISY != 0,
        },
    })
}
