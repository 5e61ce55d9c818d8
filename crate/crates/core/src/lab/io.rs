//! Persistence: JSON reports, CSV tables and the `PWCIP1` binary field dump.
//!
//! Dump layout, all little-endian:
//!
//! ```text
//! magic      6 bytes  "PWCIP1"
//! domain     u8       0 = Q, 1 = Omega, 2 = Gamma, 3 = Theta
//! reserved   u8       0
//! n          u64      interior nodes per transverse axis
//! half_width f64
//! h0         f64
//! z_samples  u64
//! t_samples  u64
//! t_horizon  f64
//! t_window   f64
//! shape      4 x u64  (i, j, k, m)
//! payload    f64 values in row-major (i, j, k, m) order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array4;
use serde::Serialize;

use crate::error::LabError;
use crate::fdgrid::{Domain, GridSpec, SemiDiscreteField};

pub const MAGIC: &[u8; 6] = b"PWCIP1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), LabError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), LabError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct NodeValue {
    i: usize,
    j: usize,
    k: usize,
    m: usize,
    x: f64,
    y: f64,
    z: f64,
    t: f64,
    value: f64,
}

/// One row per stored node: indices, coordinates and value.
pub fn write_field_csv(path: &Path, field: &SemiDiscreteField<f64>) -> Result<(), LabError> {
    let g = &field.grid;
    let rows: Vec<NodeValue> = field
        .data
        .indexed_iter()
        .map(|((i, j, k, m), &value)| NodeValue {
            i,
            j,
            k,
            m,
            x: g.x(i),
            y: g.x(j),
            z: if field.domain == Domain::Gamma { 0.0 } else { g.z(k) },
            t: if field.domain == Domain::Omega { 0.0 } else { g.t(m) },
            value,
        })
        .collect();
    write_csv(path, &rows)
}

fn domain_code(d: Domain) -> u8 {
    match d {
        Domain::Q => 0,
        Domain::Omega => 1,
        Domain::Gamma => 2,
        Domain::Theta => 3,
    }
}

pub fn write_dump(path: &Path, field: &SemiDiscreteField<f64>) -> Result<(), LabError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let g = &field.grid;
    let result = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(domain_code(field.domain))?;
        w.write_u8(0)?;
        w.write_u64::<LittleEndian>(g.n as u64)?;
        w.write_f64::<LittleEndian>(g.half_width)?;
        w.write_f64::<LittleEndian>(g.h0)?;
        w.write_u64::<LittleEndian>(g.z_samples as u64)?;
        w.write_u64::<LittleEndian>(g.t_samples as u64)?;
        w.write_f64::<LittleEndian>(g.t_horizon)?;
        w.write_f64::<LittleEndian>(g.t_window)?;
        for &s in field.data.shape() {
            w.write_u64::<LittleEndian>(s as u64)?;
        }
        for &v in field.data.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()
    })();
    result.map_err(io_err(path))
}

pub fn read_dump(path: &Path) -> Result<SemiDiscreteField<f64>, LabError> {
    let bad = |reason: String| LabError::Dump {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(bad("missing PWCIP1 magic".into()));
    }
    let header = (|| -> std::io::Result<_> {
        let domain = r.read_u8()?;
        let _ = r.read_u8()?;
        let grid = GridSpec {
            n: r.read_u64::<LittleEndian>()? as usize,
            half_width: r.read_f64::<LittleEndian>()?,
            h0: r.read_f64::<LittleEndian>()?,
            z_samples: r.read_u64::<LittleEndian>()? as usize,
            t_samples: r.read_u64::<LittleEndian>()? as usize,
            t_horizon: r.read_f64::<LittleEndian>()?,
            t_window: r.read_f64::<LittleEndian>()?,
        };
        let mut shape = [0usize; 4];
        for s in shape.iter_mut() {
            *s = r.read_u64::<LittleEndian>()? as usize;
        }
        Ok((domain, grid, shape))
    })()
    .map_err(io_err(path))?;
    let (code, grid, shape) = header;
    let domain = match code {
        0 => Domain::Q,
        1 => Domain::Omega,
        2 => Domain::Gamma,
        3 => Domain::Theta,
        c => return Err(bad(format!("unknown domain code {c}"))),
    };
    let len: usize = shape.iter().product();
    let mut values = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut values)
        .map_err(|e| bad(format!("payload shorter than {len} values ({e})")))?;
    let data = Array4::from_shape_vec(shape, values).map_err(|e| bad(e.to_string()))?;
    SemiDiscreteField::from_array(&grid, domain, data).map_err(|e| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip_is_exact() {
        let g = GridSpec::<f64>::desk(5.4, 1.8);
        let f = SemiDiscreteField::from_fn(&g, Domain::Gamma, |x, y, _, t| (x * 3.1).sin() + y * t / 7.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_dump(&p, &f).unwrap();
        let back = read_dump(&p).unwrap();
        assert_eq!(back, f);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"PWCIP1");
        assert_eq!(bytes.len(), 8 + 7 * 8 + 4 * 8 + 8 * f.data.len());
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let g = GridSpec::<f64>::desk(5.4, 1.8);
        let f = SemiDiscreteField::zeros(&g, Domain::Omega);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_dump(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_dump(&p), Err(LabError::Dump { .. })));
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(read_dump(&p).is_err());
    }
}
