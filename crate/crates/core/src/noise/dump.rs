//! Binary dump of a path set.
//!
//! Layout (all little-endian): magic `MKVCYLPS`, `u32` version, `u64` K, M, N,
//! `f64` T, `u64` seed, `f64` H[K], `f64` λ[K], then `fbm` and `increments`
//! as row-major `f64` arrays.

use std::io::{self, Read, Write};

use super::CylindricalPathSet;
use crate::fraccalc::TimeLattice;

pub const MAGIC: &[u8; 8] = b"MKVCYLPS";
pub const VERSION: u32 = 1;

pub fn write_paths<W: Write>(w: &mut W, paths: &CylindricalPathSet, weights: &[f64]) -> io::Result<()> {
    if weights.len() != paths.modes() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "weights do not match modes"));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [paths.modes(), paths.particles, paths.steps()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&paths.lattice.horizon().to_le_bytes())?;
    w.write_all(&paths.seed.to_le_bytes())?;
    for x in paths.hurst.iter().chain(weights).chain(&paths.fbm).chain(&paths.increments) {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Returns the path set and the stored weights.
pub fn read_paths<R: Read>(r: &mut R) -> io::Result<(CylindricalPathSet, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a path dump"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        return Err(bad("unsupported dump version"));
    }
    let k = read_u64(r)? as usize;
    let m = read_u64(r)? as usize;
    let n = read_u64(r)? as usize;
    let t = f64::from_le_bytes(read_u64(r)?.to_le_bytes());
    let seed = read_u64(r)?;
    let lattice = TimeLattice::new(t, n).map_err(|e| bad(&e.to_string()))?;
    let hurst = read_f64s(r, k)?;
    let weights = read_f64s(r, k)?;
    let fbm = read_f64s(r, m * k * (n + 1))?;
    let increments = read_f64s(r, m * k * n)?;
    Ok((
        CylindricalPathSet {
            lattice,
            hurst,
            particles: m,
            seed,
            fbm,
            increments,
        },
        weights,
    ))
}
