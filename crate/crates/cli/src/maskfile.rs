//! Little-endian bitmap files for cell masks.
//!
//! Layout: magic `RDOAMASK`, format version (u32), dimension (u32), cells
//! per axis (u64 each), lower and upper bounds (f64 each), set-cell count
//! (u64), word count (u64), then the mask words (u64 each).

use std::fs;
use std::path::Path;

use robust_doa_core::grid::{CellMask, Region, UniformGrid};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"RDOAMASK";
const VERSION: u32 = 1;

pub fn encode(mask: &CellMask) -> Vec<u8> {
    let grid = mask.grid();
    let region = grid.region();
    let mut out = Vec::with_capacity(32 + mask.words().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &c in grid.counts() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for v in region.lower().iter().chain(region.upper()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(mask.count() as u64).to_le_bytes());
    out.extend_from_slice(&(mask.words().len() as u64).to_le_bytes());
    for w in mask.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<CellMask, String> {
    let mut r = Reader { bytes, pos: 0 };
    let truncated = || "truncated mask file".to_string();
    if r.take::<8>().as_ref() != Some(MAGIC) {
        return Err("not a mask file".into());
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(format!("unsupported mask version {version}"));
    }
    let dim = r.u32().ok_or_else(truncated)? as usize;
    if dim == 0 || dim > 64 {
        return Err(format!("bad dimension {dim}"));
    }
    let counts = (0..dim).map(|_| r.u64().map(|c| c as usize)).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
    let lower = (0..dim).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
    let upper = (0..dim).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
    let set = r.u64().ok_or_else(truncated)? as usize;
    let n_words = r.u64().ok_or_else(truncated)? as usize;
    if n_words > bytes.len() / 8 {
        return Err(truncated());
    }
    let words = (0..n_words).map(|_| r.u64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
    if r.pos != bytes.len() {
        return Err("trailing bytes after mask words".into());
    }
    let region = Region::new(lower, upper).map_err(|e| e.to_string())?;
    let grid = UniformGrid::new(region, counts).map_err(|e| e.to_string())?;
    let mask = CellMask::from_words(&grid, words).map_err(|e| e.to_string())?;
    if mask.count() != set {
        return Err(format!("header claims {set} set cells, words hold {}", mask.count()));
    }
    Ok(mask)
}

pub fn write(path: &Path, mask: &CellMask) -> CliResult<()> {
    fs::write(path, encode(mask)).map_err(|e| CliError::io(path, e))
}

/// Reads a mask and checks it lives on `expected`.
pub fn read(path: &Path, expected: &UniformGrid, command: &'static str) -> CliResult<CellMask> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact { path: path.to_path_buf(), command })
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mask = decode(&bytes).map_err(|m| CliError::format(path, m))?;
    if mask.grid() != expected {
        return Err(CliError::Validation(format!(
            "{} was written for a different grid; rerun `{command}`",
            path.display()
        )));
    }
    Ok(mask)
}
