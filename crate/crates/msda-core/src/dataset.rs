//! Dataset records and the binary dataset file format.
//!
//! A record pairs one permeability field (100×9 canonical layout) with its
//! four trainable basis vectors (900 entries each) and the downscaled 30×30
//! pressure matrix, plus a content hash and split tag. Files are
//! little-endian f64 with a fixed header; writes and reads are bit-exact.

use crate::error::{Error, Result};
use crate::grid::{CoarseGrid, FineGrid};
use crate::perm::{build_dataset, SplitTag};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// File magic for dataset files.
pub const DATASET_MAGIC: &[u8; 8] = b"MSDS0001";
/// Current dataset format version.
pub const DATASET_VERSION: u32 = 1;

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Permeability, canonical coarse-major order (100×9 flattened).
    pub perm: Vec<f64>,
    /// basis2..basis5, each stacked canonically to 900 entries.
    pub basis: [Vec<f64>; 4],
    /// Downscaled pressure, row-major 30×30.
    pub pressure: Vec<f64>,
    /// Content hash of the permeability field.
    pub hash: u64,
    /// Split assignment.
    pub split: SplitTag,
}

impl DatasetRecord {
    /// Basis vector by index (2..=5).
    pub fn basis_by_index(&self, k: usize) -> Result<&Vec<f64>> {
        if (2..=5).contains(&k) {
            Ok(&self.basis[k - 2])
        } else {
            Err(Error::IndexOutOfRange {
                what: "trainable basis index",
                index: k,
                limit: 6,
            })
        }
    }
}

/// Generate `n` samples end to end: sample fields, deduplicate, tag splits,
/// and run the multiscale pipeline per field (in parallel, ordered output).
pub fn generate_records(cg: &CoarseGrid, n: usize, seed: u64) -> Result<Vec<DatasetRecord>> {
    let tagged = build_dataset(cg, n, seed);
    tagged
        .into_par_iter()
        .map(|(field, split)| {
            let mut rec = crate::gmsfem::emit_record(cg, &field)?;
            rec.split = split;
            Ok(rec)
        })
        .collect()
}

fn write_f64s(out: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Write a dataset file.
pub fn write_dataset(path: &Path, cg: &CoarseGrid, records: &[DatasetRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert(r.hash) {
            return Err(Error::Format {
                what: "dataset",
                msg: format!("duplicate content hash {:#x}", r.hash),
            });
        }
    }
    let fine = cg.fine();
    let n_cells = fine.n_cells();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    for v in [fine.nx, fine.ny, cg.nxc, cg.nyc, cg.r] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        if r.perm.len() != n_cells || r.pressure.len() != n_cells {
            return Err(Error::BadLength {
                what: "record field",
                got: r.perm.len().max(r.pressure.len()),
                expected: n_cells,
            });
        }
        write_f64s(&mut out, &r.perm)?;
        for b in &r.basis {
            if b.len() != n_cells {
                return Err(Error::BadLength {
                    what: "basis vector",
                    got: b.len(),
                    expected: n_cells,
                });
            }
            write_f64s(&mut out, b)?;
        }
        write_f64s(&mut out, &r.pressure)?;
        out.write_all(&r.hash.to_le_bytes())?;
        out.write_all(&[r.split.to_u8()])?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset file, validating magic, version, counts, and hash
/// uniqueness.
pub fn read_dataset(path: &Path) -> Result<(CoarseGrid, Vec<DatasetRecord>)> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format {
            what: "dataset",
            msg: format!("bad magic {magic:?}"),
        });
    }
    let version = read_u32(&mut input)?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            what: "dataset",
            msg: format!("unsupported version {version}"),
        });
    }
    let nx = read_u32(&mut input)? as usize;
    let ny = read_u32(&mut input)? as usize;
    let nxc = read_u32(&mut input)? as usize;
    let nyc = read_u32(&mut input)? as usize;
    let r = read_u32(&mut input)? as usize;
    if nxc * r != nx || nyc * r != ny {
        return Err(Error::Format {
            what: "dataset",
            msg: format!("inconsistent grid header {nx}x{ny}, {nxc}x{nyc}, r={r}"),
        });
    }
    let cg = CoarseGrid::new(FineGrid::new(nx, ny), r)?;
    let n_cells = cg.fine().n_cells();
    let n_records = read_u64(&mut input)? as usize;

    let mut records = Vec::with_capacity(n_records);
    let mut seen = std::collections::HashSet::new();
    for i in 0..n_records {
        let perm = read_f64s(&mut input, n_cells)?;
        let mut basis: [Vec<f64>; 4] = Default::default();
        for b in basis.iter_mut() {
            *b = read_f64s(&mut input, n_cells)?;
        }
        let pressure = read_f64s(&mut input, n_cells)?;
        let hash = read_u64(&mut input)?;
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        if !seen.insert(hash) {
            return Err(Error::Format {
                what: "dataset",
                msg: format!("record {i}: duplicate hash {hash:#x}"),
            });
        }
        records.push(DatasetRecord {
            perm,
            basis,
            pressure,
            hash,
            split: SplitTag::from_u8(tag[0])?,
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format {
            what: "dataset",
            msg: "trailing bytes after final record".to_string(),
        });
    }
    Ok((cg, records))
}
