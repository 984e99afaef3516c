//! High-contrast fractured permeability field generation.
//!
//! Fields live on the default 30×30 fine grid and store their values in the
//! canonical coarse-major order. A field is a constant matrix background with
//! a number of straight, axis-aligned fracture segments of much higher
//! permeability; parameters are drawn uniformly from small discrete sets.

use crate::error::{Error, Result};
use crate::grid::CoarseGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Admissible matrix permeabilities (millidarcy).
pub const K_M_VALUES: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Admissible fracture permeabilities (millidarcy).
pub const K_F_VALUES: [f64; 7] = [500.0, 750.0, 1000.0, 1250.0, 1500.0, 1750.0, 2000.0];
/// Fracture count bounds (inclusive).
pub const N_FRAC_RANGE: (usize, usize) = (1, 25);
/// Fracture length bounds in fine cells (inclusive).
pub const FRAC_LEN_RANGE: (usize, usize) = (2, 30);

/// Fracture segment orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// A straight fracture segment on the fine grid.
#[derive(Debug, Clone, Copy)]
pub struct FractureSpec {
    pub orientation: Orientation,
    /// Start cell (i, j).
    pub start: (usize, usize),
    /// Length in fine cells.
    pub length: usize,
}

impl FractureSpec {
    /// The fine-cell (i, j) coordinates covered by the segment.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let (i0, j0) = self.start;
        (0..self.length)
            .map(|k| match self.orientation {
                Orientation::Horizontal => (i0 + k, j0),
                Orientation::Vertical => (i0, j0 + k),
            })
            .collect()
    }
}

/// Dataset split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    /// Stable byte encoding used by the dataset file format.
    pub fn to_u8(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
            SplitTag::Test => 2,
        }
    }

    /// Inverse of [`to_u8`](Self::to_u8).
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(SplitTag::Train),
            1 => Ok(SplitTag::Val),
            2 => Ok(SplitTag::Test),
            _ => Err(Error::Format {
                what: "split tag",
                msg: format!("unknown tag byte {v}"),
            }),
        }
    }
}

/// A generated permeability field in canonical coarse-major order.
#[derive(Debug, Clone)]
pub struct PermField {
    /// Permeability per fine cell, canonical coarse-major order.
    pub values: Vec<f64>,
    /// Matrix permeability.
    pub k_m: f64,
    /// Fracture permeability.
    pub k_f: f64,
    /// Number of fracture segments.
    pub n_frac: usize,
    /// Generation seed.
    pub seed: u64,
    /// The fracture segments that were placed.
    pub fractures: Vec<FractureSpec>,
}

impl PermField {
    /// Values in row-major fine-cell order (the 30×30 spatial layout).
    pub fn to_row_major(&self, grid: &CoarseGrid) -> Vec<f64> {
        grid.canonical_to_row_major(&self.values)
            .expect("canonical field length matches grid")
    }
}

/// Mix a master seed with a stream index into an independent sub-seed
/// (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one fractured field. Deterministic for a fixed seed.
pub fn sample_perm(grid: &CoarseGrid, seed: u64) -> PermField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (grid.fine().nx, grid.fine().ny);

    let k_m = K_M_VALUES[rng.gen_range(0..K_M_VALUES.len())];
    let k_f = K_F_VALUES[rng.gen_range(0..K_F_VALUES.len())];
    let n_frac = rng.gen_range(N_FRAC_RANGE.0..=N_FRAC_RANGE.1);

    let max_len = FRAC_LEN_RANGE.1.min(nx).min(ny);
    let mut row_major = vec![k_m; grid.fine().n_cells()];
    let mut fractures = Vec::with_capacity(n_frac);
    for _ in 0..n_frac {
        let orientation = if rng.gen_bool(0.5) {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        };
        let length = rng.gen_range(FRAC_LEN_RANGE.0..=max_len);
        let start = match orientation {
            Orientation::Horizontal => (rng.gen_range(0..=nx - length), rng.gen_range(0..ny)),
            Orientation::Vertical => (rng.gen_range(0..nx), rng.gen_range(0..=ny - length)),
        };
        let spec = FractureSpec {
            orientation,
            start,
            length,
        };
        for (i, j) in spec.cells() {
            row_major[grid.fine().cell_index(i, j)] = k_f;
        }
        fractures.push(spec);
    }

    let values = grid
        .row_major_to_canonical(&row_major)
        .expect("row-major length matches grid");
    PermField {
        values,
        k_m,
        k_f,
        n_frac,
        seed,
        fractures,
    }
}

/// Smooth positive background field from a truncated cosine series with
/// exponentially decaying coefficients; canonical coarse-major order.
/// Off by default in the dataset pipeline.
pub fn smooth_background(grid: &CoarseGrid, seed: u64, correlation_length: f64) -> Result<Vec<f64>> {
    if correlation_length <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "correlation_length",
            msg: format!("must be positive, got {correlation_length}"),
        });
    }
    const MODES: usize = 8;
    const AMPLITUDE: f64 = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Coefficient layout is fixed (k-major) so draws are reproducible.
    let mut coef = [[0.0; MODES + 1]; MODES + 1];
    for (k, row) in coef.iter_mut().enumerate() {
        for (l, c) in row.iter_mut().enumerate() {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            let decay = (-(((k * k + l * l) as f64) * correlation_length.powi(2)) / 2.0).exp();
            *c = AMPLITUDE * xi * decay;
        }
    }

    let fine = grid.fine();
    let mut row_major = vec![0.0; fine.n_cells()];
    for j in 0..fine.ny {
        for i in 0..fine.nx {
            let (x, y) = fine.cell_center(i, j);
            let mut g = 0.0;
            for (k, row) in coef.iter().enumerate() {
                for (l, &c) in row.iter().enumerate() {
                    g += c * (std::f64::consts::PI * k as f64 * x).cos()
                        * (std::f64::consts::PI * l as f64 * y).cos();
                }
            }
            row_major[fine.cell_index(i, j)] = g.exp();
        }
    }
    grid.row_major_to_canonical(&row_major)
}

/// 64-bit content digest over the canonical byte encoding of the values.
pub fn content_hash(field: &PermField) -> u64 {
    let mut hasher = Sha256::new();
    for v in &field.values {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Drop fields whose digest was already seen, keeping first occurrences.
pub fn dedup_fields(fields: Vec<PermField>) -> Vec<PermField> {
    let mut seen = std::collections::HashSet::new();
    fields
        .into_iter()
        .filter(|f| seen.insert(content_hash(f)))
        .collect()
}

/// Assign 6:2:2 train/val/test tags by a deterministic shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<SplitTag> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x53504c4954)); // "SPLIT" stream
    // Fisher–Yates with a fixed draw order.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (0.6 * n as f64).round() as usize;
    let n_trainval = (0.8 * n as f64).round() as usize;
    let mut tags = vec![SplitTag::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        tags[idx] = if rank < n_train {
            SplitTag::Train
        } else if rank < n_trainval {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    tags
}

/// Generate `n_samples` fields, deduplicate by content hash, and tag splits.
pub fn build_dataset(grid: &CoarseGrid, n_samples: usize, seed: u64) -> Vec<(PermField, SplitTag)> {
    let fields: Vec<PermField> = (0..n_samples)
        .map(|i| sample_perm(grid, derive_seed(seed, i as u64)))
        .collect();
    let deduped = dedup_fields(fields);
    let tags = assign_splits(deduped.len(), seed);
    deduped.into_iter().zip(tags).collect()
}
