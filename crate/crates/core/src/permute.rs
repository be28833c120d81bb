//! Block permutation of fMRI targets for the random-target baseline.
//!
//! Rows are cut into consecutive blocks of `block_len` TRs (the last block
//! may be shorter) and the blocks are reordered by a seeded cyclic
//! permutation, so no block stays in place. The permutation is drawn with
//! Sattolo's algorithm over [`SplitMix64`] seeded directly with `seed`:
//!
//! ```text
//! mapping = [0, 1, ..., n_blocks-1]
//! for i in (1..n_blocks).rev():
//!     j = rng.below(i)          // uniform in [0, i)
//!     swap(mapping[i], mapping[j])
//! ```
//!
//! Output block `k` is input block `mapping[k]`.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensorio::Matrix;

pub const DEFAULT_BLOCK_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    pub block_len_trs: usize,
    pub mapping: Vec<usize>,
    pub seed: u64,
}

impl BlockPermutation {
    pub fn new(n_trs: usize, block_len: usize, seed: u64) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::input("block length must be positive"));
        }
        if n_trs < 2 * block_len {
            return Err(Error::input(format!(
                "need at least {} TRs for block length {block_len}, got {n_trs}",
                2 * block_len
            )));
        }
        let n_blocks = n_trs.div_ceil(block_len);
        let mut mapping: Vec<usize> = (0..n_blocks).collect();
        let mut rng = SplitMix64::new(seed);
        for i in (1..n_blocks).rev() {
            let j = rng.below(i as u64) as usize;
            mapping.swap(i, j);
        }
        Ok(Self {
            block_len_trs: block_len,
            mapping,
            seed,
        })
    }

    /// Source row for each output row.
    pub fn row_order(&self, n_trs: usize) -> Vec<usize> {
        let bl = self.block_len_trs;
        self.mapping
            .iter()
            .flat_map(|&b| (b * bl)..((b + 1) * bl).min(n_trs))
            .collect()
    }

    pub fn apply(&self, y: &Matrix) -> Matrix {
        let order = self.row_order(y.nrows());
        Matrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(order[r], c)])
    }
}

pub fn block_permute(y: &Matrix, block_len: usize, seed: u64) -> Result<Matrix> {
    Ok(BlockPermutation::new(y.nrows(), block_len, seed)?.apply(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blocks_swap() {
        let y = Matrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let p = block_permute(&y, 2, 123).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn too_short_is_rejected() {
        let y = Matrix::zeros(19, 2);
        assert!(matches!(block_permute(&y, 10, 0), Err(Error::Input(_))));
    }

    #[test]
    fn short_last_block_moves_intact() {
        let n = 25;
        let y = Matrix::from_fn(n, 1, |r, _| r as f64);
        let perm = BlockPermutation::new(n, 10, 5).unwrap();
        assert_eq!(perm.mapping.len(), 3);
        let p = perm.apply(&y);
        let mut rows: Vec<f64> = p.iter().copied().collect();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, (0..n).map(|r| r as f64).collect::<Vec<_>>());
        // rows 20..25 stay contiguous
        let start = p.iter().position(|&v| v == 20.0).unwrap();
        for k in 0..5 {
            assert_eq!(p[(start + k, 0)], 20.0 + k as f64);
        }
    }
}
