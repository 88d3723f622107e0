//! Move blocking over a shrinking horizon.
//!
//! At time `k` the remaining `k_f - k` predicted moves are grouped into
//! `N(k)` consecutive blocks. Each block holds one free value, repeated for
//! every move in the block. Blocks are anchored at the terminal step: every
//! block except the first spans exactly `L` moves, and the first block takes
//! the remainder (between 1 and `L` moves). When `L` divides `k_f` this is
//! the same as aligning block boundaries to absolute multiples of `L`.
//!
//! ```
//! use sbpc::blocking::{BlockingPolicy, BlockingVariant};
//!
//! let policy = BlockingPolicy::new(20, 60, BlockingVariant::ShrinkingN).unwrap();
//! assert_eq!(policy.num_blocks(0).unwrap(), 3);
//! assert_eq!(policy.num_blocks(20).unwrap(), 2);
//! assert_eq!(policy.block_lengths(10).unwrap(), vec![10, 20, 20]);
//! ```

use crate::dynamics::Action;
use crate::error::{arg_error, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockingVariant {
    /// `N(k) = ceil((k_f - k) / L)`; the first block shrinks as time advances.
    ShrinkingN,
    /// Keep `N = N(0)` free values for as long as possible, shortening the
    /// earliest blocks first; once fewer than `N` moves remain every move is
    /// free.
    ConstantN,
}

/// Block length `L`, terminal step `k_f` and variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockingPolicy {
    block_length: usize,
    horizon: usize,
    variant: BlockingVariant,
}

impl BlockingPolicy {
    pub fn new(block_length: usize, horizon: usize, variant: BlockingVariant) -> Result<Self> {
        if horizon == 0 {
            return Err(arg_error("k_f", "terminal step must be >= 1"));
        }
        if block_length == 0 || block_length > horizon {
            return Err(arg_error("L", format!("must satisfy 1 <= L <= k_f = {horizon}, got {block_length}")));
        }
        Ok(BlockingPolicy { block_length, horizon, variant })
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    /// Terminal step `k_f`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn variant(&self) -> BlockingVariant {
        self.variant
    }

    fn check_k(&self, k: usize) -> Result<usize> {
        if k >= self.horizon {
            return Err(arg_error("k", format!("must satisfy 0 <= k <= k_f - 1 = {}, got {k}", self.horizon - 1)));
        }
        Ok(self.horizon - k)
    }

    /// Number of free values `N(k)`.
    pub fn num_blocks(&self, k: usize) -> Result<usize> {
        let remaining = self.check_k(k)?;
        let shrinking = remaining.div_ceil(self.block_length);
        Ok(match self.variant {
            BlockingVariant::ShrinkingN => shrinking,
            BlockingVariant::ConstantN => {
                let initial = self.horizon.div_ceil(self.block_length);
                initial.min(remaining)
            }
        })
    }

    /// Number of moves in each block at time `k`, first block first.
    pub fn block_lengths(&self, k: usize) -> Result<Vec<usize>> {
        let remaining = self.check_k(k)?;
        let n = self.num_blocks(k)?;
        let mut lengths = vec![0; n];
        let mut left = remaining;
        for i in (0..n).rev() {
            // Every earlier block keeps at least one move.
            let len = self.block_length.min(left - i);
            lengths[i] = len;
            left -= len;
        }
        debug_assert_eq!(left, 0);
        Ok(lengths)
    }

    /// 1-based block holding prediction offset `j` at time `k`.
    pub fn block_index(&self, j: usize, k: usize) -> Result<usize> {
        let remaining = self.check_k(k)?;
        if j >= remaining {
            return Err(arg_error("j", format!("must satisfy 0 <= j <= k_f - k - 1 = {}, got {j}", remaining - 1)));
        }
        match self.variant {
            BlockingVariant::ShrinkingN => {
                let n = self.num_blocks(k)?;
                Ok(n - (remaining - 1 - j) / self.block_length)
            }
            BlockingVariant::ConstantN => {
                let mut end = 0;
                for (b, len) in self.block_lengths(k)?.into_iter().enumerate() {
                    end += len;
                    if j < end {
                        return Ok(b + 1);
                    }
                }
                unreachable!("block lengths cover the horizon")
            }
        }
    }
}

/// The `N(k)` free values optimized at time `k_origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockedSequence<T = Action> {
    pub values: Vec<T>,
    pub k_origin: usize,
    pub policy: BlockingPolicy,
}

impl<T: Clone> BlockedSequence<T> {
    pub fn new(values: Vec<T>, k_origin: usize, policy: BlockingPolicy) -> Result<Self> {
        let n = policy.num_blocks(k_origin)?;
        if values.len() != n {
            return Err(arg_error("v", format!("expected N({k_origin}) = {n} free values, got {}", values.len())));
        }
        Ok(BlockedSequence { values, k_origin, policy })
    }

    /// Full predicted input sequence `u(0|k), ..., u(k_f-k-1|k)`.
    pub fn expand(&self, k: usize) -> Result<Vec<T>> {
        if k != self.k_origin {
            return Err(Error::Consistency { built_for: self.k_origin, used_at: k });
        }
        let lengths = self.policy.block_lengths(k)?;
        Ok(lengths
            .iter()
            .zip(&self.values)
            .flat_map(|(&len, v)| std::iter::repeat_n(v.clone(), len))
            .collect())
    }

    /// Value applied at the current step, `v(1)`.
    pub fn first(&self) -> &T {
        &self.values[0]
    }

    /// Candidate for time `k_origin + 1` whose expansion equals this
    /// sequence's expansion with the first move removed.
    ///
    /// For [`BlockingVariant::ShrinkingN`] this is the sequence itself when
    /// `N` is unchanged and the tail `v(2..N)` when `N` drops by one.
    pub fn warm_start_tail(&self) -> Result<Self> {
        let next = self.k_origin + 1;
        let lengths = self.policy.block_lengths(next)?;
        let expanded = self.expand(self.k_origin)?;
        let mut start = 0;
        let mut values = Vec::with_capacity(lengths.len());
        for len in lengths {
            values.push(expanded[start + 1].clone());
            start += len;
        }
        Ok(BlockedSequence { values, k_origin: next, policy: self.policy })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shrinking(l: usize, kf: usize) -> BlockingPolicy {
        BlockingPolicy::new(l, kf, BlockingVariant::ShrinkingN).unwrap()
    }

    /// Block index straight from the absolute-alignment formula
    /// `floor((j + k - floor(k/L) L) / L) + 1`.
    fn absolute_index(j: usize, k: usize, l: usize) -> usize {
        (j + k - (k / l) * l) / l + 1
    }

    #[test]
    fn figure_values() {
        let p = shrinking(20, 60);
        assert_eq!(p.num_blocks(0).unwrap(), 3);
        assert_eq!(p.num_blocks(20).unwrap(), 2);
        assert_eq!(p.num_blocks(59).unwrap(), 1);
        assert_eq!(shrinking(7, 60).num_blocks(59).unwrap(), 1);
    }

    #[test]
    fn block_index_examples() {
        let p = shrinking(20, 60);
        assert_eq!(p.block_index(0, 0).unwrap(), 1);
        assert_eq!(p.block_index(9, 10).unwrap(), 1);
        assert_eq!(p.block_index(10, 10).unwrap(), 2);
        assert_eq!(p.block_index(14, 25).unwrap(), 1);
        assert_eq!(p.block_index(15, 25).unwrap(), 2);
    }

    #[test]
    fn matches_absolute_alignment_when_l_divides_kf() {
        for l in 1..=12 {
            for m in 1..=6 {
                let kf = l * m;
                let p = shrinking(l, kf);
                for k in 0..kf {
                    for j in 0..kf - k {
                        assert_eq!(p.block_index(j, k).unwrap(), absolute_index(j, k, l), "L={l} kf={kf} k={k} j={j}");
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_range_arguments() {
        let p = shrinking(2, 4);
        assert!(p.num_blocks(4).is_err());
        assert!(p.block_index(3, 1).is_err());
        assert!(BlockingPolicy::new(0, 4, BlockingVariant::ShrinkingN).is_err());
        assert!(BlockingPolicy::new(5, 4, BlockingVariant::ShrinkingN).is_err());
    }

    #[test]
    fn expand_examples() {
        let p = shrinking(2, 4);
        let seq = BlockedSequence::new(vec!['a', 'b'], 0, p).unwrap();
        assert_eq!(seq.expand(0).unwrap(), vec!['a', 'a', 'b', 'b']);
        let seq = BlockedSequence::new(vec!['a', 'b'], 1, p).unwrap();
        assert_eq!(seq.expand(1).unwrap(), vec!['a', 'b', 'b']);
        assert!(matches!(seq.expand(0), Err(Error::Consistency { built_for: 1, used_at: 0 })));
        let one = BlockedSequence::new(vec!['z'], 3, p).unwrap();
        assert_eq!(one.expand(3).unwrap(), vec!['z']);
    }

    #[test]
    fn tail_examples() {
        let p = shrinking(2, 6);
        let seq = BlockedSequence::new(vec!['a', 'b', 'c'], 0, p).unwrap();
        assert_eq!(seq.warm_start_tail().unwrap().values, vec!['a', 'b', 'c']);
        let seq = BlockedSequence::new(vec!['a', 'b', 'c'], 1, p).unwrap();
        assert_eq!(seq.warm_start_tail().unwrap().values, vec!['b', 'c']);
    }

    #[test]
    fn constant_n_keeps_block_count() {
        let p = BlockingPolicy::new(20, 60, BlockingVariant::ConstantN).unwrap();
        assert_eq!(p.block_lengths(0).unwrap(), vec![20, 20, 20]);
        assert_eq!(p.block_lengths(1).unwrap(), vec![19, 20, 20]);
        assert_eq!(p.block_lengths(20).unwrap(), vec![1, 19, 20]);
        assert_eq!(p.block_lengths(57).unwrap(), vec![1, 1, 1]);
        assert_eq!(p.block_lengths(58).unwrap(), vec![1, 1]);
    }

    fn check_partition(p: &BlockingPolicy, k: usize) {
        let kf = p.horizon();
        let n = p.num_blocks(k).unwrap();
        let idx: Vec<usize> = (0..kf - k).map(|j| p.block_index(j, k).unwrap()).collect();
        assert_eq!(idx[0], 1);
        assert_eq!(*idx.last().unwrap(), n);
        assert!(idx.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        let lengths = p.block_lengths(k).unwrap();
        assert_eq!(lengths.iter().sum::<usize>(), kf - k);
        for b in 1..=n {
            assert_eq!(idx.iter().filter(|&&i| i == b).count(), lengths[b - 1]);
        }
        assert!((1..=p.block_length()).contains(&lengths[0]));
        if p.variant() == BlockingVariant::ShrinkingN {
            assert!(lengths[1..].iter().all(|&len| len == p.block_length()));
        }
    }

    #[test]
    fn partition_and_tail_on_grid() {
        for kf in 1..=40 {
            for l in 1..=kf {
                for variant in [BlockingVariant::ShrinkingN, BlockingVariant::ConstantN] {
                    let p = BlockingPolicy::new(l, kf, variant).unwrap();
                    let mut last_n = usize::MAX;
                    for k in 0..kf {
                        check_partition(&p, k);
                        let n = p.num_blocks(k).unwrap();
                        assert!(n <= last_n);
                        last_n = n;
                        if k + 1 < kf {
                            let values: Vec<usize> = (0..n).collect();
                            let seq = BlockedSequence::new(values, k, p).unwrap();
                            let tail = seq.warm_start_tail().unwrap();
                            assert_eq!(tail.expand(k + 1).unwrap(), seq.expand(k).unwrap()[1..].to_vec());
                        }
                    }
                    assert_eq!(p.num_blocks(kf - 1).unwrap(), 1);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn expansion_runs_equal_block_count(kf in 1usize..200, l_frac in 0.0..1.0f64, k_frac in 0.0..1.0f64) {
            let l = 1 + ((kf - 1) as f64 * l_frac) as usize;
            let k = ((kf - 1) as f64 * k_frac) as usize;
            let p = shrinking(l, kf);
            check_partition(&p, k);
            let n = p.num_blocks(k).unwrap();
            let seq = BlockedSequence::new((0..n).collect::<Vec<_>>(), k, p).unwrap();
            let u = seq.expand(k).unwrap();
            let runs = 1 + u.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(runs, n);
        }
    }
}
