use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;

/// One quadrant of a joint-label operator, rows before columns:
/// `Sn` relates seen rows to novel columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Ss,
    Sn,
    Ns,
    Nn,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::Ss, Block::Sn, Block::Ns, Block::Nn];

    fn bit(self) -> u8 {
        match self {
            Block::Ss => 1,
            Block::Sn => 2,
            Block::Ns => 4,
            Block::Nn => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Ss => "ss",
            Block::Sn => "sn",
            Block::Ns => "ns",
            Block::Nn => "nn",
        }
    }
}

/// A subset of the four blocks.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Block>", into = "Vec<Block>")]
pub struct BlockSet(u8);

impl BlockSet {
    pub const ALL: BlockSet = BlockSet(15);
    pub const NONE: BlockSet = BlockSet(0);

    pub fn only(block: Block) -> Self {
        BlockSet(block.bit())
    }

    pub fn contains(self, block: Block) -> bool {
        self.0 & block.bit() != 0
    }

    pub fn is_all(self) -> bool {
        self == Self::ALL
    }

    pub fn blocks(self) -> Vec<Block> {
        Block::ALL.into_iter().filter(|b| self.contains(*b)).collect()
    }
}

impl From<Vec<Block>> for BlockSet {
    fn from(v: Vec<Block>) -> Self {
        BlockSet(v.into_iter().fold(0, |acc, b| acc | b.bit()))
    }
}

impl From<BlockSet> for Vec<Block> {
    fn from(s: BlockSet) -> Self {
        s.blocks()
    }
}

impl fmt::Debug for BlockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.blocks().into_iter().map(Block::name).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Seen/novel partition of a joint label space: seen classes come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_seen: usize,
    pub n_novel: usize,
}

impl Layout {
    pub fn new(n_seen: usize, n_novel: usize) -> Self {
        Self { n_seen, n_novel }
    }

    pub fn size(&self) -> usize {
        self.n_seen + self.n_novel
    }

    pub fn block_of(&self, i: usize, j: usize) -> Block {
        match (i < self.n_seen, j < self.n_seen) {
            (true, true) => Block::Ss,
            (true, false) => Block::Sn,
            (false, true) => Block::Ns,
            (false, false) => Block::Nn,
        }
    }

    /// 0/1 matrix selecting the entries of `keep`.
    pub fn mask(&self, keep: BlockSet) -> Matrix {
        let n = self.size();
        Matrix::from_fn(n, n, |i, j| if keep.contains(self.block_of(i, j)) { 1.0 } else { 0.0 })
    }
}

/// The block-identity operators: identity on the seen block and on the
/// novel block respectively, zero elsewhere.
pub fn auxiliary_operators(layout: Layout) -> (Matrix, Matrix) {
    let n = layout.size();
    let seen = Matrix::from_fn(n, n, |i, j| if i == j && i < layout.n_seen { 1.0 } else { 0.0 });
    let novel = Matrix::from_fn(n, n, |i, j| if i == j && i >= layout.n_seen { 1.0 } else { 0.0 });
    (seen, novel)
}

/// Zeroes every block of `b` not in `keep`.
pub fn mask_blocks(b: &Matrix, layout: Layout, keep: BlockSet) -> Matrix {
    assert_eq!(b.shape(), (layout.size(), layout.size()), "operator does not match layout");
    Matrix::from_fn(b.rows(), b.cols(), |i, j| {
        if keep.contains(layout.block_of(i, j)) {
            b.get(i, j)
        } else {
            0.0
        }
    })
}

/// Splits `b` into its four single-block operators, in [`Block::ALL`] order.
pub fn split_blocks(b: &Matrix, layout: Layout) -> [Matrix; 4] {
    Block::ALL.map(|blk| mask_blocks(b, layout, BlockSet::only(blk)))
}
