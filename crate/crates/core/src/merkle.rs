//! Degree-d Merkle trees, inclusion proofs and Merkle mountain ranges.
//!
//! Node encodings are domain separated:
//!
//! * leaf:     `H(0x00 || leaf_bytes)`
//! * internal: `H(0x01 || child_0 || .. || child_{d-1})`
//! * range:    `H(0x02 || peak_1 || .. || peak_n)`
//!
//! A tree whose leaf count is not a power of `d` is padded on the right with
//! [`SENTINEL`] leaf digests. Mountain ranges split `N` leaves into trees of
//! decreasing power-of-two sizes, one per set bit of `N`.

use thiserror::Error;

use crate::crypto::{hash_parts, Digest};

pub const LEAF_PREFIX: u8 = 0x00;
pub const NODE_PREFIX: u8 = 0x01;
pub const RANGE_PREFIX: u8 = 0x02;

/// Digest occupying padding leaf positions. It has no known preimage under
/// [`leaf_hash`], so no committee can ever be revealed there.
pub const SENTINEL: Digest = Digest::ZERO;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("tree degree must be at least 2, got {0}")]
    DegreeTooSmall(usize),
    #[error("cannot build a tree over zero leaves")]
    Empty,
    #[error("path of length {len} does not address an internal node of a depth-{depth} tree")]
    NotInternal { len: usize, depth: usize },
    #[error("child index {index} out of range for degree {degree}")]
    BadChild { index: usize, degree: usize },
    #[error("leaf index {index} out of range for size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
}

pub fn leaf_hash(bytes: &[u8]) -> Digest {
    hash_parts([&[LEAF_PREFIX][..], bytes])
}

pub fn node_hash(children: &[Digest]) -> Digest {
    hash_parts(std::iter::once(&[NODE_PREFIX][..]).chain(children.iter().map(|c| &c.0[..])))
}

pub fn mmr_root(peaks: &[Digest]) -> Digest {
    hash_parts(std::iter::once(&[RANGE_PREFIX][..]).chain(peaks.iter().map(|c| &c.0[..])))
}

/// Number of levels above the leaves: the smallest `k` with `d^k >= size`.
pub fn tree_depth(size: u64, degree: usize) -> usize {
    let d = degree as u64;
    let mut depth = 0;
    let mut width = 1u64;
    while width < size {
        width = width.saturating_mul(d);
        depth += 1;
    }
    depth
}

/// Digest of a subtree of the given height consisting only of padding.
pub fn padding_digest(degree: usize, height: usize) -> Digest {
    let mut cur = SENTINEL;
    for _ in 0..height {
        cur = node_hash(&vec![cur; degree]);
    }
    cur
}

fn check_degree(degree: usize) -> Result<(), MerkleError> {
    if degree < 2 {
        return Err(MerkleError::DegreeTooSmall(degree));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    degree: usize,
    size: u64,
    /// `levels[0]` holds the (padded) leaf digests, the last level the root.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn from_leaves<L: AsRef<[u8]>>(leaves: &[L], degree: usize) -> Result<Self, MerkleError> {
        check_degree(degree)?;
        let digests = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
        Self::from_leaf_digests(digests, degree)
    }

    pub fn from_leaf_digests(mut leaves: Vec<Digest>, degree: usize) -> Result<Self, MerkleError> {
        check_degree(degree)?;
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let size = leaves.len() as u64;
        let depth = tree_depth(size, degree);
        let width = degree.pow(depth as u32);
        leaves.resize(width, SENTINEL);

        let mut levels = Vec::with_capacity(depth + 1);
        levels.push(leaves);
        for _ in 0..depth {
            let next = levels.last().expect("at least one level").chunks(degree).map(node_hash).collect();
            levels.push(next);
        }
        Ok(MerkleTree { degree, size, levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaf_digest(&self, index: u64) -> Option<Digest> {
        (index < self.size).then(|| self.levels[0][index as usize])
    }

    fn node_position(&self, path: &[usize]) -> Result<(usize, usize), MerkleError> {
        let depth = self.depth();
        if path.len() > depth {
            return Err(MerkleError::NotInternal { len: path.len(), depth });
        }
        let mut index = 0usize;
        for &c in path {
            if c >= self.degree {
                return Err(MerkleError::BadChild { index: c, degree: self.degree });
            }
            index = index * self.degree + c;
        }
        Ok((depth - path.len(), index))
    }

    /// Digest of the node reached by following `path` (child indices) from the root.
    pub fn node(&self, path: &[usize]) -> Result<Digest, MerkleError> {
        let (level, index) = self.node_position(path)?;
        Ok(self.levels[level][index])
    }

    /// The `d` children of the internal node at `path`, in order.
    pub fn children(&self, path: &[usize]) -> Result<&[Digest], MerkleError> {
        let (level, index) = self.node_position(path)?;
        if level == 0 {
            return Err(MerkleError::NotInternal { len: path.len(), depth: self.depth() });
        }
        let start = index * self.degree;
        Ok(&self.levels[level - 1][start..start + self.degree])
    }

    pub fn prove(&self, index: u64) -> Result<MerkleProof, MerkleError> {
        if index >= self.size {
            return Err(MerkleError::IndexOutOfRange { index, size: self.size });
        }
        let mut siblings = Vec::with_capacity(self.depth());
        let mut idx = index as usize;
        for level in &self.levels[..self.depth()] {
            let start = idx - idx % self.degree;
            let group = (start..start + self.degree).filter(|&i| i != idx).map(|i| level[i]).collect();
            siblings.push(group);
            idx /= self.degree;
        }
        Ok(MerkleProof { index, size: self.size, siblings })
    }
}

/// Inclusion proof: for each level from the leaves up, the `d - 1` sibling
/// digests of the node on the path, in tree order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub index: u64,
    pub size: u64,
    pub siblings: Vec<Vec<Digest>>,
}

impl MerkleProof {
    /// Root implied by this proof for the given leaf digest, or `None` if the
    /// proof is not shaped like a proof for a degree-`degree` tree of its size.
    pub fn implied_root(&self, leaf: Digest, degree: usize) -> Option<Digest> {
        if degree < 2
            || self.index >= self.size
            || self.siblings.len() != tree_depth(self.size, degree)
            || self.siblings.iter().any(|g| g.len() != degree - 1)
        {
            return None;
        }
        let mut cur = leaf;
        let mut idx = self.index;
        let mut buf = Vec::with_capacity(degree);
        for group in &self.siblings {
            let pos = (idx % degree as u64) as usize;
            buf.clear();
            buf.extend_from_slice(&group[..pos]);
            buf.push(cur);
            buf.extend_from_slice(&group[pos..]);
            cur = node_hash(&buf);
            idx /= degree as u64;
        }
        Some(cur)
    }

    pub fn verify_digest(&self, root: Digest, size: u64, index: u64, leaf: Digest, degree: usize) -> bool {
        self.size == size && self.index == index && self.implied_root(leaf, degree) == Some(root)
    }

    pub fn verify(&self, root: Digest, size: u64, index: u64, leaf_bytes: &[u8], degree: usize) -> bool {
        self.verify_digest(root, size, index, leaf_hash(leaf_bytes), degree)
    }
}

/// Free-function form of [`MerkleProof::verify`]; never errors, returns `false` on any mismatch.
pub fn verify_proof(
    proof: &MerkleProof,
    root: Digest,
    size: u64,
    index: u64,
    leaf_bytes: &[u8],
    degree: usize,
) -> bool {
    proof.verify(root, size, index, leaf_bytes, degree)
}

/// Tree sizes of a mountain range over `n` leaves, largest first.
pub fn mmr_sizes(n: u64) -> Vec<u64> {
    (0..64).rev().map(|bit| 1u64 << bit).filter(|s| n & s != 0).collect()
}

/// Maps a global leaf index to `(tree index, local leaf index)`.
pub fn mmr_locate(n: u64, global: u64) -> Result<(usize, u64), MerkleError> {
    if global >= n {
        return Err(MerkleError::IndexOutOfRange { index: global, size: n });
    }
    let mut offset = 0;
    for (tree, size) in mmr_sizes(n).into_iter().enumerate() {
        if global < offset + size {
            return Ok((tree, global - offset));
        }
        offset += size;
    }
    unreachable!("sizes sum to n")
}

/// Inverse of [`mmr_locate`].
pub fn mmr_global(n: u64, tree: usize, local: u64) -> Result<u64, MerkleError> {
    let sizes = mmr_sizes(n);
    match sizes.get(tree) {
        Some(&size) if local < size => Ok(sizes[..tree].iter().sum::<u64>() + local),
        _ => Err(MerkleError::IndexOutOfRange { index: local, size: n }),
    }
}

#[derive(Clone, Debug)]
pub struct MountainRange {
    size: u64,
    trees: Vec<MerkleTree>,
    offsets: Vec<u64>,
}

impl MountainRange {
    pub fn from_leaves<L: AsRef<[u8]>>(leaves: &[L], degree: usize) -> Result<Self, MerkleError> {
        check_degree(degree)?;
        let digests = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
        Self::from_leaf_digests(digests, degree)
    }

    pub fn from_leaf_digests(leaves: Vec<Digest>, degree: usize) -> Result<Self, MerkleError> {
        check_degree(degree)?;
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let n = leaves.len() as u64;
        let mut trees = Vec::new();
        let mut offsets = Vec::new();
        let mut offset = 0u64;
        for size in mmr_sizes(n) {
            let chunk = leaves[offset as usize..(offset + size) as usize].to_vec();
            trees.push(MerkleTree::from_leaf_digests(chunk, degree)?);
            offsets.push(offset);
            offset += size;
        }
        Ok(MountainRange { size: n, trees, offsets })
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn trees(&self) -> &[MerkleTree] {
        &self.trees
    }

    pub fn tree(&self, index: usize) -> Option<&MerkleTree> {
        self.trees.get(index)
    }

    /// Global index of the first leaf of each tree.
    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn peaks(&self) -> Vec<Digest> {
        self.trees.iter().map(MerkleTree::root).collect()
    }

    pub fn root(&self) -> Digest {
        mmr_root(&self.peaks())
    }

    pub fn locate(&self, global: u64) -> Result<(usize, u64), MerkleError> {
        mmr_locate(self.size, global)
    }

    pub fn leaf_digest(&self, global: u64) -> Option<Digest> {
        let (tree, local) = self.locate(global).ok()?;
        self.trees[tree].leaf_digest(local)
    }

    /// Proof of a global leaf against the peak of the tree that holds it.
    pub fn prove(&self, global: u64) -> Result<(usize, MerkleProof), MerkleError> {
        let (tree, local) = self.locate(global)?;
        Ok((tree, self.trees[tree].prove(local)?))
    }
}
