//! Coordinates of the stacked moment vector.
//!
//! Second-order blocks come first, `(1,2), (1,3), …, (1,p), (2,3), …, (p-1,p)`,
//! followed (order 3) by the triples `j < s < t` with the rightmost index
//! running fastest. Each block is vectorised column-major: entry `(c_j, c_t)`
//! of a `d_j × d_t` block sits at `c_j + d_j·c_t`, and entry `(c_j, c_s, c_t)`
//! of a triple block at `c_j + d_j·(c_s + d_s·c_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{MeldError, Result};

/// Highest moment order used by the moment vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MomentOrder {
    Second,
    Third,
}

impl MomentOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            MomentOrder::Second => 2,
            MomentOrder::Third => 3,
        }
    }

    /// Minimum number of variables for which the moment vector is non-empty.
    pub fn min_variables(self) -> usize {
        self.as_u8() as usize
    }
}

impl TryFrom<u8> for MomentOrder {
    type Error = MeldError;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            2 => Ok(MomentOrder::Second),
            3 => Ok(MomentOrder::Third),
            other => Err(MeldError::InvalidParameter(format!(
                "moment order must be 2 or 3, got {other}"
            ))),
        }
    }
}

impl From<MomentOrder> for u8 {
    fn from(order: MomentOrder) -> u8 {
        order.as_u8()
    }
}

impl std::fmt::Display for MomentOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairBlock {
    pub j: usize,
    pub t: usize,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleBlock {
    pub j: usize,
    pub s: usize,
    pub t: usize,
    pub offset: usize,
}

/// A block and the cell inside it that a coordinate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Pair { j: usize, t: usize, cj: usize, ct: usize },
    Triple { j: usize, s: usize, t: usize, cj: usize, cs: usize, ct: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentVectorLayout {
    order: MomentOrder,
    dims: Vec<usize>,
    pairs: Vec<PairBlock>,
    triples: Vec<TripleBlock>,
    // dense p×p and p×p×p lookup of block ordinals; usize::MAX off the j<t / j<s<t wedge
    pair_lookup: Vec<usize>,
    triple_lookup: Vec<usize>,
    second_len: usize,
    len: usize,
}

impl MomentVectorLayout {
    pub fn new(dims: &[usize], order: MomentOrder) -> Result<Self> {
        let p = dims.len();
        if p < order.min_variables() {
            return Err(MeldError::Precondition(format!(
                "order-{order} moments need at least {} variables, found {p}",
                order.min_variables()
            )));
        }
        if dims.contains(&0) {
            return Err(MeldError::Dimension("zero-dimensional variable".into()));
        }
        let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
        let mut pair_lookup = vec![usize::MAX; p * p];
        let mut offset = 0;
        for j in 0..p {
            for t in j + 1..p {
                pair_lookup[j * p + t] = pairs.len();
                pairs.push(PairBlock { j, t, offset });
                offset += dims[j] * dims[t];
            }
        }
        let second_len = offset;
        let mut triples = Vec::new();
        let mut triple_lookup = Vec::new();
        if order == MomentOrder::Third {
            triple_lookup = vec![usize::MAX; p * p * p];
            for j in 0..p {
                for s in j + 1..p {
                    for t in s + 1..p {
                        triple_lookup[(j * p + s) * p + t] = triples.len();
                        triples.push(TripleBlock { j, s, t, offset });
                        offset += dims[j] * dims[s] * dims[t];
                    }
                }
            }
        }
        Ok(Self {
            order,
            dims: dims.to_vec(),
            pairs,
            triples,
            pair_lookup,
            triple_lookup,
            second_len,
            len: offset,
        })
    }

    pub fn order(&self) -> MomentOrder {
        self.order
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn p(&self) -> usize {
        self.dims.len()
    }

    /// Total number of coordinates.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of coordinates belonging to the second-order section (a prefix).
    pub fn second_order_len(&self) -> usize {
        self.second_len
    }

    /// Length of the moment vector truncated to `order`.
    pub fn len_for(&self, order: MomentOrder) -> usize {
        match order {
            MomentOrder::Second => self.second_len,
            MomentOrder::Third => self.len,
        }
    }

    pub fn pairs(&self) -> &[PairBlock] {
        &self.pairs
    }

    pub fn triples(&self) -> &[TripleBlock] {
        &self.triples
    }

    /// Block for `j < t`.
    #[inline]
    pub fn pair_block(&self, j: usize, t: usize) -> &PairBlock {
        debug_assert!(j < t);
        &self.pairs[self.pair_lookup[j * self.p() + t]]
    }

    /// Block for `j < s < t`.
    #[inline]
    pub fn triple_block(&self, j: usize, s: usize, t: usize) -> &TripleBlock {
        debug_assert!(j < s && s < t);
        let p = self.p();
        &self.triples[self.triple_lookup[(j * p + s) * p + t]]
    }

    /// Coordinate of entry `(cj, ct)` of the pair `(j, t)`, for either orientation
    /// of `j != t` (the lower orientation is the transpose of the stored block).
    #[inline]
    pub fn pair_index(&self, j: usize, t: usize, cj: usize, ct: usize) -> usize {
        if j < t {
            self.pair_block(j, t).offset + cj + self.dims[j] * ct
        } else {
            self.pair_block(t, j).offset + ct + self.dims[t] * cj
        }
    }

    /// Coordinate of entry `(ca, cb, cc)` for distinct variables `(a, b, c)` in
    /// any order; the stored block is the sorted triple with matching axis permutation.
    #[inline]
    pub fn triple_index(&self, a: usize, b: usize, c: usize, ca: usize, cb: usize, cc: usize) -> usize {
        let mut v = [(a, ca), (b, cb), (c, cc)];
        v.sort_unstable_by_key(|e| e.0);
        let [(j, cj), (s, cs), (t, ct)] = v;
        self.triple_block(j, s, t).offset + cj + self.dims[j] * (cs + self.dims[s] * ct)
    }

    /// Inverse of the coordinate maps.
    pub fn locate(&self, coord: usize) -> Option<Cell> {
        if coord >= self.len {
            return None;
        }
        if coord < self.second_len {
            let idx = self.pairs.partition_point(|b| b.offset <= coord) - 1;
            let b = self.pairs[idx];
            let local = coord - b.offset;
            let dj = self.dims[b.j];
            Some(Cell::Pair {
                j: b.j,
                t: b.t,
                cj: local % dj,
                ct: local / dj,
            })
        } else {
            let idx = self.triples.partition_point(|b| b.offset <= coord) - 1;
            let b = self.triples[idx];
            let local = coord - b.offset;
            let (dj, ds) = (self.dims[b.j], self.dims[b.s]);
            Some(Cell::Triple {
                j: b.j,
                s: b.s,
                t: b.t,
                cj: local % dj,
                cs: (local / dj) % ds,
                ct: local / (dj * ds),
            })
        }
    }

    pub fn coordinate(&self, cell: Cell) -> usize {
        match cell {
            Cell::Pair { j, t, cj, ct } => self.pair_index(j, t, cj, ct),
            Cell::Triple { j, s, t, cj, cs, ct } => self.triple_index(j, s, t, cj, cs, ct),
        }
    }
}
