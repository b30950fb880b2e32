//! Simplex-spacing parameterisation of the spline coefficients.
//!
//! For every spatial multi-index `(k_1, ..., k_d)` there are two coefficient
//! sequences `0 = a_1 <= ... <= a_J = 1` (first curve) and
//! `0 = b_1 <= ... <= b_J = 1` (second curve). Each is stored by its
//! `J - 1` consecutive spacings, which lie on the unit simplex.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Tolerance on the unit-sum constraint of a simplex block.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Which of the two monotone curves a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Curve {
    /// Weight of `x`: the curve at the end of the time range.
    First,
    /// Weight of `1 - x`: the curve at the start of the time range.
    Second,
}

/// Address of one simplex block: curve family plus flattened spatial
/// multi-index (row-major, first coordinate most significant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub curve: Curve,
    pub index: usize,
}

/// A vector of nonnegative spacings summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBlock(Vec<f64>);

impl SimplexBlock {
    pub fn new(spacings: Vec<f64>) -> Result<Self> {
        check_simplex(&spacings)?;
        Ok(Self(spacings))
    }

    /// The barycentre `(1/K, ..., 1/K)`.
    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Cumulative sums prefixed with zero (the monotone coefficients).
    pub fn cumulative(&self) -> Vec<f64> {
        cumulative(&self.0)
    }
}

/// Checks nonnegativity and the unit sum.
pub fn check_simplex(spacings: &[f64]) -> Result<()> {
    if spacings.is_empty() {
        bail!(Validation, "simplex block must not be empty");
    }
    if let Some(v) = spacings.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        bail!(Validation, "simplex entry {v} is negative or not finite");
    }
    let s = crate::sum::sum(spacings.iter().copied());
    if (s - 1.0).abs() > SIMPLEX_TOL {
        bail!(Validation, "simplex block sums to {s}, not 1");
    }
    Ok(())
}

/// Raises every entry to at least `floor` and rescales to unit sum.
pub fn floor_renormalize(spacings: &mut [f64], floor: f64) {
    if floor > 0.0 {
        for v in spacings.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }
    }
    let s = crate::sum::sum(spacings.iter().copied());
    for v in spacings.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn cumulative(spacings: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(spacings.len() + 1);
    let mut acc = crate::sum::NeumaierSum::new();
    out.push(0.0);
    for (j, s) in spacings.iter().enumerate() {
        acc.add(*s);
        if j + 1 == spacings.len() {
            out.push(1.0);
        } else {
            out.push(acc.value().min(1.0));
        }
    }
    out
}

/// All simplex blocks of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    side: usize,
    block_len: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl CoefficientField {
    /// Every block at the barycentre. `side` is the number of spatial basis
    /// functions per coordinate, `block_len` the number of spacings `J1 - 1`.
    pub fn uniform(dim: usize, side: usize, block_len: usize) -> Result<Self> {
        Self::check_shape(dim, side, block_len)?;
        let n = side.pow(dim as u32) * block_len;
        let v = 1.0 / block_len as f64;
        Ok(Self {
            dim,
            side,
            block_len,
            first: vec![v; n],
            second: vec![v; n],
        })
    }

    /// Builds a field from per-block spacing vectors, validating each block.
    pub fn from_blocks(
        dim: usize,
        side: usize,
        first: &[Vec<f64>],
        second: &[Vec<f64>],
    ) -> Result<Self> {
        let block_len = first.first().map(Vec::len).unwrap_or(0);
        Self::check_shape(dim, side, block_len)?;
        let count = side.pow(dim as u32);
        if first.len() != count || second.len() != count {
            bail!(
                Validation,
                "expected {count} blocks per curve, got {} and {}",
                first.len(),
                second.len()
            );
        }
        let flat = |blocks: &[Vec<f64>]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count * block_len);
            for b in blocks {
                if b.len() != block_len {
                    bail!(Validation, "block of length {} in a field of {block_len}", b.len());
                }
                check_simplex(b)?;
                out.extend_from_slice(b);
            }
            Ok(out)
        };
        let first = flat(first)?;
        let second = flat(second)?;
        Ok(Self {
            dim,
            side,
            block_len,
            first,
            second,
        })
    }

    fn check_shape(dim: usize, side: usize, block_len: usize) -> Result<()> {
        if dim == 0 {
            bail!(Validation, "spatial dimension must be at least 1");
        }
        if side == 0 {
            bail!(Validation, "spatial basis must have at least one function");
        }
        if block_len == 0 {
            bail!(Validation, "simplex blocks must have at least one spacing");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spatial basis size per coordinate (`J2`).
    pub fn side(&self) -> usize {
        self.side
    }

    /// Spacings per block (`J1 - 1`).
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Blocks per curve (`J2^d`).
    pub fn blocks_per_curve(&self) -> usize {
        self.first.len() / self.block_len
    }

    /// Total number of blocks (`2 J2^d`).
    pub fn block_count(&self) -> usize {
        2 * self.blocks_per_curve()
    }

    /// Canonical visit order: first-curve blocks in lexicographic
    /// multi-index order, then second-curve blocks.
    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        let n = self.blocks_per_curve();
        (0..n)
            .map(|index| BlockId {
                curve: Curve::First,
                index,
            })
            .chain((0..n).map(|index| BlockId {
                curve: Curve::Second,
                index,
            }))
    }

    pub fn spacings(&self, curve: Curve) -> &[f64] {
        match curve {
            Curve::First => &self.first,
            Curve::Second => &self.second,
        }
    }

    pub fn block(&self, id: BlockId) -> &[f64] {
        let k = self.block_len;
        &self.spacings(id.curve)[id.index * k..(id.index + 1) * k]
    }

    /// Replaces one block after validating it.
    pub fn set_block(&mut self, id: BlockId, spacings: &[f64]) -> Result<()> {
        if spacings.len() != self.block_len {
            bail!(
                Validation,
                "block of length {} in a field of {}",
                spacings.len(),
                self.block_len
            );
        }
        check_simplex(spacings)?;
        self.block_mut(id).copy_from_slice(spacings);
        Ok(())
    }

    pub(crate) fn block_mut(&mut self, id: BlockId) -> &mut [f64] {
        let k = self.block_len;
        let v = match id.curve {
            Curve::First => &mut self.first,
            Curve::Second => &mut self.second,
        };
        &mut v[id.index * k..(id.index + 1) * k]
    }

    /// Spatial multi-index of a flattened block index.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for slot in out.iter_mut().rev() {
            *slot = index % self.side;
            index /= self.side;
        }
        out
    }

    /// Monotone coefficients (cumulative spacings, prefixed by 0) of a block.
    pub fn cumulative(&self, id: BlockId) -> Vec<f64> {
        cumulative(self.block(id))
    }

    /// Checks every block.
    pub fn validate(&self) -> Result<()> {
        for id in self.block_ids() {
            check_simplex(self.block(id))?;
        }
        Ok(())
    }

    /// Entrywise mean of several fields of identical shape.
    pub fn mean<'a, I>(fields: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CoefficientField>,
    {
        let mut iter = fields.into_iter();
        let Some(head) = iter.next() else {
            bail!(Validation, "mean of an empty set of fields");
        };
        let mut acc_first: Vec<crate::sum::NeumaierSum> =
            head.first.iter().map(|v| [*v].into_iter().collect()).collect();
        let mut acc_second: Vec<crate::sum::NeumaierSum> =
            head.second.iter().map(|v| [*v].into_iter().collect()).collect();
        let mut count = 1usize;
        for f in iter {
            if f.dim != head.dim || f.side != head.side || f.block_len != head.block_len {
                bail!(Validation, "fields of different shapes");
            }
            for (a, v) in acc_first.iter_mut().zip(&f.first) {
                a.add(*v);
            }
            for (a, v) in acc_second.iter_mut().zip(&f.second) {
                a.add(*v);
            }
            count += 1;
        }
        let n = count as f64;
        let mut out = head.clone();
        for (o, a) in out.first.iter_mut().zip(&acc_first) {
            *o = a.value() / n;
        }
        for (o, a) in out.second.iter_mut().zip(&acc_second) {
            *o = a.value() / n;
        }
        // rescale away accumulated rounding so blocks stay on the simplex
        let ids: Vec<BlockId> = out.block_ids().collect();
        for id in ids {
            floor_renormalize(out.block_mut(id), 0.0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_field_shape() {
        let f = CoefficientField::uniform(2, 6, 4).unwrap();
        assert_eq!(f.blocks_per_curve(), 36);
        assert_eq!(f.block_count(), 72);
        assert_eq!(f.block_ids().count(), 72);
        f.validate().unwrap();
        assert_eq!(
            f.cumulative(BlockId {
                curve: Curve::First,
                index: 3
            }),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(SimplexBlock::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexBlock::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexBlock::new(vec![]).is_err());
        assert!(SimplexBlock::new(vec![0.0, 1.0]).is_ok());
        let mut f = CoefficientField::uniform(1, 2, 2).unwrap();
        let id = BlockId {
            curve: Curve::Second,
            index: 1,
        };
        assert!(f.set_block(id, &[0.2, 0.2]).is_err());
        assert!(f.set_block(id, &[0.2, 0.3, 0.5]).is_err());
        f.set_block(id, &[0.2, 0.8]).unwrap();
        assert_eq!(f.block(id), &[0.2, 0.8]);
    }

    #[test]
    fn multi_index_is_row_major() {
        let f = CoefficientField::uniform(3, 4, 2).unwrap();
        assert_eq!(f.multi_index(0), vec![0, 0, 0]);
        assert_eq!(f.multi_index(1), vec![0, 0, 1]);
        assert_eq!(f.multi_index(4), vec![0, 1, 0]);
        assert_eq!(f.multi_index(63), vec![3, 3, 3]);
    }

    #[test]
    fn floor_keeps_simplex() {
        let mut v = [0.0, 0.5, 0.5, 0.0];
        floor_renormalize(&mut v, 1e-8);
        check_simplex(&v).unwrap();
        assert!(v.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn mean_of_fields() {
        let a = CoefficientField::from_blocks(1, 1, &[vec![0.2, 0.8]], &[vec![1.0, 0.0]]).unwrap();
        let b = CoefficientField::from_blocks(1, 1, &[vec![0.4, 0.6]], &[vec![0.0, 1.0]]).unwrap();
        let m = CoefficientField::mean([&a, &b]).unwrap();
        assert!((m.spacings(Curve::First)[0] - 0.3).abs() < 1e-15);
        assert!((m.spacings(Curve::Second)[0] - 0.5).abs() < 1e-15);
    }
}
