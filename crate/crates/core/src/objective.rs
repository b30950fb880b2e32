//! Objectives over a coefficient field that are queried one block at a time.

use crate::field::{BlockId, CoefficientField};

/// A real-valued function of a coefficient field, queried by replacing one
/// block of a current point.
///
/// Invalid or failing points evaluate to `f64::NEG_INFINITY`.
pub trait BlockObjective {
    /// Makes `field` the current point and returns its value.
    fn rebase(&mut self, field: &CoefficientField) -> f64;

    /// Value at the current point `field` with block `id` replaced by
    /// `spacings`. The current point is unchanged.
    fn with_block(&mut self, field: &CoefficientField, id: BlockId, spacings: &[f64]) -> f64;

    /// Called after block `id` of the current point was overwritten in
    /// `field`; returns the new value.
    fn commit_block(&mut self, field: &CoefficientField, id: BlockId) -> f64 {
        let _ = id;
        self.rebase(field)
    }
}

/// Wraps a closure evaluated on whole fields.
pub struct FnObjective<F> {
    f: F,
    scratch: Option<CoefficientField>,
}

impl<F: FnMut(&CoefficientField) -> f64> FnObjective<F> {
    pub fn new(f: F) -> Self {
        Self { f, scratch: None }
    }
}

impl<F: FnMut(&CoefficientField) -> f64> BlockObjective for FnObjective<F> {
    fn rebase(&mut self, field: &CoefficientField) -> f64 {
        self.scratch = Some(field.clone());
        (self.f)(field)
    }

    fn with_block(&mut self, field: &CoefficientField, id: BlockId, spacings: &[f64]) -> f64 {
        let scratch = self.scratch.get_or_insert_with(|| field.clone());
        scratch.block_mut(id).copy_from_slice(spacings);
        let v = (self.f)(scratch);
        scratch.block_mut(id).copy_from_slice(field.block(id));
        v
    }

    fn commit_block(&mut self, field: &CoefficientField, id: BlockId) -> f64 {
        match &mut self.scratch {
            Some(s) => s.block_mut(id).copy_from_slice(field.block(id)),
            None => self.scratch = Some(field.clone()),
        }
        (self.f)(field)
    }
}

/// The constant zero objective; under it the sampler targets the prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatObjective;

impl BlockObjective for FlatObjective {
    fn rebase(&mut self, _: &CoefficientField) -> f64 {
        0.0
    }

    fn with_block(&mut self, _: &CoefficientField, _: BlockId, _: &[f64]) -> f64 {
        0.0
    }

    fn commit_block(&mut self, _: &CoefficientField, _: BlockId) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Curve;

    #[test]
    fn fn_objective_substitutes_one_block() {
        let mut field = CoefficientField::uniform(1, 2, 3).unwrap();
        let mut obj = FnObjective::new(|f: &CoefficientField| f.spacings(Curve::First)[0]);
        let id = BlockId {
            curve: Curve::First,
            index: 0,
        };
        assert!((obj.rebase(&field) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(obj.with_block(&field, id, &[0.5, 0.25, 0.25]), 0.5);
        assert!((obj.with_block(&field, id, field.block(id)) - 1.0 / 3.0).abs() < 1e-15);
        field.set_block(id, &[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(obj.commit_block(&field, id), 0.7);
        let other = BlockId {
            curve: Curve::Second,
            index: 1,
        };
        assert_eq!(obj.with_block(&field, other, &[0.1, 0.1, 0.8]), 0.7);
    }
}
