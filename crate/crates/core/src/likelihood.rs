//! Log-likelihood with per-site caching for single-block updates.
//!
//! Changing one block of one curve only affects the sites where that block's
//! spatial basis function is nonzero, and only that curve. The cache keeps
//! both curves and the log-likelihood of every site, so a block query costs
//! a few curve rebuilds instead of a pass over the whole dataset. Totals are
//! always re-summed over all sites so they agree with a fresh evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::field::{BlockId, CoefficientField, Curve};
use crate::model::{contract_into, CurveForm, CurvePair, QuantileModel};
use crate::objective::BlockObjective;
use crate::sum::NeumaierSum;

fn site_value(pair: &CurvePair, obs: &[(f64, f64)]) -> f64 {
    pair.site_log_likelihood(obs).unwrap_or(f64::NEG_INFINITY)
}

fn total(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    for v in values {
        if v == f64::NEG_INFINITY {
            return v;
        }
        acc.add(v);
    }
    acc.value()
}

struct Pending {
    id: BlockId,
    spacings: Vec<f64>,
    /// `(site, curve, log-likelihood)` for every affected site.
    sites: Vec<(usize, CurveForm, f64)>,
}

/// Cached log-likelihood of a dataset under a model shell, as a
/// [`BlockObjective`].
pub struct LikelihoodState<'a> {
    shell: QuantileModel,
    data: &'a Dataset,
    weights: Vec<Vec<(usize, f64)>>,
    /// For each spatial block, the sites it touches.
    support: Vec<Vec<usize>>,
    pairs: Vec<CurvePair>,
    site_ll: Vec<f64>,
    total: f64,
    pending: Option<Pending>,
    spacings: Vec<f64>,
}

impl<'a> LikelihoodState<'a> {
    pub fn new(shell: &QuantileModel, data: &'a Dataset) -> Result<Self> {
        if data.dim() != shell.dim() {
            bail!(
                Validation,
                "dataset has dimension {}, model has {}",
                data.dim(),
                shell.dim()
            );
        }
        let mut weights = Vec::with_capacity(data.sites().len());
        let mut support = vec![Vec::new(); shell.coeffs().blocks_per_curve()];
        for (l, site) in data.sites().iter().enumerate() {
            let w = shell.spatial_weights(&site.coords)?;
            for (b, _) in &w {
                support[*b].push(l);
            }
            weights.push(w);
        }
        let pairs = weights.iter().map(|w| shell.curves_from_weights(w)).collect();
        let mut s = Self {
            shell: shell.clone(),
            data,
            weights,
            support,
            pairs,
            site_ll: vec![0.0; data.sites().len()],
            total: 0.0,
            pending: None,
            spacings: vec![0.0; shell.coeffs().block_len()],
        };
        let coeffs = shell.coeffs().clone();
        s.rebase(&coeffs);
        Ok(s)
    }

    pub fn value(&self) -> f64 {
        self.total
    }

    pub fn site_values(&self) -> &[f64] {
        &self.site_ll
    }

    fn rebuild_site(&mut self, field: &CoefficientField, l: usize, curve: Curve) {
        let k = field.block_len();
        contract_into(field.spacings(curve), k, &self.weights[l], None, &mut self.spacings);
        let form = self.shell.form();
        match curve {
            Curve::First => self.pairs[l].first.rebuild(form, &self.spacings),
            Curve::Second => self.pairs[l].second.rebuild(form, &self.spacings),
        }
    }
}

impl BlockObjective for LikelihoodState<'_> {
    fn rebase(&mut self, field: &CoefficientField) -> f64 {
        self.pending = None;
        for l in 0..self.pairs.len() {
            self.rebuild_site(field, l, Curve::First);
            self.rebuild_site(field, l, Curve::Second);
            self.site_ll[l] = site_value(&self.pairs[l], &self.data.sites()[l].obs);
        }
        self.total = total(self.site_ll.iter().copied());
        self.total
    }

    fn with_block(&mut self, field: &CoefficientField, id: BlockId, spacings: &[f64]) -> f64 {
        let k = field.block_len();
        let mut pending = self.pending.take().unwrap_or(Pending {
            id,
            spacings: Vec::new(),
            sites: Vec::new(),
        });
        pending.id = id;
        pending.spacings.clear();
        pending.spacings.extend_from_slice(spacings);
        let sites = &self.support[id.index];
        // reuse curve storage from the previous query
        pending.sites.truncate(sites.len());
        while pending.sites.len() < sites.len() {
            let blank = self.pairs[0].first.clone();
            pending.sites.push((0, blank, 0.0));
        }
        let form = self.shell.form();
        for (slot, &l) in pending.sites.iter_mut().zip(sites) {
            contract_into(
                field.spacings(id.curve),
                k,
                &self.weights[l],
                Some((id.index, spacings)),
                &mut self.spacings,
            );
            slot.0 = l;
            slot.1.rebuild(form, &self.spacings);
            let pair = &mut self.pairs[l];
            let cur = match id.curve {
                Curve::First => &mut pair.first,
                Curve::Second => &mut pair.second,
            };
            core::mem::swap(cur, &mut slot.1);
            slot.2 = site_value(pair, &self.data.sites()[l].obs);
            let cur = match id.curve {
                Curve::First => &mut pair.first,
                Curve::Second => &mut pair.second,
            };
            core::mem::swap(cur, &mut slot.1);
        }
        let mut values = self.site_ll.clone();
        for (l, _, v) in &pending.sites {
            values[*l] = *v;
        }
        self.pending = Some(pending);
        total(values.into_iter())
    }

    fn commit_block(&mut self, field: &CoefficientField, id: BlockId) -> f64 {
        match self.pending.as_mut() {
            Some(p) if p.id == id && p.spacings == field.block(id) && !self.support[id.index].is_empty() => {
                for (l, form, v) in p.sites.iter_mut() {
                    let pair = &mut self.pairs[*l];
                    match id.curve {
                        Curve::First => core::mem::swap(&mut pair.first, form),
                        Curve::Second => core::mem::swap(&mut pair.second, form),
                    }
                    self.site_ll[*l] = *v;
                }
            }
            _ => {
                let sites = self.support[id.index].clone();
                for l in sites {
                    self.rebuild_site(field, l, id.curve);
                    self.site_ll[l] = site_value(&self.pairs[l], &self.data.sites()[l].obs);
                }
            }
        }
        // the swapped-out curves are stale; drop the pending tag
        if let Some(p) = self.pending.as_mut() {
            p.spacings.clear();
        }
        self.total = total(self.site_ll.iter().copied());
        self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::dataset::Site;
    use crate::model::TransformSpec;
    use alloc::string::ToString;
    use rand::{Rng, SeedableRng};

    fn setup(seed: u64) -> (QuantileModel, Dataset) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tb = BasisSpec::new(2, 3).unwrap();
        let sb = BasisSpec::new(3, 2).unwrap();
        let shell = QuantileModel::shell(tb, sb, 2, TransformSpec::unit(2)).unwrap();
        let sites = (0..12)
            .map(|l| Site {
                id: l.to_string(),
                coords: vec![rng.random(), rng.random()],
                obs: (0..5).map(|_| (rng.random(), rng.random())).collect(),
            })
            .collect();
        (shell, Dataset::unit(2, sites).unwrap())
    }

    fn random_block(rng: &mut impl Rng, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    #[test]
    fn cached_values_match_full_evaluation() {
        let (shell, data) = setup(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut field = shell.coeffs().clone();
        let mut state = LikelihoodState::new(&shell, &data).unwrap();
        let full = |f: &CoefficientField| shell.with_coeffs(f.clone()).unwrap().log_likelihood(&data).unwrap();
        assert!((state.value() - full(&field)).abs() < 1e-10);
        let ids: Vec<BlockId> = field.block_ids().collect();
        for step in 0..200 {
            let id = ids[rng.random_range(0..ids.len())];
            let prop = random_block(&mut rng, field.block_len());
            let v = state.with_block(&field, id, &prop);
            let mut alt = field.clone();
            alt.set_block(id, &prop).unwrap();
            assert!((v - full(&alt)).abs() < 1e-10);
            if step % 3 != 0 {
                field = alt;
                let c = state.commit_block(&field, id);
                assert!((c - v).abs() < 1e-12);
            }
        }
        assert!((state.value() - full(&field)).abs() < 1e-10);
        assert!((state.rebase(&field) - full(&field)).abs() < 1e-10);
    }

    #[test]
    fn commit_without_query_recomputes() {
        let (shell, data) = setup(4);
        let mut field = shell.coeffs().clone();
        let mut state = LikelihoodState::new(&shell, &data).unwrap();
        let id = BlockId {
            curve: Curve::Second,
            index: 7,
        };
        state.with_block(&field, id, &[0.4, 0.2, 0.2, 0.2]);
        field.set_block(id, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = state.commit_block(&field, id);
        let want = shell.with_coeffs(field).unwrap().log_likelihood(&data).unwrap();
        assert!((v - want).abs() < 1e-10);
    }

    #[test]
    fn failing_observation_is_neg_infinity() {
        let tb = BasisSpec::new(2, 3).unwrap();
        let sb = BasisSpec::new(3, 1).unwrap();
        let shell = QuantileModel::shell(tb, sb, 1, TransformSpec::unit(1)).unwrap();
        let site = Site {
            id: "a".into(),
            coords: vec![0.3],
            obs: vec![(1.0, 0.5)],
        };
        let data = Dataset::unit(1, vec![site]).unwrap();
        let mut state = LikelihoodState::new(&shell, &data).unwrap();
        assert!(state.value().is_finite());
        let flat = vec![vec![0.5, 0.0, 0.0, 0.5]; 4];
        let uniform = vec![vec![0.25; 4]; 4];
        let field = CoefficientField::from_blocks(1, 4, &flat, &uniform).unwrap();
        assert_eq!(state.rebase(&field), f64::NEG_INFINITY);
        let id = BlockId {
            curve: Curve::First,
            index: 0,
        };
        // the proposal breaks the flat stretch, so the site recovers
        let v = state.with_block(&field, id, &[0.25; 4]);
        assert!(v.is_finite());
        assert_eq!(state.value(), f64::NEG_INFINITY);
    }
}
