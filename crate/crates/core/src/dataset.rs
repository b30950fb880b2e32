use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::model::TransformSpec;

/// One monitoring location with its `(time, response)` pairs, all scaled to
/// `[0, 1]`. Sites may hold different numbers of observations, and repeated
/// times are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub coords: Vec<f64>,
    pub obs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    sites: Vec<Site>,
    transforms: TransformSpec,
}

impl Dataset {
    pub fn new(dim: usize, sites: Vec<Site>, transforms: TransformSpec) -> Result<Self> {
        if dim == 0 {
            bail!(Validation, "spatial dimension must be at least 1");
        }
        if transforms.coords.len() != dim {
            bail!(
                Validation,
                "transform has {} coordinates, dataset has {dim}",
                transforms.coords.len()
            );
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for s in &sites {
            if s.coords.len() != dim {
                bail!(
                    Validation,
                    "site {} has {} coordinates, expected {dim}",
                    s.id,
                    s.coords.len()
                );
            }
            if !s.coords.iter().all(|v| unit(*v)) {
                bail!(Validation, "site {} has coordinates outside [0, 1]", s.id);
            }
            if let Some((x, y)) = s.obs.iter().find(|(x, y)| !unit(*x) || !unit(*y)) {
                bail!(Validation, "site {} has observation ({x}, {y}) outside [0, 1]", s.id);
            }
        }
        Ok(Self {
            dim,
            sites,
            transforms,
        })
    }

    /// Dataset whose variables are already on the unit scale.
    pub fn unit(dim: usize, sites: Vec<Site>) -> Result<Self> {
        Self::new(dim, sites, TransformSpec::unit(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn transforms(&self) -> &TransformSpec {
        &self.transforms
    }

    pub fn observation_count(&self) -> usize {
        self.sites.iter().map(|s| s.obs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.observation_count() == 0
    }
}
