//! Multi-domain datasets: the in-memory bundle, its on-disk format, batching,
//! and a synthetic generator with controllable source corruption.

mod batch;
mod format;
mod synthetic;

pub use batch::epoch_batches;
pub use format::{load_bundle, save_bundle, Manifest, ManifestDomain, FORMAT_VERSION, MANIFEST_FILE};
pub use synthetic::{class_prototypes, generate_synthetic, SyntheticConfig};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Smallest domain that can still form a train-mode batch.
pub const MIN_DOMAIN_SIZE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub name: String,
    /// `[N x D]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.features.select_rows(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    fn validate(&self, feature_dim: usize, num_classes: usize) -> Result<()> {
        let id = self.domain_id;
        if self.features.shape().len() != 2 || self.features.cols() != feature_dim {
            return Err(Error::Dimension {
                domain: id,
                detail: format!("features have shape {:?}, expected width {feature_dim}", self.features.shape()),
            });
        }
        if self.features.rows() != self.labels.len() {
            return Err(Error::Dimension {
                domain: id,
                detail: format!("{} feature rows but {} labels", self.features.rows(), self.labels.len()),
            });
        }
        if self.len() < MIN_DOMAIN_SIZE {
            return Err(Error::Dimension {
                domain: id,
                detail: format!("{} samples, need at least {MIN_DOMAIN_SIZE}", self.len()),
            });
        }
        for (row, &label) in self.labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::LabelRange { domain: id, row, label: label as i64, num_classes });
            }
        }
        for row in 0..self.features.rows() {
            if self.features.row(row).iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse { domain: id, row, detail: "non-finite feature".into() });
            }
        }
        Ok(())
    }
}

/// Every domain of a study. Domains may be listed in any order; their ids
/// must form the contiguous range `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainBundle {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub domains: Vec<DomainDataset>,
    pub target_id: Option<usize>,
}

impl MultiDomainBundle {
    pub fn new(feature_dim: usize, num_classes: usize, domains: Vec<DomainDataset>) -> Result<Self> {
        let bundle = MultiDomainBundle { feature_dim, num_classes, domains, target_id: None };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::InvalidInput("bundle has no domains".into()));
        }
        if self.feature_dim == 0 || self.num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need feature_dim >= 1 and num_classes >= 2, got {} and {}",
                self.feature_dim, self.num_classes
            )));
        }
        let mut seen = vec![false; self.domains.len()];
        for d in &self.domains {
            if d.domain_id >= seen.len() || seen[d.domain_id] {
                return Err(Error::InvalidInput(format!(
                    "domain ids must be unique and contiguous from 0; offending id {}",
                    d.domain_id
                )));
            }
            seen[d.domain_id] = true;
        }
        for d in &self.domains {
            d.validate(self.feature_dim, self.num_classes)?;
        }
        if let Some(t) = self.target_id {
            self.domain(t)?;
        }
        Ok(())
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, id: usize) -> Result<&DomainDataset> {
        self.domains
            .iter()
            .find(|d| d.domain_id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no domain with id {id}")))
    }

    /// Sources ordered by domain id, and the target.
    pub fn split(&self, target_id: usize) -> Result<(Vec<&DomainDataset>, &DomainDataset)> {
        let target = self.domain(target_id)?;
        let mut sources: Vec<&DomainDataset> = self.domains.iter().filter(|d| d.domain_id != target_id).collect();
        sources.sort_by_key(|d| d.domain_id);
        Ok((sources, target))
    }
}
