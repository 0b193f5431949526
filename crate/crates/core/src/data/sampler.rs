use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;

use super::{Manifest, Split};
use crate::error::{Error, Result};
use crate::Modality;

/// `P` identities with `M` RGB and `M` infrared images each.
///
/// `rgb[i]` and `ir[i]` are record indices; both belong to class `labels[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub rgb: Vec<usize>,
    pub ir: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rgb.len() + self.ir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels in model order: all RGB samples, then all infrared samples.
    pub fn stacked_labels(&self) -> Vec<usize> {
        self.labels.iter().chain(&self.labels).copied().collect()
    }

    /// Checks the batch shape against `manifest`.
    pub fn check(&self, manifest: &Manifest, p: usize, m: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Sampling(msg));
        if self.rgb.len() != p * m || self.ir.len() != p * m || self.labels.len() != p * m {
            return fail(format!("batch has {} samples, expected {}", self.len(), 2 * p * m));
        }
        let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for ((&r, &i), &y) in self.rgb.iter().zip(&self.ir).zip(&self.labels) {
            let (rr, ir) = (&manifest.records[r], &manifest.records[i]);
            if rr.modality != Modality::Rgb || ir.modality != Modality::Ir || rr.class() != y || ir.class() != y {
                return fail(format!("records {r}/{i} do not match label {y}"));
            }
            let e = per_class.entry(y).or_default();
            e.0 += 1;
            e.1 += 1;
        }
        if per_class.len() != p || per_class.values().any(|&(a, b)| a != m || b != m) {
            return fail(format!("batch does not hold {p} identities with {m}+{m} images"));
        }
        let unique: BTreeSet<_> = self.rgb.iter().chain(&self.ir).collect();
        if unique.len() != self.len() {
            return fail("batch repeats an image".into());
        }
        Ok(())
    }
}

/// PK sampler over the training split.
#[derive(Clone, Debug)]
pub struct PkSampler {
    /// identity -> (rgb record indices, ir record indices)
    pools: BTreeMap<usize, (Vec<usize>, Vec<usize>)>,
}

impl PkSampler {
    pub fn new(manifest: &Manifest) -> Self {
        let mut pools: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for i in manifest.indices(Split::Train) {
            let r = &manifest.records[i];
            let e = pools.entry(r.identity).or_default();
            match r.modality {
                Modality::Rgb => e.0.push(i),
                Modality::Ir => e.1.push(i),
            }
        }
        Self { pools }
    }

    pub fn n_identities(&self) -> usize {
        self.pools.len()
    }

    pub fn n_images(&self) -> usize {
        self.pools.values().map(|(a, b)| a.len() + b.len()).sum()
    }

    pub fn sample_batch(&self, p: usize, m: usize, rng: &mut impl Rng) -> Result<Batch> {
        if p == 0 || m == 0 {
            return Err(Error::Sampling("P and M must be positive".into()));
        }
        if p > self.pools.len() {
            return Err(Error::Sampling(format!(
                "P = {p} but only {} training identities",
                self.pools.len()
            )));
        }
        for (&id, (rgb, ir)) in &self.pools {
            for (pool, modality) in [(rgb, Modality::Rgb), (ir, Modality::Ir)] {
                if pool.len() < m {
                    return Err(Error::Sampling(format!(
                        "identity {id} has {} {modality} training images, M = {m}",
                        pool.len()
                    )));
                }
            }
        }
        let ids: Vec<(&usize, &(Vec<usize>, Vec<usize>))> = self.pools.iter().collect();
        let mut batch = Batch {
            rgb: Vec::with_capacity(p * m),
            ir: Vec::with_capacity(p * m),
            labels: Vec::with_capacity(p * m),
        };
        for pick in index::sample(rng, ids.len(), p) {
            let (&id, (rgb, ir)) = ids[pick];
            batch.rgb.extend(index::sample(rng, rgb.len(), m).into_iter().map(|i| rgb[i]));
            batch.ir.extend(index::sample(rng, ir.len(), m).into_iter().map(|i| ir[i]));
            batch.labels.extend(std::iter::repeat_n(id - 1, m));
        }
        Ok(batch)
    }

    /// `floor(training images / batch size)` batches, the length of one epoch.
    pub fn epoch_len(&self, p: usize, m: usize) -> usize {
        self.n_images() / (2 * p * m)
    }
}
