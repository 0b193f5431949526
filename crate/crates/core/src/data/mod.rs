//! Synthetic two-modality dataset, its on-disk form and the PK batch sampler.
//!
//! On disk a dataset is a directory holding `manifest.csv`
//! (`image_id,identity,modality,camera,split,path`) and one MSPD blob per
//! image under `blobs/`. Blob paths are relative to the manifest.

mod manifest;
mod sampler;
mod synth;

use std::fs;
use std::path::Path;

pub use manifest::{is_indoor, Manifest, Record, Split, INDOOR_CAMERAS, IR_CAMERAS, RGB_CAMERAS};
pub use sampler::{Batch, PkSampler};
pub use synth::{generate, SynthConfig, CELL};

use crate::error::{Error, Result};
use crate::mspd;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Manifest plus the decoded `[H, W, C]` image of every record, in record order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let blobs = dir.join("blobs");
        fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            mspd::write(&dir.join(&r.path), img)?;
        }
        self.manifest.write(&dir.join(MANIFEST_FILE))
    }

    /// Loads a manifest and every blob it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::read(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let images = manifest
            .records
            .iter()
            .map(|r| mspd::read(&root.join(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, images })
    }

    /// Stacks the images of `records` into one `[n, H, W, C]` tensor.
    pub fn stack(&self, records: &[usize]) -> Result<Tensor<f32>> {
        let first = self
            .images
            .get(*records.first().ok_or_else(|| Error::InvalidInput("empty image list".into()))?)
            .ok_or_else(|| Error::InvalidInput("record index out of range".into()))?;
        let shape = first.shape().to_vec();
        let mut data = Vec::with_capacity(records.len() * first.numel());
        for &i in records {
            let img = &self.images[i];
            if img.shape() != shape.as_slice() {
                return Err(Error::InvalidShape(format!(
                    "image {} has shape {:?}, expected {shape:?}",
                    self.manifest.records[i].image_id,
                    img.shape()
                )));
            }
            data.extend_from_slice(img.data());
        }
        let mut full = vec![records.len()];
        full.extend(shape);
        Tensor::new(&full, data)
    }
}
