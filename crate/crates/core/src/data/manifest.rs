use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Modality;

/// RGB cameras in round-robin order: indoor 1 and 2 interleaved with outdoor 4 and 5.
pub const RGB_CAMERAS: [u8; 4] = [1, 4, 2, 5];
pub const IR_CAMERAS: [u8; 2] = [3, 6];
pub const INDOOR_CAMERAS: [u8; 3] = [1, 2, 3];

pub fn is_indoor(camera: u8) -> bool {
    INDOOR_CAMERAS.contains(&camera)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// One manifest row. `identity` is 1-based; `path` is relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image_id: usize,
    pub identity: usize,
    pub modality: Modality,
    pub camera: u8,
    pub split: Split,
    pub path: String,
}

impl Record {
    /// Zero-based class index.
    pub fn class(&self) -> usize {
        self.identity - 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    /// Number of identity classes, i.e. the largest identity label.
    pub fn n_ids(&self) -> usize {
        self.records.iter().map(|r| r.identity).max().unwrap_or(0)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8], source: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: source.to_path_buf(),
            reason,
        };
        let mut reader = csv::Reader::from_reader(bytes);
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<Record>, _>>()
            .map_err(|e| format(e.to_string()))?;
        let manifest = Self { records };
        manifest.validate().map_err(|e| format(e.to_string()))?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if r.identity == 0 {
                return Err(Error::InvalidInput(format!("image {}: identities start at 1", r.image_id)));
            }
            if !seen.insert(r.image_id) {
                return Err(Error::InvalidInput(format!("duplicate image_id {}", r.image_id)));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes, path)
    }
}
