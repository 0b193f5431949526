//! The full network: two-branch encoder, cascading part attention, embedding,
//! identity classifiers and the identity centers.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{self, IdMode, LossConfig};
use crate::mspac::{self, AttentionParams, MspacConfig, StageVars};
use crate::mspd;
use crate::params::{Bound, Layer, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::Modality;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mspac: MspacConfig,
    pub n_ids: usize,
    pub id_mode: IdMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.mspac.validate(self.encoder.out_h())?;
        if self.n_ids == 0 {
            return Err(Error::InvalidConfig("no identities".into()));
        }
        Ok(())
    }

    fn n_heads(&self) -> usize {
        match self.id_mode {
            IdMode::Global => 1,
            IdMode::Part => self.mspac.total_parts(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub attention: AttentionParams,
    pub heads: Vec<Layer>,
    pub centers: ParamId,
}

/// Graph outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: Var,
    /// One entry in global mode, one per pyramid part in part mode.
    pub logits: Vec<Var>,
}

/// Scalar graph nodes of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub id: Var,
    pub center: Var,
    pub total: Var,
    pub embeddings: Var,
}

impl Model {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, &cfg.encoder, rng);
        let attention = AttentionParams::register(&mut store, &cfg.mspac, cfg.encoder.out_d, rng);
        let d = cfg.encoder.embed_dim;
        let heads = (0..cfg.n_heads())
            .map(|i| Layer::dense(&mut store, &format!("head.{i}"), d, cfg.n_ids, rng))
            .collect();
        let centers = store.add("centers", losses::init_centers(cfg.n_ids, d, rng));
        Ok(Self {
            cfg,
            store,
            encoder,
            attention,
            heads,
            centers,
        })
    }

    fn stage_vars(&self, bound: &Bound) -> Vec<StageVars> {
        self.attention.stages.iter().map(|s| s.vars(bound)).collect()
    }

    /// Embeds `rgb` then `ir` images (either may be absent); rows follow that order.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        rgb: Option<Var>,
        ir: Option<Var>,
    ) -> Result<Forward> {
        let mut stems = Vec::with_capacity(2);
        for (images, modality) in [(rgb, Modality::Rgb), (ir, Modality::Ir)] {
            if let Some(x) = images {
                stems.push(encoder::stem(g, bound, &self.encoder, x, modality)?);
            }
        }
        let stem = match stems.as_slice() {
            [] => return Err(Error::InvalidInput("forward without images".into())),
            [one] => *one,
            many => g.concat(many, 0)?,
        };
        let global = encoder::trunk(g, bound, &self.encoder, &self.cfg.encoder, stem)?;
        let cascade = mspac::cascade(g, &self.stage_vars(bound), &self.cfg.mspac, global)?;
        let embeddings = encoder::embed(g, bound, &self.encoder, cascade.output)?;
        let logits = match self.cfg.id_mode {
            IdMode::Global => {
                let (w, b) = self.heads[0].vars(bound);
                vec![g.dense(embeddings, w, b)?]
            }
            IdMode::Part => {
                let parts: Vec<Var> = cascade.pyramid.enhanced.iter().flatten().copied().collect();
                let mut out = Vec::with_capacity(parts.len());
                for (part, head) in parts.into_iter().zip(&self.heads) {
                    let part_embedding = encoder::embed(g, bound, &self.encoder, part)?;
                    let (w, b) = head.vars(bound);
                    out.push(g.dense(part_embedding, w, b)?);
                }
                out
            }
        };
        Ok(Forward { embeddings, logits })
    }

    /// `L_ID + λ·center` over a batch whose RGB and infrared halves share `labels`.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        rgb: Var,
        ir: Var,
        labels: &[usize],
        cfg: &LossConfig,
    ) -> Result<LossVars> {
        let fwd = self.forward(g, bound, Some(rgb), Some(ir))?;
        let stacked: Vec<usize> = labels.iter().chain(labels).copied().collect();
        let id = match self.cfg.id_mode {
            IdMode::Global => losses::identity_loss(g, fwd.logits[0], &stacked)?,
            IdMode::Part => losses::part_identity_loss(g, &fwd.logits, &stacked)?,
        };
        let center = losses::center_term(g, fwd.embeddings, &stacked, bound[self.centers], cfg)?;
        let total = losses::joint_loss(g, id, center, cfg.lambda)?;
        Ok(LossVars {
            id,
            center,
            total,
            embeddings: fwd.embeddings,
        })
    }

    /// `[n, d]` embeddings of dataset records that all share one modality.
    pub fn embed_records(&self, data: &Dataset, records: &[usize], chunk: usize) -> Result<Tensor<f32>> {
        let d = self.cfg.encoder.embed_dim;
        let mut out = Vec::with_capacity(records.len() * d);
        for part in records.chunks(chunk.max(1)) {
            let modality = data.manifest.records[part[0]].modality;
            if part.iter().any(|&i| data.manifest.records[i].modality != modality) {
                return Err(Error::InvalidInput("embed_records needs a single modality".into()));
            }
            let mut g = Graph::<f32>::new();
            let bound = self.store.bind(&mut g);
            let x = g.leaf(data.stack(part)?);
            let (rgb, ir) = match modality {
                Modality::Rgb => (Some(x), None),
                Modality::Ir => (None, Some(x)),
            };
            let fwd = self.forward(&mut g, &bound, rgb, ir)?;
            out.extend_from_slice(g.value(fwd.embeddings).data());
        }
        Tensor::new(&[records.len(), d], out)
    }

    /// Writes every parameter as `<name>.mspd` plus `manifest.txt` listing them in order.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut listing = String::new();
        for (name, t) in self.store.iter() {
            mspd::write(&dir.join(format!("{name}.mspd")), t)?;
            listing.push_str(name);
            listing.push('\n');
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, listing).map_err(|e| Error::io(&path, e))
    }

    /// Replaces parameters from a directory written by [`Model::save`].
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.txt");
        let listing = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut loaded = ParamStore::new();
        for name in listing.lines().filter(|l| !l.is_empty()) {
            loaded.add(name, mspd::read(&dir.join(format!("{name}.mspd")))?);
        }
        self.store.load_from(&loaded).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })
    }
}

/// Mean squared distance of each embedding to its class centroid within the batch.
pub fn intra_class_distance(embeddings: &Tensor<f32>, labels: &[usize]) -> f64 {
    let d = embeddings.shape()[1];
    let mut centroids: std::collections::BTreeMap<usize, (Vec<f64>, usize)> = Default::default();
    for (row, &y) in embeddings.data().chunks_exact(d).zip(labels) {
        let e = centroids.entry(y).or_insert_with(|| (vec![0.0; d], 0));
        for (a, &v) in e.0.iter_mut().zip(row) {
            *a += f64::from(v);
        }
        e.1 += 1;
    }
    for (sum, n) in centroids.values_mut() {
        for v in sum.iter_mut() {
            *v /= *n as f64;
        }
    }
    let total: f64 = embeddings
        .data()
        .chunks_exact(d)
        .zip(labels)
        .map(|(row, y)| {
            let c = &centroids[y].0;
            row.iter().zip(c).map(|(&v, &m)| (f64::from(v) - m).powi(2)).sum::<f64>()
        })
        .sum();
    total / labels.len() as f64
}
