//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to the end of the line
//! train.epochs = 30
//! mspac.scales = 6,3,1
//! loss.lambda  = 1
//! ```
//!
//! Every key has a default; unknown keys are rejected. [`RunConfig::to_text`]
//! writes all keys and parses back to the same configuration.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::EvalMode;
use crate::model::ModelConfig;
use crate::mspac::{ChannelPool, MspacConfig};
use crate::optim::OptimConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Identities per batch.
    pub p: usize,
    /// Images per identity per modality.
    pub m: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            p: 8,
            m: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub encoder: EncoderConfig,
    pub mspac: MspacConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub eval: EvalMode,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn pool_name(p: ChannelPool) -> &'static str {
    match p {
        ChannelPool::Both => "both",
        ChannelPool::AvgOnly => "avg",
        ChannelPool::MaxOnly => "max",
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, e, s, l, o, v, t) = (
            &self.data,
            &self.encoder,
            &self.mspac,
            &self.loss,
            &self.optim,
            &self.eval,
            &self.train,
        );
        vec![
            ("data.ids", d.n_ids.to_string()),
            ("data.per_id", d.per_id.to_string()),
            ("data.holdout", d.holdout.to_string()),
            ("data.latent_dim", d.latent_dim.to_string()),
            ("data.amplitude", d.amplitude.to_string()),
            ("data.noise", d.noise_sigma.to_string()),
            ("data.gap", d.modality_gap.to_string()),
            ("data.seed", d.seed.to_string()),
            ("encoder.img_h", e.img_h.to_string()),
            ("encoder.img_w", e.img_w.to_string()),
            ("encoder.stem_channels", e.stem_channels.to_string()),
            ("encoder.trunk_channels", e.trunk_channels.to_string()),
            ("encoder.out_d", e.out_d.to_string()),
            ("encoder.embed_dim", e.embed_dim.to_string()),
            ("encoder.strides", join(&e.trunk_strides)),
            ("encoder.kernel", e.kernel.to_string()),
            ("mspac.scales", join(&s.scales)),
            ("mspac.reduction", s.reduction.to_string()),
            ("mspac.spatial_kernel", s.spatial_kernel.to_string()),
            ("mspac.channel", s.variant.channel.to_string()),
            ("mspac.spatial", s.variant.spatial.to_string()),
            ("mspac.channel_pool", pool_name(s.variant.channel_pool).to_string()),
            ("loss.margin", l.margin.to_string()),
            ("loss.lambda", l.lambda.to_string()),
            ("loss.clamp", l.clamp.to_string()),
            ("loss.id_mode", l.id_mode.to_string()),
            ("loss.center_form", l.center_form.to_string()),
            ("optim.lr0", o.lr0.to_string()),
            ("optim.momentum", o.momentum.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("optim.decay_every", o.decay_every.to_string()),
            ("optim.decay_factor", o.decay_factor.to_string()),
            ("eval.search", v.search.to_string()),
            ("eval.shot", v.shot.to_string()),
            ("eval.trials", v.trials.to_string()),
            ("eval.seed", v.seed.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.p", t.p.to_string()),
            ("train.m", t.m.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data.ids" => self.data.n_ids = parse(key, value)?,
            "data.per_id" => self.data.per_id = parse(key, value)?,
            "data.holdout" => self.data.holdout = parse(key, value)?,
            "data.latent_dim" => self.data.latent_dim = parse(key, value)?,
            "data.amplitude" => self.data.amplitude = parse(key, value)?,
            "data.noise" => self.data.noise_sigma = parse(key, value)?,
            "data.gap" => self.data.modality_gap = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "encoder.img_h" => self.encoder.img_h = parse(key, value)?,
            "encoder.img_w" => self.encoder.img_w = parse(key, value)?,
            "encoder.stem_channels" => self.encoder.stem_channels = parse(key, value)?,
            "encoder.trunk_channels" => self.encoder.trunk_channels = parse(key, value)?,
            "encoder.out_d" => self.encoder.out_d = parse(key, value)?,
            "encoder.embed_dim" => self.encoder.embed_dim = parse(key, value)?,
            "encoder.strides" => {
                self.encoder.trunk_strides = parse_list(key, value)?
                    .try_into()
                    .map_err(|_| Error::InvalidConfig(format!("{key} needs three strides")))?
            }
            "encoder.kernel" => self.encoder.kernel = parse(key, value)?,
            "mspac.scales" => self.mspac.scales = parse_list(key, value)?,
            "mspac.reduction" => self.mspac.reduction = parse(key, value)?,
            "mspac.spatial_kernel" => self.mspac.spatial_kernel = parse(key, value)?,
            "mspac.channel" => self.mspac.variant.channel = parse(key, value)?,
            "mspac.spatial" => self.mspac.variant.spatial = parse(key, value)?,
            "mspac.channel_pool" => {
                self.mspac.variant.channel_pool = match value {
                    "both" => ChannelPool::Both,
                    "avg" => ChannelPool::AvgOnly,
                    "max" => ChannelPool::MaxOnly,
                    _ => return Err(Error::InvalidConfig(format!("{key} must be both, avg or max"))),
                }
            }
            "loss.margin" => self.loss.margin = parse(key, value)?,
            "loss.lambda" => self.loss.lambda = parse(key, value)?,
            "loss.clamp" => self.loss.clamp = parse(key, value)?,
            "loss.id_mode" => self.loss.id_mode = value.parse()?,
            "loss.center_form" => self.loss.center_form = value.parse()?,
            "optim.lr0" => self.optim.lr0 = parse(key, value)?,
            "optim.momentum" => self.optim.momentum = parse(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, value)?,
            "optim.decay_every" => self.optim.decay_every = parse(key, value)?,
            "optim.decay_factor" => self.optim.decay_factor = parse(key, value)?,
            "eval.search" => self.eval.search = value.parse()?,
            "eval.shot" => self.eval.shot = value.parse()?,
            "eval.trials" => self.eval.trials = parse(key, value)?,
            "eval.seed" => self.eval.seed = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.p" => self.train.p = parse(key, value)?,
            "train.m" => self.train.m = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Dataset settings with image extents taken from the encoder.
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            img_h: self.encoder.img_h,
            img_w: self.encoder.img_w,
            ..self.data.clone()
        }
    }

    pub fn model(&self, n_ids: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            mspac: self.mspac.clone(),
            n_ids,
            id_mode: self.loss.id_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.model(self.data.n_ids).validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.train.p == 0 || self.train.m == 0 {
            return Err(Error::InvalidConfig("train.p and train.m must be positive".into()));
        }
        if self.eval.trials == 0 {
            return Err(Error::InvalidConfig("eval.trials must be positive".into()));
        }
        Ok(())
    }
}
