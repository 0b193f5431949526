//! Cross-modality (RGB ↔ infrared) re-identification with multi-scale
//! part-aware cascading attention and a marginal exponential center loss.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), a two-branch convolutional encoder ([`encoder`]), the
//! cascading part-attention module ([`mspac`]), losses ([`losses`]), a
//! synthetic two-modality dataset with a PK batch sampler ([`data`]),
//! retrieval metrics ([`metrics`]), SGD ([`optim`]) and the end-to-end
//! training / evaluation harness ([`harness`]).

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoder;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
mod error;
pub mod mspac;
pub mod mspd;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};

use std::fmt;

/// Imaging modality of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(Self::Rgb),
            "ir" => Some(Self::Ir),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rgb => "rgb",
            Self::Ir => "ir",
        })
    }
}

/// Book chapters, compiled so their code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/mspac.md")]
    mod mspac {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optim_chapter {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/limitations.md")]
    mod limitations {}
}
