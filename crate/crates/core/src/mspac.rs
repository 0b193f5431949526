//! Multi-scale part-aware cascading attention.
//!
//! The global feature map is cut into horizontal stripes at several scales,
//! listed fine to coarse (default `[6, 3, 1]`). Each stage owns one attention
//! block, shared by all parts at that stage:
//!
//! * channel gate: `σ(MLP(avgpool(x) + maxpool(x)))`, one value per channel;
//! * spatial gate: `σ(conv([avg_c(x') ‖ max_c(x')]))`, one value per position;
//! * enhancement with residual: `x_o + x_o ⊙ (x_a ⊙ ch ⊙ sp)`.
//!
//! Stage 0 enhances every finest part against itself. Each later stage
//! height-concatenates consecutive groups of the previous stage's outputs,
//! computes attention from that concatenation, and uses the original stripe
//! at its own scale as the residual trunk. When the coarsest scale is 1 the
//! last stage compares against the untouched backbone map.

use rand::Rng;

use crate::autodiff::{Graph, Padding, PoolMode, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Layer, ParamStore};
use crate::tensor::Scalar;

/// Which pooled descriptors feed the channel MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelPool {
    Both,
    AvgOnly,
    MaxOnly,
}

/// Attention ablation switches. The default enables everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionVariant {
    pub channel: bool,
    pub spatial: bool,
    pub channel_pool: ChannelPool,
}

impl Default for AttentionVariant {
    fn default() -> Self {
        Self {
            channel: true,
            spatial: true,
            channel_pool: ChannelPool::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MspacConfig {
    /// Part counts per stage, fine to coarse.
    pub scales: Vec<usize>,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub variant: AttentionVariant,
}

impl Default for MspacConfig {
    fn default() -> Self {
        Self {
            scales: vec![6, 3, 1],
            reduction: 4,
            spatial_kernel: 3,
            variant: AttentionVariant::default(),
        }
    }
}

impl MspacConfig {
    pub fn total_parts(&self) -> usize {
        self.scales.iter().sum()
    }

    pub fn validate(&self, height: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad(format!("scales must be non-empty and positive: {:?}", self.scales));
        }
        for w in self.scales.windows(2) {
            if w[0] <= w[1] || w[0] % w[1] != 0 {
                return bad(format!(
                    "scales must decrease fine to coarse with each a multiple of the next: {:?}",
                    self.scales
                ));
            }
        }
        if self.reduction == 0 || self.spatial_kernel.is_multiple_of(2) {
            return bad("mspac.reduction must be positive and mspac.spatial_kernel odd".into());
        }
        let heights: Vec<Vec<usize>> = self
            .scales
            .iter()
            .map(|&p| stripe_heights(height, p))
            .collect::<Result<_>>()?;
        for m in 1..heights.len() {
            let ratio = self.scales[m - 1] / self.scales[m];
            for (j, &h) in heights[m].iter().enumerate() {
                let children: usize = heights[m - 1][j * ratio..(j + 1) * ratio].iter().sum();
                if children != h {
                    return bad(format!(
                        "height {height}: scale {} stripe {j} ({h} rows) is not covered by its {ratio} children ({children} rows)",
                        self.scales[m]
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Stripe heights for `parts` stripes over `height` rows: `ceil(height / parts)`
/// each, with the last stripe taking whatever remains.
pub fn stripe_heights(height: usize, parts: usize) -> Result<Vec<usize>> {
    if parts == 0 || parts > height {
        return Err(Error::InvalidConfig(format!(
            "cannot cut {height} rows into {parts} stripes"
        )));
    }
    let step = height.div_ceil(parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for _ in 0..parts {
        let h = step.min(height.saturating_sub(start));
        if h == 0 {
            return Err(Error::InvalidConfig(format!(
                "{parts} stripes of height {step} leave an empty stripe in {height} rows"
            )));
        }
        out.push(h);
        start += h;
    }
    Ok(out)
}

/// Channel MLP (`D → D/r → D`) and spatial conv (`k×k×2×1`) of one stage.
#[derive(Clone, Debug)]
pub struct StageParams {
    pub fc1: Layer,
    pub fc2: Layer,
    pub conv: Layer,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub stages: Vec<StageParams>,
}

impl AttentionParams {
    pub fn register(store: &mut ParamStore, cfg: &MspacConfig, depth: usize, rng: &mut impl Rng) -> Self {
        let hidden = (depth / cfg.reduction).max(1);
        let stages = (0..cfg.scales.len())
            .map(|s| StageParams {
                fc1: Layer::dense(store, &format!("mspac.{s}.fc1"), depth, hidden, rng),
                fc2: Layer::dense(store, &format!("mspac.{s}.fc2"), hidden, depth, rng),
                conv: Layer::conv(store, &format!("mspac.{s}.spatial"), cfg.spatial_kernel, 2, 1, rng),
            })
            .collect();
        Self { stages }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for s in &self.stages {
            for layer in [s.fc1, s.fc2, s.conv] {
                store.get_mut(layer.w).data_mut().fill(0.0);
                store.get_mut(layer.b).data_mut().fill(0.0);
            }
        }
    }
}

/// Graph handles of one stage's attention parameters.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
    pub conv: (Var, Var),
}

impl StageParams {
    pub fn vars(&self, bound: &Bound) -> StageVars {
        StageVars {
            fc1: self.fc1.vars(bound),
            fc2: self.fc2.vars(bound),
            conv: self.conv.vars(bound),
        }
    }
}

/// Original stripes per scale plus their enhanced counterparts.
#[derive(Clone, Debug)]
pub struct PartPyramid {
    pub scales: Vec<usize>,
    pub parts: Vec<Vec<Var>>,
    pub enhanced: Vec<Vec<Var>>,
}

impl PartPyramid {
    pub fn total_parts(&self) -> usize {
        self.scales.iter().sum()
    }
}

/// Cuts `[N, H, W, D]` into horizontal stripes at every scale.
pub fn partition<T: Scalar>(g: &mut Graph<T>, global: Var, scales: &[usize]) -> Result<Vec<Vec<Var>>> {
    let height = g.shape(global)[1];
    scales
        .iter()
        .map(|&p| {
            let mut start = 0;
            stripe_heights(height, p)?
                .into_iter()
                .map(|h| {
                    let v = g.slice(global, 1, start, h);
                    start += h;
                    v
                })
                .collect()
        })
        .collect()
}

/// `[N, h, W, D] -> [N, 1, 1, D]` gate in (0, 1).
pub fn channel_gate<T: Scalar>(g: &mut Graph<T>, stage: &StageVars, x_a: Var, pool: ChannelPool) -> Result<Var> {
    let desc = match pool {
        ChannelPool::AvgOnly => g.pool_spatial(x_a, PoolMode::Avg)?,
        ChannelPool::MaxOnly => g.pool_spatial(x_a, PoolMode::Max)?,
        ChannelPool::Both => {
            let avg = g.pool_spatial(x_a, PoolMode::Avg)?;
            let max = g.pool_spatial(x_a, PoolMode::Max)?;
            g.add(avg, max)?
        }
    };
    let (n, d) = (g.shape(desc)[0], g.shape(desc)[3]);
    let flat = g.reshape(desc, &[n, d])?;
    let hidden = g.dense(flat, stage.fc1.0, stage.fc1.1)?;
    let hidden = g.relu(hidden);
    let logits = g.dense(hidden, stage.fc2.0, stage.fc2.1)?;
    let gate = g.sigmoid(logits);
    g.reshape(gate, &[n, 1, 1, d])
}

/// `[N, h, W, D] -> [N, h, W, 1]` gate in (0, 1).
pub fn spatial_gate<T: Scalar>(g: &mut Graph<T>, stage: &StageVars, x: Var) -> Result<Var> {
    let avg = g.pool_channel(x, PoolMode::Avg)?;
    let max = g.pool_channel(x, PoolMode::Max)?;
    let both = g.concat(&[avg, max], 3)?;
    let logits = g.conv2d(both, stage.conv.0, stage.conv.1, Padding::Same, 1)?;
    Ok(g.sigmoid(logits))
}

/// Attention from `x_a`, residual trunk `x_o`: `x_o + x_o ⊙ x_a''`.
pub fn enhance<T: Scalar>(
    g: &mut Graph<T>,
    stage: &StageVars,
    x_a: Var,
    x_o: Var,
    variant: AttentionVariant,
) -> Result<Var> {
    if g.shape(x_a) != g.shape(x_o) {
        return Err(Error::InvalidShape(format!(
            "enhance: attention input {:?} vs residual {:?}",
            g.shape(x_a),
            g.shape(x_o)
        )));
    }
    let mut x = x_a;
    if variant.channel {
        let gate = channel_gate(g, stage, x, variant.channel_pool)?;
        x = g.mul(x, gate)?;
    }
    if variant.spatial {
        let gate = spatial_gate(g, stage, x)?;
        x = g.mul(x, gate)?;
    }
    let modulated = g.mul(x_o, x)?;
    g.add(x_o, modulated)
}

/// Output of [`cascade`]: the unified map and the pyramid it was built from.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub output: Var,
    pub pyramid: PartPyramid,
}

/// Fine-to-coarse aggregation of enhanced parts into one `[N, H, W, D]` map.
///
/// When the coarsest scale is above 1 (single- or two-scale ablations without
/// global unification) the last stage's parts are stacked back along the height.
pub fn cascade<T: Scalar>(
    g: &mut Graph<T>,
    stages: &[StageVars],
    cfg: &MspacConfig,
    global: Var,
) -> Result<Cascade> {
    let height = g.shape(global)[1];
    cfg.validate(height)?;
    if stages.len() != cfg.scales.len() {
        return Err(Error::InvalidConfig(format!(
            "{} attention stages for {} scales",
            stages.len(),
            cfg.scales.len()
        )));
    }
    let parts = partition(g, global, &cfg.scales)?;
    let mut enhanced: Vec<Vec<Var>> = Vec::with_capacity(parts.len());
    for (m, originals) in parts.iter().enumerate() {
        let stage = &stages[m];
        let outputs = if m == 0 {
            originals
                .iter()
                .map(|&p| enhance(g, stage, p, p, cfg.variant))
                .collect::<Result<Vec<_>>>()?
        } else {
            let ratio = cfg.scales[m - 1] / cfg.scales[m];
            let mut outs = Vec::with_capacity(originals.len());
            for (j, &original) in originals.iter().enumerate() {
                let children = &enhanced[m - 1][j * ratio..(j + 1) * ratio];
                let joined = if children.len() == 1 {
                    children[0]
                } else {
                    g.concat(children, 1)?
                };
                if g.shape(joined) != g.shape(original) {
                    return Err(Error::InvalidShape(format!(
                        "stage {m} part {j}: children stack to {:?}, original stripe is {:?}",
                        g.shape(joined),
                        g.shape(original)
                    )));
                }
                outs.push(enhance(g, stage, joined, original, cfg.variant)?);
            }
            outs
        };
        enhanced.push(outputs);
    }
    let last = enhanced.last().expect("at least one scale");
    let output = if last.len() == 1 {
        last[0]
    } else {
        g.concat(last, 1)?
    };
    Ok(Cascade {
        output,
        pyramid: PartPyramid {
            scales: cfg.scales.clone(),
            parts,
            enhanced,
        },
    })
}
