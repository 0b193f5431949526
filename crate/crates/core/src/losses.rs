//! Identity loss, the marginal exponential center loss and their combination.
//!
//! ```text
//! S       = ½ Σ_i max(‖x_i − c_{y_i}‖² − m, 0)
//! L_MeCen = exp(min(S, clamp)) − 1
//! L       = L_ID + λ · L_MeCen
//! ```
//!
//! The sum runs over the whole batch inside a single exponential. Centers are
//! trainable and are projected back onto the unit sphere after every step.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdMode {
    /// One classifier on the unified embedding.
    Global,
    /// One classifier per pyramid part; the identity loss is their mean.
    Part,
}

/// Which center term is added to the identity loss.
///
/// `Plain` is the classic center loss `½ Σ ‖x − c‖²`, `Margin` adds the hinge,
/// and `Exponential` is the full MeCen form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterForm {
    Plain,
    Margin,
    Exponential,
}

impl FromStr for IdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "part" => Ok(Self::Part),
            _ => Err(Error::InvalidConfig(format!("id mode must be global or part, got {s:?}"))),
        }
    }
}

impl fmt::Display for IdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::Part => "part",
        })
    }
}

impl FromStr for CenterForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "margin" => Ok(Self::Margin),
            "exp" => Ok(Self::Exponential),
            _ => Err(Error::InvalidConfig(format!(
                "center form must be plain, margin or exp, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for CenterForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::Margin => "margin",
            Self::Exponential => "exp",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda: f64,
    pub clamp: f64,
    pub id_mode: IdMode,
    pub center_form: CenterForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda: 1.0,
            clamp: 30.0,
            id_mode: IdMode::Global,
            center_form: CenterForm::Exponential,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.lambda >= 0.0 && self.clamp.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "loss.margin and loss.lambda must be nonnegative and loss.clamp finite (m={}, λ={}, clamp={})",
                self.margin, self.lambda, self.clamp
            )));
        }
        Ok(())
    }
}

/// Per-sample squared distance to the sample's own center, `[n, 1]`.
fn center_distances<T: Scalar>(g: &mut Graph<T>, x: Var, labels: &[usize], centers: Var) -> Result<Var> {
    if g.shape(x).len() != 2 || g.shape(x)[0] != labels.len() {
        return Err(Error::InvalidShape(format!(
            "embeddings {:?} vs {} labels",
            g.shape(x),
            labels.len()
        )));
    }
    let c = g.gather_rows(centers, labels)?;
    let diff = g.sub(x, c)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum_last(sq))
}

/// The hinge sum `S` before exponentiation.
pub fn margin_sum<T: Scalar>(g: &mut Graph<T>, x: Var, labels: &[usize], centers: Var, margin: f64) -> Result<Var> {
    let dist = center_distances(g, x, labels, centers)?;
    let shifted = g.add_scalar(dist, T::of(-margin));
    let hinge = g.relu(shifted);
    let total = g.sum(hinge);
    Ok(g.scale(total, T::of(0.5)))
}

pub fn mecen_loss<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    labels: &[usize],
    centers: Var,
    margin: f64,
    clamp: f64,
) -> Result<Var> {
    let s = margin_sum(g, x, labels, centers, margin)?;
    let e = g.exp_clamped(s, T::of(clamp));
    Ok(g.add_scalar(e, -T::one()))
}

/// The center term selected by `cfg.center_form`.
pub fn center_term<T: Scalar>(g: &mut Graph<T>, x: Var, labels: &[usize], centers: Var, cfg: &LossConfig) -> Result<Var> {
    match cfg.center_form {
        CenterForm::Plain => {
            let dist = center_distances(g, x, labels, centers)?;
            let total = g.sum(dist);
            Ok(g.scale(total, T::of(0.5)))
        }
        CenterForm::Margin => margin_sum(g, x, labels, centers, cfg.margin),
        CenterForm::Exponential => mecen_loss(g, x, labels, centers, cfg.margin, cfg.clamp),
    }
}

pub fn identity_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, labels)
}

/// Mean of the per-part cross-entropies.
pub fn part_identity_loss<T: Scalar>(g: &mut Graph<T>, part_logits: &[Var], labels: &[usize]) -> Result<Var> {
    let (&first, rest) = part_logits
        .split_first()
        .ok_or_else(|| Error::InvalidInput("no part classifiers".into()))?;
    let mut total = g.cross_entropy(first, labels)?;
    for &logits in rest {
        let ce = g.cross_entropy(logits, labels)?;
        total = g.add(total, ce)?;
    }
    Ok(g.scale(total, T::of(1.0 / part_logits.len() as f64)))
}

/// `L_ID + λ · center`.
pub fn joint_loss<T: Scalar>(g: &mut Graph<T>, id: Var, center: Var, lambda: f64) -> Result<Var> {
    let weighted = g.scale(center, T::of(lambda));
    g.add(id, weighted)
}

/// Seeded random unit rows.
pub fn init_centers(n_ids: usize, dim: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[n_ids, dim]);
    loop {
        for v in t.data_mut() {
            *v = rng.sample::<f32, _>(StandardNormal);
        }
        if renormalize_centers(&mut t).is_ok() {
            return t;
        }
    }
}

/// Divides every row by its Euclidean norm.
pub fn renormalize_centers(centers: &mut Tensor<f32>) -> Result<()> {
    let dim = *centers.shape().last().expect("rank ≥ 1");
    for (row, c) in centers.data_mut().chunks_exact_mut(dim).enumerate() {
        let norm = c.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateCenter(row));
        }
        if norm == 1.0 {
            continue;
        }
        for v in c.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{finite_diff_check, GradCheckOptions};

    fn mecen_value(x: &[f64], dim: usize, labels: &[usize], c: &[f64], margin: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(Tensor::new(&[labels.len(), dim], x.to_vec()).unwrap());
        let cv = g.leaf(Tensor::new(&[c.len() / dim, dim], c.to_vec()).unwrap());
        let l = mecen_loss(&mut g, xv, labels, cv, margin, 30.0).unwrap();
        g.value(l).item()
    }

    #[test]
    fn mecen_examples() {
        let c = [1.0, 0.0];
        // Inside the margin: ‖x − c‖² = 0.5.
        assert_eq!(mecen_value(&[1.0, 0.5f64.sqrt()], 2, &[0], &c, 1.0), 0.0);
        // ‖x − c‖² = m + 2.
        let v = mecen_value(&[1.0, 3f64.sqrt()], 2, &[0], &c, 1.0);
        assert!((v - 1.718_281_8).abs() < 1e-6, "{v}");
        // Two samples at m + 0.5.
        let r = 1.5f64.sqrt();
        let v = mecen_value(&[1.0, r, 1.0, -r], 2, &[0, 0], &c, 1.0);
        assert!((v - 0.648_721_3).abs() < 1e-6, "{v}");
    }

    #[test]
    fn mecen_rejects_unknown_label() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[1, 2]));
        let c = g.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            mecen_loss(&mut g, x, &[3], c, 1.0, 30.0),
            Err(Error::InvalidLabel { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn clamp_caps_the_exponent() {
        let v = mecen_value(&[100.0, 0.0], 2, &[0], &[1.0, 0.0], 0.0);
        assert_eq!(v, 30f64.exp() - 1.0);
    }

    #[test]
    fn center_forms() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[1, 2], vec![1.0, 3f64.sqrt()]).unwrap());
        let c = g.leaf(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let mut cfg = LossConfig::default();
        let mut eval = |form| {
            cfg.center_form = form;
            let l = center_term(&mut g, x, &[0], c, &cfg).unwrap();
            g.value(l).item()
        };
        assert!((eval(CenterForm::Plain) - 1.5).abs() < 1e-12);
        assert!((eval(CenterForm::Margin) - 1.0).abs() < 1e-12);
        assert!((eval(CenterForm::Exponential) - (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_loss_examples() {
        let mut g = Graph::<f64>::new();
        let uniform = g.leaf(Tensor::full(&[1, 20], 0.3));
        let l = identity_loss(&mut g, uniform, &[7]).unwrap();
        assert!((g.value(l).item() - 2.995_732_3).abs() < 1e-7);

        let two = g.leaf(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let l = identity_loss(&mut g, two, &[0]).unwrap();
        assert!((g.value(l).item() - 0.313_261_7).abs() < 1e-7);

        let mut confident = vec![0.0; 20];
        confident[4] = 20.0;
        let c = g.leaf(Tensor::new(&[1, 20], confident).unwrap());
        let l = identity_loss(&mut g, c, &[4]).unwrap();
        assert!(g.value(l).item() < 1e-3);

        let bad = g.leaf(Tensor::zeros(&[1, 2]));
        assert!(identity_loss(&mut g, bad, &[2]).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        let mut g = Graph::<f64>::new();
        let id = g.leaf(Tensor::scalar(0.5));
        let center = g.leaf(Tensor::scalar(0.25));
        let l = joint_loss(&mut g, id, center, 2.0).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l = joint_loss(&mut g, id, center, 0.0).unwrap();
        assert_eq!(g.value(l).item(), 0.5);
        let l = joint_loss(&mut g, id, center, 1.0).unwrap();
        assert!((g.value(l).item() - 0.75).abs() < 1e-7);
    }

    #[test]
    fn part_identity_is_mean_of_parts() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let b = g.leaf(Tensor::full(&[1, 2], 0.0));
        let l = part_identity_loss(&mut g, &[a, b], &[0]).unwrap();
        let expected = (0.313_261_687_518_222_8 + 2f64.ln()) / 2.0;
        assert!((g.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn renormalize_examples() {
        let mut t = Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        renormalize_centers(&mut t).unwrap();
        assert_eq!(t.data(), &[0.6, 0.8, 0.0, 1.0]);
        let mut z = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(renormalize_centers(&mut z), Err(Error::DegenerateCenter(1))));
    }

    #[test]
    fn mecen_gradcheck_away_from_hinge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = init_centers(3, 4, &mut rng).cast::<f64>();
        let params = vec![
            ("x".to_string(), Tensor::new(&[3, 4], x).unwrap()),
            ("centers".to_string(), c),
        ];
        let reports = finite_diff_check(
            &params,
            |g, p| {
                let m = mecen_loss(g, p[0], &[0, 2, 1], p[1], 0.5, 30.0)?;
                let logits = g.reshape(p[0], &[3, 4])?;
                let id = identity_loss(g, logits, &[1, 3, 0])?;
                joint_loss(g, id, m, 1.0)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        for r in reports {
            assert!(r.passed, "{r:?}");
        }
    }

    proptest! {
        #[test]
        fn mecen_nonnegative_and_zero_iff_within_margin(
            seed in any::<u64>(), margin in 0.0f64..4.0, spread in 0.01f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = init_centers(2, 3, &mut rng).cast::<f64>();
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-spread..spread)).collect();
            let labels = [0, 1, 1, 0];
            let v = mecen_value(&x, 3, &labels, c.data(), margin);
            prop_assert!(v >= 0.0);
            let within = labels.iter().enumerate().all(|(i, &y)| {
                let d: f64 = (0..3).map(|k| (x[i * 3 + k] - c.data()[y * 3 + k]).powi(2)).sum();
                d <= margin
            });
            prop_assert_eq!(v == 0.0, within);
        }

        #[test]
        fn mecen_monotone_in_out_of_margin_distance(seed in any::<u64>(), push in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = [1.0, 0.0];
            let mut x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Sample 0 sits outside the unit margin along +y.
            x[0] = 1.0;
            x[1] = 1.2 + rng.random_range(0.0..1.0);
            let before = mecen_value(&x, 2, &[0, 0], &c, 1.0);
            x[1] += push;
            let after = mecen_value(&x, 2, &[0, 0], &c, 1.0);
            prop_assert!(after > before);
        }

        #[test]
        fn identity_loss_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits: Vec<f64> = (0..15).map(|_| rng.random_range(-5.0..5.0)).collect();
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let mut g = Graph::<f64>::new();
            let a = g.leaf(Tensor::new(&[3, 5], logits).unwrap());
            let b = g.leaf(Tensor::new(&[3, 5], shifted).unwrap());
            let la = identity_loss(&mut g, a, &[0, 4, 2]).unwrap();
            let lb = identity_loss(&mut g, b, &[0, 4, 2]).unwrap();
            prop_assert!((g.value(la).item() - g.value(lb).item()).abs() < 1e-6);
        }

        #[test]
        fn renormalize_idempotent(seed in any::<u64>(), scale in 0.01f32..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = init_centers(4, 5, &mut rng);
            for v in t.data_mut() {
                *v *= scale;
            }
            renormalize_centers(&mut t).unwrap();
            let once = t.clone();
            renormalize_centers(&mut t).unwrap();
            for (a, b) in once.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
            for row in t.data().chunks(5) {
                let n: f32 = row.iter().map(|v| v * v).sum();
                prop_assert!((n - 1.0).abs() <= 1e-5);
            }
        }
    }
}
