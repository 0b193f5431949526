//! End-to-end commands: dataset generation, training, evaluation, gradient
//! checking and ablations.
//!
//! Output layout under the output root:
//!
//! ```text
//! data/manifest.csv, data/blobs/*.mspd     gen-data
//! config.txt                               train (resolved configuration)
//! train_log.csv                            train (one row per epoch)
//! train_timing.csv                         train (wall-clock seconds per epoch)
//! checkpoints/epoch_NNN/                   train (parameters, manifest.txt, config.txt)
//! report.csv                               eval
//! ablate_<axis>.csv                        ablate
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, GradCheckOptions, GradReport, Graph};
use crate::config::RunConfig;
use crate::data::{self, Dataset, PkSampler, Split, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::{renormalize_centers, CenterForm};
use crate::metrics::{self, EvalMode, Meta, MetricsReport, RetrievalRun};
use crate::model::{intra_class_distance, Model};
use crate::mspac::ChannelPool;
use crate::optim::Sgd;
use crate::params::Bound;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "MSPAC_OUT";
pub const DEFAULT_OUT: &str = "mspac-out";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_TIMING: &str = "train_timing.csv";
pub const REPORT: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Explicit path, else `$MSPAC_OUT`, else `./mspac-out`.
pub fn output_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn default_manifest(out: &Path) -> PathBuf {
    out.join("data").join(data::MANIFEST_FILE)
}

pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn gen_data(synth: &SynthConfig, dir: &Path) -> Result<Dataset> {
    let d = data::generate(synth)?;
    d.save(dir)?;
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow {
    pub epoch: usize,
    pub l_id: f64,
    pub l_center: f64,
    pub l_total: f64,
    pub lr: f64,
    pub intra: f64,
}

impl TrainRow {
    pub const CSV_HEADER: &'static str = "epoch,l_id,l_mecen,l_total,lr,intra_class_dist";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_id, self.l_center, self.l_total, self.lr, self.intra
        )
    }
}

pub fn train_log_csv(rows: &[TrainRow]) -> String {
    let mut out = format!("{}\n", TrainRow::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Trains from scratch on the training split of `data`.
///
/// `on_epoch` runs after every epoch (and once with epoch 0 before training)
/// with the model as it stands.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    on_epoch: &mut dyn FnMut(usize, &Model, Option<&TrainRow>) -> Result<()>,
) -> Result<(Model, Vec<TrainRow>)> {
    cfg.validate()?;
    let n_ids = data.manifest.n_ids();
    let mut model = Model::new(cfg.model(n_ids), &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    batch_rng.set_stream(1);
    let sampler = PkSampler::new(&data.manifest);
    let (p, m) = (cfg.train.p, cfg.train.m);
    let batches = sampler.epoch_len(p, m).max(1);
    let mut sgd = Sgd::new(cfg.optim.clone(), &model.store);
    let mut log = Vec::with_capacity(cfg.train.epochs);
    on_epoch(0, &model, None)?;
    for epoch in 1..=cfg.train.epochs {
        let lr_epoch = epoch - 1;
        let mut sums = [0.0f64; 4];
        for b in 0..batches {
            let batch = sampler.sample_batch(p, m, &mut batch_rng)?;
            if cfg!(debug_assertions) {
                batch.check(&data.manifest, p, m)?;
            }
            let mut g = Graph::<f32>::new();
            let bound = model.store.bind(&mut g);
            let rgb = g.leaf(data.stack(&batch.rgb)?);
            let ir = g.leaf(data.stack(&batch.ir)?);
            let lv = model.loss(&mut g, &bound, rgb, ir, &batch.labels, &cfg.loss)?;
            let values = [lv.id, lv.center, lv.total].map(|v| f64::from(g.value(v).item()));
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} batch {b}: L_ID {} center {} total {}",
                    values[0], values[1], values[2]
                )));
            }
            g.backward(lv.total)?;
            let grads: Vec<_> = bound.0.iter().map(|&v| g.grad_or_zeros(v)).collect();
            sgd.step(&mut model.store, &grads, lr_epoch)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch} batch {b}: {e}")))?;
            renormalize_centers(model.store.get_mut(model.centers))?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            sums[3] += intra_class_distance(g.value(lv.embeddings), &batch.stacked_labels());
        }
        let n = batches as f64;
        let row = TrainRow {
            epoch,
            l_id: sums[0] / n,
            l_center: sums[1] / n,
            l_total: sums[2] / n,
            lr: cfg.optim.lr(lr_epoch),
            intra: sums[3] / n,
        };
        on_epoch(epoch, &model, Some(&row))?;
        log.push(row);
    }
    Ok((model, log))
}

fn save_checkpoint(dir: &Path, model: &Model, cfg_text: &str) -> Result<()> {
    model.save(dir)?;
    write_file(&dir.join(CONFIG_FILE), cfg_text)
}

/// Trains, writing the log and a checkpoint after every epoch (epoch 0 is the
/// initialization). `progress` receives each finished row.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    progress: &mut dyn FnMut(&TrainRow),
) -> Result<(Model, Vec<TrainRow>)> {
    let data = Dataset::load(manifest)?;
    let mut cfg = cfg.clone();
    cfg.data.n_ids = data.manifest.n_ids();
    let cfg_text = cfg.to_text();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(CONFIG_FILE), &cfg_text)?;
    let log_path = out.join(TRAIN_LOG);
    let timing_path = out.join(TRAIN_TIMING);
    write_file(&log_path, format!("{}\n", TrainRow::CSV_HEADER))?;
    write_file(&timing_path, "epoch,seconds\n")?;
    let mut clock = Instant::now();
    let mut log_text = format!("{}\n", TrainRow::CSV_HEADER);
    let mut timing_text = String::from("epoch,seconds\n");
    let result = train(&cfg, &data, &mut |epoch, model, row| {
        save_checkpoint(&checkpoint_dir(out, epoch), model, &cfg_text)?;
        if let Some(row) = row {
            log_text.push_str(&row.csv_row());
            log_text.push('\n');
            timing_text.push_str(&format!("{epoch},{:.3}\n", clock.elapsed().as_secs_f64()));
            write_file(&log_path, &log_text)?;
            write_file(&timing_path, &timing_text)?;
            progress(row);
        }
        clock = Instant::now();
        Ok(())
    })?;
    Ok(result)
}

/// Infrared queries against the RGB gallery.
pub fn retrieval_run(model: &Model, data: &Dataset) -> Result<RetrievalRun> {
    let query = data.manifest.indices(Split::Query);
    let gallery = data.manifest.indices(Split::Gallery);
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Protocol("manifest has no query or no gallery images".into()));
    }
    let q = model.embed_records(data, &query, 64)?;
    let g = model.embed_records(data, &gallery, 64)?;
    let meta = |idx: &[usize]| -> Vec<Meta> {
        idx.iter()
            .map(|&i| {
                let r = &data.manifest.records[i];
                Meta {
                    identity: r.identity,
                    camera: r.camera,
                }
            })
            .collect()
    };
    RetrievalRun::new(metrics::distance_matrix(&q, &g)?, meta(&query), meta(&gallery))
}

pub fn evaluate_model(model: &Model, data: &Dataset, mode: &EvalMode) -> Result<MetricsReport> {
    metrics::evaluate(&retrieval_run(model, data)?, mode)
}

/// Rebuilds the model stored in a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::from_file(&dir.join(CONFIG_FILE))?;
    let mut model = Model::new(cfg.model(cfg.data.n_ids), &mut ChaCha8Rng::seed_from_u64(0))?;
    model.load(dir)?;
    Ok((cfg, model))
}

/// Evaluates a checkpoint under `mode` and writes `report.csv` into `out`.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, mode: &EvalMode, out: &Path) -> Result<MetricsReport> {
    let (_, model) = load_checkpoint(checkpoint)?;
    let data = Dataset::load(manifest)?;
    let report = evaluate_model(&model, &data, mode)?;
    write_file(&out.join(REPORT), metrics::report_csv(std::slice::from_ref(&report)))?;
    Ok(report)
}

/// Finite-difference check of the whole objective on a tiny model: 24×4
/// images, `D = d = 8`, three identities with one image per modality each.
/// Scales, attention switches and loss settings come from `cfg`.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<GradReport>> {
    let encoder = EncoderConfig::tiny();
    let mut tiny = cfg.clone();
    tiny.encoder = encoder.clone();
    tiny.mspac.reduction = 2;
    let synth = SynthConfig {
        n_ids: 3,
        per_id: 1,
        holdout: 0,
        latent_dim: 4,
        img_h: encoder.img_h,
        img_w: encoder.img_w,
        seed: cfg.train.seed,
        ..cfg.data.clone()
    };
    let data = data::generate(&synth)?;
    let model = Model::new(tiny.model(3), &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let pick = |modality| -> Vec<usize> {
        (0..data.manifest.records.len())
            .filter(|&i| data.manifest.records[i].modality == modality)
            .collect()
    };
    let rgb = pick(crate::Modality::Rgb);
    let ir = pick(crate::Modality::Ir);
    let labels: Vec<usize> = rgb.iter().map(|&i| data.manifest.records[i].class()).collect();
    let mut params = model.store.to_f64();
    let n = params.len();
    params.push(("images.rgb".into(), data.stack(&rgb)?.cast()));
    params.push(("images.ir".into(), data.stack(&ir)?.cast()));
    let mut reports = finite_diff_check(
        &params,
        |g, p| {
            let bound = Bound(p[..n].to_vec());
            Ok(model.loss(g, &bound, p[n], p[n + 1], &labels, &tiny.loss)?.total)
        },
        &GradCheckOptions {
            seed: cfg.train.seed,
            ..Default::default()
        },
    )?;
    reports.truncate(n);
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Scales,
    Attention,
    Loss,
    Margin,
    Lambda,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Scales, Axis::Attention, Axis::Loss, Axis::Margin, Axis::Lambda];

    /// Named configuration overrides, one per compared variant.
    pub fn variants(self) -> Vec<(String, Vec<(&'static str, String)>)> {
        let one = |k: &'static str, v: &str| vec![(k, v.to_string())];
        match self {
            Axis::Scales => [
                ("normal {1}", "1"),
                ("normal {3}", "3"),
                ("normal {6}", "6"),
                ("hierarchical {1,3}", "3,1"),
                ("hierarchical {3,6}", "6,3"),
                ("hierarchical {1,3,6}", "6,3,1"),
            ]
            .iter()
            .map(|(n, s)| (n.to_string(), one("mspac.scales", s)))
            .collect(),
            Axis::Attention => {
                let pool = |p: ChannelPool| {
                    let name = match p {
                        ChannelPool::Both => "both",
                        ChannelPool::AvgOnly => "avg",
                        ChannelPool::MaxOnly => "max",
                    };
                    one("mspac.channel_pool", name)
                };
                vec![
                    ("w/o CH".into(), one("mspac.channel", "false")),
                    ("w/o SP".into(), one("mspac.spatial", "false")),
                    ("w/o MP".into(), pool(ChannelPool::AvgOnly)),
                    ("w/o AP".into(), pool(ChannelPool::MaxOnly)),
                    ("combined".into(), pool(ChannelPool::Both)),
                ]
            }
            Axis::Loss => {
                let form = |lambda: &str, f: CenterForm| {
                    vec![("loss.lambda", lambda.to_string()), ("loss.center_form", f.to_string())]
                };
                vec![
                    ("baseline".into(), form("0", CenterForm::Exponential)),
                    ("+center".into(), form("1", CenterForm::Plain)),
                    ("+margin".into(), form("1", CenterForm::Margin)),
                    ("+exp".into(), form("1", CenterForm::Exponential)),
                ]
            }
            Axis::Margin => (0..=5)
                .map(|m| (format!("m={m}"), one("loss.margin", &m.to_string())))
                .collect(),
            Axis::Lambda => ["0", "0.5", "1", "1.5", "2", "3"]
                .iter()
                .map(|l| (format!("lambda={l}"), one("loss.lambda", l)))
                .collect(),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scales" => Ok(Axis::Scales),
            "attention" => Ok(Axis::Attention),
            "loss" => Ok(Axis::Loss),
            "margin" => Ok(Axis::Margin),
            "lambda" => Ok(Axis::Lambda),
            _ => Err(Error::InvalidConfig(format!(
                "ablation axis must be scales, attention, loss, margin or lambda, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Scales => "scales",
            Axis::Attention => "attention",
            Axis::Loss => "loss",
            Axis::Margin => "margin",
            Axis::Lambda => "lambda",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// All metrics are NaN when training diverged.
    pub report: MetricsReport,
    /// Mean intra-class embedding distance over the last epoch.
    pub intra: f64,
    pub final_loss: f64,
    /// The numerical failure that stopped training, if any.
    pub failure: Option<String>,
}

impl AblationRow {
    pub fn status(&self) -> &'static str {
        if self.failure.is_some() {
            "diverged"
        } else {
            "ok"
        }
    }
}

pub const ABLATION_HEADER: &str = "axis,variant,mode,shot,r1,r5,r10,r20,mAP,intra_class_dist,final_loss,status";

/// Variant names such as `hierarchical {1,3}` contain commas and get quoted.
pub fn ablation_csv(axis: Axis, rows: &[AblationRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut push = |fields: Vec<String>| w.write_record(&fields).expect("writing to memory");
    push(ABLATION_HEADER.split(',').map(String::from).collect());
    for r in rows {
        let [r1, r5, r10, r20] = r.report.cmc;
        let mut fields = vec![axis.to_string(), r.variant.clone(), r.report.search.to_string(), r.report.shot.to_string()];
        fields.extend([r1, r5, r10, r20, r.report.map].iter().map(|v| format!("{v:.6}")));
        fields.extend([r.intra.to_string(), r.final_loss.to_string(), r.status().to_string()]);
        push(fields);
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ASCII fields")
}

/// Trains and evaluates every variant of `axis` on the same data and batch
/// sequence. Writes `ablate_<axis>.csv` into `out` when given.
///
/// A variant whose training hits a non-finite value is kept as a `diverged`
/// row and the sweep moves on; any other error stops it.
pub fn cmd_ablate(
    cfg: &RunConfig,
    axis: Axis,
    data: &Dataset,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, overrides) in axis.variants() {
        let mut v = cfg.clone();
        for (k, val) in &overrides {
            v.set(k, val)?;
        }
        let row = match train(&v, data, &mut |_, _, _| Ok(())) {
            Ok((model, log)) => {
                let last = log.last();
                AblationRow {
                    variant: name,
                    report: evaluate_model(&model, data, &v.eval)?,
                    intra: last.map_or(f64::NAN, |r| r.intra),
                    final_loss: last.map_or(f64::NAN, |r| r.l_total),
                    failure: None,
                }
            }
            Err(Error::NonFinite(msg)) => AblationRow {
                variant: name,
                report: MetricsReport {
                    search: v.eval.search,
                    shot: v.eval.shot,
                    cmc: [f64::NAN; 4],
                    map: f64::NAN,
                },
                intra: f64::NAN,
                final_loss: f64::NAN,
                failure: Some(msg),
            },
            Err(e) => return Err(e),
        };
        progress(&row);
        rows.push(row);
    }
    if let Some(dir) = out {
        write_file(&dir.join(format!("ablate_{axis}.csv")), ablation_csv(axis, &rows))?;
    }
    Ok(rows)
}
