//! Retrieval evaluation: squared Euclidean distances, CMC and mAP under
//! all/indoor search and single/multi-shot galleries.
//!
//! Gallery items are ranked by ascending distance, ties by gallery index.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::is_indoor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CMC_RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Meta {
    pub identity: usize,
    pub camera: u8,
}

/// Row-major `n_q × n_g` distances with their metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRun {
    pub dist: Vec<f64>,
    pub query: Vec<Meta>,
    pub gallery: Vec<Meta>,
}

impl RetrievalRun {
    pub fn new(dist: Vec<f64>, query: Vec<Meta>, gallery: Vec<Meta>) -> Result<Self> {
        if dist.len() != query.len() * gallery.len() {
            return Err(Error::InvalidShape(format!(
                "{} distances for {} queries × {} gallery items",
                dist.len(),
                query.len(),
                gallery.len()
            )));
        }
        Ok(Self { dist, query, gallery })
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let n = self.gallery.len();
        &self.dist[q * n..(q + 1) * n]
    }

    /// Keeps the listed gallery columns, in the given order.
    pub fn select_gallery(&self, keep: &[usize]) -> Self {
        let dist = (0..self.query.len())
            .flat_map(|q| {
                let row = self.row(q);
                keep.iter().map(move |&j| row[j])
            })
            .collect();
        Self {
            dist,
            query: self.query.clone(),
            gallery: keep.iter().map(|&j| self.gallery[j]).collect(),
        }
    }

    /// For each query, 0-based ranks of its relevant gallery items in ascending order.
    fn hit_ranks(&self) -> Result<Vec<Vec<usize>>> {
        if self.gallery.is_empty() {
            return Err(Error::Protocol("empty gallery".into()));
        }
        (0..self.query.len())
            .map(|q| {
                let order = ranking(self.row(q));
                let id = self.query[q].identity;
                let hits: Vec<usize> = order
                    .iter()
                    .enumerate()
                    .filter(|&(_, &j)| self.gallery[j].identity == id)
                    .map(|(r, _)| r)
                    .collect();
                if hits.is_empty() {
                    return Err(Error::Protocol(format!(
                        "query {q} (identity {id}) has no match in the gallery"
                    )));
                }
                Ok(hits)
            })
            .collect()
    }
}

/// `dist[i][j] = ‖q_i − g_j‖²` for `[n_q, d]` and `[n_g, d]` embeddings.
pub fn distance_matrix(q: &Tensor<f32>, g: &Tensor<f32>) -> Result<Vec<f64>> {
    if q.rank() != 2 || g.rank() != 2 || q.shape()[1] != g.shape()[1] {
        return Err(Error::InvalidShape(format!(
            "distance_matrix: queries {:?} vs gallery {:?}",
            q.shape(),
            g.shape()
        )));
    }
    let d = q.shape()[1];
    let mut out = Vec::with_capacity(q.shape()[0] * g.shape()[0]);
    for qi in q.data().chunks_exact(d) {
        for gj in g.data().chunks_exact(d) {
            out.push(
                qi.iter()
                    .zip(gj)
                    .map(|(&a, &b)| {
                        let diff = f64::from(a) - f64::from(b);
                        diff * diff
                    })
                    .sum(),
            );
        }
    }
    Ok(out)
}

/// Gallery indices by ascending distance, ties by index.
pub fn ranking(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order
}

/// Rank-k hit rates for each `k` (k beyond the gallery size counts the whole gallery).
pub fn cmc(run: &RetrievalRun, ks: &[usize]) -> Result<Vec<f64>> {
    let hits = run.hit_ranks()?;
    let n = hits.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| hits.iter().filter(|h| h[0] < k).count() as f64 / n)
        .collect())
}

pub fn average_precision(hit_ranks: &[usize]) -> f64 {
    let total: f64 = hit_ranks
        .iter()
        .enumerate()
        .map(|(found, &r)| (found + 1) as f64 / (r + 1) as f64)
        .sum();
    total / hit_ranks.len() as f64
}

pub fn mean_ap(run: &RetrievalRun) -> Result<f64> {
    let hits = run.hit_ranks()?;
    Ok(hits.iter().map(|h| average_precision(h)).sum::<f64>() / hits.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    All,
    Indoor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shot {
    Single,
    Multi,
}

impl fmt::Display for Search {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Search::All => "all",
            Search::Indoor => "indoor",
        })
    }
}

impl fmt::Display for Shot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shot::Single => "single",
            Shot::Multi => "multi",
        })
    }
}

impl std::str::FromStr for Search {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Search::All),
            "indoor" => Ok(Search::Indoor),
            _ => Err(Error::InvalidConfig(format!("search mode must be all or indoor, got {s:?}"))),
        }
    }
}

impl std::str::FromStr for Shot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Shot::Single),
            "multi" => Ok(Shot::Multi),
            _ => Err(Error::InvalidConfig(format!("shot must be single or multi, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalMode {
    pub search: Search,
    pub shot: Shot,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalMode {
    fn default() -> Self {
        Self {
            search: Search::All,
            shot: Shot::Multi,
            trials: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub search: Search,
    pub shot: Shot,
    /// Rank-1, 5, 10 and 20 accuracy.
    pub cmc: [f64; 4],
    pub map: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mode,shot,r1,r5,r10,r20,mAP";

    pub fn csv_row(&self) -> String {
        let [r1, r5, r10, r20] = self.cmc;
        format!("{},{},{r1:.6},{r5:.6},{r10:.6},{r20:.6},{:.6}", self.search, self.shot, self.map)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r1, r5, r10, r20] = self.cmc;
        write!(
            f,
            "{}-search {}-shot: rank-1 {:.2}%  rank-5 {:.2}%  rank-10 {:.2}%  rank-20 {:.2}%  mAP {:.2}%",
            self.search,
            self.shot,
            100.0 * r1,
            100.0 * r5,
            100.0 * r10,
            100.0 * r20,
            100.0 * self.map
        )
    }
}

pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Gallery columns surviving the camera filter of `search`.
pub fn filter_gallery(run: &RetrievalRun, search: Search) -> Vec<usize> {
    (0..run.gallery.len())
        .filter(|&j| search == Search::All || is_indoor(run.gallery[j].camera))
        .collect()
}

/// One gallery item per (identity, camera), drawn uniformly from `columns`.
fn single_shot(run: &RetrievalRun, columns: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut groups: BTreeMap<(usize, u8), Vec<usize>> = BTreeMap::new();
    for &j in columns {
        let m = run.gallery[j];
        groups.entry((m.identity, m.camera)).or_default().push(j);
    }
    let mut picked: Vec<usize> = groups
        .values()
        .map(|g| *g.choose(rng).expect("non-empty group"))
        .collect();
    picked.sort_unstable();
    picked
}

pub fn evaluate(run: &RetrievalRun, mode: &EvalMode) -> Result<MetricsReport> {
    let columns = filter_gallery(run, mode.search);
    if columns.is_empty() {
        return Err(Error::Protocol(format!("{}-search leaves an empty gallery", mode.search)));
    }
    let score = |r: &RetrievalRun| -> Result<([f64; 4], f64)> {
        let c = cmc(r, &CMC_RANKS)?;
        Ok(([c[0], c[1], c[2], c[3]], mean_ap(r)?))
    };
    let (cmc, map) = match mode.shot {
        Shot::Multi => score(&run.select_gallery(&columns))?,
        Shot::Single => {
            if mode.trials == 0 {
                return Err(Error::InvalidConfig("eval.trials must be positive".into()));
            }
            let mut root = ChaCha8Rng::seed_from_u64(mode.seed);
            let mut cmc = [0.0; 4];
            let mut map = 0.0;
            for _ in 0..mode.trials {
                let mut rng = ChaCha8Rng::seed_from_u64(root.random());
                let (c, m) = score(&run.select_gallery(&single_shot(run, &columns, &mut rng)))?;
                for (acc, v) in cmc.iter_mut().zip(c) {
                    *acc += v;
                }
                map += m;
            }
            let n = mode.trials as f64;
            (cmc.map(|v| v / n), map / n)
        }
    };
    Ok(MetricsReport {
        search: mode.search,
        shot: mode.shot,
        cmc,
        map,
    })
}
