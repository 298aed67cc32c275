//! Hierarchical Dirichlet process topic model.
//!
//! The instantiated part of the model is `T` topics with corpus weights
//! `π` (`Σπ < 1`; the residual mass funds new topics) and document
//! proportions `ν ~ Dir(bπ)`. The frequentist sampler grows `T` inside the
//! E-step; the Bayesian variant keeps Dirichlet and Beta posteriors over
//! topics and stick fractions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, WordIndex};
use crate::error::{Error, Result};
use crate::lda::{self, ModelParams};
use crate::online_em::StepSchedule;
use crate::rng::{self, stream, Rng};
use crate::special::digamma;
use crate::stirling::StirlingTable;

/// Slack kept below one when the weights are rescaled.
const PI_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct HdpParams {
    pub beta: Array2<f64>,
    pub pi: Vec<f64>,
    /// Document-level concentration.
    pub b: f64,
    /// Stick-breaking concentration.
    pub alpha_conc: f64,
}

impl HdpParams {
    pub fn new(beta: Array2<f64>, pi: Vec<f64>, b: f64, alpha_conc: f64) -> Result<Self> {
        let p = Self {
            beta,
            pi,
            b,
            alpha_conc,
        };
        p.validate()?;
        Ok(p)
    }

    /// Two random topics with stick-breaking weights.
    pub fn random(t: usize, v: usize, b: f64, alpha_conc: f64, rng: &mut Rng) -> Result<Self> {
        let lda = ModelParams::random(t, v, 1.0, rng);
        let stick = Beta::new(1.0, alpha_conc).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut pi = Vec::with_capacity(t);
        let mut residual = 1.0;
        for _ in 0..t {
            let frac: f64 = stick.sample(rng);
            let frac = frac.clamp(1e-3, 1.0 - 1e-3);
            pi.push(frac * residual);
            residual *= 1.0 - frac;
        }
        Self::new(lda.into_parts().0, pi, b, alpha_conc)
    }

    pub fn t(&self) -> usize {
        self.pi.len()
    }

    pub fn v(&self) -> usize {
        self.beta.ncols()
    }

    pub fn residual(&self) -> f64 {
        1.0 - self.pi.iter().sum::<f64>()
    }

    /// Checks the stick-breaking invariants and the topic simplex.
    pub fn validate(&self) -> Result<()> {
        if self.pi.is_empty() || self.beta.nrows() != self.pi.len() {
            return Err(Error::shape(format!("{} topics", self.beta.nrows()), self.pi.len()));
        }
        if !(self.b > 0.0) || !(self.alpha_conc > 0.0) {
            return Err(Error::InvalidArgument("concentrations must be positive".into()));
        }
        if let Some(k) = self.pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Degenerate(format!("pi[{k}] = {} outside (0, 1)", self.pi[k])));
        }
        let total: f64 = self.pi.iter().sum();
        if !(total < 1.0) {
            return Err(Error::Degenerate(format!("sum of pi = {total} is not below 1")));
        }
        for (k, row) in self.beta.rows().into_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0) {
                return Err(Error::Degenerate(format!("topic {k} is off the simplex")));
            }
        }
        Ok(())
    }

    /// The instantiated topics as a finite LDA with prior `b π / Σπ`.
    pub fn to_lda(&self) -> Result<ModelParams> {
        let total: f64 = self.pi.iter().sum();
        ModelParams::new(self.beta.clone(), self.pi.iter().map(|p| self.b * p / total).collect())
    }

    /// Text dump: JSON header with `t`, `v`, `b`, `alpha_conc`, then T rows
    /// of β and the π row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "format": "oem-hdp", "t": self.t(), "v": self.v(), "b": self.b, "alpha_conc": self.alpha_conc,
        });
        writeln!(out, "{header}").expect("write to string");
        for row in self.beta.rows() {
            lda::push_row(&mut out, row.iter());
        }
        lda::push_row(&mut out, self.pi.iter());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap_or(""))?;
        if header["format"] != "oem-hdp" {
            return Err(lda::parse_err(1, "not an oem-hdp file".into()));
        }
        let get = |key: &str| {
            header[key]
                .as_f64()
                .ok_or_else(|| lda::parse_err(1, format!("header is missing {key}")))
        };
        let (t, v) = (get("t")? as usize, get("v")? as usize);
        let mut beta = Array2::zeros((t, v));
        for k in 0..t {
            let row = lda::parse_row(lines.next(), k + 2, v)?;
            beta.row_mut(k).assign(&ndarray::Array1::from(row));
        }
        let pi = lda::parse_row(lines.next(), t + 2, t)?;
        Self::new(beta, pi, get("b")?, get("alpha_conc")?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// HDP sufficient statistics: expected `log ν_k` and word-topic counts.
#[derive(Debug, Clone, PartialEq)]
pub struct HdpSuffStats {
    pub s1: Vec<f64>,
    pub s2: Array2<f64>,
}

impl HdpSuffStats {
    /// Statistics that map back to `params`.
    pub fn forward(params: &HdpParams, scale: f64) -> Self {
        let bpi: Vec<f64> = params.pi.iter().map(|p| params.b * p).collect();
        let psi_sum = digamma(bpi.iter().sum());
        Self {
            s1: bpi.iter().map(|&x| digamma(x) - psi_sum).collect(),
            s2: &params.beta * scale,
        }
    }

    /// Appends topics with prior-expectation `s1` and empty `s2` rows.
    pub fn extend(&mut self, b: f64, pi_all: &[f64]) {
        let old = self.s1.len();
        let psi_sum = digamma(b * pi_all.iter().sum::<f64>());
        for &p in &pi_all[old..] {
            self.s1.push(digamma(b * p) - psi_sum);
        }
        let v = self.s2.ncols();
        let mut s2 = Array2::zeros((pi_all.len(), v));
        s2.slice_mut(ndarray::s![..old, ..]).assign(&self.s2);
        self.s2 = s2;
    }

    pub fn blend(&self, other: &HdpSuffStats, rho: f64) -> Result<HdpSuffStats> {
        if self.s2.dim() != other.s2.dim() || self.s1.len() != other.s1.len() {
            return Err(Error::shape(
                format!("{:?}", self.s2.dim()),
                format!("{:?}", other.s2.dim()),
            ));
        }
        let mut s2 = &self.s2 * (1.0 - rho);
        s2.scaled_add(rho, &other.s2);
        s2.mapv_inplace(|x| x.max(0.0));
        Ok(HdpSuffStats {
            s1: self
                .s1
                .iter()
                .zip(&other.s1)
                .map(|(a, b)| (1.0 - rho) * a + rho * b)
                .collect(),
            s2,
        })
    }
}

/// `β` from normalized `s2` rows and `bπ` from the fixed point
/// `(bπ)_k ← Ψ⁻¹(Ψ(Σ bπ) + s1_k)`. If the weights sum to one or more they
/// are scaled to `(1 − 1e−6) / Σπ`.
pub fn hdp_m_step(s: &HdpSuffStats, b: f64, alpha_conc: f64, pi_init: &[f64]) -> Result<HdpParams> {
    let t = s.s2.nrows();
    if s.s1.len() != t || pi_init.len() != t {
        return Err(Error::shape(t, format!("s1 {} / pi {}", s.s1.len(), pi_init.len())));
    }
    let mut beta = s.s2.clone();
    lda::normalize_topics(&mut beta)?;
    let init: Vec<f64> = pi_init.iter().map(|p| b * p).collect();
    let bpi = lda::alpha_fixed_point(&s.s1, &init, 1e-8, 1000)?;
    let mut pi: Vec<f64> = bpi.iter().map(|x| x / b).collect();
    let total: f64 = pi.iter().sum();
    if total >= 1.0 {
        info!("topic weights sum to {total}; rescaling below one");
        let f = (1.0 - PI_EPS) / total;
        pi.iter_mut().for_each(|p| *p *= f);
    }
    for p in pi.iter_mut() {
        *p = p.max(f64::MIN_POSITIVE);
    }
    HdpParams::new(beta, pi, b, alpha_conc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpConfig {
    pub schedule: StepSchedule,
    pub minibatch_size: usize,
    pub local_iters: usize,
    pub seed: u64,
    pub t_max: usize,
    /// New topics whose average count over the averaging window is below
    /// this are dropped before the merge.
    pub min_new_mass: f64,
    /// At most this many proposed topics are kept per minibatch, in
    /// document order.
    pub max_new_per_minibatch: usize,
    /// Topics whose running expected count per document falls below this
    /// are removed once they are `prune_grace` minibatches old; zero
    /// disables pruning.
    #[serde(default)]
    pub prune_mass: f64,
    #[serde(default)]
    pub prune_grace: usize,
}

impl Default for HdpConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule { kappa: 0.5, offset: 0 },
            minibatch_size: 100,
            local_iters: 20,
            seed: 0,
            t_max: 200,
            min_new_mass: 1.0,
            max_new_per_minibatch: 1,
            prune_mass: 0.5,
            prune_grace: 5,
        }
    }
}

/// Sampler state for one document; topics past `t_global` were created
/// during this E-step and have uniform word distributions.
struct HdpDocState {
    index: WordIndex,
    z: Vec<u32>,
    counts: Vec<u32>,
    pi: Vec<f64>,
    cols: Vec<f64>,
    t_global: usize,
    v: usize,
    /// `[topic][distinct word]` accumulated conditionals.
    marginals: Vec<Vec<f64>>,
    /// Counts and `Σπ` at each retained sweep.
    retained: Vec<(Vec<u32>, f64)>,
}

impl HdpDocState {
    fn t_local(&self) -> usize {
        self.pi.len()
    }

    fn beta(&self, k: usize, j: usize) -> f64 {
        if k < self.t_global {
            self.cols[j * self.t_global + k]
        } else {
            1.0 / self.v as f64
        }
    }

    fn add_topic(&mut self, pi: f64) {
        self.pi.push(pi);
        self.counts.push(0);
        self.marginals.push(vec![0.0; self.index.words.len()]);
    }
}

/// Per-document output of the HDP E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct HdpDocEstimate {
    pub words: Vec<usize>,
    /// `[topic][distinct word]`, global topics first, then kept new ones.
    pub s2: Vec<Vec<f64>>,
    pub s1: Vec<f64>,
    /// Weights of the kept new topics.
    pub new_pi: Vec<f64>,
    pub sum_pi: f64,
    pub n_tokens: usize,
}

/// Keeps stick weights positive with residual mass of at least `PI_EPS`.
fn repair_sticks(pi: &mut [f64]) {
    let total: f64 = pi.iter().sum();
    if total > 1.0 - PI_EPS {
        let f = (1.0 - PI_EPS) / total;
        pi.iter_mut().for_each(|p| *p *= f);
    }
    pi.iter_mut().for_each(|p| *p = p.max(f64::MIN_POSITIVE));
}

/// Draws the weight of a new topic: `π̄ · (1 − Σπ)` with `π̄ ~ Beta(1, α)`.
fn new_topic_weight(residual: f64, alpha_conc: f64, rng: &mut Rng) -> f64 {
    let frac: f64 = Beta::new(1.0, alpha_conc).expect("positive concentration").sample(rng);
    // keep the new weight and the remaining residual strictly positive
    frac.clamp(1e-6, 1.0 - 1e-6) * residual
}

/// Topic-growing collapsed Gibbs E-step for one document.
///
/// `can_grow` bounds the number of new topics this document may create.
pub fn hdp_gibbs_estep(
    doc: &Document,
    params: &HdpParams,
    sweeps: usize,
    max_new: usize,
    min_new_mass: f64,
    rng: &mut Rng,
) -> Result<HdpDocEstimate> {
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    if sweeps < 4 {
        return Err(Error::InvalidArgument(format!(
            "window averaging needs at least 4 sweeps, got {sweeps}"
        )));
    }
    let t_global = params.t();
    let index = WordIndex::new(doc);
    let mut cols = Vec::with_capacity(index.words.len() * t_global);
    for &w in &index.words {
        cols.extend(params.beta.column(w).iter());
    }
    let mut st = HdpDocState {
        marginals: vec![vec![0.0; index.words.len()]; t_global],
        index,
        z: Vec::with_capacity(doc.len()),
        counts: vec![0; t_global],
        pi: params.pi.clone(),
        cols,
        t_global,
        v: params.v(),
        retained: Vec::new(),
    };
    let b = params.b;
    let n_tokens = doc.len();

    // initialization from the normalized β column, as for LDA
    for n in 0..n_tokens {
        let j = st.index.token_word[n] as usize;
        let col = &st.cols[j * t_global..(j + 1) * t_global];
        let k = rng::sample_weighted(rng, col, col.iter().sum());
        st.z.push(k as u32);
        st.counts[k] += 1;
    }

    let start = crate::gibbs::window_start(sweeps);
    let mut order: Vec<usize> = (0..n_tokens).collect();
    let mut p = Vec::new();
    let mut created = 0usize;
    for t in 1..=sweeps {
        order.shuffle(rng);
        for &n in &order {
            let j = st.index.token_word[n] as usize;
            let old = st.z[n] as usize;
            st.counts[old] -= 1;
            let tl = st.t_local();
            p.clear();
            let mut total = 0.0;
            for k in 0..tl {
                let w = (st.counts[k] as f64 + b * st.pi[k]) * st.beta(k, j);
                p.push(w);
                total += w;
            }
            let residual = (1.0 - st.pi.iter().sum::<f64>()).max(0.0);
            let grow = if created < max_new {
                b * residual / st.v as f64
            } else {
                0.0
            };
            p.push(grow);
            total += grow;
            let k = rng::sample_weighted(rng, &p, total);
            if k == tl {
                let w = new_topic_weight(residual, params.alpha_conc, rng);
                st.add_topic(w);
                created += 1;
            }
            st.z[n] = k as u32;
            st.counts[k] += 1;
        }
        if t >= start {
            let tl = st.t_local();
            let mut cond = vec![0.0; tl];
            for n in 0..n_tokens {
                let j = st.index.token_word[n] as usize;
                let own = st.z[n] as usize;
                let mut total = 0.0;
                for (k, c) in cond.iter_mut().enumerate() {
                    let cnt = st.counts[k] as f64 - (k == own) as u8 as f64;
                    *c = (cnt + b * st.pi[k]) * st.beta(k, j);
                    total += *c;
                }
                for (k, c) in cond.iter().enumerate() {
                    st.marginals[k][j] += c / total;
                }
            }
            st.retained.push((st.counts.clone(), st.pi.iter().sum()));
        }
    }

    let r = st.retained.len() as f64;
    let mean_count = |k: usize| -> f64 {
        st.retained
            .iter()
            .map(|(c, _)| c.get(k).copied().unwrap_or(0) as f64)
            .sum::<f64>()
            / r
    };
    let keep: Vec<usize> = (0..st.t_local())
        .filter(|&k| k < t_global || mean_count(k) >= min_new_mass)
        .collect();
    let sum_pi = st.retained.last().map(|x| x.1).unwrap_or(0.0);
    let s1 = keep
        .iter()
        .map(|&k| {
            let bpi = b * st.pi[k];
            st.retained
                .iter()
                .map(|(c, spi)| {
                    let cnt = c.get(k).copied().unwrap_or(0) as f64;
                    digamma(bpi + cnt) - digamma(b * spi + n_tokens as f64)
                })
                .sum::<f64>()
                / r
        })
        .collect();
    Ok(HdpDocEstimate {
        words: st.index.words.clone(),
        s2: keep
            .iter()
            .map(|&k| st.marginals[k].iter().map(|x| x / r).collect())
            .collect(),
        s1,
        new_pi: keep.iter().filter(|&&k| k >= t_global).map(|&k| st.pi[k]).collect(),
        sum_pi,
        n_tokens,
    })
}

/// Snapshot delivered after every HDP minibatch.
pub struct HdpCheckpoint<'a> {
    pub minibatch: usize,
    pub docs_seen: usize,
    pub params: &'a HdpParams,
}

/// Online EM for the HDP with the topic-growing Gibbs E-step.
pub fn run_hdp_goem<F>(
    docs: &[Document],
    init: HdpParams,
    config: &HdpConfig,
    mut on_checkpoint: F,
) -> Result<HdpParams>
where
    F: FnMut(&HdpCheckpoint<'_>) -> Result<()>,
{
    if config.minibatch_size == 0 {
        return Err(Error::InvalidArgument("minibatch_size must be at least 1".into()));
    }
    init.validate()?;
    let mean_len = docs.iter().map(Document::len).sum::<usize>() as f64 / docs.len().max(1) as f64;
    let mut params = init;
    let mut s = HdpSuffStats::forward(&params, mean_len.max(1.0) / params.t() as f64);
    let mut docs_seen = 0;
    let mut born = vec![0usize; params.t()];
    for (i, batch) in docs.chunks(config.minibatch_size).enumerate() {
        let minibatch = i + 1;
        let rho = config.schedule.step_size(minibatch as u64)?;
        let room = config.t_max.saturating_sub(params.t());
        let estimates = batch
            .par_iter()
            .enumerate()
            .map(|(d, doc)| {
                let mut rng = rng::rng_for(config.seed, &[stream::ESTEP, minibatch as u64, d as u64]);
                hdp_gibbs_estep(doc, &params, config.local_iters, room, config.min_new_mass, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Minibatch {
                index: minibatch,
                source: Box::new(e),
            })?;

        // new topics are appended in document order
        let mut pi_all = params.pi.clone();
        let mut owner: Vec<(usize, usize)> = Vec::new();
        let cap = room.min(config.max_new_per_minibatch);
        for (d, e) in estimates.iter().enumerate() {
            for (j, &p) in e.new_pi.iter().enumerate() {
                if owner.len() < cap {
                    owner.push((d, j));
                    pi_all.push(p);
                }
            }
        }
        if params.t() + owner.len() >= config.t_max && !owner.is_empty() {
            warn!("topic cap {} reached", config.t_max);
        }
        // the proposals of different documents compete for the same
        // residual mass; shrink them if they overdraw it
        let total: f64 = pi_all.iter().sum();
        if total >= 1.0 {
            let old: f64 = params.pi.iter().sum();
            let f = (1.0 - old) * (1.0 - PI_EPS) / (total - old);
            pi_all[params.t()..].iter_mut().for_each(|p| *p *= f);
        }
        let t_new = pi_all.len();
        let v = params.v();
        let b = params.b;
        let mut s_hat = HdpSuffStats {
            s1: vec![0.0; t_new],
            s2: Array2::zeros((t_new, v)),
        };
        let w = 1.0 / estimates.len() as f64;
        for (d, e) in estimates.iter().enumerate() {
            let psi_doc = digamma(b * e.sum_pi + e.n_tokens as f64);
            let mut slot = vec![None; e.new_pi.len()];
            for (pos, &(od, oj)) in owner.iter().enumerate() {
                if od == d {
                    slot[oj] = Some(params.t() + pos);
                }
            }
            let mut filled = vec![false; t_new];
            for (k, (s1k, s2k)) in e.s1.iter().zip(&e.s2).enumerate() {
                let target = if k < params.t() { Some(k) } else { slot[k - params.t()] };
                let Some(target) = target else { continue };
                filled[target] = true;
                s_hat.s1[target] += w * s1k;
                for (jw, &word) in e.words.iter().enumerate() {
                    s_hat.s2[[target, word]] += w * s2k[jw];
                }
            }
            for (k, f) in filled.iter().enumerate() {
                if !f {
                    s_hat.s1[k] += w * (digamma(b * pi_all[k]) - psi_doc);
                }
            }
        }
        s.extend(b, &pi_all);
        s = s.blend(&s_hat, rho)?;
        born.resize(t_new, minibatch);
        if config.prune_mass > 0.0 {
            prune(&mut s, &mut pi_all, &mut born, minibatch, config);
        }
        params = hdp_m_step(&s, b, params.alpha_conc, &pi_all).map_err(|e| Error::Minibatch {
            index: minibatch,
            source: Box::new(e),
        })?;
        docs_seen += batch.len();
        on_checkpoint(&HdpCheckpoint {
            minibatch,
            docs_seen,
            params: &params,
        })?;
    }
    Ok(params)
}

/// Removes old topics with little running mass; at least one topic stays.
fn prune(s: &mut HdpSuffStats, pi: &mut Vec<f64>, born: &mut Vec<usize>, minibatch: usize, config: &HdpConfig) {
    let mass: Vec<f64> = s.s2.sum_axis(Axis(1)).to_vec();
    let keep: Vec<usize> = (0..pi.len())
        .filter(|&k| mass[k] >= config.prune_mass || minibatch < born[k] + config.prune_grace)
        .collect();
    let keep = if keep.is_empty() {
        vec![(0..pi.len()).max_by(|&a, &b| mass[a].total_cmp(&mass[b])).unwrap_or(0)]
    } else {
        keep
    };
    if keep.len() == pi.len() {
        return;
    }
    info!("pruning {} topics", pi.len() - keep.len());
    s.s1 = keep.iter().map(|&k| s.s1[k]).collect();
    s.s2 = s.s2.select(Axis(0), &keep);
    *pi = keep.iter().map(|&k| pi[k]).collect();
    *born = keep.iter().map(|&k| born[k]).collect();
}

/// Left-to-right log-perplexity of the instantiated model.
pub fn hdp_evaluate(
    test: &[Document],
    params: &HdpParams,
    particles: usize,
    seed: u64,
) -> Result<crate::eval::PerplexityReport> {
    let lda = params.to_lda()?;
    crate::eval::perplexity_docs(test, &lda.local(), particles, seed)
}

/// Variational state of the Bayesian HDP: Dirichlet posteriors over topics
/// and Beta posteriors over stick fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct HdpBayesState {
    pub lambda: Array2<f64>,
    pub a: Vec<f64>,
    pub b_stick: Vec<f64>,
    pub eta_prior: f64,
    pub alpha_conc: f64,
    pub b: f64,
    /// Weights used by the next local step.
    pub pi: Vec<f64>,
}

impl HdpBayesState {
    pub fn from_params(params: &HdpParams, eta_prior: f64, scale: f64) -> Result<Self> {
        let t = params.t();
        let state = Self {
            lambda: params.beta.mapv(|x| eta_prior + scale * x),
            a: vec![1.0; t],
            b_stick: vec![params.alpha_conc; t],
            eta_prior,
            alpha_conc: params.alpha_conc,
            b: params.b,
            pi: params.pi.clone(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn t(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t();
        if self.lambda.nrows() != t || self.b_stick.len() != t || self.pi.len() != t {
            return Err(Error::shape(t, self.lambda.nrows()));
        }
        if self
            .lambda
            .iter()
            .chain(&self.a)
            .chain(&self.b_stick)
            .any(|&x| !(x > 0.0))
        {
            return Err(Error::Degenerate("non-positive variational parameter".into()));
        }
        if self.pi.iter().any(|&p| !(p > 0.0)) || !(self.pi.iter().sum::<f64>() < 1.0) {
            return Err(Error::Degenerate("stick weights are invalid".into()));
        }
        Ok(())
    }

    /// Stick weights at the posterior means of the fractions.
    pub fn expected_pi(&self) -> Vec<f64> {
        let mut residual = 1.0;
        let mut pi = self
            .a
            .iter()
            .zip(&self.b_stick)
            .map(|(&a, &b)| {
                let frac = a / (a + b);
                let p = frac * residual;
                residual *= 1.0 - frac;
                p
            })
            .collect::<Vec<_>>();
        repair_sticks(&mut pi);
        pi
    }

    /// Point estimate: `β̂` the row-normalized `λ`, `π` the posterior-mean
    /// sticks.
    pub fn params(&self) -> Result<HdpParams> {
        let beta = crate::bayes::BayesGlobalState {
            lambda: self.lambda.clone(),
            b: self.eta_prior,
            d: 1.0,
        }
        .mean_topics();
        HdpParams::new(beta, self.expected_pi(), self.b, self.alpha_conc)
    }

    /// Keeps only the listed topics; their weights are unchanged.
    pub fn retain(&mut self, keep: &[usize]) {
        self.lambda = self.lambda.select(Axis(0), keep);
        self.a = keep.iter().map(|&k| self.a[k]).collect();
        self.b_stick = keep.iter().map(|&k| self.b_stick[k]).collect();
        self.pi = keep.iter().map(|&k| self.pi[k]).collect();
    }

    fn add_topic(&mut self, pi: f64) {
        let v = self.lambda.ncols();
        self.lambda
            .push_row(ndarray::Array1::from_elem(v, self.eta_prior).view())
            .expect("row length matches");
        self.a.push(1.0);
        self.b_stick.push(self.alpha_conc);
        self.pi.push(pi);
    }
}

/// One document's result in the Bayesian HDP step.
#[derive(Debug, Clone)]
struct VarGibbsDoc {
    counts: Vec<(usize, usize, f64)>,
    topic_counts: Vec<f64>,
    tables: Vec<usize>,
    new_pi: Vec<f64>,
}

fn vargibbs_document(
    doc: &Document,
    state: &HdpBayesState,
    sweeps: usize,
    max_new: usize,
    stirling: &StirlingTable,
    rng: &mut Rng,
) -> Result<VarGibbsDoc> {
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let t_global = state.t();
    let v = state.lambda.ncols();
    let lambda_sum: Vec<f64> = state.lambda.sum_axis(Axis(1)).to_vec();
    let words = doc.word_ids();
    let n_tokens = words.len();
    let mut pi = state.pi.clone();
    let mut z: Vec<usize> = Vec::with_capacity(n_tokens);
    let mut n_dk: Vec<f64> = vec![0.0; t_global];
    // local word-topic counts, keyed by (topic, word)
    let mut n_kw: std::collections::HashMap<(usize, usize), f64> = Default::default();
    let mut n_k: Vec<f64> = vec![0.0; t_global];
    let lam = |k: usize, w: usize| {
        if k < t_global {
            state.lambda[[k, w]]
        } else {
            state.eta_prior
        }
    };
    let lam_sum = |k: usize| {
        if k < t_global {
            lambda_sum[k]
        } else {
            state.eta_prior * v as f64
        }
    };
    let mut created = 0;
    let mut p = Vec::new();
    for sweep in 0..=sweeps {
        let positions: Vec<usize> = if sweep == 0 {
            (0..n_tokens).collect()
        } else {
            let mut o: Vec<usize> = (0..n_tokens).collect();
            o.shuffle(rng);
            o
        };
        for n in positions {
            let w = words[n];
            if sweep > 0 {
                let old = z[n];
                n_dk[old] -= 1.0;
                n_k[old] -= 1.0;
                *n_kw.get_mut(&(old, w)).expect("assigned") -= 1.0;
            }
            let tl = pi.len();
            p.clear();
            let mut total = 0.0;
            for k in 0..tl {
                let nkw = n_kw.get(&(k, w)).copied().unwrap_or(0.0);
                let x = (n_dk[k] + state.b * pi[k]) * (nkw + lam(k, w)) / (n_k[k] + lam_sum(k));
                p.push(x);
                total += x;
            }
            let residual = (1.0 - pi.iter().sum::<f64>()).max(0.0);
            let grow = if created < max_new {
                state.b * residual / v as f64
            } else {
                0.0
            };
            p.push(grow);
            total += grow;
            let k = rng::sample_weighted(rng, &p, total);
            if k == tl {
                pi.push(new_topic_weight(residual, state.alpha_conc, rng));
                n_dk.push(0.0);
                n_k.push(0.0);
                created += 1;
            }
            if sweep == 0 {
                z.push(k);
            } else {
                z[n] = k;
            }
            n_dk[k] += 1.0;
            n_k[k] += 1.0;
            *n_kw.entry((k, w)).or_insert(0.0) += 1.0;
        }
    }
    let tables = n_dk
        .iter()
        .zip(&pi)
        .map(|(&n, &p)| stirling.sample_antoniak(n as usize, state.b * p, rng))
        .collect();
    let mut counts: Vec<(usize, usize, f64)> = n_kw
        .into_iter()
        .filter(|e| e.1 > 0.0)
        .map(|((k, w), c)| (k, w, c))
        .collect();
    counts.sort_by_key(|e| (e.0, e.1));
    Ok(VarGibbsDoc {
        counts,
        topic_counts: n_dk,
        tables,
        new_pi: pi[t_global..].to_vec(),
    })
}

/// One minibatch of the Bayesian HDP update.
///
/// Samples `z` per document against the surrogate counts `λ`, draws table
/// counts from the Antoniak distribution, resamples the stick fractions
/// from their conditional, and blends `λ`, `a`, `b` toward
/// `λ̂ = η + D·counts`, `â = 1 + D·s`, `b̂ = α + D·Σ_{j>k} s`.
pub fn hdp_vargibbs_step(
    batch: &[Document],
    state: &mut HdpBayesState,
    rho: f64,
    d: f64,
    config: &HdpConfig,
    minibatch: usize,
) -> Result<()> {
    let (sweeps, t_max, seed) = (config.local_iters, config.t_max, config.seed);
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside (0, 1]")));
    }
    let max_len = batch.iter().map(Document::len).max().unwrap_or(0);
    let stirling = StirlingTable::new(max_len);
    let room = t_max.saturating_sub(state.t());
    let results = batch
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut rng = rng::rng_for(seed, &[stream::ESTEP, minibatch as u64, i as u64]);
            vargibbs_document(doc, state, sweeps, room, &stirling, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // append proposed topics in document order
    let t_old = state.t();
    let cap = room.min(config.max_new_per_minibatch);
    let mut added = 0;
    let mut slots: Vec<Vec<Option<usize>>> = Vec::with_capacity(results.len());
    for r in &results {
        let mut slot = Vec::with_capacity(r.new_pi.len());
        for (j, &p) in r.new_pi.iter().enumerate() {
            if added < cap && r.topic_counts[t_old + j] >= config.min_new_mass {
                slot.push(Some(state.t()));
                state.add_topic(p);
                added += 1;
            } else {
                slot.push(None);
            }
        }
        slots.push(slot);
    }
    let t = state.t();
    let v = state.lambda.ncols();
    let w = 1.0 / batch.len().max(1) as f64;
    let mut counts = Array2::<f64>::zeros((t, v));
    let mut tables = vec![0.0; t];
    for (r, slot) in results.iter().zip(&slots) {
        let map = |k: usize| if k < t_old { Some(k) } else { slot[k - t_old] };
        for &(k, word, c) in &r.counts {
            if let Some(k) = map(k) {
                counts[[k, word]] += w * c;
            }
        }
        for (k, &s) in r.tables.iter().enumerate() {
            if let Some(k) = map(k) {
                tables[k] += w * s as f64;
            }
        }
    }
    let tail: Vec<f64> = (0..t).map(|k| tables[k + 1..].iter().sum()).collect();

    // stick fractions from their conditional given this minibatch's tables
    let mut rng = rng::rng_for(seed, &[stream::PI, minibatch as u64]);
    let mut residual = 1.0;
    let mut pi = Vec::with_capacity(t);
    for k in 0..t {
        let shape1 = state.a[k] + tables[k] * batch.len() as f64;
        let shape2 = (state.b_stick[k] - state.alpha_conc + 1.0 + tail[k] * batch.len() as f64).max(1e-3);
        let frac: f64 = Beta::new(shape1, shape2)
            .map_err(|e| Error::Degenerate(format!("stick posterior: {e}")))?
            .sample(&mut rng);
        let frac = frac.clamp(1e-9, 1.0 - 1e-9);
        pi.push(frac * residual);
        residual *= 1.0 - frac;
    }
    repair_sticks(&mut pi);

    let blend = |old: f64, new: f64| (1.0 - rho) * old + rho * new;
    let eta = state.eta_prior;
    state.lambda.zip_mut_with(&counts, |l, &c| *l = blend(*l, eta + d * c));
    for k in 0..t {
        state.a[k] = blend(state.a[k], 1.0 + d * tables[k]);
        state.b_stick[k] = blend(state.b_stick[k], state.alpha_conc + d * tail[k]);
    }
    state.pi = pi;
    state.validate()
}

/// Runs the Bayesian HDP over `docs` in minibatches.
pub fn run_hdp_vargibbs<F>(
    docs: &[Document],
    init: &HdpParams,
    eta_prior: f64,
    config: &HdpConfig,
    mut on_checkpoint: F,
) -> Result<HdpBayesState>
where
    F: FnMut(&HdpCheckpoint<'_>) -> Result<()>,
{
    let d = docs.len().max(1) as f64;
    let mean_len = docs.iter().map(Document::len).sum::<usize>() as f64 / d;
    let mut state = HdpBayesState::from_params(init, eta_prior, d * mean_len / init.t() as f64)?;
    let mut docs_seen = 0;
    let mut born = vec![0usize; state.t()];
    for (i, batch) in docs.chunks(config.minibatch_size.max(1)).enumerate() {
        let minibatch = i + 1;
        let rho = config.schedule.step_size(minibatch as u64)?;
        hdp_vargibbs_step(batch, &mut state, rho, d, config, minibatch).map_err(|e| Error::Minibatch {
            index: minibatch,
            source: Box::new(e),
        })?;
        born.resize(state.t(), minibatch);
        if config.prune_mass > 0.0 {
            // expected count per document carried by each topic
            let eta_mass = state.eta_prior * state.lambda.ncols() as f64;
            let mass: Vec<f64> = state
                .lambda
                .sum_axis(Axis(1))
                .iter()
                .map(|l| (l - eta_mass) / d)
                .collect();
            let keep: Vec<usize> = (0..state.t())
                .filter(|&k| mass[k] >= config.prune_mass || minibatch < born[k] + config.prune_grace)
                .collect();
            if !keep.is_empty() && keep.len() < state.t() {
                info!("pruning {} topics", state.t() - keep.len());
                state.retain(&keep);
                born = keep.iter().map(|&k| born[k]).collect();
            }
        }
        docs_seen += batch.len();
        let params = state.params()?;
        on_checkpoint(&HdpCheckpoint {
            minibatch,
            docs_seen,
            params: &params,
        })?;
    }
    Ok(state)
}
