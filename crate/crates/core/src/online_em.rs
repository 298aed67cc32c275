//! Generic online EM driver.
//!
//! Each minibatch `i` produces an estimate `ŝ` of the expected sufficient
//! statistics under the current parameters; the running statistic is blended
//! as `s_i = (1 − ρ_i) s_{i−1} + ρ_i ŝ` and the parameters are re-solved from
//! `s_i`. The local E-step and the global update are pluggable so that the
//! same loop drives the frequentist and the Bayesian variants.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::BayesGlobalState;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::lda::{self, AlphaUpdate, LocalModel, ModelParams};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kappa: f64,
    #[serde(default)]
    pub offset: u64,
}

impl StepSchedule {
    pub fn new(kappa: f64, offset: u64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa = {kappa} outside (0, 1]")));
        }
        Ok(Self { kappa, offset })
    }

    /// `ρ_i = (i + offset)^(−κ)` for `i ≥ 1`.
    pub fn step_size(&self, i: u64) -> Result<f64> {
        if i == 0 {
            return Err(Error::InvalidArgument("step index starts at 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa = {} outside (0, 1]", self.kappa)));
        }
        Ok(((i + self.offset) as f64).powf(-self.kappa))
    }
}

pub fn step_size(schedule: &StepSchedule, i: u64) -> Result<f64> {
    schedule.step_size(i)
}

/// Sufficient statistics of LDA: expected word-topic counts and expected log
/// topic proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub s1: Array2<f64>,
    pub s2: Vec<f64>,
}

impl SuffStats {
    pub fn zeros(k: usize, v: usize) -> Self {
        Self {
            s1: Array2::zeros((k, v)),
            s2: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.s2.len()
    }

    pub fn v(&self) -> usize {
        self.s1.ncols()
    }

    fn check_shape(&self, other: &SuffStats) -> Result<()> {
        if self.s1.dim() != other.s1.dim() || self.s2.len() != other.s2.len() {
            return Err(Error::shape(
                format!("{:?}/{}", self.s1.dim(), self.s2.len()),
                format!("{:?}/{}", other.s1.dim(), other.s2.len()),
            ));
        }
        Ok(())
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, other: &SuffStats, weight: f64) -> Result<()> {
        self.check_shape(other)?;
        self.s1.scaled_add(weight, &other.s1);
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += weight * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.s1 *= factor;
        self.s2.iter_mut().for_each(|x| *x *= factor);
    }
}

/// `(1 − ρ) s_prev + ρ s_hat`.
pub fn blend_stats(s_prev: &SuffStats, s_hat: &SuffStats, rho: f64) -> Result<SuffStats> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside (0, 1]")));
    }
    s_prev.check_shape(s_hat)?;
    if rho == 1.0 {
        return Ok(s_hat.clone());
    }
    let mut out = s_prev.clone();
    out.scale(1.0 - rho);
    out.add_scaled(s_hat, rho)?;
    // rounding can push an exact zero a hair below it
    out.s1.mapv_inplace(|x| x.max(0.0));
    Ok(out)
}

/// Unweighted mean of per-document statistics.
pub fn minibatch_estimate(per_doc: &[SuffStats]) -> Result<SuffStats> {
    let first = per_doc
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty minibatch".into()))?;
    let mut acc = SuffStats::zeros(first.k(), first.v());
    for s in per_doc {
        acc.add_scaled(s, 1.0)?;
    }
    acc.scale(1.0 / per_doc.len() as f64);
    Ok(acc)
}

/// Per-document statistics restricted to the words that occur in it.
///
/// `s1` holds `K` values per entry of `words`, word-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEstimate {
    pub words: Vec<usize>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl DocEstimate {
    pub fn k(&self) -> usize {
        self.s2.len()
    }

    pub fn add_to(&self, acc: &mut SuffStats, weight: f64) {
        let k = self.k();
        for (j, &w) in self.words.iter().enumerate() {
            for t in 0..k {
                acc.s1[[t, w]] += weight * self.s1[j * k + t];
            }
        }
        for (a, b) in acc.s2.iter_mut().zip(&self.s2) {
            *a += weight * b;
        }
    }

    pub fn to_dense(&self, v: usize) -> SuffStats {
        let mut s = SuffStats::zeros(self.k(), v);
        self.add_to(&mut s, 1.0);
        s
    }

    /// `Σ s1`, the number of tokens for an exact estimate.
    pub fn total_mass(&self) -> f64 {
        self.s1.iter().sum()
    }
}

/// Mean of sparse per-document estimates, accumulated in slice order.
pub fn mean_of_estimates(estimates: &[DocEstimate], k: usize, v: usize) -> Result<SuffStats> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let mut acc = SuffStats::zeros(k, v);
    let w = 1.0 / estimates.len() as f64;
    for e in estimates {
        if e.k() != k {
            return Err(Error::shape(k, e.k()));
        }
        e.add_to(&mut acc, w);
    }
    Ok(acc)
}

/// A local E-step: a per-document state refined by sweeps, from which an
/// estimate of the expected sufficient statistics is read off.
pub trait LocalInference: Sync {
    type State: Send;

    fn init(&self, doc: &Document, model: &LocalModel<'_>, rng: &mut Rng) -> Result<Self::State>;

    /// Runs sweep `t` (1-based) of `total`.
    fn sweep(
        &self,
        state: &mut Self::State,
        model: &LocalModel<'_>,
        t: usize,
        total: usize,
        rng: &mut Rng,
    ) -> Result<()>;

    fn estimate(&self, state: &Self::State, model: &LocalModel<'_>) -> Result<DocEstimate>;

    /// Runs a full local inference on one document.
    fn run(&self, doc: &Document, model: &LocalModel<'_>, sweeps: usize, rng: &mut Rng) -> Result<DocEstimate> {
        let mut state = self.init(doc, model, rng)?;
        for t in 1..=sweeps {
            self.sweep(&mut state, model, t, sweeps, rng)?;
        }
        self.estimate(&state, model)
    }
}

/// The global half of an online EM step.
///
/// `apply` always blends relative to the state fixed by the last `commit`,
/// so it may be called repeatedly within one minibatch.
pub trait GlobalUpdate {
    /// The parameters seen by the local E-step.
    fn view(&self) -> LocalModel<'_>;
    fn apply(&mut self, estimate: &SuffStats, rho: f64) -> Result<()>;
    fn commit(&mut self);
    /// Point estimate used for evaluation and averaging.
    fn params(&self) -> ModelParams;
    /// Dirichlet posterior over the topics, for the Bayesian updates.
    fn topic_posterior(&self) -> Option<&BayesGlobalState> {
        None
    }
}

/// Frequentist online EM: blend statistics, then `η = η*(s)`.
#[derive(Debug, Clone)]
pub struct FrequentistGlobal {
    params: ModelParams,
    committed_params: ModelParams,
    s: SuffStats,
    committed: SuffStats,
    alpha: AlphaUpdate,
}

impl FrequentistGlobal {
    /// The initial statistic is `forward_stats(scale)`, which maps back to
    /// `params`; it only matters when `ρ_1 < 1`.
    pub fn new(params: ModelParams, alpha: AlphaUpdate, scale: f64) -> Self {
        let s = params.forward_stats(scale);
        Self {
            committed_params: params.clone(),
            params,
            committed: s.clone(),
            s,
            alpha,
        }
    }

    pub fn stats(&self) -> &SuffStats {
        &self.s
    }

    pub fn current(&self) -> &ModelParams {
        &self.params
    }
}

impl GlobalUpdate for FrequentistGlobal {
    fn view(&self) -> LocalModel<'_> {
        self.params.local()
    }

    fn apply(&mut self, estimate: &SuffStats, rho: f64) -> Result<()> {
        self.s = blend_stats(&self.committed, estimate, rho)?;
        self.params = lda::m_step(&self.s, &self.alpha, self.committed_params.alpha())?;
        Ok(())
    }

    fn commit(&mut self) {
        self.committed = self.s.clone();
        self.committed_params = self.params.clone();
    }

    fn params(&self) -> ModelParams {
        self.params.clone()
    }
}

/// Running arithmetic mean of parameter iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTrace {
    pub last: ModelParams,
    pub running_mean: ModelParams,
    pub count: usize,
}

impl AveragedTrace {
    pub fn new(initial: ModelParams) -> Self {
        Self {
            running_mean: initial.clone(),
            last: initial,
            count: 0,
        }
    }

    pub fn push(&mut self, params: ModelParams) -> Result<()> {
        if params.k() != self.last.k() || params.v() != self.last.v() {
            return Err(Error::shape(
                format!("{}x{}", self.last.k(), self.last.v()),
                format!("{}x{}", params.k(), params.v()),
            ));
        }
        self.count += 1;
        if self.count == 1 {
            self.running_mean = params.clone();
        } else {
            let w = 1.0 / self.count as f64;
            let (mut beta, mut alpha) = self.running_mean.clone().into_parts();
            beta.zip_mut_with(params.beta(), |m, &x| *m += w * (x - *m));
            for (m, &x) in alpha.iter_mut().zip(params.alpha()) {
                *m += w * (x - *m);
            }
            for mut row in beta.rows_mut() {
                let s = row.sum();
                row /= s;
            }
            self.running_mean = ModelParams::new(beta, alpha)?;
        }
        self.last = params;
        Ok(())
    }

    pub fn output(&self, averaged: bool) -> &ModelParams {
        if averaged {
            &self.running_mean
        } else {
            &self.last
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineEmConfig {
    pub schedule: StepSchedule,
    pub minibatch_size: usize,
    /// Local sweeps `P` per document.
    pub local_iters: usize,
    /// Re-run the global update after each local sweep.
    pub boost: bool,
    pub seed: u64,
    #[serde(default = "one")]
    pub passes: usize,
}

fn one() -> usize {
    1
}

impl OnlineEmConfig {
    pub fn validate(&self) -> Result<()> {
        StepSchedule::new(self.schedule.kappa, self.schedule.offset)?;
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArgument("minibatch_size must be at least 1".into()));
        }
        if self.local_iters == 0 {
            return Err(Error::InvalidArgument("local_iters must be at least 1".into()));
        }
        if self.passes == 0 {
            return Err(Error::InvalidArgument("passes must be at least 1".into()));
        }
        Ok(())
    }
}

/// State delivered to the checkpoint callback after every minibatch.
pub struct Checkpoint<'a> {
    /// 1-based minibatch counter across passes.
    pub minibatch: usize,
    pub docs_seen: usize,
    pub trace: &'a AveragedTrace,
    pub posterior: Option<&'a BayesGlobalState>,
}

/// One online EM run over `docs` (`passes` times, in order).
pub fn run_online_em<G, L, F>(
    docs: &[Document],
    global: &mut G,
    backend: &L,
    config: &OnlineEmConfig,
    mut on_checkpoint: F,
) -> Result<AveragedTrace>
where
    G: GlobalUpdate,
    L: LocalInference,
    F: FnMut(&Checkpoint<'_>) -> Result<()>,
{
    config.validate()?;
    let mut trace = AveragedTrace::new(global.params());
    let mut minibatch = 0usize;
    let mut docs_seen = 0usize;
    for pass in 0..config.passes {
        for batch in docs.chunks(config.minibatch_size) {
            minibatch += 1;
            let rho = config.schedule.step_size(minibatch as u64)?;
            process_minibatch(batch, global, backend, config, rho, pass, minibatch).map_err(|e| Error::Minibatch {
                index: minibatch,
                source: Box::new(e),
            })?;
            global.commit();
            docs_seen += batch.len();
            trace.push(global.params())?;
            on_checkpoint(&Checkpoint {
                minibatch,
                docs_seen,
                trace: &trace,
                posterior: global.topic_posterior(),
            })?;
        }
    }
    Ok(trace)
}

fn process_minibatch<G: GlobalUpdate, L: LocalInference>(
    batch: &[Document],
    global: &mut G,
    backend: &L,
    config: &OnlineEmConfig,
    rho: f64,
    pass: usize,
    minibatch: usize,
) -> Result<()> {
    let p = config.local_iters;
    let mut states: Vec<(L::State, Rng)> = {
        let model = global.view();
        batch
            .par_iter()
            .enumerate()
            .map(|(d, doc)| {
                let mut rng = rng::rng_for(config.seed, &[stream::ESTEP, pass as u64, minibatch as u64, d as u64]);
                backend.init(doc, &model, &mut rng).map(|s| (s, rng))
            })
            .collect::<Result<_>>()?
    };
    for t in 1..=p {
        if !config.boost && t < p {
            // the parameters are frozen, so remaining sweeps run back to back
            let model = global.view();
            states
                .par_iter_mut()
                .try_for_each(|(state, rng)| (t..p).try_for_each(|u| backend.sweep(state, &model, u, p, rng)))?;
        }
        let t = if config.boost { t } else { p };
        let estimate = {
            let model = global.view();
            let estimates: Vec<DocEstimate> = states
                .par_iter_mut()
                .map(|(state, rng)| {
                    backend.sweep(state, &model, t, p, rng)?;
                    backend.estimate(state, &model)
                })
                .collect::<Result<_>>()?;
            mean_of_estimates(&estimates, model.k(), model.v())?
        };
        global.apply(&estimate, rho)?;
        if !config.boost {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn step_size_examples() {
        let s = StepSchedule::new(0.5, 0).unwrap();
        assert_eq!(s.step_size(4).unwrap(), 0.5);
        let s = StepSchedule::new(1.0, 0).unwrap();
        assert_eq!(s.step_size(1).unwrap(), 1.0);
        assert!((s.step_size(3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.step_size(0).is_err());
        assert!(StepSchedule::new(0.0, 0).is_err());
        assert!(StepSchedule::new(1.5, 0).is_err());
    }

    fn stats(s1: Array2<f64>, s2: Vec<f64>) -> SuffStats {
        SuffStats { s1, s2 }
    }

    #[test]
    fn blend_examples() {
        let a = stats(array![[2.0, 0.0]], vec![-1.0]);
        let b = stats(array![[0.0, 2.0]], vec![-3.0]);
        assert_eq!(blend_stats(&a, &b, 1.0).unwrap(), b);
        let mid = blend_stats(&a, &b, 0.5).unwrap();
        assert_eq!(mid.s1, array![[1.0, 1.0]]);
        assert_eq!(mid.s2, vec![-2.0]);
        assert_eq!(blend_stats(&a, &a, 0.3).unwrap(), a);
        assert!(blend_stats(&a, &stats(array![[1.0]], vec![0.0]), 0.5).is_err());
        assert!(blend_stats(&a, &b, 0.0).is_err());
    }

    #[test]
    fn minibatch_mean() {
        let a = stats(array![[1.0]], vec![-1.0, -1.0]);
        assert!(minibatch_estimate(&[]).is_err());
        let a = stats(Array2::zeros((2, 1)), a.s2);
        let b = stats(Array2::zeros((2, 1)), vec![-3.0, -3.0]);
        assert_eq!(minibatch_estimate(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(minibatch_estimate(&[a, b]).unwrap().s2, vec![-2.0, -2.0]);
    }

    #[test]
    fn sparse_estimate_densifies() {
        let e = DocEstimate {
            words: vec![0, 2],
            s1: vec![1.0, 2.0, 3.0, 4.0],
            s2: vec![-0.5, -1.0],
        };
        let d = e.to_dense(3);
        assert_eq!(d.s1, array![[1.0, 0.0, 3.0], [2.0, 0.0, 4.0]]);
        assert_eq!(e.total_mass(), 10.0);
    }

    #[test]
    fn running_mean_matches_stored_iterates() {
        let mut rng = rng::rng_for(3, &[]);
        let iterates: Vec<ModelParams> = (0..7)
            .map(|i| ModelParams::random(3, 5, 0.1 + i as f64, &mut rng))
            .collect();
        let mut trace = AveragedTrace::new(iterates[0].clone());
        for p in &iterates {
            trace.push(p.clone()).unwrap();
        }
        let n = iterates.len() as f64;
        for k in 0..3 {
            let mean_alpha: f64 = iterates.iter().map(|p| p.alpha()[k]).sum::<f64>() / n;
            assert!((trace.running_mean.alpha()[k] - mean_alpha).abs() < 1e-12);
            for v in 0..5 {
                let m: f64 = iterates.iter().map(|p| p.beta()[[k, v]]).sum::<f64>() / n;
                assert!((trace.running_mean.beta()[[k, v]] - m).abs() < 1e-12);
            }
        }
        assert_eq!(trace.count, 7);
        assert_eq!(&trace.last, iterates.last().unwrap());
    }

    proptest! {
        #[test]
        fn blending_keeps_s1_nonnegative(
            a in proptest::collection::vec(0.0f64..10.0, 6),
            b in proptest::collection::vec(0.0f64..10.0, 6),
            rho in 1e-6f64..=1.0,
        ) {
            let sa = stats(Array2::from_shape_vec((2, 3), a).unwrap(), vec![-1.0, -2.0]);
            let sb = stats(Array2::from_shape_vec((2, 3), b).unwrap(), vec![-0.5, -3.0]);
            let out = blend_stats(&sa, &sb, rho).unwrap();
            prop_assert!(out.s1.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn rho_is_in_unit_interval(kappa in 0.01f64..=1.0, i in 1u64..100_000, off in 0u64..50) {
            let r = StepSchedule::new(kappa, off).unwrap().step_size(i).unwrap();
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}
