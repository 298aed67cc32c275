//! Collapsed Gibbs E-step for one document, with θ integrated out.
//!
//! The single-site conditional is
//! `p(z_n = k | z_{−n}) ∝ β_{k, x_n} (N_{−n,k} + α_k)`. Statistics are
//! averaged over the last quarter of the sweeps using the conditional
//! probabilities given each retained sample, not the sampled indicators.

use rand::seq::SliceRandom;

use crate::corpus::{Document, WordIndex};
use crate::error::{Error, Result};
use crate::lda::LocalModel;
use crate::online_em::{DocEstimate, LocalInference};
use crate::rng::{self, Rng};
use crate::special::{digamma, ln_gamma, log_sum_exp};

/// Topic assignments of one document and the matching per-topic counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentSampleState {
    pub z: Vec<usize>,
    pub counts: Vec<usize>,
}

impl LatentSampleState {
    pub fn from_assignments(z: Vec<usize>, k: usize) -> Result<Self> {
        let mut counts = vec![0; k];
        for &t in &z {
            *counts
                .get_mut(t)
                .ok_or_else(|| Error::InvalidArgument(format!("topic {t} out of range")))? += 1;
        }
        Ok(Self { z, counts })
    }
}

/// Normalized conditional of token `n` given all other assignments.
pub fn gibbs_conditional(
    state: &LatentSampleState,
    n: usize,
    doc: &Document,
    model: &LocalModel<'_>,
) -> Result<Vec<f64>> {
    let w = *doc
        .word_ids()
        .get(n)
        .ok_or_else(|| Error::InvalidArgument(format!("position {n} out of range")))?;
    if state.z.len() != doc.len() || state.counts.len() != model.k() {
        return Err(Error::shape(
            format!("{} tokens / {} topics", doc.len(), model.k()),
            format!("{} / {}", state.z.len(), state.counts.len()),
        ));
    }
    let denom = (doc.len() - 1) as f64 + model.alpha_sum();
    let mut p: Vec<f64> = (0..model.k())
        .map(|k| {
            let own = (state.z[n] == k) as usize;
            model.beta[[k, w]] * ((state.counts[k] - own) as f64 + model.alpha[k]) / denom
        })
        .collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "word {w} has zero probability under every topic"
        )));
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// How the per-document statistics are read off the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GibbsStats {
    /// Conditional probabilities averaged over sweeps `⌈3P/4⌉..=P`.
    #[default]
    WindowAverage,
    /// Indicator counts of the final sample only.
    LastSample,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GibbsSampler {
    pub stats: GibbsStats,
}

/// First sweep (1-based) of the averaging window.
pub fn window_start(total: usize) -> usize {
    (3 * total).div_ceil(4).max(1)
}

pub struct GibbsState {
    index: WordIndex,
    z: Vec<u32>,
    counts: Vec<u32>,
    beta_cols: Vec<f64>,
    marginal_acc: Vec<f64>,
    s2_acc: Vec<f64>,
    retained: usize,
    order: Vec<usize>,
}

impl GibbsState {
    pub fn assignments(&self) -> Vec<usize> {
        self.z.iter().map(|&t| t as usize).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.counts.iter().map(|&c| c as usize).collect()
    }

    fn refresh_columns(&mut self, model: &LocalModel<'_>) -> Result<()> {
        model.gather_columns(&self.index.words, &mut self.beta_cols);
        let k = model.k();
        for (j, col) in self.beta_cols.chunks(k).enumerate() {
            if !(col.iter().sum::<f64>() > 0.0) {
                return Err(Error::Degenerate(format!(
                    "word {} has zero probability under every topic",
                    self.index.words[j]
                )));
            }
        }
        Ok(())
    }

    /// Adds the conditional of every token given the current sample to the
    /// per-word accumulator.
    fn accumulate_conditionals(&self, model: &LocalModel<'_>, out: &mut [f64]) {
        let k = model.k();
        let mut p = vec![0.0; k];
        for (n, &j) in self.index.token_word.iter().enumerate() {
            let col = &self.beta_cols[j as usize * k..(j as usize + 1) * k];
            let own = self.z[n] as usize;
            let mut total = 0.0;
            for t in 0..k {
                let c = self.counts[t] as f64 - (t == own) as u8 as f64;
                p[t] = col[t] * (c + model.alpha[t]);
                total += p[t];
            }
            let row = &mut out[j as usize * k..(j as usize + 1) * k];
            for t in 0..k {
                row[t] += p[t] / total;
            }
        }
    }

    fn log_proportion_stat(&self, model: &LocalModel<'_>) -> Vec<f64> {
        let psi_total = digamma(model.alpha_sum() + self.z.len() as f64);
        self.counts
            .iter()
            .zip(model.alpha)
            .map(|(&c, &a)| digamma(a + c as f64) - psi_total)
            .collect()
    }
}

impl LocalInference for GibbsSampler {
    type State = GibbsState;

    fn init(&self, doc: &Document, model: &LocalModel<'_>, rng: &mut Rng) -> Result<GibbsState> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let k = model.k();
        let mut state = GibbsState {
            index: WordIndex::new(doc),
            z: Vec::with_capacity(doc.len()),
            counts: vec![0; k],
            beta_cols: Vec::new(),
            marginal_acc: Vec::new(),
            s2_acc: vec![0.0; k],
            retained: 0,
            order: (0..doc.len()).collect(),
        };
        state.marginal_acc = vec![0.0; state.index.words.len() * k];
        state.refresh_columns(model)?;
        for &j in &state.index.token_word {
            let col = &state.beta_cols[j as usize * k..(j as usize + 1) * k];
            let t = rng::sample_weighted(rng, col, col.iter().sum());
            state.z.push(t as u32);
            state.counts[t] += 1;
        }
        Ok(state)
    }

    fn sweep(
        &self,
        state: &mut GibbsState,
        model: &LocalModel<'_>,
        t: usize,
        total: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        if self.stats == GibbsStats::WindowAverage && total < 4 {
            return Err(Error::InvalidArgument(format!(
                "window averaging needs at least 4 sweeps, got {total}"
            )));
        }
        let k = model.k();
        state.refresh_columns(model)?;
        state.order.shuffle(rng);
        let mut p = vec![0.0; k];
        for i in 0..state.order.len() {
            let n = state.order[i];
            let j = state.index.token_word[n] as usize;
            let old = state.z[n] as usize;
            state.counts[old] -= 1;
            let col = &state.beta_cols[j * k..(j + 1) * k];
            let mut sum = 0.0;
            for topic in 0..k {
                p[topic] = col[topic] * (state.counts[topic] as f64 + model.alpha[topic]);
                sum += p[topic];
            }
            let new = rng::sample_weighted(rng, &p, sum);
            state.z[n] = new as u32;
            state.counts[new] += 1;
        }
        if self.stats == GibbsStats::WindowAverage && t >= window_start(total) {
            let mut acc = std::mem::take(&mut state.marginal_acc);
            state.accumulate_conditionals(model, &mut acc);
            state.marginal_acc = acc;
            let stat = state.log_proportion_stat(model);
            for (a, s) in state.s2_acc.iter_mut().zip(stat) {
                *a += s;
            }
            state.retained += 1;
        }
        Ok(())
    }

    fn estimate(&self, state: &GibbsState, model: &LocalModel<'_>) -> Result<DocEstimate> {
        let k = model.k();
        let words = state.index.words.clone();
        let (s1, s2) = match self.stats {
            GibbsStats::WindowAverage if state.retained > 0 => {
                let w = 1.0 / state.retained as f64;
                (
                    state.marginal_acc.iter().map(|x| x * w).collect(),
                    state.s2_acc.iter().map(|x| x * w).collect(),
                )
            }
            GibbsStats::WindowAverage => {
                // boosted runs read the chain before the window opens
                let mut s1 = vec![0.0; words.len() * k];
                state.accumulate_conditionals(model, &mut s1);
                (s1, state.log_proportion_stat(model))
            }
            GibbsStats::LastSample => {
                let mut s1 = vec![0.0; words.len() * k];
                for (n, &j) in state.index.token_word.iter().enumerate() {
                    s1[j as usize * k + state.z[n] as usize] += 1.0;
                }
                (s1, state.log_proportion_stat(model))
            }
        };
        Ok(DocEstimate { words, s1, s2 })
    }
}

/// Output of the single-document Gibbs E-step.
#[derive(Debug, Clone)]
pub struct GibbsOutput {
    pub estimate: DocEstimate,
    /// Token-level marginals `p(z_n = k | X)`, `N × K`.
    pub marginals: Vec<Vec<f64>>,
}

/// Runs `sweeps` collapsed Gibbs sweeps on one document from its own seed.
pub fn gibbs_estep(doc: &Document, model: &LocalModel<'_>, sweeps: usize, seed: u64) -> Result<GibbsOutput> {
    if sweeps < 4 {
        return Err(Error::InvalidArgument(format!(
            "window averaging needs at least 4 sweeps, got {sweeps}"
        )));
    }
    let sampler = GibbsSampler::default();
    let mut rng = rng::rng_for(seed, &[rng::stream::ESTEP]);
    let estimate = sampler.run(doc, model, sweeps, &mut rng)?;
    let k = model.k();
    let index = WordIndex::new(doc);
    // tokens of the same word share a conditional only in distribution, so
    // the per-word average is the marginal each of them gets
    let marginals = index
        .token_word
        .iter()
        .map(|&j| {
            let j = j as usize;
            let m = index.multiplicity[j];
            estimate.s1[j * k..(j + 1) * k].iter().map(|x| x / m).collect()
        })
        .collect();
    Ok(GibbsOutput { estimate, marginals })
}

/// Exact posterior quantities of one document, by enumerating every
/// assignment `z ∈ {0..K}^N`.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    /// `p(z_n = k | X)`, `N × K`.
    pub marginals: Vec<Vec<f64>>,
    pub estimate: DocEstimate,
    /// `log p(X | β, α)`.
    pub log_evidence: f64,
}

pub const MAX_ENUMERATION: f64 = (1u64 << 20) as f64;

/// `log p(Z | α)` for counts `n_k`, with θ integrated out.
pub fn log_dirichlet_multinomial(counts: &[usize], alpha: &[f64]) -> f64 {
    let a: f64 = alpha.iter().sum();
    let n: usize = counts.iter().sum();
    let mut lp = ln_gamma(a) - ln_gamma(a + n as f64);
    for (&c, &ak) in counts.iter().zip(alpha) {
        lp += ln_gamma(ak + c as f64) - ln_gamma(ak);
    }
    lp
}

pub fn enumerate_posterior(doc: &Document, model: &LocalModel<'_>) -> Result<ExactPosterior> {
    let (k, n) = (model.k(), doc.len());
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    let states = (k as f64).powi(n as i32);
    if states > MAX_ENUMERATION {
        return Err(Error::StateSpaceTooLarge(states));
    }
    let words = doc.word_ids();
    let total = states as usize;
    let mut log_w = Vec::with_capacity(total);
    let mut z = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for code in 0..total {
        let mut c = code;
        counts.iter_mut().for_each(|x| *x = 0);
        let mut lw = 0.0;
        for (pos, zn) in z.iter_mut().enumerate() {
            *zn = c % k;
            c /= k;
            counts[*zn] += 1;
            lw += model.beta[[*zn, words[pos]]].ln();
        }
        log_w.push(lw + log_dirichlet_multinomial(&counts, model.alpha));
    }
    let log_evidence = log_sum_exp(&log_w);
    if !log_evidence.is_finite() {
        return Err(Error::Degenerate("document has zero probability".into()));
    }
    let mut marginals = vec![vec![0.0; k]; n];
    let mut s2 = vec![0.0; k];
    let psi_total = digamma(model.alpha_sum() + n as f64);
    for (code, lw) in log_w.iter().enumerate() {
        let w = (lw - log_evidence).exp();
        if w == 0.0 {
            continue;
        }
        let mut c = code;
        counts.iter_mut().for_each(|x| *x = 0);
        for row in marginals.iter_mut() {
            let t = c % k;
            c /= k;
            row[t] += w;
            counts[t] += 1;
        }
        for t in 0..k {
            s2[t] += w * (digamma(model.alpha[t] + counts[t] as f64) - psi_total);
        }
    }
    let index = WordIndex::new(doc);
    let mut s1 = vec![0.0; index.words.len() * k];
    for (pos, &j) in index.token_word.iter().enumerate() {
        for t in 0..k {
            s1[j as usize * k + t] += marginals[pos][t];
        }
    }
    Ok(ExactPosterior {
        marginals,
        estimate: DocEstimate {
            words: index.words,
            s1,
            s2,
        },
        log_evidence,
    })
}

/// E-step backend returning the exact expectation; for small test instances.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactInference;

impl LocalInference for ExactInference {
    type State = Document;

    fn init(&self, doc: &Document, _model: &LocalModel<'_>, _rng: &mut Rng) -> Result<Document> {
        Ok(doc.clone())
    }

    fn sweep(&self, _: &mut Document, _: &LocalModel<'_>, _: usize, _: usize, _: &mut Rng) -> Result<()> {
        Ok(())
    }

    fn estimate(&self, doc: &Document, model: &LocalModel<'_>) -> Result<DocEstimate> {
        enumerate_posterior(doc, model).map(|p| p.estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lda::ModelParams;
    use ndarray::array;

    fn params(beta: ndarray::Array2<f64>, alpha: Vec<f64>) -> ModelParams {
        ModelParams::new(beta, alpha).unwrap()
    }

    #[test]
    fn conditional_direct_evaluation() {
        let p = params(array![[0.5, 0.5], [0.5, 0.5]], vec![1.0, 1.0]);
        let doc = Document::from_tokens_unsorted(vec![0, 1]);
        let state = LatentSampleState::from_assignments(vec![0, 1], 2).unwrap();
        let c = gibbs_conditional(&state, 1, &doc, &p.local()).unwrap();
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && (c[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_without_evidence_is_uniform() {
        let p = params(array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], vec![0.7; 3]);
        let doc = Document::new(vec![1]);
        let state = LatentSampleState::from_assignments(vec![2], 3).unwrap();
        let c = gibbs_conditional(&state, 0, &doc, &p.local()).unwrap();
        assert!(c.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn conditional_matches_ratio_of_joint_weights() {
        // p(z_n = k | z_{−n}) ∝ p(z with z_n = k), enumerated directly
        let p = params(array![[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]], vec![0.4, 1.3]);
        let doc = Document::from_tokens_unsorted(vec![2, 0, 1]);
        for n in 0..3 {
            let mut z = vec![1, 0, 1];
            let state = LatentSampleState::from_assignments(z.clone(), 2).unwrap();
            let c = gibbs_conditional(&state, n, &doc, &p.local()).unwrap();
            let mut w = [0.0; 2];
            for (k, wk) in w.iter_mut().enumerate() {
                z[n] = k;
                let st = LatentSampleState::from_assignments(z.clone(), 2).unwrap();
                *wk = (log_dirichlet_multinomial(&st.counts, p.alpha())
                    + (0..3).map(|m| p.beta()[[z[m], doc.word_ids()[m]]].ln()).sum::<f64>())
                .exp();
            }
            let total = w[0] + w[1];
            for k in 0..2 {
                assert!((c[k] - w[k] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_topic_is_exact() {
        let p = params(array![[0.2, 0.3, 0.5]], vec![0.9]);
        let doc = Document::new(vec![0, 2, 2, 1]);
        let out = gibbs_estep(&doc, &p.local(), 8, 1).unwrap();
        assert!(out.marginals.iter().all(|m| m == &vec![1.0]));
        assert_eq!(out.estimate.s2, vec![0.0]);
        assert_eq!(out.estimate.to_dense(3).s1, array![[1.0, 1.0, 2.0]]);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = params(array![[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]], vec![0.5, 0.5]);
        let doc = Document::new(vec![0, 1, 2, 2, 0]);
        let a = gibbs_estep(&doc, &p.local(), 20, 7).unwrap();
        let b = gibbs_estep(&doc, &p.local(), 20, 7).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn estimate_mass_equals_length() {
        let p = params(array![[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]], vec![0.5, 0.5]);
        let doc = Document::new(vec![0, 1, 2, 2, 0, 1, 1]);
        for stats in [GibbsStats::WindowAverage, GibbsStats::LastSample] {
            let mut rng = rng::rng_for(0, &[]);
            let e = GibbsSampler { stats }.run(&doc, &p.local(), 6, &mut rng).unwrap();
            assert!((e.total_mass() - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_is_last_quarter() {
        assert_eq!(window_start(20), 15);
        assert_eq!(20 - window_start(20) + 1, 6);
        assert_eq!(window_start(4), 3);
    }

    #[test]
    fn marginals_match_enumeration() {
        let p = params(
            array![[0.5, 0.3, 0.2], [0.1, 0.1, 0.8], [0.3, 0.6, 0.1]],
            vec![0.3, 0.8, 1.5],
        );
        let doc = Document::new(vec![0, 1, 2, 2]);
        let exact = enumerate_posterior(&doc, &p.local()).unwrap();
        let g = gibbs_estep(&doc, &p.local(), 2000, 3).unwrap();
        for (a, b) in g.marginals.iter().zip(&exact.marginals) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 0.02, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn enumeration_small_cases() {
        let p = params(array![[0.25, 0.75], [0.6, 0.4]], vec![0.5, 2.0]);
        let e = enumerate_posterior(&Document::new(vec![1]), &p.local()).unwrap();
        let w = [0.75 * 0.5, 0.4 * 2.0];
        assert!((e.marginals[0][0] - w[0] / (w[0] + w[1])).abs() < 1e-14);
        assert!((e.log_evidence - ((w[0] + w[1]) / 2.5f64).ln()).abs() < 1e-14);

        let one = params(array![[0.25, 0.75]], vec![0.5]);
        let e = enumerate_posterior(&Document::new(vec![0, 1, 1]), &one.local()).unwrap();
        assert!(e.marginals.iter().all(|m| (m[0] - 1.0).abs() < 1e-15));

        let big = Document::new(vec![0; 21]);
        assert!(matches!(
            enumerate_posterior(&big, &p.local()),
            Err(Error::StateSpaceTooLarge(_))
        ));
    }

    #[test]
    fn empty_document_is_rejected() {
        let p = params(array![[0.5, 0.5]], vec![1.0]);
        assert!(matches!(
            gibbs_estep(&Document::new(vec![]), &p.local(), 4, 0),
            Err(Error::EmptyDocument)
        ));
    }
}
