//! Mean-field variational E-step for one document.
//!
//! `q(θ, z) = Dir(θ | γ) Π_n Cat(z_n | ζ_n)` with coordinate updates
//! `ζ_{nk} ∝ β_{k, x_n} exp Ψ(γ_k)` and `γ_k = α_k + Σ_n ζ_{nk}`. Tokens of
//! the same word share their responsibilities, so `ζ` is stored once per
//! distinct word.

use ndarray::Array2;

use crate::corpus::{Document, WordIndex};
use crate::error::{Error, Result};
use crate::lda::LocalModel;
use crate::online_em::{DocEstimate, LocalInference};
use crate::rng::Rng;
use crate::special::{digamma, ln_gamma};

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub gamma: Vec<f64>,
    /// Responsibilities per distinct word, `words.len() × K`.
    pub zeta: Array2<f64>,
    pub words: Vec<usize>,
    pub multiplicity: Vec<f64>,
}

impl VariationalState {
    /// `γ = α + N/K` and uniform responsibilities.
    pub fn init(doc: &Document, alpha: &[f64]) -> Self {
        let k = alpha.len();
        let index = WordIndex::new(doc);
        let n = doc.len() as f64;
        Self {
            gamma: alpha.iter().map(|a| a + n / k as f64).collect(),
            zeta: Array2::from_elem((index.words.len(), k), 1.0 / k as f64),
            words: index.words,
            multiplicity: index.multiplicity,
        }
    }

    pub fn num_tokens(&self) -> f64 {
        self.multiplicity.iter().sum()
    }

    /// Responsibilities expanded to one row per token (ascending word id).
    pub fn zeta_tokens(&self) -> Array2<f64> {
        let n = self.num_tokens() as usize;
        let mut out = Array2::zeros((n, self.gamma.len()));
        let mut row = 0;
        for (j, &m) in self.multiplicity.iter().enumerate() {
            for _ in 0..m as usize {
                out.row_mut(row).assign(&self.zeta.row(j));
                row += 1;
            }
        }
        out
    }
}

pub fn update_zeta(state: &mut VariationalState, model: &LocalModel<'_>) -> Result<()> {
    let k = model.k();
    let psi: Vec<f64> = state.gamma.iter().map(|&g| digamma(g)).collect();
    let mut logp = vec![0.0; k];
    for (j, &w) in state.words.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for t in 0..k {
            logp[t] = model.beta[[t, w]].ln() + psi[t];
            max = max.max(logp[t]);
        }
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::Degenerate(format!(
                "word {w} has zero probability under every topic"
            )));
        }
        let mut row = state.zeta.row_mut(j);
        let mut total = 0.0;
        for t in 0..k {
            let e = (logp[t] - max).exp();
            row[t] = e;
            total += e;
        }
        row /= total;
    }
    Ok(())
}

pub fn update_gamma(state: &mut VariationalState, alpha: &[f64]) {
    state.gamma.copy_from_slice(alpha);
    for (j, &m) in state.multiplicity.iter().enumerate() {
        for (g, &z) in state.gamma.iter_mut().zip(state.zeta.row(j)) {
            *g += m * z;
        }
    }
}

fn estimate_from(state: &VariationalState) -> DocEstimate {
    let k = state.gamma.len();
    let mut s1 = Vec::with_capacity(state.words.len() * k);
    for (j, &m) in state.multiplicity.iter().enumerate() {
        s1.extend(state.zeta.row(j).iter().map(|z| m * z));
    }
    let psi_sum = digamma(state.gamma.iter().sum());
    DocEstimate {
        words: state.words.clone(),
        s1,
        s2: state.gamma.iter().map(|&g| digamma(g) - psi_sum).collect(),
    }
}

/// `P` alternations of the ζ and γ updates from the default initialization.
pub fn variational_estep(
    doc: &Document,
    model: &LocalModel<'_>,
    sweeps: usize,
) -> Result<(DocEstimate, VariationalState)> {
    if sweeps == 0 {
        return Err(Error::InvalidArgument("at least one sweep is required".into()));
    }
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut state = VariationalState::init(doc, model.alpha);
    for _ in 0..sweeps {
        update_zeta(&mut state, model)?;
        update_gamma(&mut state, model.alpha);
    }
    if !elbo_document(&state, model)?.is_finite() {
        return Err(Error::NonFinite("document ELBO"));
    }
    Ok((estimate_from(&state), state))
}

/// Evidence lower bound of one document under `q`.
///
/// With the surrogate topics of the Bayesian variants, `log β` becomes
/// `E_q[log β]` and this is the local part of the full bound.
pub fn elbo_document(state: &VariationalState, model: &LocalModel<'_>) -> Result<f64> {
    let k = model.k();
    if state.gamma.len() != k {
        return Err(Error::shape(k, state.gamma.len()));
    }
    let gamma_sum: f64 = state.gamma.iter().sum();
    let psi_sum = digamma(gamma_sum);
    let elog: Vec<f64> = state.gamma.iter().map(|&g| digamma(g) - psi_sum).collect();

    let alpha_sum = model.alpha_sum();
    let mut elbo = ln_gamma(alpha_sum) - ln_gamma(gamma_sum);
    for ((&g, &a), &e) in state.gamma.iter().zip(model.alpha).zip(&elog) {
        elbo += ln_gamma(g) - ln_gamma(a) + (a - g) * e;
    }
    for (j, &w) in state.words.iter().enumerate() {
        let m = state.multiplicity[j];
        for (t, &e) in elog.iter().enumerate() {
            let z = state.zeta[[j, t]];
            if z > 0.0 {
                elbo += m * z * (e + model.beta[[t, w]].ln() - z.ln());
            }
        }
    }
    if !elbo.is_finite() {
        return Err(Error::NonFinite("document ELBO"));
    }
    Ok(elbo)
}

/// Variational E-step as an online EM backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct VariationalInference;

impl LocalInference for VariationalInference {
    type State = VariationalState;

    fn init(&self, doc: &Document, model: &LocalModel<'_>, _rng: &mut Rng) -> Result<VariationalState> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument);
        }
        Ok(VariationalState::init(doc, model.alpha))
    }

    fn sweep(
        &self,
        state: &mut VariationalState,
        model: &LocalModel<'_>,
        _t: usize,
        _total: usize,
        _rng: &mut Rng,
    ) -> Result<()> {
        update_zeta(state, model)?;
        update_gamma(state, model.alpha);
        Ok(())
    }

    fn estimate(&self, state: &VariationalState, _model: &LocalModel<'_>) -> Result<DocEstimate> {
        if state.gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gamma"));
        }
        Ok(estimate_from(state))
    }
}
