//! Bayesian treatment of the topics: `q(β_k) = Dir(λ_k)`, with the local
//! E-steps run on the surrogate topics `exp E_q[log β]`, and the baseline
//! methods built on either global update.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::gibbs::{GibbsSampler, GibbsStats};
use crate::lda::{AlphaMode, AlphaUpdate, LocalModel, ModelParams};
use crate::online_em::{
    blend_stats, run_online_em, AveragedTrace, Checkpoint, FrequentistGlobal, GlobalUpdate, OnlineEmConfig,
    StepSchedule, SuffStats,
};
use crate::special::{digamma, ln_gamma};
use crate::variational::{elbo_document, variational_estep, VariationalInference};

/// Default topic prior `b`.
pub const DEFAULT_TOPIC_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct BayesGlobalState {
    pub lambda: Array2<f64>,
    pub b: f64,
    /// Corpus size used to scale per-document statistics.
    pub d: f64,
}

impl BayesGlobalState {
    pub fn new(lambda: Array2<f64>, b: f64, d: f64) -> Result<Self> {
        if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if !(b > 0.0) || !(d > 0.0) {
            return Err(Error::InvalidArgument("b and D must be positive".into()));
        }
        Ok(Self { lambda, b, d })
    }

    /// `λ = b + β · scale`, the posterior a point estimate `β` would give
    /// after `scale` tokens per topic.
    pub fn from_topics(beta: &Array2<f64>, b: f64, d: f64, scale: f64) -> Result<Self> {
        Self::new(beta.mapv(|x| b + scale * x), b, d)
    }

    /// `E_q[β]`, the row-normalized `λ`.
    pub fn mean_topics(&self) -> Array2<f64> {
        let mut beta = self.lambda.clone();
        for mut row in beta.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        beta
    }
}

/// `exp(Ψ(λ_kv) − Ψ(Σ_v λ_kv))`.
pub fn expected_log_beta(state: &BayesGlobalState) -> Array2<f64> {
    surrogate_topics(&state.lambda)
}

pub fn surrogate_topics(lambda: &Array2<f64>) -> Array2<f64> {
    let mut out = lambda.mapv(digamma);
    for (mut row, lam) in out.rows_mut().into_iter().zip(lambda.rows()) {
        let psi_sum = digamma(lam.sum());
        row.mapv_inplace(|x| (x - psi_sum).exp());
    }
    out
}

/// Which side of the λ blend the step size weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendOrder {
    /// `λ ← (1 − ρ) λ + ρ λ̂`.
    #[default]
    Standard,
    /// `λ ← ρ λ + (1 − ρ) λ̂`.
    Swapped,
}

/// Blends `λ` toward `λ̂ = b + D · E_q[S¹]`.
pub fn lambda_update(
    state: &mut BayesGlobalState,
    expected_s1: &Array2<f64>,
    rho: f64,
    order: BlendOrder,
) -> Result<()> {
    state.lambda = blended_lambda(&state.lambda, expected_s1, state.b, state.d, rho, order)?;
    Ok(())
}

fn blended_lambda(
    lambda: &Array2<f64>,
    expected_s1: &Array2<f64>,
    b: f64,
    d: f64,
    rho: f64,
    order: BlendOrder,
) -> Result<Array2<f64>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside (0, 1]")));
    }
    if lambda.dim() != expected_s1.dim() {
        return Err(Error::shape(
            format!("{:?}", lambda.dim()),
            format!("{:?}", expected_s1.dim()),
        ));
    }
    let weight_new = match order {
        BlendOrder::Standard => rho,
        BlendOrder::Swapped => 1.0 - rho,
    };
    let mut out = lambda * (1.0 - weight_new);
    out.zip_mut_with(expected_s1, |l, &s| *l += weight_new * (b + d * s));
    // the literal order with ρ = 1 keeps λ; both stay positive
    Ok(out)
}

/// Global update of the Bayesian variants. `α` is updated from a running
/// blend of the `s2` estimates.
#[derive(Debug, Clone)]
pub struct BayesGlobal {
    state: BayesGlobalState,
    committed_lambda: Array2<f64>,
    surrogate: Array2<f64>,
    alpha: Vec<f64>,
    committed_alpha: Vec<f64>,
    s2: Vec<f64>,
    committed_s2: Vec<f64>,
    alpha_update: AlphaUpdate,
    order: BlendOrder,
}

impl BayesGlobal {
    pub fn new(state: BayesGlobalState, alpha: Vec<f64>, alpha_update: AlphaUpdate, order: BlendOrder) -> Result<Self> {
        if alpha.len() != state.lambda.nrows() {
            return Err(Error::shape(state.lambda.nrows(), alpha.len()));
        }
        let psi_sum = digamma(alpha.iter().sum());
        let s2: Vec<f64> = alpha.iter().map(|&a| digamma(a) - psi_sum).collect();
        Ok(Self {
            committed_lambda: state.lambda.clone(),
            surrogate: surrogate_topics(&state.lambda),
            state,
            committed_alpha: alpha.clone(),
            alpha,
            committed_s2: s2.clone(),
            s2,
            alpha_update,
            order,
        })
    }

    pub fn state(&self) -> &BayesGlobalState {
        &self.state
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn surrogate(&self) -> &Array2<f64> {
        &self.surrogate
    }
}

impl GlobalUpdate for BayesGlobal {
    fn view(&self) -> LocalModel<'_> {
        LocalModel {
            beta: self.surrogate.view(),
            alpha: &self.alpha,
        }
    }

    fn apply(&mut self, estimate: &SuffStats, rho: f64) -> Result<()> {
        self.state.lambda = blended_lambda(
            &self.committed_lambda,
            &estimate.s1,
            self.state.b,
            self.state.d,
            rho,
            self.order,
        )?;
        self.surrogate = surrogate_topics(&self.state.lambda);
        let prev = SuffStats {
            s1: Array2::zeros((0, 0)),
            s2: self.committed_s2.clone(),
        };
        let next = SuffStats {
            s1: Array2::zeros((0, 0)),
            s2: estimate.s2.clone(),
        };
        self.s2 = blend_stats(&prev, &next, rho)?.s2;
        self.alpha = self.alpha_update.solve(&self.s2, &self.committed_alpha)?;
        Ok(())
    }

    fn commit(&mut self) {
        self.committed_lambda = self.state.lambda.clone();
        self.committed_alpha = self.alpha.clone();
        self.committed_s2 = self.s2.clone();
    }

    fn params(&self) -> ModelParams {
        ModelParams::new(self.state.mean_topics(), self.alpha.clone()).expect("λ rows are positive")
    }

    fn topic_posterior(&self) -> Option<&BayesGlobalState> {
        Some(&self.state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Stochastic variational Bayes, free κ, α by gradient ascent.
    Olda,
    /// Incremental variational Bayes, `ρ_t = 1/t`.
    Svb,
    /// Incremental frequentist variational EM with boosting.
    Splda,
    /// Incremental Gibbs EM on the last sample, α fixed.
    Sgs,
    /// Bayesian global update with a Gibbs local step, α fixed.
    VarGibbs,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "olda" => Ok(Self::Olda),
            "svb" => Ok(Self::Svb),
            "splda" => Ok(Self::Splda),
            "sgs" => Ok(Self::Sgs),
            "vargibbs" => Ok(Self::VarGibbs),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSettings {
    pub minibatch_size: usize,
    pub local_iters: usize,
    /// Only used by OLDA; the others run with κ = 1.
    pub kappa: f64,
    /// Only used by OLDA, like `kappa`.
    pub step_offset: u64,
    pub seed: u64,
    pub b: f64,
    pub order: BlendOrder,
    pub alpha_update: AlphaUpdate,
    /// Mean document length, used to scale the initial statistics.
    pub init_scale: f64,
}

/// How a variant is assembled from the shared pieces.
pub fn schedule_for(variant: Variant, kappa: f64, offset: u64) -> Result<StepSchedule> {
    match variant {
        Variant::Olda => StepSchedule::new(kappa, offset),
        _ => StepSchedule::new(1.0, 0),
    }
}

/// Whether `variant` keeps a Dirichlet posterior over the topics.
pub fn keeps_topic_posterior(variant: Variant) -> bool {
    matches!(variant, Variant::Olda | Variant::Svb | Variant::VarGibbs)
}

pub fn alpha_mode_for(variant: Variant) -> AlphaMode {
    match variant {
        Variant::Olda | Variant::Svb => AlphaMode::Gradient,
        Variant::Splda => AlphaMode::FixedPoint,
        Variant::Sgs | Variant::VarGibbs => AlphaMode::Frozen,
    }
}

/// Runs one pass of `variant` over `docs` from `init`.
///
/// For SGS, `init.alpha()` must already hold the constant prior.
pub fn run_variant<F>(
    variant: Variant,
    docs: &[Document],
    init: ModelParams,
    settings: &VariantSettings,
    on_checkpoint: F,
) -> Result<AveragedTrace>
where
    F: FnMut(&Checkpoint<'_>) -> Result<()>,
{
    let config = OnlineEmConfig {
        schedule: schedule_for(variant, settings.kappa, settings.step_offset)?,
        minibatch_size: settings.minibatch_size,
        local_iters: settings.local_iters,
        boost: variant == Variant::Splda,
        seed: settings.seed,
        passes: 1,
    };
    let alpha_update = AlphaUpdate {
        mode: alpha_mode_for(variant),
        ..settings.alpha_update
    };
    let d = docs.len().max(1) as f64;
    let k = init.k() as f64;
    match variant {
        Variant::Olda | Variant::Svb | Variant::VarGibbs => {
            let state = BayesGlobalState::from_topics(init.beta(), settings.b, d, d * settings.init_scale / k)?;
            let mut global = BayesGlobal::new(state, init.alpha().to_vec(), alpha_update, settings.order)?;
            if variant == Variant::VarGibbs {
                run_online_em(docs, &mut global, &GibbsSampler::default(), &config, on_checkpoint)
            } else {
                run_online_em(docs, &mut global, &VariationalInference, &config, on_checkpoint)
            }
        }
        Variant::Splda => {
            let mut global = FrequentistGlobal::new(init, alpha_update, settings.init_scale);
            run_online_em(docs, &mut global, &VariationalInference, &config, on_checkpoint)
        }
        Variant::Sgs => {
            let mut global = FrequentistGlobal::new(init, alpha_update, settings.init_scale);
            let sampler = GibbsSampler {
                stats: GibbsStats::LastSample,
            };
            run_online_em(docs, &mut global, &sampler, &config, on_checkpoint)
        }
    }
}

/// Mean per-document ELBO after `sweeps` variational sweeps.
pub fn elbo_corpus(docs: &[Document], model: &LocalModel<'_>, sweeps: usize) -> Result<f64> {
    use rayon::prelude::*;
    if docs.is_empty() {
        return Err(Error::InvalidArgument("no documents".into()));
    }
    let per_doc = docs
        .par_iter()
        .map(|doc| {
            let (_, state) = variational_estep(doc, model, sweeps)?;
            elbo_document(&state, model)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_doc.iter().sum::<f64>() / docs.len() as f64)
}

/// `E_q[log p(β) − log q(β)]` summed over topics.
pub fn topic_kl_term(state: &BayesGlobalState) -> f64 {
    let b = state.b;
    let v = state.lambda.ncols() as f64;
    state
        .lambda
        .rows()
        .into_iter()
        .map(|lam| {
            let total: f64 = lam.sum();
            let psi_sum = digamma(total);
            let cross: f64 = lam
                .iter()
                .map(|&l| (b - l) * (digamma(l) - psi_sum) + ln_gamma(l) - ln_gamma(b))
                .sum();
            cross + ln_gamma(v * b) - ln_gamma(total)
        })
        .sum()
}

/// Held-out ELBO per document under the topic posterior: the local bound
/// with `E_q[log β]`, plus the topic term shared over the `D` training
/// documents.
pub fn heldout_elbo(docs: &[Document], state: &BayesGlobalState, alpha: &[f64], sweeps: usize) -> Result<f64> {
    let surrogate = surrogate_topics(&state.lambda);
    let local = LocalModel::new(surrogate.view(), alpha)?;
    Ok(elbo_corpus(docs, &local, sweeps)? + topic_kl_term(state) / state.d)
}
