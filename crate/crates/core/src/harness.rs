//! Experiment orchestration: configuration, training with periodic held-out
//! evaluation, trace and summary CSVs, and multi-experiment sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, BayesGlobalState, BlendOrder, Variant, VariantSettings};
use crate::corpus::{self, Corpus, Document, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval;
use crate::gibbs::GibbsSampler;
use crate::hdp::{self, HdpConfig, HdpParams};
use crate::lda::{AlphaMode, AlphaUpdate, ModelParams};
use crate::online_em::{run_online_em, Checkpoint, FrequentistGlobal, OnlineEmConfig, StepSchedule};
use crate::rng::{self, stream};
use crate::variational::VariationalInference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "g-oem")]
    GOem,
    #[serde(rename = "g-oem++")]
    GOemBoost,
    #[serde(rename = "v-oem")]
    VOem,
    #[serde(rename = "v-oem++")]
    VOemBoost,
    #[serde(rename = "olda")]
    Olda,
    #[serde(rename = "svb")]
    Svb,
    #[serde(rename = "splda")]
    Splda,
    #[serde(rename = "sgs")]
    Sgs,
    #[serde(rename = "vargibbs")]
    VarGibbs,
    #[serde(rename = "hdp-g-oem")]
    HdpGOem,
    #[serde(rename = "hdp-vargibbs")]
    HdpVarGibbs,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::GOem,
        Method::GOemBoost,
        Method::VOem,
        Method::VOemBoost,
        Method::Olda,
        Method::Svb,
        Method::Splda,
        Method::Sgs,
        Method::VarGibbs,
        Method::HdpGOem,
        Method::HdpVarGibbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GOem => "g-oem",
            Method::GOemBoost => "g-oem++",
            Method::VOem => "v-oem",
            Method::VOemBoost => "v-oem++",
            Method::Olda => "olda",
            Method::Svb => "svb",
            Method::Splda => "splda",
            Method::Sgs => "sgs",
            Method::VarGibbs => "vargibbs",
            Method::HdpGOem => "hdp-g-oem",
            Method::HdpVarGibbs => "hdp-vargibbs",
        }
    }

    pub fn is_hdp(self) -> bool {
        matches!(self, Method::HdpGOem | Method::HdpVarGibbs)
    }

    /// Online EM with a frequentist global step and an optional boost.
    pub fn is_oem(self) -> bool {
        matches!(
            self,
            Method::GOem | Method::GOemBoost | Method::VOem | Method::VOemBoost
        )
    }

    fn variant(self) -> Option<Variant> {
        match self {
            Method::Olda => Some(Variant::Olda),
            Method::Svb => Some(Variant::Svb),
            Method::Splda => Some(Variant::Splda),
            Method::Sgs => Some(Variant::Sgs),
            Method::VarGibbs => Some(Variant::VarGibbs),
            _ => None,
        }
    }

    fn uses_gibbs(self) -> bool {
        matches!(
            self,
            Method::GOem | Method::GOemBoost | Method::VarGibbs | Method::HdpGOem | Method::HdpVarGibbs
        )
    }

    /// α modes the method accepts; the first is the default.
    pub fn alpha_modes(self) -> &'static [AlphaMode] {
        match self {
            m if m.is_oem() => &[AlphaMode::FixedPoint, AlphaMode::Gradient, AlphaMode::Frozen],
            Method::Olda | Method::Svb => &[AlphaMode::Gradient],
            Method::Splda => &[AlphaMode::FixedPoint],
            Method::Sgs | Method::VarGibbs => &[AlphaMode::Frozen],
            _ => &[],
        }
    }

    /// Methods whose step size is pinned to `1/t`.
    pub fn forces_unit_kappa(self) -> bool {
        matches!(self, Method::Svb | Method::Splda | Method::Sgs | Method::VarGibbs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// UCI bag-of-words `docword` file and its vocabulary.
    Uci { docword: PathBuf, vocab: PathBuf },
    /// Synthetic LDA corpus, e.g. `k=5,v=100,d=20000,len=40`.
    Synthetic { spec: String, seed: u64 },
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus> {
        match self {
            CorpusSource::Uci { docword, vocab } => corpus::load_uci_bag_of_words(docword, vocab),
            CorpusSource::Synthetic { spec, seed } => {
                Ok(corpus::generate_synthetic(&SyntheticSpec::parse(spec)?, *seed)?.0)
            }
        }
    }
}

/// HDP-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdpOptions {
    pub b: f64,
    pub alpha_conc: f64,
    pub t_max: usize,
    pub min_new_mass: f64,
    pub max_new_per_minibatch: usize,
    pub prune_mass: f64,
    pub prune_grace: usize,
}

impl Default for HdpOptions {
    fn default() -> Self {
        let c = HdpConfig::default();
        Self {
            b: 1.0,
            alpha_conc: 1.0,
            t_max: c.t_max,
            min_new_mass: c.min_new_mass,
            max_new_per_minibatch: c.max_new_per_minibatch,
            prune_mass: c.prune_mass,
            prune_grace: c.prune_grace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Number of topics; for HDP the initial number.
    pub k: usize,
    /// Step-size exponent; `None` picks 1/2, or 1 where the method pins it.
    pub kappa: Option<f64>,
    /// Step-size delay, `ρ_i = (i + step_offset)^−κ`.
    pub step_offset: u64,
    pub averaging: bool,
    /// `None` picks the method's default.
    pub alpha_mode: Option<AlphaMode>,
    pub minibatch_size: usize,
    pub local_iters: usize,
    pub seeds: Vec<u64>,
    /// Evaluate every this many minibatches; 0 evaluates only at the end.
    pub eval_every: usize,
    pub particles: usize,
    pub corpus: CorpusSource,
    pub n_test: usize,
    /// Symmetric initial α; `None` uses `1/K`.
    pub init_alpha: Option<f64>,
    pub record_elbo: bool,
    /// When off the `wallclock_s` column is written as 0, making traces
    /// byte-comparable.
    pub record_wallclock: bool,
    /// Dirichlet prior on topics for the Bayesian methods.
    pub topic_prior: f64,
    pub blend_order: BlendOrder,
    /// Completed run whose per-seed α the SGS baseline keeps fixed.
    pub sgs_reference: Option<PathBuf>,
    pub hdp: HdpOptions,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::GOem,
            k: 10,
            kappa: None,
            step_offset: 0,
            averaging: false,
            alpha_mode: None,
            minibatch_size: 100,
            local_iters: 20,
            seeds: vec![0],
            eval_every: 0,
            particles: eval::DEFAULT_PARTICLES,
            corpus: CorpusSource::Synthetic {
                spec: "k=10,v=100,d=2000,len=40".into(),
                seed: 0,
            },
            n_test: 100,
            init_alpha: None,
            record_elbo: false,
            record_wallclock: true,
            topic_prior: bayes::DEFAULT_TOPIC_PRIOR,
            blend_order: BlendOrder::Standard,
            sgs_reference: None,
            hdp: HdpOptions::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Missing fields take their defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
            .unwrap_or(if self.method.forces_unit_kappa() { 1.0 } else { 0.5 })
    }

    pub fn alpha_mode(&self) -> Option<AlphaMode> {
        self.alpha_mode.or_else(|| self.method.alpha_modes().first().copied())
    }

    /// Rejects parameter combinations the method does not support.
    pub fn validate(&self) -> Result<()> {
        let m = self.method;
        let bad = |msg: String| Err(Error::Config(format!("{m}: {msg}")));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        let kappa = self.kappa();
        if !(kappa > 0.0 && kappa <= 1.0) {
            return bad(format!("kappa = {kappa} outside (0, 1]"));
        }
        if m.forces_unit_kappa() && kappa != 1.0 {
            return bad(format!("requires kappa = 1, got {kappa}"));
        }
        if m.forces_unit_kappa() && self.step_offset != 0 {
            return bad("step_offset would break the exact streaming update".into());
        }
        if self.averaging && !m.is_oem() {
            return bad("iterate averaging applies to the online EM methods only".into());
        }
        match (m.is_hdp(), self.alpha_mode) {
            (true, Some(mode)) => return bad(format!("alpha mode {mode:?} does not apply to the HDP")),
            (false, Some(mode)) if !m.alpha_modes().contains(&mode) => {
                return bad(format!(
                    "alpha mode {mode:?} not allowed; use one of {:?}",
                    m.alpha_modes()
                ))
            }
            _ => {}
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be at least 1".into());
        }
        let min_iters = if m.uses_gibbs() { 4 } else { 1 };
        if self.local_iters < min_iters {
            return bad(format!("local_iters must be at least {min_iters}"));
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        if self.sgs_reference.is_some() && m != Method::Sgs {
            return bad("sgs_reference is only used by sgs".into());
        }
        if let Some(a) = self.init_alpha {
            if !(a > 0.0) {
                return bad(format!("init_alpha = {a} must be positive"));
            }
        }
        if !(self.topic_prior > 0.0) {
            return bad("topic_prior must be positive".into());
        }
        if m.is_hdp() {
            let h = &self.hdp;
            if !(h.b > 0.0 && h.alpha_conc > 0.0) {
                return bad("hdp concentrations must be positive".into());
            }
            if h.t_max < self.k {
                return bad("hdp t_max below the initial topic count".into());
            }
        }
        Ok(())
    }

    fn hdp_config(&self, seed: u64) -> Result<HdpConfig> {
        Ok(HdpConfig {
            schedule: StepSchedule::new(self.kappa(), self.step_offset)?,
            minibatch_size: self.minibatch_size,
            local_iters: self.local_iters,
            seed,
            t_max: self.hdp.t_max,
            min_new_mass: self.hdp.min_new_mass,
            max_new_per_minibatch: self.hdp.max_new_per_minibatch,
            prune_mass: self.hdp.prune_mass,
            prune_grace: self.hdp.prune_grace,
        })
    }
}

/// Result of one train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub seed: u64,
    pub final_log_perplexity: f64,
    pub initial_log_perplexity: f64,
    pub final_elbo: Option<f64>,
    pub topics: usize,
}

/// One summary row: final perplexities across splits and their spread.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub k: usize,
    pub kappa: f64,
    pub averaging: bool,
    pub finals: Vec<f64>,
    pub topics: Vec<usize>,
}

pub const SUMMARY_HEADER: &str = "method,k,kappa,averaging,splits,median,decile3,decile7,finals,topics";

impl SummaryRow {
    pub fn median(&self) -> f64 {
        quantile(&self.finals, 0.5)
    }

    pub fn key(&self) -> (Method, usize, String, bool) {
        (self.method, self.k, format!("{}", self.kappa), self.averaging)
    }

    pub fn to_csv(&self) -> String {
        let join = |v: Vec<String>| v.join(";");
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.k,
            self.kappa,
            self.averaging,
            self.finals.len(),
            self.median(),
            quantile(&self.finals, 0.3),
            quantile(&self.finals, 0.7),
            join(self.finals.iter().map(f64::to_string).collect()),
            join(self.topics.iter().map(usize::to_string).collect()),
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed summary row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad());
        }
        let list = |s: &str| -> Result<Vec<f64>> {
            s.split(';')
                .filter(|x| !x.is_empty())
                .map(|x| x.parse().map_err(|_| bad()))
                .collect()
        };
        Ok(Self {
            method: f[0].parse()?,
            k: f[1].parse().map_err(|_| bad())?,
            kappa: f[2].parse().map_err(|_| bad())?,
            averaging: f[3].parse().map_err(|_| bad())?,
            finals: list(f[8])?,
            topics: list(f[9])?.into_iter().map(|x| x as usize).collect(),
        })
    }
}

/// Linear-interpolation quantile; NaN for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(SummaryRow::from_csv)
        .collect()
}

/// Merges rows by (method, K, κ, averaging); later rows replace earlier ones.
pub fn merge_summaries(existing: &[SummaryRow], new: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut map = BTreeMap::new();
    for r in existing.iter().chain(new) {
        map.insert(r.key(), r.clone());
    }
    map.into_values().collect()
}

pub const TRACE_HEADER: &str = "iteration,docs_seen,wallclock_s,test_log_perplexity";

/// Append-only trace CSV, flushed after every row.
struct TraceWriter {
    out: BufWriter<File>,
    path: PathBuf,
    start: Instant,
    record_wallclock: bool,
    record_elbo: bool,
}

impl TraceWriter {
    fn create(path: PathBuf, record_elbo: bool, record_wallclock: bool) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path,
            start: Instant::now(),
            record_wallclock,
            record_elbo,
        };
        let header = if record_elbo {
            format!("{TRACE_HEADER},test_elbo")
        } else {
            TRACE_HEADER.to_string()
        };
        w.line(&header)?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    fn row(&mut self, iteration: usize, docs_seen: usize, perplexity: f64, elbo: Option<f64>) -> Result<()> {
        let wall = if self.record_wallclock {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let mut text = format!("{iteration},{docs_seen},{wall:.3},{perplexity}");
        if self.record_elbo {
            text.push_str(&format!(",{}", elbo.unwrap_or(f64::NAN)));
        }
        self.line(&text)
    }
}

/// Held-out evaluation shared by every method.
struct Evaluator<'a> {
    test: &'a [Document],
    particles: usize,
    seed: u64,
    elbo_sweeps: Option<usize>,
}

impl Evaluator<'_> {
    /// The ELBO uses the topic posterior when there is one.
    fn run(&self, model: &ModelParams, posterior: Option<&BayesGlobalState>) -> Result<(f64, Option<f64>)> {
        let local = model.local();
        let perp = eval::perplexity_docs(self.test, &local, self.particles, self.seed)?.mean_log_perplexity;
        let elbo = match (self.elbo_sweeps, posterior) {
            (Some(sweeps), Some(state)) => Some(bayes::heldout_elbo(self.test, state, model.alpha(), sweeps)?),
            (Some(sweeps), None) => Some(bayes::elbo_corpus(self.test, &local, sweeps)?),
            (None, _) => None,
        };
        Ok((perp, elbo))
    }
}

fn sgs_alpha(reference: &Path, seed: u64) -> Result<Vec<f64>> {
    let path = reference.join(format!("seed_{seed}")).join("model.txt");
    Ok(ModelParams::load(&path)?.alpha().to_vec())
}

/// Parameters after a minibatch; minibatch 0 holds the initial values.
pub struct Snapshot<'a> {
    pub minibatch: usize,
    pub docs_seen: usize,
    source: Source<'a>,
}

enum Source<'a> {
    Lda {
        model: &'a ModelParams,
        posterior: Option<&'a BayesGlobalState>,
    },
    Hdp(&'a HdpParams),
}

impl Snapshot<'_> {
    /// The LDA view of the current parameters.
    pub fn model(&self) -> Result<std::borrow::Cow<'_, ModelParams>> {
        match &self.source {
            Source::Lda { model, .. } => Ok(std::borrow::Cow::Borrowed(*model)),
            Source::Hdp(params) => Ok(std::borrow::Cow::Owned(params.to_lda()?)),
        }
    }

    /// The Dirichlet posterior over topics for OLDA, SVB and VarGibbs.
    pub fn posterior(&self) -> Option<&BayesGlobalState> {
        match &self.source {
            Source::Lda { posterior, .. } => *posterior,
            Source::Hdp(_) => None,
        }
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct Fitted {
    /// The reported model: the averaged iterate when averaging is on, and
    /// `α = bπ/Σπ` for the HDP.
    pub model: ModelParams,
    pub hdp: Option<HdpParams>,
    /// Final topic posterior of the Bayesian methods.
    pub posterior: Option<BayesGlobalState>,
}

/// Trains `config.method` on `docs` in one pass with seed `seed`, calling
/// `on_snapshot` with the initial parameters and after every minibatch.
pub fn fit<F>(config: &ExperimentConfig, docs: &[Document], v: usize, seed: u64, mut on_snapshot: F) -> Result<Fitted>
where
    F: FnMut(&Snapshot<'_>) -> Result<()>,
{
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::InvalidArgument("no training documents".into()));
    }
    let k = config.k;
    let mut init_rng = rng::rng_for(seed, &[stream::INIT]);
    let mean_len = docs.iter().map(Document::len).sum::<usize>() as f64 / docs.len() as f64;

    if config.method.is_hdp() {
        let h = &config.hdp;
        let init = HdpParams::random(k, v, h.b, h.alpha_conc, &mut init_rng)?;
        on_snapshot(&Snapshot {
            minibatch: 0,
            docs_seen: 0,
            source: Source::Hdp(&init),
        })?;
        let hdp_config = config.hdp_config(seed)?;
        let record = |cp: &hdp::HdpCheckpoint<'_>| {
            on_snapshot(&Snapshot {
                minibatch: cp.minibatch,
                docs_seen: cp.docs_seen,
                source: Source::Hdp(cp.params),
            })
        };
        let params = if config.method == Method::HdpGOem {
            hdp::run_hdp_goem(docs, init, &hdp_config, record)?
        } else {
            hdp::run_hdp_vargibbs(docs, &init, config.topic_prior, &hdp_config, record)?.params()?
        };
        return Ok(Fitted {
            model: params.to_lda()?,
            hdp: Some(params),
            posterior: None,
        });
    }

    let alpha0 = config.init_alpha.unwrap_or(1.0 / k as f64);
    let mut init = ModelParams::random(k, v, alpha0, &mut init_rng);
    if let (Method::Sgs, Some(reference)) = (config.method, &config.sgs_reference) {
        let alpha = sgs_alpha(reference, seed)?;
        init = ModelParams::new(init.into_parts().0, alpha)?;
    } else if config.method == Method::Sgs {
        warn!("sgs without a reference run keeps the initial alpha");
    }
    let d = docs.len() as f64;
    let initial_posterior = match config.method.variant() {
        Some(variant) if bayes::keeps_topic_posterior(variant) => Some(BayesGlobalState::from_topics(
            init.beta(),
            config.topic_prior,
            d,
            d * mean_len / k as f64,
        )?),
        _ => None,
    };
    on_snapshot(&Snapshot {
        minibatch: 0,
        docs_seen: 0,
        source: Source::Lda {
            model: &init,
            posterior: initial_posterior.as_ref(),
        },
    })?;
    let averaging = config.averaging;
    let total = docs.len().div_ceil(config.minibatch_size);
    let mut last_posterior = None;
    let record = |cp: &Checkpoint<'_>| -> Result<()> {
        if cp.minibatch == total {
            last_posterior = cp.posterior.cloned();
        }
        on_snapshot(&Snapshot {
            minibatch: cp.minibatch,
            docs_seen: cp.docs_seen,
            source: Source::Lda {
                model: cp.trace.output(averaging),
                posterior: cp.posterior,
            },
        })
    };
    let alpha_update = AlphaUpdate::with_mode(config.alpha_mode().expect("LDA methods have a default"));
    let result = if let Some(variant) = config.method.variant() {
        let settings = VariantSettings {
            minibatch_size: config.minibatch_size,
            local_iters: config.local_iters,
            kappa: config.kappa(),
            step_offset: config.step_offset,
            seed,
            b: config.topic_prior,
            order: config.blend_order,
            alpha_update,
            init_scale: mean_len,
        };
        bayes::run_variant(variant, docs, init, &settings, record)?
    } else {
        let oem = OnlineEmConfig {
            schedule: StepSchedule::new(config.kappa(), config.step_offset)?,
            minibatch_size: config.minibatch_size,
            local_iters: config.local_iters,
            boost: matches!(config.method, Method::GOemBoost | Method::VOemBoost),
            seed,
            passes: 1,
        };
        let mut global = FrequentistGlobal::new(init, alpha_update, mean_len / k as f64);
        match config.method {
            Method::GOem | Method::GOemBoost => {
                run_online_em(docs, &mut global, &GibbsSampler::default(), &oem, record)?
            }
            _ => run_online_em(docs, &mut global, &VariationalInference, &oem, record)?,
        }
    };
    Ok(Fitted {
        model: result.output(averaging).clone(),
        hdp: None,
        posterior: last_posterior,
    })
}

/// Trains and evaluates one split, writing `trace.csv` and the final model
/// into `dir`.
fn run_split(config: &ExperimentConfig, corpus: &Corpus, seed: u64, dir: &Path) -> Result<SplitResult> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (train, test) = corpus::split(corpus, config.n_test, seed)?;
    let docs = train.documents();
    let evaluator = Evaluator {
        test: test.documents(),
        particles: config.particles,
        seed: rng::derive_seed(seed, &[stream::EVAL]),
        elbo_sweeps: config.record_elbo.then_some(config.local_iters),
    };
    let mut trace = TraceWriter::create(dir.join("trace.csv"), config.record_elbo, config.record_wallclock)?;
    let every = config.eval_every;
    let mut last_eval = None;
    let mut initial = f64::NAN;
    let fitted = fit(config, docs, corpus.vocab_size(), seed, |snap| {
        if snap.minibatch == 0 {
            let (p, e) = evaluator.run(&*snap.model()?, snap.posterior())?;
            initial = p;
            if every > 0 {
                trace.row(0, 0, p, e)?;
            }
        } else if every > 0 && snap.minibatch % every == 0 {
            let (p, e) = evaluator.run(&*snap.model()?, snap.posterior())?;
            trace.row(snap.minibatch, snap.docs_seen, p, e)?;
            last_eval = Some(snap.minibatch);
        }
        Ok(())
    })?;
    if let Some(params) = &fitted.hdp {
        params.save(&dir.join("hdp.txt"))?;
    }
    fitted.model.save(&dir.join("model.txt"))?;
    let minibatches = docs.len().div_ceil(config.minibatch_size);
    let (perp, elbo) = evaluator.run(&fitted.model, fitted.posterior.as_ref())?;
    if last_eval != Some(minibatches) {
        trace.row(minibatches, docs.len(), perp, elbo)?;
    }
    Ok(SplitResult {
        seed,
        final_log_perplexity: perp,
        initial_log_perplexity: initial,
        final_elbo: elbo,
        topics: fitted.hdp.as_ref().map_or(config.k, HdpParams::t),
    })
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub splits: Vec<SplitResult>,
    pub summary: SummaryRow,
}

/// Runs every seed of `config`, writing `seed_<s>/trace.csv`,
/// `seed_<s>/model.txt`, `config.json` and `summary.csv` under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let corpus = config.corpus.load()?;
    run_experiment_on(config, &corpus)
}

/// As [`run_experiment`] with an already loaded corpus.
pub fn run_experiment_on(config: &ExperimentConfig, corpus: &Corpus) -> Result<ExperimentResult> {
    config.validate()?;
    if config.n_test >= corpus.len() {
        return Err(Error::Config(format!(
            "n_test = {} leaves no training documents out of {}",
            config.n_test,
            corpus.len()
        )));
    }
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let config_path = config.out.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&config_path, e))?;
    let mut splits = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        info!("{}: K={} seed {seed}", config.method, config.k);
        splits.push(run_split(
            config,
            corpus,
            seed,
            &config.out.join(format!("seed_{seed}")),
        )?);
    }
    let summary = SummaryRow {
        method: config.method,
        k: config.k,
        kappa: config.kappa(),
        averaging: config.averaging,
        finals: splits.iter().map(|s| s.final_log_perplexity).collect(),
        topics: splits.iter().map(|s| s.topics).collect(),
    };
    write_summary(&config.out.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(ExperimentResult { splits, summary })
}

/// Outcome of [`sweep`]: merged summary rows and the failed configs.
#[derive(Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<(usize, String)>,
}

/// Runs `configs` with up to `parallelism` experiments at a time. Failures
/// are recorded and the remaining experiments proceed.
pub fn sweep(configs: &[ExperimentConfig], parallelism: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let outcomes: Vec<Result<ExperimentResult>> = pool.install(|| configs.par_iter().map(run_experiment).collect());
    let mut result = SweepResult::default();
    let mut rows = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => rows.push(r.summary),
            Err(e) => {
                warn!("experiment {i} failed: {e}");
                result.failures.push((i, e.to_string()));
            }
        }
    }
    result.rows = merge_summaries(&[], &rows);
    Ok(result)
}
