//! LDA as a non-canonical exponential family.
//!
//! Sufficient statistics are expected word-topic counts `s1` (K×V) and
//! expected log topic proportions `s2` (K). The M-step maps them back to the
//! topic matrix (row normalization of `s1`) and the Dirichlet prior (solution
//! of `Ψ(α_k) − Ψ(Σα) = s2_k`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::online_em::SuffStats;
use crate::special::{digamma, inv_digamma, ln_gamma, ln_multi_beta};

const SIMPLEX_TOL: f64 = 1e-9;

/// Global LDA parameter: topics on the simplex and a positive Dirichlet prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    beta: Array2<f64>,
    alpha: Vec<f64>,
}

/// Borrowed topic weights and prior handed to the local E-steps.
///
/// Unlike [`ModelParams`] the rows need not sum to one: the Bayesian variants
/// pass `exp(E_q[log β])`, whose rows sum to less than one.
#[derive(Debug, Clone, Copy)]
pub struct LocalModel<'a> {
    pub beta: ArrayView2<'a, f64>,
    pub alpha: &'a [f64],
}

impl<'a> LocalModel<'a> {
    pub fn new(beta: ArrayView2<'a, f64>, alpha: &'a [f64]) -> Result<Self> {
        if beta.nrows() != alpha.len() {
            return Err(Error::shape(format!("{} alpha entries", beta.nrows()), alpha.len()));
        }
        Ok(Self { beta, alpha })
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn v(&self) -> usize {
        self.beta.ncols()
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Fills `out` (length `words.len() * K`) with `β[k, w]`, one row per word.
    pub(crate) fn gather_columns(&self, words: &[usize], out: &mut Vec<f64>) {
        let k = self.k();
        out.clear();
        out.reserve(words.len() * k);
        for &w in words {
            out.extend(self.beta.column(w).iter());
        }
    }
}

impl ModelParams {
    pub fn new(beta: Array2<f64>, alpha: Vec<f64>) -> Result<Self> {
        if beta.nrows() != alpha.len() {
            return Err(Error::shape(format!("{} alpha entries", beta.nrows()), alpha.len()));
        }
        if beta.nrows() == 0 || beta.ncols() == 0 {
            return Err(Error::InvalidArgument("empty topic matrix".into()));
        }
        for (k, row) in beta.rows().into_iter().enumerate() {
            if row.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
                return Err(Error::Degenerate(format!("topic {k} has a negative entry")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Degenerate(format!("topic {k} sums to {sum}")));
            }
        }
        if let Some(k) = alpha.iter().position(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Degenerate(format!("alpha[{k}] = {}", alpha[k])));
        }
        Ok(Self { beta, alpha })
    }

    /// Random initialization: topics near uniform with multiplicative
    /// Gamma(100, 1/100) noise, as in standard online LDA code.
    pub fn random<R: rand::Rng + ?Sized>(k: usize, v: usize, alpha: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, Gamma};
        let gamma = Gamma::new(100.0, 0.01).expect("valid gamma");
        let mut beta = Array2::from_shape_fn((k, v), |_| gamma.sample(rng));
        for mut row in beta.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        Self {
            beta,
            alpha: vec![alpha; k],
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn v(&self) -> usize {
        self.beta.ncols()
    }

    pub fn beta(&self) -> &Array2<f64> {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn local(&self) -> LocalModel<'_> {
        LocalModel {
            beta: self.beta.view(),
            alpha: &self.alpha,
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<f64>) {
        (self.beta, self.alpha)
    }

    /// Sufficient statistics that map back to these parameters under
    /// [`m_step`]: `s1 = scale · β`, `s2 = Ψ(α) − Ψ(Σα)`.
    pub fn forward_stats(&self, scale: f64) -> SuffStats {
        let psi_sum = digamma(self.alpha.iter().sum());
        SuffStats {
            s1: &self.beta * scale,
            s2: self.alpha.iter().map(|&a| digamma(a) - psi_sum).collect(),
        }
    }

    /// Writes a text dump: a JSON header line, K rows of β, then α.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.into(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let header = ParamsHeader {
            format: LDA_FORMAT.into(),
            k: self.k(),
            v: self.v(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for row in self.beta.rows() {
            push_row(&mut out, row.iter());
        }
        push_row(&mut out, self.alpha.iter());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: ParamsHeader =
            serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
        if header.format != LDA_FORMAT {
            return Err(parse_err(1, format!("unexpected format {:?}", header.format)));
        }
        let mut beta = Array2::zeros((header.k, header.v));
        for k in 0..header.k {
            let row = parse_row(lines.next(), k + 2, header.v)?;
            beta.row_mut(k).assign(&ndarray::Array1::from(row));
        }
        let alpha = parse_row(lines.next(), header.k + 2, header.k)?;
        Self::new(beta, alpha)
    }
}

const LDA_FORMAT: &str = "oem-lda";

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    format: String,
    k: usize,
    v: usize,
}

pub(crate) fn push_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v}").expect("write to string");
    }
    out.push('\n');
}

pub(crate) fn parse_row(line: Option<&str>, lineno: usize, expected: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| parse_err(lineno, "unexpected end of file".into()))?;
    let row = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(lineno, e.to_string()))?;
    if row.len() != expected {
        return Err(parse_err(
            lineno,
            format!("expected {expected} values, found {}", row.len()),
        ));
    }
    Ok(row)
}

pub(crate) fn parse_err(line: usize, msg: String) -> Error {
    Error::Parse {
        path: Default::default(),
        line,
        msg,
    }
}

/// How the Dirichlet prior is re-estimated in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    FixedPoint,
    Gradient,
    Frozen,
    /// Gamma-prior update; no closed form is available, always errors.
    GammaPrior,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_point" | "fixed-point" => Ok(Self::FixedPoint),
            "gradient" => Ok(Self::Gradient),
            "frozen" => Ok(Self::Frozen),
            "gamma" | "gamma_prior" => Ok(Self::GammaPrior),
            _ => Err(Error::InvalidArgument(format!("unknown alpha mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaUpdate {
    pub mode: AlphaMode,
    pub tol: f64,
    pub max_iter: usize,
    pub learning_rate: f64,
    pub gradient_iters: usize,
}

impl Default for AlphaUpdate {
    fn default() -> Self {
        Self {
            mode: AlphaMode::FixedPoint,
            tol: 1e-8,
            max_iter: 1000,
            learning_rate: 1e-3,
            gradient_iters: 10,
        }
    }
}

impl AlphaUpdate {
    pub fn with_mode(mode: AlphaMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn solve(&self, s2: &[f64], alpha_init: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            AlphaMode::FixedPoint => alpha_fixed_point(s2, alpha_init, self.tol, self.max_iter),
            AlphaMode::Gradient => alpha_gradient(s2, alpha_init, self.learning_rate, self.gradient_iters),
            AlphaMode::Frozen => Ok(alpha_init.to_vec()),
            AlphaMode::GammaPrior => Err(Error::Unspecified("the gamma-prior alpha update")),
        }
    }
}

/// Smallest topic-word probability produced by the M-step. Without it a
/// word absent from the first minibatch (where `ρ = 1`) would be impossible
/// under every topic from then on.
pub const BETA_FLOOR: f64 = 1e-10;

/// Normalizes rows in place, resetting rows without mass to uniform and
/// flooring entries at [`BETA_FLOOR`].
pub(crate) fn normalize_topics(beta: &mut Array2<f64>) -> Result<()> {
    let v = beta.ncols();
    for (topic, mut row) in beta.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if !sum.is_finite() {
            return Err(Error::NonFinite("topic counts"));
        }
        if sum > 0.0 {
            row /= sum;
        } else {
            warn!("topic {topic} has no mass; resetting to uniform");
            row.fill(1.0 / v as f64);
        }
        if row.iter().any(|&x| x < BETA_FLOOR) {
            row.mapv_inplace(|x| x.max(BETA_FLOOR));
            let sum = row.sum();
            row /= sum;
        }
    }
    Ok(())
}

/// Maps sufficient statistics to parameters.
///
/// Topics are the normalized rows of `s1`. A row with zero mass is an unused
/// topic; it is reset to the uniform distribution and a warning is logged.
pub fn m_step(s: &SuffStats, alpha: &AlphaUpdate, alpha_init: &[f64]) -> Result<ModelParams> {
    let k = s.s1.nrows();
    if s.s2.len() != k || alpha_init.len() != k {
        return Err(Error::shape(
            format!("{k} topics"),
            format!("s2 {} / alpha {}", s.s2.len(), alpha_init.len()),
        ));
    }
    if s.s2.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("s2"));
    }
    let mut beta = s.s1.clone();
    normalize_topics(&mut beta)?;
    let alpha = alpha.solve(&s.s2, alpha_init)?;
    Ok(ModelParams { beta, alpha })
}

/// Max-abs stationarity residual `|Ψ(α_k) − Ψ(Σα) − s2_k|`.
pub fn alpha_residual(s2: &[f64], alpha: &[f64]) -> f64 {
    let psi_sum = digamma(alpha.iter().sum());
    alpha
        .iter()
        .zip(s2)
        .map(|(&a, &s)| (digamma(a) - psi_sum - s).abs())
        .fold(0.0, f64::max)
}

/// Fixed-point iteration `α_k ← Ψ⁻¹(Ψ(Σα) + s2_k)`.
pub fn alpha_fixed_point(s2: &[f64], alpha0: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if s2.len() != alpha0.len() {
        return Err(Error::shape(alpha0.len(), s2.len()));
    }
    if alpha0.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidArgument("alpha0 must be positive".into()));
    }
    let mut alpha = alpha0.to_vec();
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let psi_sum = digamma(alpha.iter().sum());
        change = 0.0;
        for (a, &s) in alpha.iter_mut().zip(s2) {
            let next = inv_digamma(psi_sum + s);
            if !next.is_finite() || !(next > 0.0) {
                return Err(Error::NonFinite("alpha fixed point"));
            }
            change = f64::max(change, (next - *a).abs());
            *a = next;
        }
        if change <= tol && alpha_residual(s2, &alpha) <= 10.0 * tol {
            return Ok(alpha);
        }
    }
    // the iteration contracts slowly when Σα is far from its solution;
    // every fixed point is determined by the scalar S = Σα
    if let Some(alpha) = fixed_point_by_precision(s2, tol) {
        return Ok(alpha);
    }
    Err(Error::NoConvergence {
        iters: max_iter,
        last_change: change,
    })
}

/// Solves `S = Σ_k Ψ⁻¹(Ψ(S) + s2_k)` by bisection on `log S` and returns
/// `α_k = Ψ⁻¹(Ψ(S) + s2_k)`.
fn fixed_point_by_precision(s2: &[f64], tol: f64) -> Option<Vec<f64>> {
    let alpha_at = |total: f64| -> Vec<f64> {
        let psi = digamma(total);
        s2.iter().map(|&s| inv_digamma(psi + s)).collect()
    };
    let excess = |log_total: f64| alpha_at(log_total.exp()).iter().sum::<f64>() - log_total.exp();
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    if !(excess(lo) > 0.0 && excess(hi) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let alpha = alpha_at((0.5 * (lo + hi)).exp());
    let ok = alpha.iter().all(|a| a.is_finite() && *a > 0.0) && alpha_residual(s2, &alpha) <= 10.0 * tol.max(1e-12);
    ok.then_some(alpha)
}

/// `⟨α, s2⟩ − log B(α)`, the α-part of the M-step objective.
pub fn alpha_objective(s2: &[f64], alpha: &[f64]) -> f64 {
    alpha.iter().zip(s2).map(|(a, s)| a * s).sum::<f64>() - ln_multi_beta(alpha)
}

pub fn alpha_gradient_vector(s2: &[f64], alpha: &[f64]) -> Vec<f64> {
    let psi_sum = digamma(alpha.iter().sum());
    alpha.iter().zip(s2).map(|(&a, &s)| s - digamma(a) + psi_sum).collect()
}

const ALPHA_FLOOR: f64 = 1e-8;

/// Projected gradient ascent on [`alpha_objective`].
///
/// A step that lowers the objective is halved until it does not; when even
/// tiny steps fail the iterate is already at the optimum up to rounding.
pub fn alpha_gradient(s2: &[f64], alpha0: &[f64], learning_rate: f64, iters: usize) -> Result<Vec<f64>> {
    if s2.len() != alpha0.len() {
        return Err(Error::shape(alpha0.len(), s2.len()));
    }
    if alpha0.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidArgument("alpha0 must be positive".into()));
    }
    let mut alpha = alpha0.to_vec();
    let mut objective = alpha_objective(s2, &alpha);
    if !objective.is_finite() {
        return Err(Error::NonFinite("alpha gradient objective"));
    }
    'outer: for _ in 0..iters {
        let grad = alpha_gradient_vector(s2, &alpha);
        let mut step = learning_rate;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = alpha
                .iter()
                .zip(&grad)
                .map(|(&a, &g)| (a + step * g).max(ALPHA_FLOOR))
                .collect();
            let next = alpha_objective(s2, &trial);
            // changes at rounding level near the optimum are not a decrease
            if next.is_finite() && next >= objective - 1e-12 * (1.0 + objective.abs()) {
                alpha = trial;
                objective = next;
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    Ok(alpha)
}

const MAX_HALVINGS: usize = 40;

/// The M-step objective `⟨φ(η), s⟩ − ψ(η)`, with `0 · log 0 = 0`.
pub fn objective(params: &ModelParams, s: &SuffStats) -> f64 {
    let topic_term: f64 =
        s.s1.iter()
            .zip(params.beta.iter())
            .map(|(&c, &b)| if c == 0.0 { 0.0 } else { c * b.ln() })
            .sum();
    topic_term + alpha_objective(&s.s2, &params.alpha)
}

/// `log p(X, Z, θ | β, α)` for one document.
pub fn log_joint(doc: &Document, z: &[usize], theta: &[f64], params: &ModelParams) -> Result<f64> {
    let k = params.k();
    if z.len() != doc.len() {
        return Err(Error::shape(doc.len(), z.len()));
    }
    if theta.len() != k {
        return Err(Error::shape(k, theta.len()));
    }
    if theta.iter().any(|&t| t < -SIMPLEX_TOL) || (theta.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument("theta is not on the simplex".into()));
    }
    if let Some(&bad) = z.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!("topic {bad} out of range")));
    }
    let mut lp = 0.0;
    for (&w, &t) in doc.word_ids().iter().zip(z) {
        lp += params.beta[[t, w]].ln() + theta[t].ln();
    }
    let alpha_sum: f64 = params.alpha.iter().sum();
    lp += ln_gamma(alpha_sum);
    for (&a, &t) in params.alpha.iter().zip(theta) {
        lp -= ln_gamma(a);
        if a != 1.0 {
            lp += (a - 1.0) * t.ln();
        }
    }
    Ok(lp)
}
