//! Posterior means under the rank-one and common-support priors.
//!
//! For a fixed latent draw `W` every column contributes a closed-form
//! Gaussian integral, and the sum over supports collapses into elementary
//! symmetric polynomials of the per-column likelihood ratios
//! `r_j = h(X_j, W) / f(X_j)`:
//!
//! ```text
//! D(W)   ∝ Σ_q w_q e_q(r)
//! N_j(W) ∝ Σ_q w_q r_j m_j e_{q-1}(r_{-j})      w_q = π(q) / C(p, q)
//! ```
//!
//! where `m_j` is the conditional mean of the loading given `j ∈ S` and `W`.
//! The common factor `Π_j f(X_j)` is never formed. Latent draws come from
//! `N(0, I)`; the posterior mean is the evidence-weighted average of the
//! per-draw conditional means after the sign of each draw is aligned with
//! the first.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::DataSet;
use crate::numerics::{
    cholesky, cholesky_solve, dot, ln_add_exp, ln_sub_exp, ln_sum_exp, thin_svd, DenseMatrix,
    LogScaled,
};
use crate::prior::SimplePriorParams;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Default number of latent draws.
pub const DEFAULT_DRAWS: usize = 100;

/// Relative error bound a deflated leave-one-out polynomial must certify.
pub const DEFLATION_TOL: f64 = 1e-10;

/// ESS / T below which an estimate carries a warning.
pub const ESS_WARN_FRACTION: f64 = 0.05;

#[inline]
pub fn ln_phi(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Per-column sufficient statistics for one latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    /// `ln f(X_j) = Σ_i ln φ(X_ij)`.
    pub log_f: Vec<f64>,
    /// `ln (h(X_j, W) / f(X_j))`.
    pub log_ratio: Vec<f64>,
    /// `p × r` conditional means of the loading row given `j ∈ S` and `W`.
    pub cond_mean: DenseMatrix,
}

impl ColumnStats {
    pub fn p(&self) -> usize {
        self.log_ratio.len()
    }

    pub fn rank(&self) -> usize {
        self.cond_mean.cols()
    }
}

fn column_log_f(data: &DataSet) -> Vec<f64> {
    (0..data.p())
        .map(|j| data.x.column(j).iter().map(|&x| ln_phi(x)).sum())
        .collect()
}

/// Rank-one statistics: `a = 1 + ‖W‖²`, `b_j = ⟨W, X_j⟩`,
/// `ln r_j = −½ ln a + b_j² / 2a`, `m_j = b_j / a`.
pub fn column_stats(data: &DataSet, w: &[f64]) -> Result<ColumnStats> {
    if w.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "latent draw length",
            expected: data.n(),
            actual: w.len(),
        });
    }
    let a = 1.0 + dot(w, w);
    let half_ln_a = 0.5 * a.ln();
    let p = data.p();
    let mut log_ratio = Vec::with_capacity(p);
    let mut cond_mean = DenseMatrix::zeros(p, 1);
    for j in 0..p {
        let b = dot(w, data.x.column(j));
        log_ratio.push(-half_ln_a + b * b / (2.0 * a));
        cond_mean.set(j, 0, b / a);
    }
    Ok(ColumnStats {
        log_f: column_log_f(data),
        log_ratio,
        cond_mean,
    })
}

/// Rank-`r` statistics with `M = I + WᵀW` and `b_j = WᵀX_j`:
/// `ln r_j = −½ ln det M + ½ b_jᵀM⁻¹b_j`, `m_j = M⁻¹b_j`.
/// For `r = 1` this is exactly [`column_stats`].
pub fn column_stats_multirank(data: &DataSet, w: &DenseMatrix) -> Result<ColumnStats> {
    if w.rows() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "latent draw rows",
            expected: data.n(),
            actual: w.rows(),
        });
    }
    let r = w.cols();
    if r == 0 {
        return Err(Error::invalid("rank", "must be at least 1"));
    }
    if r == 1 {
        return column_stats(data, w.column(0));
    }
    let m = w.t_matmul(w)?.add(&DenseMatrix::identity(r))?;
    let l = cholesky(&m)?;
    let half_log_det: f64 = (0..r).map(|i| l.get(i, i).ln()).sum();
    let p = data.p();
    let mut log_ratio = Vec::with_capacity(p);
    let mut cond_mean = DenseMatrix::zeros(p, r);
    let mut b = vec![0.0; r];
    for j in 0..p {
        let col = data.x.column(j);
        for (k, bk) in b.iter_mut().enumerate() {
            *bk = dot(w.column(k), col);
        }
        let y = cholesky_solve(&l, &b);
        log_ratio.push(-half_log_det + 0.5 * dot(&b, &y));
        for (k, yk) in y.iter().enumerate() {
            cond_mean.set(j, k, *yk);
        }
    }
    Ok(ColumnStats {
        log_f: column_log_f(data),
        log_ratio,
        cond_mean,
    })
}

/// Coefficients `e_0 … e_d` of `Π (1 + r_j Z)` held in the log domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPoly {
    coeffs: Vec<LogScaled>,
}

impl ScaledPoly {
    fn from_logs(logs: &[f64]) -> Self {
        Self {
            coeffs: logs.iter().map(|&l| LogScaled::from_log(l)).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, q: usize) -> LogScaled {
        self.coeffs[q]
    }

    pub fn coeffs(&self) -> &[LogScaled] {
        &self.coeffs
    }

    /// Natural logs of the coefficients.
    pub fn log_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.log_magnitude).collect()
    }
}

fn esp_logs_into(log_ratios: impl Iterator<Item = f64>, out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    for lr in log_ratios {
        out.push(f64::NEG_INFINITY);
        for k in (1..out.len()).rev() {
            out[k] = ln_add_exp(out[k], lr + out[k - 1]);
        }
    }
}

/// Elementary symmetric polynomials of `exp(log_ratios)` by multiplying in
/// one `(1 + r_j Z)` factor at a time. `O(p²)`.
pub fn esp(log_ratios: &[f64]) -> ScaledPoly {
    let mut logs = Vec::with_capacity(log_ratios.len() + 1);
    esp_logs_into(log_ratios.iter().copied(), &mut logs);
    ScaledPoly::from_logs(&logs)
}

/// `e_k(r_{-j})` by recomputation from scratch.
pub fn esp_excluding(log_ratios: &[f64], j: usize) -> ScaledPoly {
    let mut logs = Vec::with_capacity(log_ratios.len());
    esp_logs_into(
        log_ratios
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &v)| v),
        &mut logs,
    );
    ScaledPoly::from_logs(&logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeaveOneOutMethod {
    Deflation,
    Recomputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    pub poly: ScaledPoly,
    pub method: LeaveOneOutMethod,
    /// Certified relative error bound for deflation, `NaN` after recomputation.
    pub error_bound: f64,
}

/// Deflates the factor `(1 + r Z)` out of a polynomial given by its log
/// coefficients, returning the quotient's log coefficients and a propagated
/// relative error bound, or `None` when no bound below
/// [`DEFLATION_TOL`] can be certified.
///
/// The upward recurrence `e_k(r_{-j}) = e_k(r) − r_j e_{k−1}(r_{−j})` is
/// accurate for low degrees when `r_j` is small next to the other ratios; the
/// downward one `e_{k−1}(r_{−j}) = (e_k(r) − e_k(r_{−j})) / r_j` is accurate
/// for high degrees. Each coefficient is taken from whichever direction
/// carries the smaller bound.
pub fn deflate(log_coeffs: &[f64], log_ratio: f64) -> Option<(Vec<f64>, f64)> {
    let p = log_coeffs.len() - 1;
    if p == 0 {
        return None;
    }
    let u = f64::EPSILON;
    // relative error carried by the input coefficients themselves
    let input_err = 4.0 * p as f64 * u;

    let mut fwd = vec![f64::NEG_INFINITY; p];
    let mut fwd_err = vec![f64::INFINITY; p];
    fwd[0] = 0.0;
    fwd_err[0] = 0.0;
    let mut worst_fwd: f64 = 0.0;
    for k in 1..p {
        let y = log_ratio + fwd[k - 1];
        match ln_sub_exp(log_coeffs[k], y) {
            Some(x) if fwd_err[k - 1].is_finite() => {
                fwd[k] = x;
                fwd_err[k] = (log_coeffs[k] - x).exp() * input_err
                    + (y - x).exp() * (fwd_err[k - 1] + u)
                    + 3.0 * u;
            }
            _ => break,
        }
        worst_fwd = worst_fwd.max(fwd_err[k]);
    }
    if fwd_err.iter().all(|e| *e <= DEFLATION_TOL) {
        return Some((fwd, worst_fwd));
    }

    let mut bwd = vec![f64::NEG_INFINITY; p];
    let mut bwd_err = vec![f64::INFINITY; p];
    bwd[p - 1] = log_coeffs[p] - log_ratio;
    bwd_err[p - 1] = input_err + u;
    for k in (1..p).rev() {
        if !bwd_err[k].is_finite() {
            break;
        }
        match ln_sub_exp(log_coeffs[k], bwd[k]) {
            Some(diff) => {
                let x = diff - log_ratio;
                bwd[k - 1] = x;
                bwd_err[k - 1] = (log_coeffs[k] - diff).exp() * input_err
                    + (bwd[k] - diff).exp() * (bwd_err[k] + u)
                    + 3.0 * u;
            }
            None => break,
        }
    }

    let mut out = Vec::with_capacity(p);
    let mut worst: f64 = 0.0;
    for k in 0..p {
        let (x, e) = if fwd_err[k] <= bwd_err[k] {
            (fwd[k], fwd_err[k])
        } else {
            (bwd[k], bwd_err[k])
        };
        if !(e <= DEFLATION_TOL) {
            return None;
        }
        worst = worst.max(e);
        out.push(x);
    }
    Some((out, worst))
}

/// `e_k(r_{−j})` for `k = 0 … p−1`: certified deflation of `poly`, falling
/// back to recomputation without column `j`.
pub fn esp_leave_one_out(poly: &ScaledPoly, log_ratios: &[f64], j: usize) -> LeaveOneOut {
    match deflate(&poly.log_coeffs(), log_ratios[j]) {
        Some((logs, bound)) => LeaveOneOut {
            poly: ScaledPoly::from_logs(&logs),
            method: LeaveOneOutMethod::Deflation,
            error_bound: bound,
        },
        None => LeaveOneOut {
            poly: esp_excluding(log_ratios, j),
            method: LeaveOneOutMethod::Recomputed,
            error_bound: f64::NAN,
        },
    }
}

/// `ln w_q = ln π(q) − ln C(p, q)` for `q = 1..=p` (index `q − 1`).
pub fn log_support_weights(prior: &SimplePriorParams) -> Vec<f64> {
    let p = prior.p as f64;
    prior
        .log_cardinality_probs()
        .into_iter()
        .enumerate()
        .map(|(idx, lp)| {
            let q = (idx + 1) as f64;
            lp - (ln_gamma(p + 1.0) - ln_gamma(q + 1.0) - ln_gamma(p - q + 1.0))
        })
        .collect()
}

/// Given-`W` posterior quantities for one latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSummary {
    /// `ln (D(W) / Π_j f(X_j))`.
    pub log_evidence: f64,
    /// `E[A_j | X, W]` as a `p × r` matrix.
    pub cond_mean: DenseMatrix,
    /// `P(j ∈ S | X, W)`.
    pub inclusion: Vec<f64>,
    /// Columns whose leave-one-out polynomial had to be recomputed.
    pub recomputed: usize,
}

/// Polynomial-coefficient evaluation of one draw.
pub fn summarize_draw(stats: &ColumnStats, log_weights: &[f64]) -> Result<DrawSummary> {
    let p = stats.p();
    if log_weights.len() != p {
        return Err(Error::DimensionMismatch {
            context: "support weights",
            expected: p,
            actual: log_weights.len(),
        });
    }
    let lr = &stats.log_ratio;
    let poly = esp(lr);
    let e = poly.log_coeffs();
    let terms: Vec<f64> = (1..=p).map(|q| log_weights[q - 1] + e[q]).collect();
    let log_d = ln_sum_exp(&terms);
    if !log_d.is_finite() {
        return Err(Error::Numerical(format!("non-finite log evidence {log_d}")));
    }

    let r = stats.rank();
    let mut cond_mean = DenseMatrix::zeros(p, r);
    let mut inclusion = Vec::with_capacity(p);
    let mut recomputed = 0;
    let mut loo_terms = vec![0.0; p];
    for j in 0..p {
        let loo = esp_leave_one_out(&poly, lr, j);
        if loo.method == LeaveOneOutMethod::Recomputed {
            recomputed += 1;
        }
        for (q, slot) in loo_terms.iter_mut().enumerate() {
            *slot = log_weights[q] + loo.poly.coeff(q).log_magnitude;
        }
        let incl = (lr[j] + ln_sum_exp(&loo_terms) - log_d).exp().min(1.0);
        inclusion.push(incl);
        for k in 0..r {
            cond_mean.set(j, k, incl * stats.cond_mean.get(j, k));
        }
    }
    Ok(DrawSummary {
        log_evidence: log_d,
        cond_mean,
        inclusion,
        recomputed,
    })
}

/// How the `±W` ambiguity of each latent draw is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SignPolicy {
    /// Flip draw `t` when `⟨m(W_t), m(W_1)⟩ < 0`.
    #[default]
    AlignToFirst,
    /// Keep every draw as sampled.
    Off,
}

impl SignPolicy {
    /// `±1` per draw given the per-draw conditional mean matrices.
    pub fn signs(&self, means: &[&DenseMatrix]) -> Vec<f64> {
        match self {
            SignPolicy::Off => vec![1.0; means.len()],
            SignPolicy::AlignToFirst => {
                let Some(first) = means.first() else {
                    return Vec::new();
                };
                means
                    .iter()
                    .map(|m| {
                        if dot(m.as_slice(), first.as_slice()) >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Posterior mean estimate with importance-weight diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    /// `p × r` posterior mean of the loading matrix; column 0 is `η̂` for
    /// rank one.
    pub loadings: DenseMatrix,
    pub inclusion_prob: Vec<f64>,
    /// `ln D(W_t)` up to the shared constant, one per draw.
    pub draw_log_weights: Vec<f64>,
    pub effective_sample_size: f64,
    pub draws: usize,
    pub seed: Option<u64>,
    pub recomputed_columns: usize,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    eta_hat: &'a [f64],
    inclusion_prob: &'a [f64],
    ess: f64,
    #[serde(rename = "T")]
    t: usize,
    seed: Option<u64>,
    #[serde(rename = "A_hat", skip_serializing_if = "Option::is_none")]
    a_hat: Option<Vec<Vec<f64>>>,
}

impl PosteriorEstimate {
    pub fn rank(&self) -> usize {
        self.loadings.cols()
    }

    /// First column of the loading estimate.
    pub fn eta_hat(&self) -> &[f64] {
        self.loadings.column(0)
    }

    /// Orthonormal basis of the estimated column space (nonzero singular
    /// directions only).
    pub fn subspace(&self) -> DenseMatrix {
        let svd = thin_svd(&self.loadings);
        let scale = svd.singular_values.first().copied().unwrap_or(0.0);
        let cols: Vec<Vec<f64>> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 1e-12 * scale && s > 0.0)
            .map(|(k, _)| svd.u.column(k).to_vec())
            .collect();
        DenseMatrix::from_columns(self.loadings.rows(), &cols).expect("column lengths")
    }

    /// `{"eta_hat", "inclusion_prob", "ess", "T", "seed"}`, plus `"A_hat"`
    /// (row-major) when the rank exceeds one.
    pub fn to_json(&self) -> Result<String> {
        let doc = EstimateJson {
            eta_hat: self.eta_hat(),
            inclusion_prob: &self.inclusion_prob,
            ess: self.effective_sample_size,
            t: self.draws,
            seed: self.seed,
            a_hat: (self.rank() > 1).then(|| self.loadings.to_row_major()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// `T` latent draws of shape `n × r`; draw `t` comes from sub-stream `t` of
/// `seed`, filled row by row.
pub fn latent_draws(n: usize, r: usize, draws: usize, seed: u64) -> Vec<DenseMatrix> {
    (0..draws)
        .map(|t| {
            let mut rng = rng::substream(seed, t as u64);
            let mut w = DenseMatrix::zeros(n, r);
            for i in 0..n {
                for k in 0..r {
                    w.set(i, k, rng.sample(StandardNormal));
                }
            }
            w
        })
        .collect()
}

/// Combines per-draw summaries into the self-normalized estimate
/// `Σ_t u_t s_t m(W_t)` with `u_t ∝ D(W_t)`, reducing in draw order.
pub fn combine_draws(
    summaries: &[DrawSummary],
    policy: SignPolicy,
    seed: Option<u64>,
) -> Result<PosteriorEstimate> {
    let Some(first) = summaries.first() else {
        return Err(Error::invalid("draws", "must be at least 1"));
    };
    let (p, r) = (first.cond_mean.rows(), first.cond_mean.cols());
    let log_w: Vec<f64> = summaries.iter().map(|s| s.log_evidence).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let means: Vec<&DenseMatrix> = summaries.iter().map(|s| &s.cond_mean).collect();
    let signs = policy.signs(&means);

    let mut loadings = DenseMatrix::zeros(p, r);
    let mut inclusion = vec![0.0; p];
    for ((s, &u), &sign) in summaries.iter().zip(&weights).zip(&signs) {
        for k in 0..r {
            let dst = loadings.column_mut(k);
            for (d, m) in dst.iter_mut().zip(s.cond_mean.column(k)) {
                *d += u * sign * m;
            }
        }
        for (d, v) in inclusion.iter_mut().zip(&s.inclusion) {
            *d += u * v;
        }
    }
    inclusion.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let ess = 1.0 / weights.iter().map(|u| u * u).sum::<f64>();
    let draws = summaries.len();

    let mut warnings = Vec::new();
    if means.iter().all(|m| m.max_abs() == 0.0) {
        warnings.push("degenerate weights: every per-draw conditional mean is zero".to_string());
    }
    if ess < ESS_WARN_FRACTION * draws as f64 {
        warnings.push(format!(
            "effective sample size {ess:.2} is below {:.0}% of {draws} draws",
            ESS_WARN_FRACTION * 100.0
        ));
    }
    Ok(PosteriorEstimate {
        loadings,
        inclusion_prob: inclusion,
        draw_log_weights: log_w,
        effective_sample_size: ess.clamp(1.0, draws as f64),
        draws,
        seed,
        recomputed_columns: summaries.iter().map(|s| s.recomputed).sum(),
        warnings,
    })
}

/// Posterior mean for externally supplied latent draws (each `n × r`).
pub fn posterior_mean_with_draws(
    data: &DataSet,
    prior: &SimplePriorParams,
    latent: &[DenseMatrix],
    policy: SignPolicy,
    seed: Option<u64>,
) -> Result<PosteriorEstimate> {
    if prior.p != data.p() {
        return Err(Error::DimensionMismatch {
            context: "prior dimension",
            expected: data.p(),
            actual: prior.p,
        });
    }
    if latent.is_empty() {
        return Err(Error::invalid("draws", "must be at least 1"));
    }
    if let Some(bad) = latent.iter().find(|w| w.cols() != prior.rank) {
        return Err(Error::DimensionMismatch {
            context: "latent draw rank",
            expected: prior.rank,
            actual: bad.cols(),
        });
    }
    let log_weights = log_support_weights(prior);
    let summaries = latent
        .par_iter()
        .map(|w| {
            let stats = column_stats_multirank(data, w)?;
            summarize_draw(&stats, &log_weights)
        })
        .collect::<Result<Vec<_>>>()?;
    combine_draws(&summaries, policy, seed)
}

/// Rank-one posterior mean `η̂` from `draws` latent draws.
pub fn posterior_mean_rank_one(
    data: &DataSet,
    prior: &SimplePriorParams,
    draws: usize,
    seed: u64,
) -> Result<PosteriorEstimate> {
    if prior.rank != 1 {
        return Err(Error::invalid("rank", "rank-one estimator needs rank = 1"));
    }
    posterior_mean_multirank(data, prior, draws, seed)
}

/// Common-support rank-`r` posterior mean `Â`.
pub fn posterior_mean_multirank(
    data: &DataSet,
    prior: &SimplePriorParams,
    draws: usize,
    seed: u64,
) -> Result<PosteriorEstimate> {
    if draws == 0 {
        return Err(Error::invalid("draws", "must be at least 1"));
    }
    let latent = latent_draws(data.n(), prior.rank, draws, seed);
    posterior_mean_with_draws(data, prior, &latent, SignPolicy::default(), Some(seed))
}

/// `P̂(j ∈ S | X)` from the same machinery.
pub fn inclusion_probabilities(
    data: &DataSet,
    prior: &SimplePriorParams,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    posterior_mean_multirank(data, prior, draws, seed).map(|e| e.inclusion_prob)
}
