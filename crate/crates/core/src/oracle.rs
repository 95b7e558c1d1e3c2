//! Brute-force references for the posterior module: the given-`W` posterior
//! mean by explicit enumeration of all `2^p − 1` supports, and adaptive
//! quadrature of the per-column Gaussian integrals.

use crate::error::{Error, Result};
use crate::model::DataSet;
use crate::numerics::{log_sum_exp, DenseMatrix, LogScaled};
use crate::posterior::{column_stats_multirank, ln_phi, SignPolicy};
use crate::prior::SimplePriorParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Largest `p` the enumeration accepts.
    pub max_p: usize,
    /// Relative tolerance for quadrature.
    pub quad_rel_tol: f64,
    /// Integration half-width in prior standard deviations.
    pub quad_range: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_p: 12,
            quad_rel_tol: 1e-9,
            quad_range: 12.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_p > 20 {
            return Err(Error::invalid("max_p", "enumeration cap is 20"));
        }
        if !(self.quad_rel_tol > 0.0 && self.quad_range > 0.0) {
            return Err(Error::invalid(
                "quad_rel_tol",
                "tolerance and range must be positive",
            ));
        }
        Ok(())
    }
}

/// Exact given-`W` posterior mean and inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate {
    pub loadings: DenseMatrix,
    pub inclusion_prob: Vec<f64>,
}

/// `ln C(p, q)` by summing logarithms of integers.
fn ln_binomial(p: usize, q: usize) -> f64 {
    let q = q.min(p - q);
    (0..q)
        .map(|i| ((p - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// Sums the prior-weighted likelihood over every nonempty support for each
/// latent draw, then averages the per-draw conditional means with evidence
/// weights after applying `policy`.
pub fn enumerate_posterior_mean(
    data: &DataSet,
    prior: &SimplePriorParams,
    latent: &[DenseMatrix],
    policy: SignPolicy,
    config: &OracleConfig,
) -> Result<OracleEstimate> {
    config.validate()?;
    let p = data.p();
    if p > config.max_p {
        return Err(Error::OracleCap {
            p,
            cap: config.max_p,
        });
    }
    if prior.p != p {
        return Err(Error::DimensionMismatch {
            context: "prior dimension",
            expected: p,
            actual: prior.p,
        });
    }
    if latent.is_empty() {
        return Err(Error::invalid("draws", "must be at least 1"));
    }
    let r = prior.rank;
    let log_pi = prior.log_cardinality_probs();
    let log_w: Vec<f64> = (1..=p).map(|q| log_pi[q - 1] - ln_binomial(p, q)).collect();

    // per draw: evidence D_t, numerators N_t (p × r) and inclusion masses
    let mut evidences = Vec::with_capacity(latent.len());
    let mut numerators: Vec<Vec<LogScaled>> = Vec::with_capacity(latent.len());
    let mut inclusions: Vec<Vec<LogScaled>> = Vec::with_capacity(latent.len());
    for w in latent {
        if w.cols() != r {
            return Err(Error::DimensionMismatch {
                context: "latent draw rank",
                expected: r,
                actual: w.cols(),
            });
        }
        let stats = column_stats_multirank(data, w)?;
        let mut d_terms = Vec::with_capacity((1 << p) - 1);
        let mut n_terms: Vec<Vec<LogScaled>> = vec![Vec::new(); p * r];
        let mut i_terms: Vec<Vec<LogScaled>> = vec![Vec::new(); p];
        for mask in 1u32..(1u32 << p) {
            let q = mask.count_ones() as usize;
            let mut log_term = log_w[q - 1];
            for j in 0..p {
                if mask >> j & 1 == 1 {
                    log_term += stats.log_ratio[j];
                }
            }
            let term = LogScaled::from_log(log_term);
            d_terms.push(term);
            for j in 0..p {
                if mask >> j & 1 == 1 {
                    i_terms[j].push(term);
                    for k in 0..r {
                        n_terms[k * p + j].push(term.mul_f64(stats.cond_mean.get(j, k)));
                    }
                }
            }
        }
        evidences.push(log_sum_exp(&d_terms));
        numerators.push(n_terms.iter().map(|t| log_sum_exp(t)).collect());
        inclusions.push(i_terms.iter().map(|t| log_sum_exp(t)).collect());
    }

    let per_draw_means: Vec<DenseMatrix> = numerators
        .iter()
        .zip(&evidences)
        .map(|(num, d)| {
            DenseMatrix::from_fn(p, r, |j, k| {
                num[k * p + j]
                    .div(*d)
                    .expect("evidence is positive")
                    .to_f64()
            })
        })
        .collect();
    let refs: Vec<&DenseMatrix> = per_draw_means.iter().collect();
    let signs = policy.signs(&refs);

    let total = log_sum_exp(&evidences);
    let mut loadings = DenseMatrix::zeros(p, r);
    let mut inclusion_prob = vec![0.0; p];
    for j in 0..p {
        for k in 0..r {
            let terms: Vec<LogScaled> = numerators
                .iter()
                .zip(&signs)
                .map(|(num, &s)| num[k * p + j].mul_f64(s))
                .collect();
            loadings.set(j, k, log_sum_exp(&terms).div(total)?.to_f64());
        }
        let terms: Vec<LogScaled> = inclusions.iter().map(|inc| inc[j]).collect();
        inclusion_prob[j] = log_sum_exp(&terms).div(total)?.to_f64();
    }
    Ok(OracleEstimate {
        loadings,
        inclusion_prob,
    })
}

/// Column integrals `f`, `h`, `ξ` obtained by quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnIntegrals {
    pub log_f: f64,
    pub h: LogScaled,
    /// `ξ`, a vector for rank two.
    pub xi: Vec<LogScaled>,
    /// `ln (h / f)`.
    pub log_ratio: f64,
    /// `ξ / h`.
    pub cond_mean: Vec<f64>,
}

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    abs_value: f64,
    error: f64,
}

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for i in 0..7 {
        let x = h * XGK[i];
        let (f1, f2) = (f(c - x), f(c + x));
        kronrod += WGK[i] * (f1 + f2);
        abs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    Panel {
        a,
        b,
        value: kronrod * h,
        abs_value: abs * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Globally adaptive Gauss–Kronrod integration on `[a, b]` until the summed
/// error estimate is at most `rel_tol · ∫|f|`.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    initial_panels: usize,
) -> Result<f64> {
    let width = (b - a) / initial_panels as f64;
    let mut panels: Vec<Panel> = (0..initial_panels)
        .map(|i| gk15(&mut f, a + i as f64 * width, a + (i + 1) as f64 * width))
        .collect();
    for _ in 0..4000 {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let abs: f64 = panels.iter().map(|p| p.abs_value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        if error <= rel_tol * abs || abs == 0.0 {
            return Ok(value);
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("nonempty");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            break;
        }
        panels.push(gk15(&mut f, p.a, mid));
        panels.push(gk15(&mut f, mid, p.b));
    }
    Err(Error::QuadratureTolerance {
        estimate: panels.iter().map(|p| p.value).sum(),
        error: panels.iter().map(|p| p.error).sum(),
    })
}

/// Log of the integrand ratio `Π_i φ(x_i − w_i·η) / φ(x_i)` evaluated
/// directly, term by term.
fn log_likelihood_ratio(x: &[f64], w: &DenseMatrix, eta: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mean: f64 = eta.iter().enumerate().map(|(k, e)| w.get(i, k) * e).sum();
            ln_phi(xi - mean) - ln_phi(xi)
        })
        .sum()
}

/// Quadrature for one column. `w` is `n × r` with `r ∈ {1, 2}`; rank two
/// uses an iterated (tensor) adaptive rule.
pub fn quadrature_column_integrals(
    x_col: &[f64],
    w: &DenseMatrix,
    config: &OracleConfig,
) -> Result<ColumnIntegrals> {
    config.validate()?;
    let n = x_col.len();
    if n == 0 {
        return Err(Error::invalid("n", "column must be nonempty"));
    }
    if w.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "latent draw rows",
            expected: n,
            actual: w.rows(),
        });
    }
    let r = w.cols();
    let log_f: f64 = x_col.iter().map(|&x| ln_phi(x)).sum();
    let range = config.quad_range;
    let tol = config.quad_rel_tol;
    // scan for the peak of the log integrand so exponentials stay in range
    let grid = 2001;
    let step = 2.0 * range / (grid - 1) as f64;
    let (ratio_integrals, shift) = match r {
        1 => {
            let log_g = |e: f64| log_likelihood_ratio(x_col, w, &[e]) + ln_phi(e);
            let shift = (0..grid)
                .map(|i| log_g(-range + i as f64 * step))
                .fold(f64::NEG_INFINITY, f64::max);
            let h = integrate(|e| (log_g(e) - shift).exp(), -range, range, tol, 64)?;
            let xi = integrate(|e| e * (log_g(e) - shift).exp(), -range, range, tol, 64)?;
            (vec![h, xi], shift)
        }
        2 => {
            let log_g = |e1: f64, e2: f64| {
                log_likelihood_ratio(x_col, w, &[e1, e2]) + ln_phi(e1) + ln_phi(e2)
            };
            let coarse = 201;
            let cstep = 2.0 * range / (coarse - 1) as f64;
            let mut shift = f64::NEG_INFINITY;
            for i in 0..coarse {
                for k in 0..coarse {
                    shift = shift.max(log_g(-range + i as f64 * cstep, -range + k as f64 * cstep));
                }
            }
            let inner_tol = tol * 1e-2;
            let mut out = Vec::with_capacity(3);
            for moment in 0..3 {
                let mut failure = None;
                let value = integrate(
                    |e1| {
                        let inner = integrate(
                            |e2| {
                                let g = (log_g(e1, e2) - shift).exp();
                                match moment {
                                    0 => g,
                                    1 => e1 * g,
                                    _ => e2 * g,
                                }
                            },
                            -range,
                            range,
                            inner_tol,
                            16,
                        );
                        inner.unwrap_or_else(|e| {
                            failure.get_or_insert(e);
                            0.0
                        })
                    },
                    -range,
                    range,
                    tol,
                    16,
                )?;
                if let Some(e) = failure {
                    return Err(e);
                }
                out.push(value);
            }
            (out, shift)
        }
        _ => {
            return Err(Error::invalid("rank", "quadrature supports rank 1 or 2"));
        }
    };
    let h_over_f = ratio_integrals[0];
    if !(h_over_f > 0.0) {
        return Err(Error::Numerical(
            "quadrature produced a non-positive mass".into(),
        ));
    }
    let log_ratio = h_over_f.ln() + shift;
    let h = LogScaled::from_log(log_ratio + log_f);
    let cond_mean: Vec<f64> = ratio_integrals[1..].iter().map(|m| m / h_over_f).collect();
    let xi = cond_mean.iter().map(|&m| h.mul_f64(m)).collect();
    Ok(ColumnIntegrals {
        log_f,
        h,
        xi,
        log_ratio,
        cond_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_data, SpikedModel};
    use crate::posterior::{column_stats, latent_draws, posterior_mean_with_draws};

    fn column(w: &[f64]) -> DenseMatrix {
        DenseMatrix::from_columns(w.len(), &[w.to_vec()]).unwrap()
    }

    #[test]
    fn zero_latent_gives_h_equal_f() {
        let cfg = OracleConfig::default();
        let out = quadrature_column_integrals(&[0.4, -1.1, 2.0], &column(&[0.0; 3]), &cfg).unwrap();
        assert!(out.log_ratio.abs() < 1e-12);
        assert!(out.cond_mean[0].abs() < 1e-12);
    }

    #[test]
    fn single_observation_ratio() {
        // −½ ln 2 + 1/4 → h/f = e^{1/4}/√2 ≈ 0.907943
        let out =
            quadrature_column_integrals(&[1.0], &column(&[1.0]), &OracleConfig::default()).unwrap();
        assert!((out.log_ratio.exp() - 0.907_943_079).abs() < 1e-6);
        assert!((out.log_ratio - (-0.5 * 2f64.ln() + 0.25)).abs() < 1e-9);
        assert!((out.cond_mean[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn doubling_range_changes_little() {
        let x = [0.3, -0.8, 1.4, 0.2];
        let w = column(&[0.9, -0.4, 1.1, 0.5]);
        let base = quadrature_column_integrals(&x, &w, &OracleConfig::default()).unwrap();
        let wide = OracleConfig {
            quad_range: 24.0,
            ..OracleConfig::default()
        };
        let wider = quadrature_column_integrals(&x, &w, &wide).unwrap();
        assert!((base.log_ratio - wider.log_ratio).abs() < 1e-8);
        assert!(
            (base.cond_mean[0] - wider.cond_mean[0]).abs()
                < 1e-8 * base.cond_mean[0].abs().max(1e-3)
        );
    }

    #[test]
    fn quadrature_tolerance_failure_reports_estimate() {
        let err = integrate(
            |x| if (x * 1e8) as i64 % 2 == 0 { 1.0 } else { -1.0 },
            0.0,
            1.0,
            1e-10,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::QuadratureTolerance { .. }));
    }

    #[test]
    fn enumeration_weights_for_two_columns() {
        // p = 2: π = (2/3, 1/3), supports {1},{2},{1,2} each get weight 1/3
        let prior = SimplePriorParams::new(2, 1.0, 1).unwrap();
        let log_pi = prior.log_cardinality_probs();
        let w: Vec<f64> = (1..=2)
            .map(|q| (log_pi[q - 1] - ln_binomial(2, q)).exp())
            .collect();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_column_enumeration() {
        let data = DataSet::new(DenseMatrix::from_rows(&[vec![0.5], vec![1.5]]).unwrap()).unwrap();
        let prior = SimplePriorParams::new(1, 1.0, 1).unwrap();
        let w = column(&[0.7, -0.2]);
        let out = enumerate_posterior_mean(
            &data,
            &prior,
            &[w.clone()],
            SignPolicy::AlignToFirst,
            &OracleConfig::default(),
        )
        .unwrap();
        let stats = column_stats(&data, w.column(0)).unwrap();
        assert!((out.loadings.get(0, 0) - stats.cond_mean.get(0, 0)).abs() < 1e-15);
        assert!((out.inclusion_prob[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let data = DataSet::new(DenseMatrix::zeros(2, 13)).unwrap();
        let prior = SimplePriorParams::new(13, 1.0, 1).unwrap();
        let w = latent_draws(2, 1, 1, 0);
        let err = enumerate_posterior_mean(
            &data,
            &prior,
            &w,
            SignPolicy::AlignToFirst,
            &OracleConfig::default(),
        );
        assert!(matches!(err, Err(Error::OracleCap { p: 13, cap: 12 })));
    }

    #[test]
    fn enumeration_matches_polynomial_method() {
        let model = SpikedModel::new(6, vec![vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.5]], 4.0).unwrap();
        let data = sample_data(&model, 12, 17).unwrap();
        let prior = SimplePriorParams::new(6, 1.0, 1).unwrap();
        let draws = latent_draws(12, 1, 4, 3);
        let oracle = enumerate_posterior_mean(
            &data,
            &prior,
            &draws,
            SignPolicy::AlignToFirst,
            &OracleConfig::default(),
        )
        .unwrap();
        let est = posterior_mean_with_draws(&data, &prior, &draws, SignPolicy::AlignToFirst, None)
            .unwrap();
        let scale = oracle.loadings.max_abs();
        for j in 0..6 {
            assert!((est.eta_hat()[j] - oracle.loadings.get(j, 0)).abs() <= 1e-10 * scale);
            assert!((est.inclusion_prob[j] - oracle.inclusion_prob[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn enumeration_is_permutation_equivariant() {
        let model = SpikedModel::new(5, vec![vec![1.0, 1.0, 0.0, 0.0, 0.0]], 4.0).unwrap();
        let data = sample_data(&model, 9, 2).unwrap();
        let prior = SimplePriorParams::new(5, 0.5, 1).unwrap();
        let draws = latent_draws(9, 1, 3, 6);
        let cfg = OracleConfig::default();
        let base = enumerate_posterior_mean(&data, &prior, &draws, SignPolicy::AlignToFirst, &cfg)
            .unwrap();
        let perm = [4, 2, 0, 1, 3];
        let moved = enumerate_posterior_mean(
            &data.permute_columns(&perm),
            &prior,
            &draws,
            SignPolicy::AlignToFirst,
            &cfg,
        )
        .unwrap();
        for (k, &src) in perm.iter().enumerate() {
            let (a, b) = (moved.loadings.get(k, 0), base.loadings.get(src, 0));
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-300));
        }
    }
}
