//! Prior samplers and empirical probes of their sparsity and eigengap.
//!
//! Three priors live here:
//!
//! * the orthogonal-spike prior: Bernoulli candidate supports, then spikes
//!   drawn one at a time inside the orthogonal complement of the earlier
//!   spikes restricted to the new support, each with a uniformly distributed
//!   norm and uniform direction;
//! * the rank-one prior: cardinality `q ~ π`, a uniform support of size `q`,
//!   standard normal entries;
//! * its common-support rank-`r` extension, where an `|S| × r` Gaussian block
//!   fills the shared support.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, ln_sum_exp, norm2, sym_eig, thin_svd, DenseMatrix};
use crate::rng::{self, SimRng};

/// Singular values below this fraction of the largest count as zero when
/// measuring the span of earlier spikes on a new support.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullPriorParams {
    pub p: usize,
    pub gamma: f64,
    pub k: f64,
}

impl FullPriorParams {
    pub fn new(p: usize, gamma: f64, k: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "dimension must be positive"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(
                "gamma",
                format!("must be positive, got {gamma}"),
            ));
        }
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::invalid("k", format!("must be >= 1, got {k}")));
        }
        Ok(Self { p, gamma, k })
    }

    /// `⌊p^{γ/2}⌋`, the number of candidate spikes.
    pub fn candidate_count(&self) -> usize {
        // the nudge keeps exact powers such as 100^{1/2} from flooring down
        ((self.p as f64).powf(self.gamma / 2.0) + 1e-9).floor() as usize
    }

    /// `p^{-(1+γ)}`.
    pub fn inclusion_probability(&self) -> f64 {
        (self.p as f64).powf(-(1.0 + self.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplePriorParams {
    pub p: usize,
    pub kappa: f64,
    pub rank: usize,
}

impl SimplePriorParams {
    pub fn new(p: usize, kappa: f64, rank: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "dimension must be positive"));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(
                "kappa",
                format!("must be positive, got {kappa}"),
            ));
        }
        if rank == 0 {
            return Err(Error::invalid("rank", "must be at least 1"));
        }
        Ok(Self { p, kappa, rank })
    }

    /// `ln π(q)` for `q = 1..=p` (index `q - 1`), normalized over `{1, …, p}`
    /// with `π(q) ∝ p^{-κq}`.
    pub fn log_cardinality_probs(&self) -> Vec<f64> {
        let ln_p = (self.p as f64).ln();
        let unnorm: Vec<f64> = (1..=self.p)
            .map(|q| -self.kappa * q as f64 * ln_p)
            .collect();
        let z = ln_sum_exp(&unnorm);
        unnorm.into_iter().map(|v| v - z).collect()
    }

    pub fn cardinality_probs(&self) -> Vec<f64> {
        self.log_cardinality_probs()
            .into_iter()
            .map(f64::exp)
            .collect()
    }
}

/// Nonzero spikes drawn from a prior together with their supports.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSet {
    pub p: usize,
    /// Full-length spike vectors `η_1 … η_ξ`.
    pub spikes: Vec<Vec<f64>>,
    /// Support set `S_l` each spike was drawn on (sorted, 0-based).
    pub supports: Vec<Vec<usize>>,
    /// Set when a span-dimension decision was within a factor 10 of
    /// [`RANK_CUTOFF`].
    pub near_degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct SpikeJson {
    support: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpikeSetJson {
    p: usize,
    xi: usize,
    spikes: Vec<SpikeJson>,
}

impl SpikeSet {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            spikes: Vec::new(),
            supports: Vec::new(),
            near_degenerate: false,
        }
    }

    /// Number of nonzero spikes `ξ`.
    pub fn xi(&self) -> usize {
        self.spikes.len()
    }

    /// The `p × ξ` loading matrix `A`.
    pub fn loading_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_columns(self.p, &self.spikes).expect("spike lengths are p")
    }

    /// `Γ = AAᵀ + I`.
    pub fn covariance(&self) -> DenseMatrix {
        let a = self.loading_matrix();
        a.outer_gram()
            .add(&DenseMatrix::identity(self.p))
            .expect("square")
    }

    /// `{"p", "xi", "spikes": [{"support", "values"}]}` with `values` the
    /// spike restricted to its support.
    pub fn to_json(&self) -> Result<String> {
        let doc = SpikeSetJson {
            p: self.p,
            xi: self.xi(),
            spikes: self
                .spikes
                .iter()
                .zip(&self.supports)
                .map(|(eta, s)| SpikeJson {
                    support: s.clone(),
                    values: s.iter().map(|&i| eta[i]).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpikeSetJson = serde_json::from_str(text)?;
        let mut out = Self::empty(doc.p);
        for spike in doc.spikes {
            if spike.support.len() != spike.values.len() {
                return Err(Error::DimensionMismatch {
                    context: "spike values",
                    expected: spike.support.len(),
                    actual: spike.values.len(),
                });
            }
            let mut eta = vec![0.0; doc.p];
            for (&i, &v) in spike.support.iter().zip(&spike.values) {
                if i >= doc.p {
                    return Err(Error::invalid("support", format!("index {i} >= p")));
                }
                eta[i] = v;
            }
            out.spikes.push(eta);
            out.supports.push(spike.support);
        }
        if out.xi() != doc.xi {
            return Err(Error::DimensionMismatch {
                context: "xi",
                expected: doc.xi,
                actual: out.xi(),
            });
        }
        Ok(out)
    }
}

/// A vector of length `d` with norm uniform on `[(2K)^{-1/2}, (2K)^{1/2}]`
/// and uniform direction.
pub fn sample_gstar(d: usize, k: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be positive"));
    }
    let hi = (2.0 * k).sqrt();
    let radius = Uniform::new_inclusive(1.0 / hi, hi)
        .map_err(|e| Error::invalid("k", e.to_string()))?
        .sample(rng);
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm2(&z);
        if norm > 0.0 {
            return Ok(z.into_iter().map(|v| radius * v / norm).collect());
        }
    }
}

/// Candidate supports `S_1 … S_{⌊p^{γ/2}⌋}` with independent
/// `Bernoulli(p^{-(1+γ)})` memberships.
pub fn sample_supports(params: &FullPriorParams, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let prob = params.inclusion_probability();
    (0..params.candidate_count())
        .map(|_| {
            (0..params.p)
                .filter(|_| rng.random::<f64>() < prob)
                .collect()
        })
        .collect()
}

/// Orthonormal coordinates for the complement of `span{u_1 … u_l}` inside
/// `ℝ^{|S|}`: the isometry `T_l` and its inverse.
#[derive(Debug, Clone)]
pub struct ComplementIsometry {
    /// `|S| × d` with orthonormal columns spanning the complement.
    basis: DenseMatrix,
    /// Dimension of `span{u_i}` as decided numerically.
    pub span_dim: usize,
    pub near_degenerate: bool,
}

impl ComplementIsometry {
    /// `us` are the earlier spikes restricted to the support, each of length
    /// `support_len`.
    pub fn new(us: &[Vec<f64>], support_len: usize) -> Self {
        let mut near_degenerate = false;
        let mut span: Vec<Vec<f64>> = Vec::new();
        if !us.is_empty() {
            let u = DenseMatrix::from_columns(support_len, us).expect("restricted lengths");
            let svd = thin_svd(&u);
            let largest = svd.singular_values.first().copied().unwrap_or(0.0);
            for (k, &sv) in svd.singular_values.iter().enumerate() {
                if largest == 0.0 {
                    break;
                }
                let rel = sv / largest;
                if rel > RANK_CUTOFF / 10.0 && rel < RANK_CUTOFF * 10.0 {
                    near_degenerate = true;
                }
                if rel > RANK_CUTOFF && span.len() < support_len {
                    span.push(svd.u.column(k).to_vec());
                }
            }
        }
        let span_dim = span.len();
        let target = support_len - span_dim;
        let mut basis = span;
        let mut complement = Vec::with_capacity(target);
        // pivoted Gram–Schmidt over the coordinate vectors, two passes each
        let mut candidates: Vec<Vec<f64>> = (0..support_len)
            .map(|i| {
                let mut e = vec![0.0; support_len];
                e[i] = 1.0;
                e
            })
            .collect();
        for _ in 0..target {
            for c in candidates.iter_mut() {
                for _pass in 0..2 {
                    for b in &basis {
                        let proj = dot(c, b);
                        c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                    }
                }
            }
            let (best, _) = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (i, norm2(c)))
                .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let mut v = candidates.swap_remove(best);
            for _pass in 0..2 {
                for b in &basis {
                    let proj = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = norm2(&v);
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v.clone());
            complement.push(v);
        }
        Self {
            basis: DenseMatrix::from_columns(support_len, &complement).expect("complement lengths"),
            span_dim,
            near_degenerate,
        }
    }

    /// `|S| − l*`.
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// `T_l⁻¹`: coordinates in `ℝ^{dim}` to a vector in the complement.
    pub fn embed(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.rows()];
        for (k, &c) in coords.iter().enumerate() {
            out.iter_mut()
                .zip(self.basis.column(k))
                .for_each(|(o, b)| *o += c * b);
        }
        out
    }

    /// `T_l`: a vector in the complement to its coordinates.
    pub fn coordinates(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| dot(self.basis.column(k), v))
            .collect()
    }
}

/// Sequential orthogonal spikes on the given supports. Zero spikes (empty
/// support or no room left in the complement) are dropped.
pub fn sample_orthogonal_spikes(
    p: usize,
    supports: &[Vec<usize>],
    k: f64,
    rng: &mut SimRng,
) -> Result<SpikeSet> {
    let mut out = SpikeSet::empty(p);
    for support in supports {
        if support.is_empty() {
            continue;
        }
        if let Some(&bad) = support.iter().find(|&&i| i >= p) {
            return Err(Error::invalid(
                "supports",
                format!("index {bad} >= p = {p}"),
            ));
        }
        let us: Vec<Vec<f64>> = out
            .spikes
            .iter()
            .map(|eta| support.iter().map(|&i| eta[i]).collect::<Vec<f64>>())
            .filter(|u| u.iter().any(|&v| v != 0.0))
            .collect();
        let iso = ComplementIsometry::new(&us, support.len());
        out.near_degenerate |= iso.near_degenerate;
        if iso.dim() == 0 {
            continue;
        }
        let draw = sample_gstar(iso.dim(), k, rng)?;
        let local = iso.embed(&draw);
        let mut eta = vec![0.0; p];
        for (&i, v) in support.iter().zip(local) {
            eta[i] = v;
        }
        out.spikes.push(eta);
        out.supports.push(support.clone());
    }
    Ok(out)
}

/// One draw of the orthogonal-spike prior.
pub fn sample_full_prior(params: &FullPriorParams, rng: &mut SimRng) -> Result<SpikeSet> {
    let supports = sample_supports(params, rng);
    sample_orthogonal_spikes(params.p, &supports, params.k, rng)
}

/// Draw from the rank-one / common-support prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplePriorDraw {
    pub p: usize,
    pub support: Vec<usize>,
    /// `|S| × r` block of Gaussian loadings on the support.
    pub block: DenseMatrix,
}

impl SimplePriorDraw {
    /// The full `p × r` loading matrix `A`.
    pub fn loading_matrix(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.p, self.block.cols());
        for (row, &i) in self.support.iter().enumerate() {
            for k in 0..self.block.cols() {
                a.set(i, k, self.block.get(row, k));
            }
        }
        a
    }

    /// Rank-one draws as a one-spike [`SpikeSet`].
    pub fn to_spike_set(&self) -> Result<SpikeSet> {
        if self.block.cols() != 1 {
            return Err(Error::invalid(
                "rank",
                "only rank-one draws form a single spike",
            ));
        }
        Ok(SpikeSet {
            p: self.p,
            spikes: vec![self.loading_matrix().column(0).to_vec()],
            supports: vec![self.support.clone()],
            near_degenerate: false,
        })
    }
}

pub fn sample_simple_prior(params: &SimplePriorParams, rng: &mut SimRng) -> SimplePriorDraw {
    let probs = params.cardinality_probs();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut q = params.p;
    for (idx, pr) in probs.iter().enumerate() {
        acc += pr;
        if u < acc {
            q = idx + 1;
            break;
        }
    }
    let mut support = sample(rng, params.p, q).into_vec();
    support.sort_unstable();
    let block = DenseMatrix::from_fn(q, params.rank, |_, _| rng.sample(StandardNormal));
    SimplePriorDraw {
        p: params.p,
        support,
        block,
    }
}

/// Empirical tail of the union of supports against the analytic bound
/// `exp(−(Aγ/4)·rs·ln p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityProbe {
    pub empirical: f64,
    pub bound: f64,
    pub threshold: f64,
    pub trials: usize,
}

impl SparsityProbe {
    /// Three binomial standard errors at the bound.
    pub fn slack(&self) -> f64 {
        3.0 * (self.bound / self.trials as f64).sqrt()
    }

    pub fn holds(&self) -> bool {
        self.empirical <= self.bound + self.slack()
    }
}

pub fn sparsity_bound(params: &FullPriorParams, a: f64, r: usize, s: usize) -> f64 {
    (-(a * params.gamma / 4.0) * (r * s) as f64 * (params.p as f64).ln()).exp()
}

/// Fraction of prior draws whose nonzero spikes jointly touch at least
/// `A·r·s` coordinates. Trial `i` uses sub-stream `i` of `seed`.
pub fn prior_sparsity_probe(
    params: &FullPriorParams,
    a: f64,
    r: usize,
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<SparsityProbe> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let threshold = a * (r * s) as f64;
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let mut rng = rng::substream(seed, t as u64);
            let draw = sample_full_prior(params, &mut rng)?;
            let mut union = vec![false; params.p];
            for s in &draw.supports {
                s.iter().for_each(|&i| union[i] = true);
            }
            let size = union.iter().filter(|&&b| b).count();
            Ok(usize::from(size as f64 >= threshold))
        })
        .try_reduce(|| 0, |x, y| Ok(x + y))?;
    Ok(SparsityProbe {
        empirical: hits as f64 / trials as f64,
        bound: sparsity_bound(params, a, r, s),
        threshold,
        trials,
    })
}

/// Empirical `P(λ_min(A_Sᵀ A_S) > √s − √ξ − t)` for an `s × ξ` standard
/// Gaussian block, next to the lower bound `1 − 2e^{−t²/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigengapProbe {
    pub empirical: f64,
    pub bound: f64,
    pub threshold: f64,
    /// Same event for the smallest singular value rather than eigenvalue.
    pub empirical_singular: f64,
    pub trials: usize,
}

pub fn eigengap_probe(
    s: usize,
    xi: usize,
    trials: usize,
    t: f64,
    seed: u64,
) -> Result<EigengapProbe> {
    if xi == 0 {
        return Err(Error::invalid("xi", "rank must be at least 1"));
    }
    if s < xi {
        return Err(Error::invalid("s", format!("support size {s} < rank {xi}")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let threshold = (s as f64).sqrt() - (xi as f64).sqrt() - t;
    let (hits, hits_sv) = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<(usize, usize)> {
            let mut rng = rng::substream(seed, trial as u64);
            let block = DenseMatrix::from_fn(s, xi, |_, _| rng.sample(StandardNormal));
            let gram = block.t_matmul(&block)?;
            let (vals, _) = sym_eig(&gram)?;
            let lambda_min = *vals.last().expect("xi >= 1");
            Ok((
                usize::from(lambda_min > threshold),
                usize::from(lambda_min.max(0.0).sqrt() > threshold),
            ))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(EigengapProbe {
        empirical: hits as f64 / trials as f64,
        bound: 1.0 - 2.0 * (-t * t / 2.0).exp(),
        threshold,
        empirical_singular: hits_sv as f64 / trials as f64,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gstar_one_dimensional() {
        let mut rng = rng::from_seed(1);
        let k = 2.0;
        for _ in 0..1000 {
            let v = sample_gstar(1, k, &mut rng).unwrap();
            assert!(v[0].abs() >= (2.0 * k).powf(-0.5) && v[0].abs() <= (2.0 * k).sqrt());
        }
        assert!(sample_gstar(0, k, &mut rng).is_err());
    }

    #[test]
    fn gstar_norm_is_uniform() {
        let mut rng = rng::from_seed(2);
        let k: f64 = 3.0;
        let (lo, hi) = ((2.0 * k).powf(-0.5), (2.0 * k).sqrt());
        let mut norms: Vec<f64> = (0..10_000)
            .map(|_| norm2(&sample_gstar(5, k, &mut rng).unwrap()))
            .collect();
        assert!(norms
            .iter()
            .all(|n| n * n >= 1.0 / (2.0 * k) - 1e-12 && n * n <= 2.0 * k + 1e-12));
        norms.sort_by(f64::total_cmp);
        let m = norms.len() as f64;
        let ks = norms
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x - lo) / (hi - lo);
                (cdf - i as f64 / m)
                    .abs()
                    .max((cdf - (i + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn support_parameters() {
        let params = FullPriorParams::new(100, 1.0, 2.0).unwrap();
        assert_eq!(params.candidate_count(), 10);
        assert!((params.inclusion_probability() - 1e-4).abs() < 1e-18);
        let a = sample_supports(&params, &mut rng::from_seed(3));
        let b = sample_supports(&params, &mut rng::from_seed(3));
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn support_union_mean_is_small() {
        // E|∪S_l| <= 10 * 100 * 1e-4 = 0.1
        let params = FullPriorParams::new(100, 1.0, 2.0).unwrap();
        let mut rng = rng::from_seed(4);
        let trials = 20_000;
        let total: usize = (0..trials)
            .map(|_| {
                sample_supports(&params, &mut rng)
                    .iter()
                    .map(Vec::len)
                    .sum::<usize>()
            })
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 0.1).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn empty_supports_give_empty_set() {
        let set =
            sample_orthogonal_spikes(5, &[vec![], vec![]], 2.0, &mut rng::from_seed(5)).unwrap();
        assert_eq!(set.xi(), 0);
        assert_eq!(set.covariance(), DenseMatrix::identity(5));
    }

    #[test]
    fn single_support_spike() {
        let k = 2.0;
        let set = sample_orthogonal_spikes(6, &[vec![0, 1, 2]], k, &mut rng::from_seed(6)).unwrap();
        assert_eq!(set.xi(), 1);
        let eta = &set.spikes[0];
        assert!(eta[3..].iter().all(|&v| v == 0.0));
        let n2 = dot(eta, eta);
        assert!(n2 >= 1.0 / (2.0 * k) - 1e-12 && n2 <= 2.0 * k + 1e-12);
    }

    #[test]
    fn repeated_singleton_support_is_exhausted() {
        let set =
            sample_orthogonal_spikes(4, &[vec![2], vec![2]], 2.0, &mut rng::from_seed(7)).unwrap();
        assert_eq!(set.xi(), 1);
    }

    #[test]
    fn overlapping_supports_stay_orthogonal() {
        let mut rng = rng::from_seed(8);
        let supports = vec![vec![0, 1, 2, 3], vec![1, 2, 3], vec![0, 3, 4], vec![2, 3]];
        for _ in 0..200 {
            let set = sample_orthogonal_spikes(6, &supports, 3.0, &mut rng).unwrap();
            for l in 0..set.xi() {
                for m in (l + 1)..set.xi() {
                    assert!(dot(&set.spikes[l], &set.spikes[m]).abs() < 1e-12);
                }
                for (i, &v) in set.spikes[l].iter().enumerate() {
                    if v != 0.0 {
                        assert!(set.supports[l].contains(&i));
                    }
                }
            }
        }
    }

    #[test]
    fn complement_isometry_preserves_norms() {
        let mut rng = rng::from_seed(9);
        let us: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let iso = ComplementIsometry::new(&us, 5);
        assert_eq!(iso.span_dim, 2);
        assert_eq!(iso.dim(), 3);
        for _ in 0..100 {
            let c: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let v = iso.embed(&c);
            assert!((norm2(&v) - norm2(&c)).abs() < 1e-12);
            for u in &us {
                assert!(dot(&v, u).abs() < 1e-12);
            }
            let back = iso.coordinates(&v);
            for (a, b) in back.iter().zip(&c) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dependent_spans_count_once() {
        let us = vec![vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0]];
        let iso = ComplementIsometry::new(&us, 3);
        assert_eq!(iso.span_dim, 1);
        assert_eq!(iso.dim(), 2);
    }

    #[test]
    fn cardinality_law_small_case() {
        let params = SimplePriorParams::new(2, 1.0, 1).unwrap();
        let probs = params.cardinality_probs();
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cardinality_frequencies() {
        let params = SimplePriorParams::new(5, 1.0, 1).unwrap();
        let probs = params.cardinality_probs();
        let mut counts = [0usize; 5];
        let mut rng = rng::from_seed(10);
        for _ in 0..100_000 {
            let draw = sample_simple_prior(&params, &mut rng);
            counts[draw.support.len() - 1] += 1;
            let eta = &draw.to_spike_set().unwrap().spikes[0];
            assert!(eta
                .iter()
                .enumerate()
                .all(|(i, &v)| v == 0.0 || draw.support.contains(&i)));
        }
        for (c, p) in counts.iter().zip(&probs) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.01);
        }
    }

    #[test]
    fn full_cardinality_covers_everything() {
        // with tiny kappa all q are nearly equally likely; any q = p draw uses every index
        let params = SimplePriorParams::new(3, 1e-9, 2).unwrap();
        let mut rng = rng::from_seed(11);
        let mut seen = false;
        for _ in 0..200 {
            let draw = sample_simple_prior(&params, &mut rng);
            assert_eq!(draw.block.cols(), 2);
            if draw.support.len() == 3 {
                assert_eq!(draw.support, vec![0, 1, 2]);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn sparsity_bound_formula() {
        let params = FullPriorParams::new(100, 1.0, 2.0).unwrap();
        assert!((sparsity_bound(&params, 2.0, 1, 1) - 0.1).abs() < 1e-15);
        assert!(prior_sparsity_probe(&params, 2.0, 1, 1, 0, 1).is_err());
    }

    #[test]
    fn sparsity_probe_small_run() {
        let params = FullPriorParams::new(50, 1.0, 2.0).unwrap();
        let probe = prior_sparsity_probe(&params, 2.0, 1, 1, 5_000, 12).unwrap();
        assert!(probe.holds(), "{probe:?}");
        let again = prior_sparsity_probe(&params, 2.0, 1, 1, 5_000, 12).unwrap();
        assert_eq!(probe, again);
    }

    #[test]
    fn eigengap_trivial_threshold() {
        let probe = eigengap_probe(9, 4, 500, 5.0, 13).unwrap();
        assert!(probe.threshold <= 0.0);
        assert_eq!(probe.empirical, 1.0);
        assert!(eigengap_probe(3, 4, 10, 1.0, 1).is_err());
    }

    #[test]
    fn spike_set_json_round_trip() {
        let mut rng = rng::from_seed(14);
        let set = sample_orthogonal_spikes(8, &[vec![1, 4, 6], vec![4, 6]], 2.0, &mut rng).unwrap();
        let text = set.to_json().unwrap();
        assert!(text.starts_with("{\"p\":8,\"xi\":2,\"spikes\":[{\"support\":[1,4,6]"));
        let back = SpikeSet::from_json(&text).unwrap();
        assert_eq!(back.spikes, set.spikes);
        assert_eq!(back.supports, set.supports);
    }
}
