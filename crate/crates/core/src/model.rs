//! Ground-truth spiked covariance models and synthetic data.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseMatrix};
use crate::rng::{self, SimRng};

/// Absolute tolerance for spike orthogonality.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// `Σ = Σ_l θ_l θ_lᵀ + I` described by its spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel {
    p: usize,
    spikes: Vec<Vec<f64>>,
    k: f64,
}

impl SpikedModel {
    pub fn new(p: usize, spikes: Vec<Vec<f64>>, k: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "dimension must be positive"));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::invalid("k", format!("must be positive, got {k}")));
        }
        for spike in &spikes {
            if spike.len() != p {
                return Err(Error::DimensionMismatch {
                    context: "spike length",
                    expected: p,
                    actual: spike.len(),
                });
            }
            if spike.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("spikes", "non-finite entry"));
            }
        }
        Ok(Self { p, spikes, k })
    }

    /// `r` spikes with disjoint random supports of size `s`, equal-magnitude
    /// entries with random signs, and `‖θ_l‖² = norm_sq`.
    pub fn random_sparse(
        p: usize,
        s: usize,
        r: usize,
        norm_sq: f64,
        k: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if s == 0 || r * s > p {
            return Err(Error::invalid(
                "s",
                format!("need 1 <= s and r*s <= p (r={r}, s={s}, p={p})"),
            ));
        }
        let mut coords = sample(rng, p, r * s).into_vec();
        let magnitude = (norm_sq / s as f64).sqrt();
        let mut spikes = Vec::with_capacity(r);
        for chunk in coords.chunks_mut(s) {
            chunk.sort_unstable();
            let mut theta = vec![0.0; p];
            for &i in chunk.iter() {
                theta[i] = if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                };
            }
            spikes.push(theta);
        }
        Self::new(p, spikes, k)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.spikes.len()
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn spikes(&self) -> &[Vec<f64>] {
        &self.spikes
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.spikes
            .iter()
            .map(|t| (0..self.p).filter(|&i| t[i] != 0.0).collect())
            .collect()
    }

    /// `[θ_1 … θ_r]`, i.e. `V₀Λ₀^{1/2}`.
    pub fn loading_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_columns(self.p, &self.spikes).expect("lengths checked")
    }

    /// Orthonormal basis `V₀` of the principal subspace (zero spikes skipped).
    pub fn principal_basis(&self) -> DenseMatrix {
        let cols: Vec<Vec<f64>> = self
            .spikes
            .iter()
            .filter_map(|t| {
                let norm = dot(t, t).sqrt();
                (norm > 0.0).then(|| t.iter().map(|v| v / norm).collect())
            })
            .collect();
        DenseMatrix::from_columns(self.p, &cols).expect("lengths checked")
    }

    fn check_orthogonal(&self) -> Result<()> {
        for l in 0..self.spikes.len() {
            for m in (l + 1)..self.spikes.len() {
                let inner = dot(&self.spikes[l], &self.spikes[m]);
                if inner.abs() > ORTHOGONALITY_TOL {
                    return Err(Error::NotOrthogonal {
                        first: l,
                        second: m,
                        inner,
                    });
                }
            }
        }
        Ok(())
    }
}

/// `Σ = Σ_l θ_l θ_lᵀ + I`.
pub fn build_covariance(model: &SpikedModel) -> Result<DenseMatrix> {
    model.check_orthogonal()?;
    let p = model.p;
    let mut sigma = DenseMatrix::identity(p);
    for theta in &model.spikes {
        for j in 0..p {
            if theta[j] == 0.0 {
                continue;
            }
            for i in 0..p {
                sigma.set(i, j, sigma.get(i, j) + theta[i] * theta[j]);
            }
        }
    }
    Ok(sigma)
}

/// Observations `X` (n × p, one row per sample) and the seed that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub x: DenseMatrix,
    pub seed: Option<u64>,
}

impl DataSet {
    pub fn new(x: DenseMatrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::invalid("n", "data set needs at least one row"));
        }
        Ok(Self { x, seed: None })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// Same observations with columns reordered: new column `k` is old
    /// column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let x = DenseMatrix::from_fn(self.n(), self.p(), |i, k| self.x.get(i, perm[k]));
        Self { x, seed: self.seed }
    }

    /// Writes `x1,...,xp` header plus one row per observation with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.p()).map(|j| format!("x{j}")))?;
        for i in 0..self.n() {
            w.write_record((0..self.p()).map(|j| format_f64(self.x.get(i, j))))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let p = rdr.headers()?.len();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid("data", format!("cannot parse `{field}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    context: "CSV row",
                    expected: p,
                    actual: row.len(),
                });
            }
            rows.push(row);
        }
        Self::new(DenseMatrix::from_rows(&rows)?)
    }
}

/// Shortest formatting that still round-trips: 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draws `n` observations through the latent form `X_i = Σ_l θ_l W_il + Z_i`.
pub fn sample_data(model: &SpikedModel, n: usize, seed: u64) -> Result<DataSet> {
    sample_data_with_latent(model, n, seed).map(|(data, _)| data)
}

/// As [`sample_data`], also returning the latent factors `W` (n × r).
pub fn sample_data_with_latent(
    model: &SpikedModel,
    n: usize,
    seed: u64,
) -> Result<(DataSet, DenseMatrix)> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be positive"));
    }
    model.check_orthogonal()?;
    let (p, r) = (model.p, model.rank());
    let mut rng = rng::from_seed(seed);
    let mut x = DenseMatrix::zeros(n, p);
    let mut latent = DenseMatrix::zeros(n, r);
    let mut row = vec![0.0; p];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for (l, theta) in model.spikes.iter().enumerate() {
            let w: f64 = rng.sample(StandardNormal);
            latent.set(i, l, w);
            for (acc, t) in row.iter_mut().zip(theta) {
                *acc += t * w;
            }
        }
        for (j, acc) in row.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            x.set(i, j, acc + z);
        }
    }
    Ok((
        DataSet {
            x,
            seed: Some(seed),
        },
        latent,
    ))
}

/// Outcome of checking a model against the parameter space `𝒢(p, s, r)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSpaceReport {
    pub violations: Vec<String>,
}

impl ParameterSpaceReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_parameter_space(model: &SpikedModel, s: usize, r: usize) -> ParameterSpaceReport {
    let mut violations = Vec::new();
    if model.rank() != r {
        violations.push(format!(
            "rank: model has {} spikes, expected {r}",
            model.rank()
        ));
    }
    for l in 0..model.rank() {
        for m in (l + 1)..model.rank() {
            let inner = dot(&model.spikes[l], &model.spikes[m]);
            if inner.abs() > ORTHOGONALITY_TOL {
                violations.push(format!(
                    "orthogonality: spikes {l} and {m} have inner product {inner:e}"
                ));
            }
        }
    }
    let k = model.k;
    for (l, theta) in model.spikes.iter().enumerate() {
        let norm_sq = dot(theta, theta);
        if !(norm_sq > 1.0 / k && norm_sq < k) {
            violations.push(format!(
                "norm: spike {l} has squared norm {norm_sq} outside ({}, {k})",
                1.0 / k
            ));
        }
        let support = theta.iter().filter(|v| **v != 0.0).count();
        if support > s {
            violations.push(format!(
                "sparsity: spike {l} has support size {support} > {s}"
            ));
        }
    }
    ParameterSpaceReport { violations }
}
