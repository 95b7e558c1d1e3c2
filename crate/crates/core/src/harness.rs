//! Experiment runner behind the `spikepost` CLI.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]: it
//! returns a CSV table and a JSON summary, and identical configs produce
//! byte-identical output. Replication `i` uses seed `seed + i`; within a
//! replication the model, the data and the latent draws use separate derived
//! streams.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::metrics::{
    project_to_projection_matrices, sign_aligned_l2_loss, sintheta_check, subspace_frobenius_loss,
    subspace_spectral_loss, SinThetaReport, SubspaceBasis,
};
use crate::model::{format_f64, sample_data, DataSet, SpikedModel};
use crate::numerics::{thin_svd, DenseMatrix};
use crate::oracle::{enumerate_posterior_mean, OracleConfig};
use crate::posterior::{
    latent_draws, posterior_mean_multirank, posterior_mean_with_draws, SignPolicy,
};
use crate::prior::{eigengap_probe, prior_sparsity_probe, FullPriorParams, SimplePriorParams};
use crate::rng;

/// Relative gap the oracle-parity experiment reports as a pass.
pub const ORACLE_PARITY_TOL: f64 = 1e-10;
/// Monte Carlo slack for the eigengap probe.
pub const EIGENGAP_SLACK: f64 = 0.02;

const MODEL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const ESTIMATOR_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Generate,
    Estimate,
    OracleParity,
    PriorProbe,
    EigengapProbe,
    SinthetaSweep,
    Contraction,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Generate => "generate",
            ExperimentKind::Estimate => "estimate",
            ExperimentKind::OracleParity => "oracle-parity",
            ExperimentKind::PriorProbe => "prior-probe",
            ExperimentKind::EigengapProbe => "eigengap-probe",
            ExperimentKind::SinthetaSweep => "sintheta-sweep",
            ExperimentKind::Contraction => "contraction",
        }
    }
}

/// Sample sizes: a single count or a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    One(usize),
    Grid(Vec<usize>),
}

impl SampleSizes {
    pub fn values(&self) -> Vec<usize> {
        match self {
            SampleSizes::One(n) => vec![*n],
            SampleSizes::Grid(v) => v.clone(),
        }
    }
}

/// JSON experiment description. Command-line flags override `seed`, `out`
/// and `threads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub p: usize,
    /// Sparsity of the true spikes.
    pub s: usize,
    /// Rank of the true model and of the estimator's prior.
    pub r: usize,
    pub k: f64,
    /// `‖θ_l‖²` of generated spikes.
    pub spike_norm_sq: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub n: SampleSizes,
    /// Monte Carlo draws `T`.
    pub draws: usize,
    pub seed: Option<u64>,
    pub threads: usize,
    pub replications: usize,
    /// Trials for the prior probes.
    pub trials: usize,
    /// Multiplier `A` of the sparsity probe.
    pub a: f64,
    /// Deviation `t` of the eigengap probe.
    pub t: f64,
    /// Rank `ξ` of the eigengap probe.
    pub xi: usize,
    /// Input data CSV for `estimate`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Adds a `wall_time_s` column; output is then no longer reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            p: 10,
            s: 2,
            r: 1,
            k: 2.0,
            spike_norm_sq: 2.0,
            kappa: 1.0,
            gamma: 1.0,
            n: SampleSizes::One(100),
            draws: crate::posterior::DEFAULT_DRAWS,
            seed: None,
            threads: 1,
            replications: 1,
            trials: 10_000,
            a: 2.0,
            t: 2.0,
            xi: 1,
            data: None,
            out: None,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::invalid("seed", "an explicit seed is required"))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self
            .kind
            .ok_or_else(|| Error::invalid("kind", "experiment kind not set"))?;
        self.seed()?;
        let positive = [
            ("p", self.p),
            ("draws", self.draws),
            ("threads", self.threads),
            ("replications", self.replications),
            ("trials", self.trials),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        let ns = self.n.values();
        if ns.is_empty() || ns.contains(&0) {
            return Err(Error::invalid("n", "sample sizes must be positive"));
        }
        if kind == ExperimentKind::Contraction && ns.len() < 3 {
            return Err(Error::invalid(
                "n",
                "contraction needs at least three sample sizes",
            ));
        }
        if !(self.k > 0.0 && self.kappa > 0.0 && self.gamma > 0.0 && self.spike_norm_sq > 0.0) {
            return Err(Error::invalid(
                "k",
                "k, kappa, gamma and spike_norm_sq must be positive",
            ));
        }
        Ok(())
    }

    fn model(&self, rep_seed: u64) -> Result<SpikedModel> {
        let mut rng = rng::substream(rep_seed, MODEL_STREAM);
        if self.r == 0 {
            return SpikedModel::new(self.p, vec![], self.k);
        }
        SpikedModel::random_sparse(self.p, self.s, self.r, self.spike_norm_sq, self.k, &mut rng)
    }
}

/// First 64 bits of a derived stream, used as a seed for a sub-task.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    rng::substream(seed, stream).next_u64()
}

/// One contraction replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub replication: usize,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub r: usize,
    pub draws: usize,
    pub loss_frobenius: f64,
    pub loss_spectral: f64,
    pub loss_l2: f64,
    pub ess: f64,
    pub wall_time_s: f64,
}

pub const RESULT_HEADER: [&str; 10] = [
    "replication",
    "n",
    "p",
    "s",
    "r",
    "T",
    "loss_frobenius",
    "loss_spectral",
    "loss_l2",
    "ess",
];

/// CSV table plus JSON summary of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub csv: String,
    pub summary: Value,
}

impl ExperimentOutput {
    /// Writes the CSV to `path` and the summary next to it with a `.json`
    /// extension.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        fs::write(path, &self.csv)?;
        let summary_path = summary_path(path);
        fs::write(&summary_path, summary_text(&self.summary)?)?;
        Ok(summary_path)
    }
}

pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn summary_text(summary: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

/// Least-squares slope of `ln(loss)` against `ln(n)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
}

pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::invalid("points", "need at least three points"));
    }
    if points.iter().any(|&(n, l)| !(n > 0.0 && l > 0.0)) {
        return Err(Error::invalid(
            "points",
            "sample sizes and losses must be positive",
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid(
            "points",
            "sample sizes must not all be equal",
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let std_error = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, std_error })
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs an experiment on a worker pool of `config.threads` threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| match config.kind.expect("validated") {
        ExperimentKind::Generate => run_generate(config),
        ExperimentKind::Estimate => run_estimate(config),
        ExperimentKind::OracleParity => run_oracle_parity(config),
        ExperimentKind::PriorProbe => run_prior_probe(config),
        ExperimentKind::EigengapProbe => run_eigengap_probe(config),
        ExperimentKind::SinthetaSweep => run_sintheta_sweep(config),
        ExperimentKind::Contraction => run_contraction(config),
    })
}

fn run_generate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let n = config.n.values()[0];
    let model = config.model(seed)?;
    let data = sample_data(&model, n, seed)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    Ok(ExperimentOutput {
        csv: String::from_utf8(buf).expect("utf-8"),
        summary: json!({
            "kind": "generate",
            "p": model.p(),
            "n": n,
            "seed": seed,
            "spikes": model.spikes(),
        }),
    })
}

fn run_estimate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let data = match &config.data {
        Some(path) => DataSet::read_csv(fs::File::open(path)?)?,
        None => {
            let model = config.model(seed)?;
            sample_data(&model, config.n.values()[0], derive_seed(seed, DATA_STREAM))?
        }
    };
    let prior = SimplePriorParams::new(data.p(), config.kappa, config.r.max(1))?;
    let est = posterior_mean_multirank(&data, &prior, config.draws, seed)?;
    let mut header = vec!["index".to_string()];
    for k in 0..est.rank() {
        header.push(if est.rank() == 1 {
            "eta_hat".to_string()
        } else {
            format!("a_hat_{}", k + 1)
        });
    }
    header.push("inclusion_prob".to_string());
    let rows: Vec<Vec<String>> = (0..data.p())
        .map(|j| {
            let mut row = vec![(j + 1).to_string()];
            row.extend((0..est.rank()).map(|k| format_f64(est.loadings.get(j, k))));
            row.push(format_f64(est.inclusion_prob[j]));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut summary: Value = serde_json::from_str(&est.to_json()?)?;
    summary["warnings"] = json!(est.warnings);
    Ok(ExperimentOutput {
        csv: csv_string(&header_refs, &rows)?,
        summary,
    })
}

/// Max entrywise gap scaled by the reference's largest magnitude.
fn relative_gap(got: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let gap = got
        .iter()
        .zip(reference)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

/// Parity of one random instance between the polynomial method and
/// enumeration: `(loadings gap, inclusion gap)`.
pub fn oracle_parity_instance(
    data: &DataSet,
    prior: &SimplePriorParams,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let latent = latent_draws(data.n(), prior.rank, draws, seed);
    let policy = SignPolicy::AlignToFirst;
    let est = posterior_mean_with_draws(data, prior, &latent, policy, Some(seed))?;
    let reference =
        enumerate_posterior_mean(data, prior, &latent, policy, &OracleConfig::default())?;
    Ok((
        relative_gap(est.loadings.as_slice(), reference.loadings.as_slice()),
        relative_gap(&est.inclusion_prob, &reference.inclusion_prob),
    ))
}

fn run_oracle_parity(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let n = config.n.values()[0];
    let prior = SimplePriorParams::new(config.p, config.kappa, config.r.max(1))?;
    let rows = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<(f64, f64)> {
            let rep_seed = seed.wrapping_add(rep as u64);
            let model = config.model(rep_seed)?;
            let data = sample_data(&model, n, derive_seed(rep_seed, DATA_STREAM))?;
            oracle_parity_instance(
                &data,
                &prior,
                config.draws,
                derive_seed(rep_seed, ESTIMATOR_STREAM),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let max_gap = rows.iter().fold(0.0_f64, |m, r| m.max(r.0).max(r.1));
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(rep, (gl, gi))| {
            vec![
                rep.to_string(),
                config.p.to_string(),
                n.to_string(),
                prior.rank.to_string(),
                config.draws.to_string(),
                format_f64(config.kappa),
                format_f64(*gl),
                format_f64(*gi),
            ]
        })
        .collect();
    Ok(ExperimentOutput {
        csv: csv_string(
            &[
                "replication",
                "p",
                "n",
                "r",
                "T",
                "kappa",
                "gap_loadings",
                "gap_inclusion",
            ],
            &table,
        )?,
        summary: json!({
            "kind": "oracle-parity",
            "replications": config.replications,
            "max_relative_gap": max_gap,
            "tolerance": ORACLE_PARITY_TOL,
            "pass": max_gap <= ORACLE_PARITY_TOL,
        }),
    })
}

fn run_prior_probe(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let params = FullPriorParams::new(config.p, config.gamma, config.k)?;
    let probe = prior_sparsity_probe(&params, config.a, config.r, config.s, config.trials, seed)?;
    let row = vec![
        config.p.to_string(),
        format_f64(config.gamma),
        format_f64(config.a),
        config.r.to_string(),
        config.s.to_string(),
        config.trials.to_string(),
        format_f64(probe.threshold),
        format_f64(probe.empirical),
        format_f64(probe.bound),
        format_f64(probe.slack()),
        probe.holds().to_string(),
    ];
    Ok(ExperimentOutput {
        csv: csv_string(
            &[
                "p",
                "gamma",
                "A",
                "r",
                "s",
                "trials",
                "threshold",
                "empirical",
                "bound",
                "slack",
                "holds",
            ],
            &[row],
        )?,
        summary: json!({
            "kind": "prior-probe",
            "empirical": probe.empirical,
            "bound": probe.bound,
            "slack": probe.slack(),
            "pass": probe.holds(),
        }),
    })
}

fn run_eigengap_probe(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let probe = eigengap_probe(config.s, config.xi, config.trials, config.t, seed)?;
    let holds = probe.empirical >= probe.bound - EIGENGAP_SLACK;
    let row = vec![
        config.s.to_string(),
        config.xi.to_string(),
        format_f64(config.t),
        config.trials.to_string(),
        format_f64(probe.threshold),
        format_f64(probe.empirical),
        format_f64(probe.empirical_singular),
        format_f64(probe.bound),
        holds.to_string(),
    ];
    Ok(ExperimentOutput {
        csv: csv_string(
            &[
                "s",
                "xi",
                "t",
                "trials",
                "threshold",
                "empirical",
                "empirical_singular",
                "bound",
                "holds",
            ],
            &[row],
        )?,
        summary: json!({
            "kind": "eigengap-probe",
            "empirical": probe.empirical,
            "bound": probe.bound,
            "pass": holds,
        }),
    })
}

/// A random spiked matrix `F`, a symmetric perturbation `F̂`, and an
/// interval/gap for which the sin-theta precondition holds by construction.
pub fn random_sintheta_instance(
    p_max: usize,
    rng: &mut rng::SimRng,
) -> (DenseMatrix, DenseMatrix, (f64, f64), f64) {
    let p = rng.random_range(2..=p_max.max(2));
    let r = rng.random_range(1..=p.min(3)).min(p - 1);
    let g = DenseMatrix::from_fn(p, r, |_, _| rng.sample(StandardNormal));
    let basis = thin_svd(&g).u;
    let spikes: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..3.0)).collect();
    let mut f = DenseMatrix::identity(p);
    for (k, lam) in spikes.iter().enumerate() {
        for j in 0..p {
            for i in 0..p {
                f.set(i, j, f.get(i, j) + lam * basis.get(i, k) * basis.get(j, k));
            }
        }
    }
    // perturbation with spectral norm at most eps
    let eps = rng.random_range(0.0..0.3);
    let raw = DenseMatrix::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let sym = raw.add(&raw.transpose()).expect("square");
    let norm = sym.frobenius_norm().max(f64::MIN_POSITIVE);
    let f_hat = f.add(&sym.scaled(eps / norm)).expect("square");
    // spike eigenvalues in [2, 4]; others of F̂ within [1 − eps, 1 + eps]
    let interval = (1.5, 4.5);
    let delta = 1.5 - 1.0 - eps - 1e-9;
    (f, f_hat, interval, delta.max(1e-6))
}

fn run_sintheta_sweep(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed()?;
    let reports = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<(usize, SinThetaReport)> {
            let mut rng = rng::substream(seed, rep as u64);
            let (f, f_hat, interval, delta) = random_sintheta_instance(config.p, &mut rng);
            Ok((f.rows(), sintheta_check(&f, &f_hat, interval, delta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .map(|(rep, (p, r))| {
            vec![
                rep.to_string(),
                p.to_string(),
                format_f64(r.lhs_frobenius),
                format_f64(r.rhs_frobenius),
                format_f64(r.lhs_spectral),
                format_f64(r.rhs_spectral),
                r.holds.to_string(),
            ]
        })
        .collect();
    let all_hold = reports.iter().all(|(_, r)| r.holds);
    Ok(ExperimentOutput {
        csv: csv_string(
            &[
                "replication",
                "p",
                "lhs_frobenius",
                "rhs_frobenius",
                "lhs_spectral",
                "rhs_spectral",
                "holds",
            ],
            &rows,
        )?,
        summary: json!({
            "kind": "sintheta-sweep",
            "instances": reports.len(),
            "pass": all_hold,
        }),
    })
}

/// Sign-aligned `ℓ²` loss for a loading matrix, aligning each column.
fn aligned_loading_loss(est: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..truth.cols() {
        let col = if k < est.cols() {
            est.column(k).to_vec()
        } else {
            vec![0.0; est.rows()]
        };
        total += sign_aligned_l2_loss(&col, truth.column(k))?.powi(2);
    }
    Ok(total.sqrt())
}

/// Runs one contraction replication.
pub fn contraction_replication(
    config: &ExperimentConfig,
    replication: usize,
    n: usize,
) -> Result<ResultRow> {
    let start = Instant::now();
    let rep_seed = config.seed()?.wrapping_add(replication as u64);
    let model = config.model(rep_seed)?;
    let data = sample_data(&model, n, derive_seed(rep_seed, DATA_STREAM))?;
    let prior = SimplePriorParams::new(config.p, config.kappa, config.r.max(1))?;
    let est = posterior_mean_multirank(
        &data,
        &prior,
        config.draws,
        derive_seed(rep_seed, ESTIMATOR_STREAM),
    )?;
    let truth = SubspaceBasis::new(model.principal_basis())?;
    let estimate = SubspaceBasis::new(est.subspace())?;
    Ok(ResultRow {
        replication,
        n,
        p: config.p,
        s: config.s,
        r: config.r,
        draws: config.draws,
        loss_frobenius: subspace_frobenius_loss(&estimate, &truth)?,
        loss_spectral: subspace_spectral_loss(&estimate, &truth)?,
        loss_l2: aligned_loading_loss(&est.loadings, &model.loading_matrix())?,
        ess: est.effective_sample_size,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn run_contraction(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = config.n.values();
    let jobs: Vec<(usize, usize)> = grid
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |rep| (n, rep)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, rep)| contraction_replication(config, rep, n))
        .collect::<Result<Vec<_>>>()?;

    let mut header: Vec<&str> = RESULT_HEADER.to_vec();
    if config.record_timing {
        header.push("wall_time_s");
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.replication.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.s.to_string(),
                r.r.to_string(),
                r.draws.to_string(),
                format_f64(r.loss_frobenius),
                format_f64(r.loss_spectral),
                format_f64(r.loss_l2),
                format_f64(r.ess),
            ];
            if config.record_timing {
                row.push(format_f64(r.wall_time_s));
            }
            row
        })
        .collect();

    let null_loss = (config.spike_norm_sq * config.r.max(1) as f64).sqrt();
    let mut per_n = Vec::new();
    let mut points = Vec::new();
    for &n in &grid {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| r.n == n).collect();
        let l2: Vec<f64> = group.iter().map(|r| r.loss_l2).collect();
        let fro: Vec<f64> = group.iter().map(|r| r.loss_frobenius).collect();
        let spec: Vec<f64> = group.iter().map(|r| r.loss_spectral).collect();
        let sq: Vec<f64> = l2.iter().map(|l| l * l).collect();
        let mse = mean(&sq);
        points.push((n as f64, mse));
        let beats_null = l2.iter().filter(|&&l| l < null_loss).count() as f64 / l2.len() as f64;
        per_n.push(json!({
            "n": n,
            "rate": (config.s * config.r.max(1)) as f64 * (config.p as f64).ln() / n as f64,
            "mean_squared_loss_l2": mse,
            "mean_loss_l2": mean(&l2),
            "median_loss_l2": median(&l2),
            "mean_loss_frobenius": mean(&fro),
            "median_loss_frobenius": median(&fro),
            "mean_loss_spectral": mean(&spec),
            "median_loss_spectral": median(&spec),
            "fraction_beating_null": beats_null,
            "mean_ess": mean(&group.iter().map(|r| r.ess).collect::<Vec<_>>()),
        }));
    }
    let slope = fit_rate_slope(&points)?;
    let decreasing = points.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(ExperimentOutput {
        csv: csv_string(&header, &table)?,
        summary: json!({
            "kind": "contraction",
            "null_loss": null_loss,
            "by_n": per_n,
            "slope": slope.slope,
            // the rate s·log p/n is proportional to 1/n, so this is −slope
            "slope_vs_rate": -slope.slope,
            "slope_std_error": slope.std_error,
            "strictly_decreasing": decreasing,
        }),
    })
}

/// Top-`r` projection of a noisy projection matrix; used by the
/// factor-two check.
pub fn random_projection_pair(
    p: usize,
    r: usize,
    noise: f64,
    rng: &mut rng::SimRng,
) -> Result<(DenseMatrix, SubspaceBasis)> {
    let g = DenseMatrix::from_fn(p, r, |_, _| rng.sample(StandardNormal));
    let v0 = SubspaceBasis::new(thin_svd(&g).u)?;
    let raw = DenseMatrix::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let sym = raw.add(&raw.transpose())?.scaled(0.5 * noise);
    Ok((v0.projection().add(&sym)?, v0))
}

/// Both sides of `‖V̂V̂ᵀ − V₀V₀ᵀ‖_F ≤ 2‖M − V₀V₀ᵀ‖_F`.
pub fn projection_factor_two(m: &DenseMatrix, v0: &SubspaceBasis) -> Result<(f64, f64)> {
    let v_hat = project_to_projection_matrices(m, v0.rank())?;
    let lhs = subspace_frobenius_loss(&v_hat, v0)?;
    let rhs = 2.0 * m.sub(&v0.projection())?.frobenius_norm();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind: Some(kind),
            seed: Some(7),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn slope_of_exact_inverse() {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&n| (n, 3.0 / n))
            .collect();
        let fit = fit_rate_slope(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n| (n, 0.5)).collect();
        assert!(fit_rate_slope(&flat).unwrap().slope.abs() < 1e-15);
        assert!(fit_rate_slope(&pts[..2]).is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let mut cfg = config(ExperimentKind::Generate);
        cfg.p = 3;
        cfg.r = 0;
        cfg.n = SampleSizes::One(5);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = a.csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "x1,x2,x3");
        assert_eq!(lines[1].split(',').count(), 3);
    }

    #[test]
    fn missing_seed_is_usage_error() {
        let mut cfg = config(ExperimentKind::Generate);
        cfg.seed = None;
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn unknown_config_field_rejected() {
        let err = ExperimentConfig::from_json(r#"{"p": 3, "bogus": 1}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let cfg = ExperimentConfig::from_json(r#"{"n": [10, 20, 40], "seed": 3}"#).unwrap();
        assert_eq!(cfg.n.values(), vec![10, 20, 40]);
    }

    #[test]
    fn oracle_parity_small_run() {
        let mut cfg = config(ExperimentKind::OracleParity);
        cfg.p = 8;
        cfg.n = SampleSizes::One(12);
        cfg.draws = 4;
        cfg.replications = 20;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary["pass"], json!(true));
    }

    #[test]
    fn factor_two_on_noisy_projection() {
        let mut rng = rng::from_seed(3);
        let (m, v0) = random_projection_pair(6, 2, 0.3, &mut rng).unwrap();
        let (lhs, rhs) = projection_factor_two(&m, &v0).unwrap();
        assert!(lhs <= rhs);
    }
}
