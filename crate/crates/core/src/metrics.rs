//! Subspace losses, the sin-theta check and projection post-processing.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, sym_eig, thin_svd, DenseMatrix};
use crate::posterior::PosteriorEstimate;
use crate::prior::SpikeSet;

/// A `p × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    u: DenseMatrix,
}

impl SubspaceBasis {
    pub fn new(u: DenseMatrix) -> Result<Self> {
        let gram = u.t_matmul(&u)?;
        let deviation = gram.sub(&DenseMatrix::identity(u.cols()))?.max_abs();
        if deviation > 1e-10 {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { u })
    }

    /// The line through a nonzero vector; the zero vector gives the rank-0
    /// subspace.
    pub fn from_vector(v: &[f64]) -> Self {
        let norm = norm2(v);
        let cols = if norm > 0.0 {
            vec![v.iter().map(|x| x / norm).collect()]
        } else {
            vec![]
        };
        Self {
            u: DenseMatrix::from_columns(v.len(), &cols).expect("one column"),
        }
    }

    pub fn p(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.u
    }

    /// `UUᵀ`.
    pub fn projection(&self) -> DenseMatrix {
        self.u.outer_gram()
    }

    /// `UQ` for an `r × r` matrix `Q`.
    pub fn rotated(&self, q: &DenseMatrix) -> Result<Self> {
        Self::new(self.u.matmul(q)?)
    }
}

fn same_dimension(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<()> {
    if u.p() != v.p() {
        return Err(Error::DimensionMismatch {
            context: "subspace dimension",
            expected: u.p(),
            actual: v.p(),
        });
    }
    Ok(())
}

/// `‖UUᵀ − VVᵀ‖_F`, computed as `√(r_U + r_V − 2‖UᵀV‖_F²)`.
pub fn subspace_frobenius_loss(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<f64> {
    same_dimension(u, v)?;
    // ‖(I − VVᵀ)U‖² + ‖(I − UUᵀ)V‖², which avoids cancellation near zero
    let residual = |a: &DenseMatrix, b: &DenseMatrix| -> Result<f64> {
        if a.cols() == 0 {
            return Ok(0.0);
        }
        if b.cols() == 0 {
            return Ok(a.frobenius_norm().powi(2));
        }
        let coords = b.t_matmul(a)?;
        Ok(a.sub(&b.matmul(&coords)?)?.frobenius_norm().powi(2))
    };
    Ok((residual(&u.u, &v.u)? + residual(&v.u, &u.u)?).sqrt())
}

/// Orthonormal basis of `span[U V]`.
fn joint_basis(u: &SubspaceBasis, v: &SubspaceBasis) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = (0..u.rank()).map(|k| u.u.column(k).to_vec()).collect();
    cols.extend((0..v.rank()).map(|k| v.u.column(k).to_vec()));
    if cols.is_empty() {
        return DenseMatrix::zeros(u.p(), 0);
    }
    let stacked = DenseMatrix::from_columns(u.p(), &cols).expect("lengths agree");
    let svd = thin_svd(&stacked);
    let keep: Vec<Vec<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12)
        .map(|(k, _)| svd.u.column(k).to_vec())
        .collect();
    DenseMatrix::from_columns(u.p(), &keep).expect("lengths agree")
}

/// `‖UUᵀ − VVᵀ‖₂`: the largest absolute eigenvalue of the difference,
/// computed on the joint span where all its nonzero eigenvalues live.
pub fn subspace_spectral_loss(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<f64> {
    same_dimension(u, v)?;
    let b = joint_basis(u, v);
    if b.cols() == 0 {
        return Ok(0.0);
    }
    let bu = b.t_matmul(&u.u)?;
    let bv = b.t_matmul(&v.u)?;
    let diff = bu.outer_gram().sub(&bv.outer_gram())?;
    let (vals, _) = sym_eig(&diff)?;
    Ok(vals.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// `‖UΛUᵀ − VΛVᵀ‖_F` for diagonal `Λ` given by its entries.
pub fn d_lambda(u: &SubspaceBasis, v: &SubspaceBasis, lambda: &[f64]) -> Result<f64> {
    same_dimension(u, v)?;
    for basis in [u, v] {
        if basis.rank() != lambda.len() {
            return Err(Error::DimensionMismatch {
                context: "d_lambda weights",
                expected: basis.rank(),
                actual: lambda.len(),
            });
        }
    }
    let cross = u.u.t_matmul(&v.u)?;
    let own: f64 = lambda.iter().map(|l| l * l).sum();
    let mut shared = 0.0;
    for (i, li) in lambda.iter().enumerate() {
        for (k, lk) in lambda.iter().enumerate() {
            shared += li * lk * cross.get(i, k).powi(2);
        }
    }
    Ok((2.0 * own - 2.0 * shared).max(0.0).sqrt())
}

/// Both sides of both sin-theta inequalities for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinThetaReport {
    pub lhs_frobenius: f64,
    pub rhs_frobenius: f64,
    pub lhs_spectral: f64,
    pub rhs_spectral: f64,
    pub holds: bool,
}

/// Evaluates the sin-theta bounds for the eigenvectors of `f` with
/// eigenvalues in `(a, b)` against the eigenvectors of `f_hat` at the same
/// sorted positions. The remaining eigenvalues of `f_hat` must lie outside
/// `(a − δ, b + δ)`.
pub fn sintheta_check(
    f: &DenseMatrix,
    f_hat: &DenseMatrix,
    interval: (f64, f64),
    delta: f64,
) -> Result<SinThetaReport> {
    if f.rows() != f_hat.rows() || !f.is_square() || !f_hat.is_square() {
        return Err(Error::DimensionMismatch {
            context: "sintheta matrices",
            expected: f.rows(),
            actual: f_hat.rows(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let (a, b) = interval;
    let (vals, vecs) = sym_eig(f)?;
    let (hat_vals, hat_vecs) = sym_eig(f_hat)?;
    let inside: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] > a && vals[i] < b)
        .collect();
    if inside.is_empty() {
        return Err(Error::invalid(
            "interval",
            "no eigenvalue of F lies in (a, b)",
        ));
    }
    let scale = hat_vals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let slack = 1e-12 * scale;
    for (i, &lam) in hat_vals.iter().enumerate() {
        if inside.contains(&i) {
            continue;
        }
        if lam > a - delta + slack && lam < b + delta - slack {
            return Err(Error::EigengapViolated { eigenvalue: lam });
        }
    }
    let cols = |m: &DenseMatrix| -> Vec<Vec<f64>> {
        inside.iter().map(|&i| m.column(i).to_vec()).collect()
    };
    let u1 = SubspaceBasis::new(DenseMatrix::from_columns(f.rows(), &cols(&vecs))?)?;
    let u1_hat = SubspaceBasis::new(DenseMatrix::from_columns(f.rows(), &cols(&hat_vecs))?)?;
    let diff = f.sub(f_hat)?;
    let lhs_frobenius = subspace_frobenius_loss(&u1, &u1_hat)?;
    let lhs_spectral = subspace_spectral_loss(&u1, &u1_hat)?;
    let rhs_frobenius = 2f64.sqrt() / delta * diff.frobenius_norm();
    let (dvals, _) = sym_eig(&diff)?;
    let rhs_spectral = dvals.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / delta;
    let tol = 1e-10;
    Ok(SinThetaReport {
        lhs_frobenius,
        rhs_frobenius,
        lhs_spectral,
        rhs_spectral,
        holds: lhs_frobenius <= rhs_frobenius + tol && lhs_spectral <= rhs_spectral + tol,
    })
}

/// Nearest rank-`r` projection matrix to symmetric `m` in Frobenius norm:
/// the span of its top `r` eigenvectors. Ties follow the eigensolver's
/// deterministic ordering.
pub fn project_to_projection_matrices(m: &DenseMatrix, r: usize) -> Result<SubspaceBasis> {
    if r > m.rows() {
        return Err(Error::invalid(
            "r",
            format!("rank {r} exceeds dimension {}", m.rows()),
        ));
    }
    let (_, vecs) = sym_eig(m)?;
    let cols: Vec<Vec<f64>> = (0..r).map(|k| vecs.column(k).to_vec()).collect();
    SubspaceBasis::new(DenseMatrix::from_columns(m.rows(), &cols)?)
}

/// `min(‖η̂ − θ‖, ‖η̂ + θ‖)`.
pub fn sign_aligned_l2_loss(eta_hat: &[f64], theta: &[f64]) -> Result<f64> {
    if eta_hat.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            context: "sign-aligned loss",
            expected: theta.len(),
            actual: eta_hat.len(),
        });
    }
    let minus: f64 = eta_hat
        .iter()
        .zip(theta)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let plus: f64 = eta_hat
        .iter()
        .zip(theta)
        .map(|(a, b)| (a + b).powi(2))
        .sum();
    Ok(minus.min(plus).sqrt())
}

/// Default rank threshold: half the prior's smallest spike norm `(2K)^{-1/2}`.
pub fn default_rank_threshold(k: f64) -> f64 {
    0.5 * (2.0 * k).powf(-0.5)
}

/// Anything that carries an estimated loading matrix.
pub trait Loadings {
    fn loading_matrix(&self) -> DenseMatrix;
}

impl Loadings for PosteriorEstimate {
    fn loading_matrix(&self) -> DenseMatrix {
        self.loadings.clone()
    }
}

impl Loadings for SpikeSet {
    fn loading_matrix(&self) -> DenseMatrix {
        SpikeSet::loading_matrix(self)
    }
}

impl Loadings for DenseMatrix {
    fn loading_matrix(&self) -> DenseMatrix {
        self.clone()
    }
}

/// Number of singular values of the loading matrix above `threshold`.
pub fn rank_estimate(estimate: &impl Loadings, threshold: f64) -> usize {
    let a = estimate.loading_matrix();
    if a.cols() == 0 {
        return 0;
    }
    thin_svd(&a)
        .singular_values
        .iter()
        .filter(|&&s| s > threshold)
        .count()
}

/// Cosine of the angle between two vectors (0 if either vanishes).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn e(p: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    fn random_basis(p: usize, r: usize, rng: &mut rng::SimRng) -> SubspaceBasis {
        let g = DenseMatrix::from_fn(p, r, |_, _| rng.sample(StandardNormal));
        let svd = thin_svd(&g);
        SubspaceBasis::new(svd.u).unwrap()
    }

    fn random_orthogonal(r: usize, rng: &mut rng::SimRng) -> DenseMatrix {
        random_basis(r, r, rng).matrix().clone()
    }

    #[test]
    fn frobenius_loss_basics() {
        let u = SubspaceBasis::from_vector(&e(3, 0));
        let v = SubspaceBasis::from_vector(&e(3, 1));
        assert!(subspace_frobenius_loss(&u, &u).unwrap() < 1e-15);
        assert!((subspace_frobenius_loss(&u, &v).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((subspace_spectral_loss(&u, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!(subspace_spectral_loss(&u, &u).unwrap() < 1e-15);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = DenseMatrix::from_columns(2, &[vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            SubspaceBasis::new(m),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn losses_match_dense_brute_force() {
        let mut rng = rng::from_seed(31);
        for _ in 0..50 {
            let u = random_basis(6, 2, &mut rng);
            let v = random_basis(6, 2, &mut rng);
            let diff = u.projection().sub(&v.projection()).unwrap();
            let fro = subspace_frobenius_loss(&u, &v).unwrap();
            assert!((fro - diff.frobenius_norm()).abs() < 1e-12);
            let (vals, _) = sym_eig(&diff).unwrap();
            let spec = vals.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            assert!((subspace_spectral_loss(&u, &v).unwrap() - spec).abs() < 1e-12);
            assert!(spec <= fro + 1e-12 && fro <= 2f64.sqrt() * 2f64.sqrt() * spec + 1e-12);

            let lambda = [2.5, 0.7];
            let dense = u
                .matrix()
                .matmul(&DenseMatrix::diagonal(&lambda))
                .unwrap()
                .matmul(&u.matrix().transpose())
                .unwrap()
                .sub(
                    &v.matrix()
                        .matmul(&DenseMatrix::diagonal(&lambda))
                        .unwrap()
                        .matmul(&v.matrix().transpose())
                        .unwrap(),
                )
                .unwrap()
                .frobenius_norm();
            assert!((d_lambda(&u, &v, &lambda).unwrap() - dense).abs() < 1e-12);
            assert!((d_lambda(&u, &v, &[1.0, 1.0]).unwrap() - fro).abs() < 1e-12);
            assert_eq!(d_lambda(&u, &v, &[0.0, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn unitary_invariance() {
        let mut rng = rng::from_seed(32);
        for _ in 0..50 {
            let u = random_basis(7, 3, &mut rng);
            let v = random_basis(7, 3, &mut rng);
            let q = random_orthogonal(3, &mut rng);
            let uq = u.rotated(&q).unwrap();
            let a = subspace_frobenius_loss(&u, &v).unwrap();
            let b = subspace_frobenius_loss(&uq, &v).unwrap();
            assert!((a - b).abs() < 1e-12);
            let a = subspace_spectral_loss(&u, &v).unwrap();
            let b = subspace_spectral_loss(&uq, &v).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let u = SubspaceBasis::from_vector(&e(3, 0));
        let v = SubspaceBasis::from_vector(&e(4, 0));
        assert!(subspace_frobenius_loss(&u, &v).is_err());
        assert!(d_lambda(&u, &u, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sintheta_identical_matrices() {
        let f = DenseMatrix::diagonal(&[2.0, 1.0]);
        let rep = sintheta_check(&f, &f, (1.5, 2.5), 0.4).unwrap();
        assert_eq!(rep.lhs_frobenius, 0.0);
        assert_eq!(rep.rhs_frobenius, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn sintheta_diagonal_perturbation() {
        let f = DenseMatrix::diagonal(&[2.0, 1.0]);
        let f_hat = DenseMatrix::diagonal(&[2.0, 1.0 + 0.1]);
        let rep = sintheta_check(&f, &f_hat, (1.5, 2.5), 0.4).unwrap();
        assert!(rep.lhs_frobenius < 1e-15);
        assert!(rep.holds);
    }

    #[test]
    fn sintheta_rejects_small_gap() {
        let f = DenseMatrix::diagonal(&[2.0, 1.0]);
        let f_hat = DenseMatrix::diagonal(&[2.0, 1.4]);
        assert!(matches!(
            sintheta_check(&f, &f_hat, (1.5, 2.5), 0.4),
            Err(Error::EigengapViolated { eigenvalue }) if (eigenvalue - 1.4).abs() < 1e-15
        ));
    }

    #[test]
    fn projection_of_projection_is_exact() {
        let mut rng = rng::from_seed(33);
        let v = random_basis(5, 2, &mut rng);
        let basis = project_to_projection_matrices(&v.projection(), 2).unwrap();
        assert!(subspace_frobenius_loss(&basis, &v).unwrap() < 1e-12);
        assert!(project_to_projection_matrices(&v.projection(), 6).is_err());
    }

    #[test]
    fn projection_of_zero_respects_factor_two() {
        let v0 = SubspaceBasis::from_vector(&e(3, 2));
        let basis = project_to_projection_matrices(&DenseMatrix::zeros(3, 3), 1).unwrap();
        let lhs = subspace_frobenius_loss(&basis, &v0).unwrap();
        let rhs = 2.0 * v0.projection().frobenius_norm();
        assert!(lhs <= rhs);
    }

    #[test]
    fn sign_aligned_loss() {
        let theta = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        assert_eq!(sign_aligned_l2_loss(&theta, &theta).unwrap(), 0.0);
        assert_eq!(sign_aligned_l2_loss(&neg, &theta).unwrap(), 0.0);
        let zero = sign_aligned_l2_loss(&[0.0; 3], &theta).unwrap();
        assert!((zero - norm2(&theta)).abs() < 1e-15);
        let other = [0.3, 0.1, -0.4];
        let direct = norm2(&[0.7, -2.1, 0.9]).min(norm2(&[1.3, -1.9, 0.1]));
        assert!((sign_aligned_l2_loss(&other, &theta).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn rank_estimates() {
        let k = 2.0;
        let thr = default_rank_threshold(k);
        assert_eq!(rank_estimate(&DenseMatrix::zeros(4, 2), thr), 0);
        let spike = DenseMatrix::from_columns(3, &[vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(rank_estimate(&spike, thr), 1);
        let mut rng = rng::from_seed(34);
        let mut a = DenseMatrix::from_columns(
            6,
            &[
                vec![0.6, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
                vec![0.0; 6],
            ],
        )
        .unwrap();
        for j in 0..3 {
            for i in 0..6 {
                a.set(
                    i,
                    j,
                    a.get(i, j) + 0.01 * rng.random_range(-1.0..1.0) / 6f64.sqrt(),
                );
            }
        }
        assert_eq!(rank_estimate(&a, thr), 2);
    }
}
