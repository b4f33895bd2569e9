//! Exact operators on finite discrete spaces.
//!
//! Everything here is brute force over atoms: covariance and partial
//! covariance matrices in centered orthonormal L2 coordinates, their
//! truncated SVDs, and the representation-gap diagnostic for trained
//! bundles. These are the ground truth the learning pipeline is checked
//! against.
//!
//! Bases are orthonormal under the E[f g] inner product of the marginal,
//! and mean-zero. In these coordinates the covariance of the conditioning
//! variable is the identity, so the partial covariance is literally
//! Sigma_XY - Sigma_XZ Sigma_ZY.

use crate::datagen::DiscreteJoint;
use crate::numkit::{self, Matrix, NumError};
use crate::trainer::{Block, RepresentationBundle, VEncoding};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("marginal needs at least two positive-mass atoms, got {0}")]
    DegenerateMarginal(usize),
    #[error("basis/marginal mismatch: {0}")]
    BasisMismatch(String),
    #[error("truncation rank {d} out of range 1..={max}")]
    BadRank { d: usize, max: usize },
    #[error("bundle expects input width {expected}, encoding provides {got}")]
    EncodingMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("bundle evaluation: {0}")]
    Bundle(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Orthonormal mean-zero basis of the function space of one discrete
/// marginal. Column k holds the k-th basis function's value at each atom;
/// zero-mass atoms keep a row of zeros.
#[derive(Debug, Clone)]
pub struct CenteredBasis {
    pub functions: Matrix,
    pub marginal: Vec<f64>,
}

impl CenteredBasis {
    pub fn support(&self) -> usize {
        self.functions.rows()
    }

    pub fn dim(&self) -> usize {
        self.functions.cols()
    }
}

/// Builds the centered basis by eigendecomposing the weighted centering
/// projector I - sqrt(p) sqrt(p)^T; its unit eigenvectors q give basis
/// functions q / sqrt(p) on the positive-mass atoms.
pub fn centered_basis(marginal: &[f64]) -> Result<CenteredBasis> {
    let support = marginal.len();
    let positive: Vec<usize> = (0..support).filter(|&a| marginal[a] > 0.0).collect();
    let k = positive.len();
    if k < 2 {
        return Err(OracleError::DegenerateMarginal(k));
    }
    let sqrt_p: Vec<f64> = positive.iter().map(|&a| marginal[a].sqrt()).collect();
    let projector =
        Matrix::from_fn(k, k, |i, j| (if i == j { 1.0 } else { 0.0 }) - sqrt_p[i] * sqrt_p[j]);
    let eig = numkit::eig_sym(&projector)?;
    // eigenvalues are 1 (k-1 times) then 0; keep the unit ones
    let mut functions = Matrix::zeros(support, k - 1);
    for col in 0..k - 1 {
        for (row, &atom) in positive.iter().enumerate() {
            functions[(atom, col)] = eig.eigenvectors[(row, col)] / sqrt_p[row];
        }
    }
    Ok(CenteredBasis { functions, marginal: marginal.to_vec() })
}

/// Identifies which marginal an operator matrix is expressed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalId {
    X,
    Z,
    /// the composite (Y, Z) coded y * |Z| + z
    YdotZ,
}

/// Matrix of a cross-covariance operator between two centered bases.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: Matrix,
    pub source: MarginalId,
    pub target: MarginalId,
}

/// [Sigma]_ij = E[phi_i(A) psi_j(B)] by exhaustive summation over the
/// bivariate joint (rows index A atoms, columns B atoms). Centered bases
/// make the mean term vanish.
pub fn cov_matrix(
    joint_ab: &Matrix,
    basis_a: &CenteredBasis,
    basis_b: &CenteredBasis,
) -> Result<Matrix> {
    if basis_a.support() != joint_ab.rows() || basis_b.support() != joint_ab.cols() {
        return Err(OracleError::BasisMismatch(format!(
            "joint is {}x{}, bases have supports {} and {}",
            joint_ab.rows(),
            joint_ab.cols(),
            basis_a.support(),
            basis_b.support()
        )));
    }
    for (name, basis, marg) in [
        ("A", basis_a, row_sums(joint_ab)),
        ("B", basis_b, col_sums(joint_ab)),
    ] {
        for (atom, (&bm, jm)) in basis.marginal.iter().zip(marg).enumerate() {
            if (bm - jm).abs() > 1e-9 {
                return Err(OracleError::BasisMismatch(format!(
                    "{name} marginal differs from basis at atom {atom}: {jm} vs {bm}"
                )));
            }
        }
    }
    let mut out = Matrix::zeros(basis_a.dim(), basis_b.dim());
    for a in 0..joint_ab.rows() {
        for b in 0..joint_ab.cols() {
            let p = joint_ab[(a, b)];
            if p == 0.0 {
                continue;
            }
            for i in 0..basis_a.dim() {
                let fa = basis_a.functions[(a, i)];
                if fa == 0.0 {
                    continue;
                }
                for j in 0..basis_b.dim() {
                    out[(i, j)] += p * fa * basis_b.functions[(b, j)];
                }
            }
        }
    }
    Ok(out)
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

fn col_sums(m: &Matrix) -> Vec<f64> {
    (0..m.cols()).map(|j| (0..m.rows()).map(|i| m[(i, j)]).sum()).collect()
}

fn bivariate_x_ydotz(joint: &DiscreteJoint) -> Matrix {
    let (sx, sy, sz) = joint.sizes();
    let mut m = Matrix::zeros(sx, sy * sz);
    joint.for_each(|x, y, z, p| m[(x, y * sz + z)] += p);
    m
}

fn bivariate_x_z(joint: &DiscreteJoint) -> Matrix {
    let (sx, _, sz) = joint.sizes();
    let mut m = Matrix::zeros(sx, sz);
    joint.for_each(|x, _, z, p| m[(x, z)] += p);
    m
}

fn bivariate_z_ydotz(joint: &DiscreteJoint) -> Matrix {
    let (_, sy, sz) = joint.sizes();
    let mut m = Matrix::zeros(sz, sy * sz);
    joint.for_each(|_, y, z, p| m[(z, y * sz + z)] += p);
    m
}

/// The partial cross-covariance matrix together with the bases it is
/// expressed in.
#[derive(Debug, Clone)]
pub struct PartialCov {
    pub op: OperatorMatrix,
    pub basis_x: CenteredBasis,
    pub basis_ydotz: CenteredBasis,
    pub basis_z: CenteredBasis,
}

/// Exact matrix of Sigma_{X (Y,Z) . Z} = Sigma_XY'' - Sigma_XZ Sigma_ZY''
/// in centered orthonormal coordinates.
pub fn pcov_matrix(joint: &DiscreteJoint) -> Result<PartialCov> {
    let basis_x = centered_basis(&joint.marginal_x())?;
    let basis_ydotz = centered_basis(&joint.marginal_ydotz())?;
    let basis_z = centered_basis(&joint.marginal_z())?;
    let sigma_xy = cov_matrix(&bivariate_x_ydotz(joint), &basis_x, &basis_ydotz)?;
    let sigma_xz = cov_matrix(&bivariate_x_z(joint), &basis_x, &basis_z)?;
    let sigma_zy = cov_matrix(&bivariate_z_ydotz(joint), &basis_z, &basis_ydotz)?;
    let matrix = sigma_xy.sub(&sigma_xz.matmul(&sigma_zy));
    Ok(PartialCov {
        op: OperatorMatrix { matrix, source: MarginalId::YdotZ, target: MarginalId::X },
        basis_x,
        basis_ydotz,
        basis_z,
    })
}

/// Leading `d` singular triples of the partial covariance.
pub fn truncated_svd_pcov(joint: &DiscreteJoint, d: usize) -> Result<numkit::Svd> {
    let pcov = pcov_matrix(joint)?;
    let max = pcov.op.matrix.rows().min(pcov.op.matrix.cols());
    if d == 0 || d > max {
        return Err(OracleError::BadRank { d, max });
    }
    Ok(numkit::svd(&pcov.op.matrix)?.truncate(d))
}

/// Population features of a bundle block over the atoms of its marginal:
/// row a holds the whitened feature vector of atom a. U and W see plain
/// one-hot rows. V sees whichever encoding the bundle was trained with:
/// concatenated (one-hot y, one-hot z) rows, or the one-hot of the
/// composite atom y * |Z| + z.
fn features_on_atoms(
    bundle: &RepresentationBundle,
    block: Block,
    joint: &DiscreteJoint,
) -> Result<Matrix> {
    let (sx, sy, sz) = joint.sizes();
    let (expected, input) = match block {
        Block::U => (bundle.net_u.input_width(), Matrix::identity(sx)),
        Block::W => (bundle.net_w.input_width(), Matrix::identity(sz)),
        Block::V => {
            let input = match bundle.v_encoding {
                VEncoding::OneHotProduct => Matrix::identity(sy * sz),
                VEncoding::Concat => {
                    let mut m = Matrix::zeros(sy * sz, sy + sz);
                    for y in 0..sy {
                        for z in 0..sz {
                            m[(y * sz + z, y)] = 1.0;
                            m[(y * sz + z, sy + z)] = 1.0;
                        }
                    }
                    m
                }
            };
            (bundle.net_v.input_width(), input)
        }
    };
    if expected != input.cols() {
        return Err(OracleError::EncodingMismatch { expected, got: input.cols() });
    }
    bundle.apply(block, &input).map_err(|e| OracleError::Bundle(e.to_string()))
}

/// Population covariance Cov[f(A)] for feature rows over atoms with the
/// given marginal.
fn population_cov(features: &Matrix, marginal: &[f64]) -> Matrix {
    let q = features.cols();
    let mut mean = vec![0.0; q];
    for (a, &p) in marginal.iter().enumerate() {
        for (k, mu) in mean.iter_mut().enumerate() {
            *mu += p * features[(a, k)];
        }
    }
    let mut cov = Matrix::zeros(q, q);
    for (a, &p) in marginal.iter().enumerate() {
        for i in 0..q {
            let fi = features[(a, i)] - mean[i];
            for j in 0..q {
                cov[(i, j)] += p * fi * (features[(a, j)] - mean[j]);
            }
        }
    }
    cov
}

/// Coordinates of feature functions in a centered basis: out[i, k] =
/// E[phi_i(A) f_k(A)]. Any component of f outside the centered span (its
/// mean) is invisible here, which matches comparing operators on the
/// centered subspaces where the partial covariance lives.
fn basis_coordinates(features: &Matrix, basis: &CenteredBasis) -> Matrix {
    let mut out = Matrix::zeros(basis.dim(), features.cols());
    for (a, &p) in basis.marginal.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for i in 0..basis.dim() {
            let phi = basis.functions[(a, i)];
            if phi == 0.0 {
                continue;
            }
            for k in 0..features.cols() {
                out[(i, k)] += p * phi * features[(a, k)];
            }
        }
    }
    out
}

/// The learned operator U M V* expressed in the oracle's centered
/// orthonormal coordinates, via exact change of basis. M is transported
/// into whitened coordinates so the product matches the bundle's features.
pub fn learned_operator_matrix(
    bundle: &RepresentationBundle,
    joint: &DiscreteJoint,
) -> Result<Matrix> {
    let pcov = pcov_matrix(joint)?;
    let feats_u = features_on_atoms(bundle, Block::U, joint)?;
    let feats_v = features_on_atoms(bundle, Block::V, joint)?;
    let cu = basis_coordinates(&feats_u, &pcov.basis_x);
    let cv = basis_coordinates(&feats_v, &pcov.basis_ydotz);
    let m_white = bundle.m_whitened().map_err(|e| OracleError::Bundle(e.to_string()))?;
    Ok(cu.matmul(&m_white).matmul(&cv.transpose()))
}

/// Worst-case representation gap of a trained bundle against the exact
/// rank-d truncated SVD on a finite joint:
///
/// max of: operator-norm error of U M V* against the truncated partial
/// covariance (in exact oracle coordinates), and the deviations of the
/// three population feature covariances from the identity.
pub fn gap_diagnostic(bundle: &RepresentationBundle, joint: &DiscreteJoint) -> Result<f64> {
    let d = bundle.d;
    let pcov = pcov_matrix(joint)?;
    let max_rank = pcov.op.matrix.rows().min(pcov.op.matrix.cols());
    if d > max_rank {
        return Err(OracleError::BadRank { d, max: max_rank });
    }
    let truncated = numkit::svd(&pcov.op.matrix)?.truncate(d).reconstruct();
    let approx = learned_operator_matrix(bundle, joint)?;
    let term_svd = truncated.sub(&approx).operator_norm();

    let feats_u = features_on_atoms(bundle, Block::U, joint)?;
    let feats_v = features_on_atoms(bundle, Block::V, joint)?;
    let feats_w = features_on_atoms(bundle, Block::W, joint)?;
    let id_err = |features: &Matrix, marginal: &[f64], dim: usize| -> Result<f64> {
        let cov = population_cov(features, marginal);
        let diff = cov.sub(&Matrix::identity(dim));
        let eig = numkit::eig_sym(&diff)?;
        Ok(eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs())))
    };
    let term_u = id_err(&feats_u, &joint.marginal_x(), d)?;
    let term_v = id_err(&feats_v, &joint.marginal_ydotz(), d)?;
    let term_w = id_err(&feats_w, &joint.marginal_z(), bundle.net_w.output_width())?;

    Ok(term_svd.max(term_u).max(term_v).max(term_w))
}

/// Evaluates the test-time latent partial covariance of a bundle exactly
/// on a finite joint: C_UV - C_UW C_WV with population covariances. Used
/// by tests that need population-whitened surrogates.
pub fn population_latent_pcov(
    bundle: &RepresentationBundle,
    joint: &DiscreteJoint,
) -> Result<Matrix> {
    let (_, _, sz) = joint.sizes();
    let feats_u = features_on_atoms(bundle, Block::U, joint)?;
    let feats_v = features_on_atoms(bundle, Block::V, joint)?;
    let feats_w = features_on_atoms(bundle, Block::W, joint)?;

    let d = bundle.d;
    let r = feats_w.cols();
    let mut c_uv = Matrix::zeros(d, d);
    let mut c_uw = Matrix::zeros(d, r);
    let mut c_wv = Matrix::zeros(r, d);
    let mut mean_u = vec![0.0; d];
    let mut mean_v = vec![0.0; d];
    let mut mean_w = vec![0.0; r];
    joint.for_each(|x, y, z, p| {
        for k in 0..d {
            mean_u[k] += p * feats_u[(x, k)];
            mean_v[k] += p * feats_v[(y * sz + z, k)];
        }
        for k in 0..r {
            mean_w[k] += p * feats_w[(z, k)];
        }
    });
    joint.for_each(|x, y, z, p| {
        for i in 0..d {
            let fu = feats_u[(x, i)] - mean_u[i];
            for j in 0..d {
                c_uv[(i, j)] += p * fu * (feats_v[(y * sz + z, j)] - mean_v[j]);
            }
            for j in 0..r {
                c_uw[(i, j)] += p * fu * (feats_w[(z, j)] - mean_w[j]);
            }
        }
        for i in 0..r {
            let fw = feats_w[(z, i)] - mean_w[i];
            for j in 0..d {
                c_wv[(i, j)] += p * fw * (feats_v[(y * sz + z, j)] - mean_v[j]);
            }
        }
    });
    Ok(c_uv.sub(&c_uw.matmul(&c_wv)))
}

/// 4x4x3 joint with z-mediated marginals and two strong dependence
/// channels. The marginal tilts run along directions orthogonal to the
/// channel functions, so the channels stay exactly mean-zero and the
/// leading two singular values dominate. This is the standing test
/// problem for end-to-end recovery checks.
pub fn recovery_fixture() -> DiscreteJoint {
    let pz = [0.3, 0.4, 0.3];
    let a1 = [1.0, 1.0, -1.0, -1.0];
    let a2 = [1.0, -1.0, -1.0, 1.0];
    let a3 = [1.0, -1.0, 1.0, -1.0]; // tilt direction for p(x|z)
    let b1 = [1.0, -1.0, 1.0, -1.0];
    let b2 = [1.0, 1.0, -1.0, -1.0];
    let b3 = [1.0, -1.0, -1.0, 1.0]; // tilt direction for p(y|z)
    let (s1, s2) = (0.55, 0.4);
    let tilt = [0.35, 0.0, -0.35];
    let mut probs = vec![0.0; 4 * 4 * 3];
    for z in 0..3 {
        for x in 0..4 {
            let px = (1.0 + tilt[z] * a3[x]) / 4.0;
            for y in 0..4 {
                let py = (1.0 + tilt[z] * b3[y]) / 4.0;
                let factor = 1.0 + s1 * a1[x] * b1[y] + s2 * a2[x] * b2[y];
                probs[(x * 4 + y) * 3 + z] = pz[z] * px * py * factor;
            }
        }
    }
    DiscreteJoint::new((4, 4, 3), probs).expect("fixture is a valid joint")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_ci_joint, make_dep_joint, DiscreteJoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fair_coin_basis() {
        let basis = centered_basis(&[0.5, 0.5]).unwrap();
        assert_eq!(basis.dim(), 1);
        // sign convention picks phi(0) = 1, phi(1) = -1
        assert!((basis.functions[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((basis.functions[(1, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_basis_is_orthonormal() {
        for k in [3, 5, 8] {
            let p = vec![1.0 / k as f64; k];
            let basis = centered_basis(&p).unwrap();
            assert_eq!(basis.dim(), k - 1);
            for i in 0..basis.dim() {
                // mean zero
                let mean: f64 = (0..k).map(|a| p[a] * basis.functions[(a, i)]).sum();
                assert!(mean.abs() <= 1e-12);
                for j in 0..basis.dim() {
                    let gram: f64 = (0..k)
                        .map(|a| p[a] * basis.functions[(a, i)] * basis.functions[(a, j)])
                        .sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((gram - expected).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn skewed_basis_is_orthonormal() {
        let p = [0.7, 0.1, 0.15, 0.05];
        let basis = centered_basis(&p).unwrap();
        for i in 0..3 {
            let mean: f64 = (0..4).map(|a| p[a] * basis.functions[(a, i)]).sum();
            assert!(mean.abs() <= 1e-12);
            for j in 0..3 {
                let gram: f64 =
                    (0..4).map(|a| p[a] * basis.functions[(a, i)] * basis.functions[(a, j)]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_mass_atom_dropped() {
        let basis = centered_basis(&[0.5, 0.0, 0.5]).unwrap();
        assert_eq!(basis.dim(), 1);
        assert_eq!(basis.functions[(1, 0)], 0.0);
    }

    #[test]
    fn degenerate_marginal_rejected() {
        assert!(matches!(centered_basis(&[1.0]), Err(OracleError::DegenerateMarginal(1))));
        assert!(matches!(
            centered_basis(&[1.0, 0.0]),
            Err(OracleError::DegenerateMarginal(1))
        ));
    }

    #[test]
    fn cov_of_product_joint_vanishes() {
        let pa = [0.3, 0.7];
        let pb = [0.2, 0.5, 0.3];
        let joint = Matrix::from_fn(2, 3, |a, b| pa[a] * pb[b]);
        let ba = centered_basis(&pa).unwrap();
        let bb = centered_basis(&pb).unwrap();
        let cov = cov_matrix(&joint, &ba, &bb).unwrap();
        assert!(cov.max_abs() <= 1e-12);
    }

    #[test]
    fn cov_of_copy_joint_is_one() {
        let joint = Matrix::from_fn(2, 2, |a, b| if a == b { 0.5 } else { 0.0 });
        let basis = centered_basis(&[0.5, 0.5]).unwrap();
        let cov = cov_matrix(&joint, &basis, &basis).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cov_matches_function_value_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut raw = Matrix::from_fn(3, 3, |_, _| rng.gen::<f64>() + 0.05);
        let total: f64 = raw.data().iter().sum();
        for v in raw.data_mut() {
            *v /= total;
        }
        let ba = centered_basis(&row_sums(&raw)).unwrap();
        let bb = centered_basis(&col_sums(&raw)).unwrap();
        let cov = cov_matrix(&raw, &ba, &bb).unwrap();
        for i in 0..ba.dim() {
            for j in 0..bb.dim() {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += raw[(a, b)] * ba.functions[(a, i)] * bb.functions[(b, j)];
                    }
                }
                assert!((cov[(i, j)] - s).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn cov_rejects_marginal_mismatch() {
        let joint = Matrix::from_fn(2, 2, |a, b| if a == b { 0.5 } else { 0.0 });
        let wrong = centered_basis(&[0.9, 0.1]).unwrap();
        let right = centered_basis(&[0.5, 0.5]).unwrap();
        assert!(matches!(
            cov_matrix(&joint, &wrong, &right),
            Err(OracleError::BasisMismatch(_))
        ));
    }

    #[test]
    fn pcov_vanishes_on_ci_joints() {
        // the conditional-independence characterization, exercised across
        // sizes and seeds
        for (seed, sizes) in [
            (1u64, (2usize, 2usize, 2usize)),
            (2, (3, 3, 3)),
            (3, (4, 2, 3)),
            (4, (5, 5, 4)),
            (5, (2, 5, 3)),
        ] {
            let joint = make_ci_joint(sizes, seed).unwrap();
            let pcov = pcov_matrix(&joint).unwrap();
            let norm = pcov.op.matrix.frobenius_norm();
            assert!(norm <= 1e-12, "sizes {sizes:?} seed {seed}: norm {norm:.3e}");
        }
    }

    #[test]
    fn pcov_vanishes_when_x_independent_of_rest() {
        // p(x) p(y, z) with y, z dependent between themselves
        let px = [0.4, 0.6];
        let pyz = [[0.3, 0.1], [0.2, 0.4]];
        let mut probs = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    probs.push(px[x] * pyz[y][z]);
                }
            }
        }
        let joint = DiscreteJoint::new((2, 2, 2), probs).unwrap();
        let pcov = pcov_matrix(&joint).unwrap();
        assert!(pcov.op.matrix.max_abs() <= 1e-12);
    }

    #[test]
    fn pcov_copy_pair_with_independent_z() {
        // X = Y fair coin, Z independent fair coin: norm is the plain X,Y
        // covariance, which is 1 in basis coordinates
        let mut probs = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for _z in 0..2 {
                    probs.push(if x == y { 0.25 } else { 0.0 });
                }
            }
        }
        let joint = DiscreteJoint::new((2, 2, 2), probs).unwrap();
        let pcov = pcov_matrix(&joint).unwrap();
        let norm = pcov.op.matrix.frobenius_norm();
        assert!((norm - 1.0).abs() <= 1e-12, "norm {norm}");
    }

    #[test]
    fn pcov_norm_linear_in_dependence_strength() {
        let sizes = (3, 3, 2);
        let seed = 11;
        let mut prev = 0.0;
        let base = make_dep_joint(sizes, seed, 0.4).unwrap();
        let base_norm = pcov_matrix(&base).unwrap().op.matrix.frobenius_norm();
        for step in 0..5 {
            let strength = 0.1 * step as f64;
            let joint = make_dep_joint(sizes, seed, strength).unwrap();
            let norm = pcov_matrix(&joint).unwrap().op.matrix.frobenius_norm();
            if step == 0 {
                assert!(norm <= 1e-12);
            } else {
                assert!(norm > prev + 1e-9, "not strictly increasing at {strength}");
                // linearity: norm(s) = s / 0.4 * norm(0.4)
                let expected = strength / 0.4 * base_norm;
                assert!((norm - expected).abs() <= 1e-9 * (1.0 + expected));
            }
            prev = norm;
        }
    }

    #[test]
    fn truncated_svd_full_rank_reconstructs() {
        let joint = make_dep_joint((3, 3, 2), 13, 0.5).unwrap();
        let pcov = pcov_matrix(&joint).unwrap();
        let max_rank = pcov.op.matrix.rows().min(pcov.op.matrix.cols());
        let svd = truncated_svd_pcov(&joint, max_rank).unwrap();
        let err = svd.reconstruct().sub(&pcov.op.matrix).max_abs();
        assert!(err <= 1e-10);
    }

    #[test]
    fn truncated_svd_rejects_bad_rank() {
        let joint = make_ci_joint((3, 3, 2), 17).unwrap();
        assert!(matches!(truncated_svd_pcov(&joint, 0), Err(OracleError::BadRank { .. })));
        assert!(matches!(truncated_svd_pcov(&joint, 50), Err(OracleError::BadRank { .. })));
    }

    #[test]
    fn rank_one_dependence_has_single_singular_value() {
        // dependence through a single multiplicative channel, z independent
        let px = [0.2, 0.3, 0.5];
        let py = [0.4, 0.4, 0.2];
        let pz = [0.5, 0.5];
        let a = [1.0, -1.0, 0.2];
        let b = [0.8, -0.6, -0.4];
        // center a and b under their marginals so the perturbation is valid
        let am: f64 = px.iter().zip(&a).map(|(p, v)| p * v).sum();
        let bm: f64 = py.iter().zip(&b).map(|(p, v)| p * v).sum();
        let mut probs = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for &pzv in &pz {
                    let factor = 1.0 + 0.5 * (a[x] - am) * (b[y] - bm);
                    probs.push(px[x] * py[y] * pzv * factor);
                }
            }
        }
        let joint = DiscreteJoint::new((3, 3, 2), probs).unwrap();
        let svd = truncated_svd_pcov(&joint, 2).unwrap();
        assert!(svd.singular_values[0] > 0.01);
        assert!(svd.singular_values[1] <= 1e-10, "sigma2 = {}", svd.singular_values[1]);
    }

    #[test]
    fn truncation_beats_random_rank_d_factors() {
        // Eckart-Young at desk scale: no random rank-d triple comes closer
        let joint = make_dep_joint((4, 4, 3), 19, 0.6).unwrap();
        let pcov = pcov_matrix(&joint).unwrap().op.matrix;
        let d = 2;
        let best = numkit::svd(&pcov).unwrap().truncate(d).reconstruct();
        let best_err = best.sub(&pcov).frobenius_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..200 {
            let left = Matrix::from_fn(pcov.rows(), d, |_, _| rng.gen_range(-1.0..1.0));
            let mid = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let right = Matrix::from_fn(pcov.cols(), d, |_, _| rng.gen_range(-1.0..1.0));
            let candidate = left.matmul(&mid).matmul(&right.transpose());
            let err = candidate.sub(&pcov).frobenius_norm();
            assert!(
                err + 1e-12 >= best_err,
                "random triple {trial} beat the truncated SVD: {err} < {best_err}"
            );
        }
    }

    #[test]
    fn recovery_fixture_is_rank_two() {
        let joint = recovery_fixture();
        let pcov = pcov_matrix(&joint).unwrap();
        let svd = numkit::svd(&pcov.op.matrix).unwrap();
        assert!(svd.singular_values[0] > 0.5);
        assert!(svd.singular_values[1] > 0.4);
        assert!(svd.singular_values[2] <= 1e-12);
        // mediation is genuinely present: the correction term is nonzero
        let sigma_xz = cov_matrix(&bivariate_x_z(&joint), &pcov.basis_x, &pcov.basis_z).unwrap();
        assert!(sigma_xz.frobenius_norm() > 0.1);
    }
}

#[cfg(test)]
mod bundle_tests {
    use super::*;
    use crate::featnet::FeatureNet;
    use crate::trainer::{RepresentationBundle, TrainDiagnostics, VEncoding};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Bundle whose features are the exact singular functions of the joint
    /// and whose M is diag(sigma): the definitional zero of the gap.
    pub fn perfect_bundle(joint: &DiscreteJoint, d: usize, w_dim: usize) -> RepresentationBundle {
        let (sx, sy, sz) = joint.sizes();
        let pcov = pcov_matrix(joint).unwrap();
        assert!(w_dim <= pcov.basis_z.dim(), "w_dim exceeds the z function space");
        let svd = numkit::svd(&pcov.op.matrix).unwrap().truncate(d);
        let u_atoms = pcov.basis_x.functions.matmul(&svd.left);
        let v_atoms = pcov.basis_ydotz.functions.matmul(&svd.right);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net_u = FeatureNet::linear(sx, d, &mut rng);
        let mut net_v = FeatureNet::linear(sy * sz, d, &mut rng);
        let mut net_w = FeatureNet::linear(sz, w_dim, &mut rng);
        let fill = |net: &mut FeatureNet, atoms: &Matrix| {
            let (rows, cols) = (atoms.rows(), atoms.cols());
            let mut params = vec![0.0; (rows + 1) * cols];
            for a in 0..rows {
                for k in 0..cols {
                    params[a * cols + k] = atoms[(a, k)];
                }
            }
            net.set_flat_params(&params);
        };
        fill(&mut net_u, &u_atoms);
        fill(&mut net_v, &v_atoms);
        let w_atoms = Matrix::from_fn(sz, w_dim, |a, k| pcov.basis_z.functions[(a, k)]);
        fill(&mut net_w, &w_atoms);
        RepresentationBundle {
            d,
            net_u,
            net_v,
            net_w,
            m_mat: Matrix::diag(&svd.singular_values),
            n_raw: Matrix::zeros(w_dim, w_dim),
            whiten_u: Matrix::identity(d),
            whiten_v: Matrix::identity(d),
            whiten_w: Matrix::identity(w_dim),
            mean_u: vec![0.0; d],
            mean_v: vec![0.0; d],
            mean_w: vec![0.0; w_dim],
            v_encoding: VEncoding::OneHotProduct,
            diagnostics: TrainDiagnostics::default(),
        }
    }

    #[test]
    fn gap_is_zero_for_perfect_bundle() {
        let joint = recovery_fixture();
        let bundle = perfect_bundle(&joint, 2, 2);
        let gap = gap_diagnostic(&bundle, &joint).unwrap();
        assert!(gap <= 1e-10, "gap {gap:.3e}");
    }

    #[test]
    fn gap_sees_feature_scaling() {
        let joint = recovery_fixture();
        let mut bundle = perfect_bundle(&joint, 2, 2);
        // doubling the u features quadruples their covariance
        let mut params = bundle.net_u.flat_params();
        for v in &mut params {
            *v *= 2.0;
        }
        bundle.net_u.set_flat_params(&params);
        let gap = gap_diagnostic(&bundle, &joint).unwrap();
        assert!(gap >= 3.0 - 1e-9, "gap {gap}");
    }

    #[test]
    fn perfect_bundle_has_zero_latent_pcov_on_ci_joint() {
        let joint = crate::datagen::make_ci_joint((3, 3, 3), 5).unwrap();
        let bundle = perfect_bundle(&joint, 2, 2);
        let latent = population_latent_pcov(&bundle, &joint).unwrap();
        assert!(latent.max_abs() <= 1e-10, "latent pcov {:.3e}", latent.max_abs());
    }
}
