//! Empirical contrastive losses and orthonormality regularizers.
//!
//! All covariances here use the 1/m convention: cross_cov(a, b) =
//! (1/m) centered(a)^T centered(b). This is the single normalization used
//! across the crate.
//!
//! The mixed terms of both losses pair a u-v factor with a w-w factor.
//! The displayed sums put the d x d matrix M inside the w-w inner product
//! and the 2d x 2d matrix N inside the u-v one, which does not typecheck
//! (u, v are d-dimensional, w is 2d-dimensional). Two readings are
//! provided:
//!
//! - [`MixedTermConvention::AsPrinted`]: the minimal consistent reading of
//!   the displayed sums. u and v are zero-padded to 2d coordinates before
//!   N is applied, and M acts on the leading d coordinates of w (its
//!   zero-padded 2d x 2d extension).
//! - [`MixedTermConvention::OperatorConsistent`]: the matrices swap
//!   places, giving <u_i, M v_j><w_i, N w_j> (and <u_i, M v_j><w_i, w_j>
//!   in the outer loss). These are the unbiased estimators of the
//!   population traces the bi-level derivation actually minimizes, so this
//!   reading is the one under which truncated-SVD recovery is provable.

use crate::numkit::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmpLossError {
    #[error("batch size mismatch: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("feature shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, EmpLossError>;

/// Which reading of the dimensionally ambiguous mixed terms to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MixedTermConvention {
    AsPrinted,
    OperatorConsistent,
}

/// One batch of features plus the weight matrices entering the losses.
///
/// The w block nominally has 2d features (the rank bound of the inner
/// auxiliary operator). On small discrete spaces the centered function
/// space of Z can be thinner than 2d, in which case a narrower width r
/// with d <= r <= 2d is accepted; N is then r x r.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    /// m x d outputs of the u-net.
    pub u: Matrix,
    /// m x d outputs of the v-net on (y, z).
    pub v: Matrix,
    /// m x r outputs of the w-net, d <= r <= 2d.
    pub w: Matrix,
    /// d x d weight matrix of the outer loss.
    pub m_mat: Matrix,
    /// r x r raw weight matrix of the inner loss; the losses use its
    /// symmetrization (n_raw + n_raw^T)/2.
    pub n_raw: Matrix,
}

impl BatchFeatures {
    fn validate(&self) -> Result<(usize, usize)> {
        let m = self.u.rows();
        if self.v.rows() != m {
            return Err(EmpLossError::BatchMismatch(m, self.v.rows()));
        }
        if self.w.rows() != m {
            return Err(EmpLossError::BatchMismatch(m, self.w.rows()));
        }
        if m < 2 {
            return Err(EmpLossError::TooFewSamples { needed: 2, got: m });
        }
        let d = self.u.cols();
        if self.v.cols() != d {
            return Err(EmpLossError::ShapeMismatch(format!(
                "u has {} features, v has {}",
                d,
                self.v.cols()
            )));
        }
        let r = self.w.cols();
        if r < d || r > 2 * d {
            return Err(EmpLossError::ShapeMismatch(format!(
                "w width must lie in [d, 2d] = [{}, {}], got {}",
                d,
                2 * d,
                r
            )));
        }
        if self.m_mat.rows() != d || self.m_mat.cols() != d {
            return Err(EmpLossError::ShapeMismatch("M must be d x d".into()));
        }
        if self.n_raw.rows() != r || self.n_raw.cols() != r {
            return Err(EmpLossError::ShapeMismatch(format!(
                "N_raw must match the w width {r}"
            )));
        }
        Ok((m, d))
    }
}

/// Subtracts the column mean from every column.
pub fn center(f: &Matrix) -> Matrix {
    let m = f.rows() as f64;
    let mut means = vec![0.0; f.cols()];
    for i in 0..f.rows() {
        for (j, mu) in means.iter_mut().enumerate() {
            *mu += f[(i, j)];
        }
    }
    for mu in &mut means {
        *mu /= m;
    }
    Matrix::from_fn(f.rows(), f.cols(), |i, j| f[(i, j)] - means[j])
}

/// Empirical cross-covariance (1/m) centered(a)^T centered(b).
pub fn cross_cov(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(EmpLossError::BatchMismatch(a.rows(), b.rows()));
    }
    if a.rows() < 2 {
        return Err(EmpLossError::TooFewSamples { needed: 2, got: a.rows() });
    }
    let ca = center(a);
    let cb = center(b);
    Ok(ca.t_matmul(&cb).scale(1.0 / a.rows() as f64))
}

/// Zero-pads a d x d matrix into the top-left block of a 2d x 2d one.
fn pad_top_left(m: &Matrix, size: usize) -> Matrix {
    let mut out = Matrix::zeros(size, size);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn top_left_block(m: &Matrix, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| m[(i, j)])
}

fn sym(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn zero_diagonal(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows().min(m.cols()) {
        out[(i, i)] = 0.0;
    }
    out
}

/// Outer loss value and gradients with respect to U, V, W, M.
#[derive(Debug, Clone)]
pub struct OutLoss {
    pub value: f64,
    pub grad_u: Matrix,
    pub grad_v: Matrix,
    pub grad_w: Matrix,
    pub grad_m: Matrix,
}

/// Inner loss value and gradients; U, V, M are treated as constants, so
/// gradients flow only to W and N_raw.
#[derive(Debug, Clone)]
pub struct InLoss {
    pub value: f64,
    pub grad_w: Matrix,
    pub grad_n_raw: Matrix,
}

/// The three-term outer loss over centered batch features.
pub fn loss_out(bf: &BatchFeatures, convention: MixedTermConvention) -> Result<OutLoss> {
    let (m, d) = bf.validate()?;
    let mf = m as f64;
    let c1 = 1.0 / (mf * (mf - 1.0));
    let c2 = 2.0 / (mf - 1.0);
    let c3 = 2.0 / (mf * (mf - 1.0));

    let cu = center(&bf.u);
    let cv = center(&bf.v);
    let cw = center(&bf.w);
    let r = bf.w.cols();
    let m_mat = &bf.m_mat;

    // A[i,j] = <u_i, M v_j>
    let a = cu.matmul(m_mat).matmul(&cv.transpose());
    let a_off = zero_diagonal(&a);
    let term1: f64 = c1 * a_off.data().iter().map(|x| x * x).sum::<f64>();
    let term2: f64 = -c2 * a.trace();

    // dL/dA from terms 1 and 2
    let mut grad_a = a_off.scale(2.0 * c1);
    for i in 0..m {
        grad_a[(i, i)] -= c2;
    }

    let mut grad_cw = Matrix::zeros(m, r);
    let mut grad_m = Matrix::zeros(d, d);
    let mut grad_cu = Matrix::zeros(m, d);
    let mut grad_cv = Matrix::zeros(m, d);

    let term3 = match convention {
        MixedTermConvention::AsPrinted => {
            // sum_{i != j} <u_i, v_j> (w_i^T Mpad w_j)
            let g_uv = cu.matmul(&cv.transpose());
            let m_pad = pad_top_left(m_mat, r);
            let g_w = cw.matmul(&m_pad).matmul(&cw.transpose());
            let g_uv_off = zero_diagonal(&g_uv);
            let g_w_off = zero_diagonal(&g_w);
            let t3: f64 =
                c3 * g_uv_off.data().iter().zip(g_w_off.data()).map(|(x, y)| x * y).sum::<f64>();
            let p_uv = g_w_off.scale(c3);
            let p_w = g_uv_off.scale(c3);
            grad_cu = grad_cu.add(&p_uv.matmul(&cv));
            grad_cv = grad_cv.add(&p_uv.transpose().matmul(&cu));
            grad_cw = grad_cw
                .add(&p_w.matmul(&cw).matmul(&m_pad.transpose()))
                .add(&p_w.transpose().matmul(&cw).matmul(&m_pad));
            let g_mpad = cw.t_matmul(&p_w.matmul(&cw));
            grad_m = grad_m.add(&top_left_block(&g_mpad, d));
            t3
        }
        MixedTermConvention::OperatorConsistent => {
            // sum_{i != j} <u_i, M v_j> <w_i, w_j>
            let g_ww = cw.matmul(&cw.transpose());
            let g_ww_off = zero_diagonal(&g_ww);
            let t3: f64 =
                c3 * a_off.data().iter().zip(g_ww_off.data()).map(|(x, y)| x * y).sum::<f64>();
            grad_a = grad_a.add(&g_ww_off.scale(c3));
            let q_w = a_off.scale(c3);
            grad_cw = grad_cw.add(&q_w.add(&q_w.transpose()).matmul(&cw));
            t3
        }
    };

    // propagate the A-path
    grad_cu = grad_cu.add(&grad_a.matmul(&cv).matmul(&m_mat.transpose()));
    grad_cv = grad_cv.add(&grad_a.transpose().matmul(&cu).matmul(m_mat));
    grad_m = grad_m.add(&cu.t_matmul(&grad_a.matmul(&cv)));

    Ok(OutLoss {
        value: term1 + term2 + term3,
        // centering is linear; its adjoint is centering again
        grad_u: center(&grad_cu),
        grad_v: center(&grad_cv),
        grad_w: center(&grad_cw),
        grad_m,
    })
}

/// The two-term inner loss; N is the symmetrization of n_raw and the
/// gradient is chained back through that symmetrization.
pub fn loss_in(bf: &BatchFeatures, convention: MixedTermConvention) -> Result<InLoss> {
    let (m, d) = bf.validate()?;
    let mf = m as f64;
    let c1 = 1.0 / (mf * (mf - 1.0));
    let c2 = 2.0 / (mf * (mf - 1.0));

    let cu = center(&bf.u);
    let cv = center(&bf.v);
    let cw = center(&bf.w);
    let w_width = bf.w.cols();
    let n = sym(&bf.n_raw);

    // G[i,j] = <w_i, N w_j>
    let g_n = cw.matmul(&n).matmul(&cw.transpose());
    let g_n_off = zero_diagonal(&g_n);
    let term1: f64 = c1 * g_n_off.data().iter().map(|x| x * x).sum::<f64>();

    let r = g_n_off.scale(2.0 * c1);
    let mut grad_cw =
        r.matmul(&cw).matmul(&n.transpose()).add(&r.transpose().matmul(&cw).matmul(&n));
    let mut grad_n = cw.t_matmul(&r.matmul(&cw));

    let term2 = match convention {
        MixedTermConvention::AsPrinted => {
            // sum_{i != j} <pad(u_i), N pad(v_j)> (w_i^T Mpad w_j)
            let n_top = top_left_block(&n, d);
            let k_uv = cu.matmul(&n_top).matmul(&cv.transpose());
            let k_off = zero_diagonal(&k_uv);
            let m_pad = pad_top_left(&bf.m_mat, w_width);
            let g_w = cw.matmul(&m_pad).matmul(&cw.transpose());
            let g_w_off = zero_diagonal(&g_w);
            let t2: f64 =
                -c2 * k_off.data().iter().zip(g_w_off.data()).map(|(x, y)| x * y).sum::<f64>();
            let s = k_off.scale(-c2);
            grad_cw = grad_cw
                .add(&s.matmul(&cw).matmul(&m_pad.transpose()))
                .add(&s.transpose().matmul(&cw).matmul(&m_pad));
            let gn_top = cu.t_matmul(&g_w_off.scale(-c2).matmul(&cv));
            grad_n = grad_n.add(&pad_top_left(&gn_top, w_width));
            t2
        }
        MixedTermConvention::OperatorConsistent => {
            // sum_{i != j} <u_i, M v_j> <w_i, N w_j>
            let a = cu.matmul(&bf.m_mat).matmul(&cv.transpose());
            let a_off = zero_diagonal(&a);
            let t2: f64 =
                -c2 * a_off.data().iter().zip(g_n_off.data()).map(|(x, y)| x * y).sum::<f64>();
            let s = a_off.scale(-c2);
            grad_cw =
                grad_cw.add(&s.matmul(&cw).matmul(&n.transpose())).add(&s.transpose().matmul(&cw).matmul(&n));
            grad_n = grad_n.add(&cw.t_matmul(&s.matmul(&cw)));
            t2
        }
    };

    Ok(InLoss {
        value: term1 + term2,
        grad_w: center(&grad_cw),
        grad_n_raw: sym(&grad_n),
    })
}

/// Orthonormality penalty ||cross_cov(f, f) - I||_F^2 and its gradient
/// with respect to the raw features.
pub fn omega(features: &Matrix) -> Result<(f64, Matrix)> {
    let m = features.rows();
    if m < 2 {
        return Err(EmpLossError::TooFewSamples { needed: 2, got: m });
    }
    let q = features.cols();
    let cf = center(features);
    let mut cov = cf.t_matmul(&cf).scale(1.0 / m as f64);
    for i in 0..q {
        cov[(i, i)] -= 1.0;
    }
    let value = cov.data().iter().map(|x| x * x).sum::<f64>();
    let grad = cf.matmul(&cov).scale(4.0 / m as f64);
    Ok((value, center(&grad)))
}
