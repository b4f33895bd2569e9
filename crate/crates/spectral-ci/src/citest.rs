//! The conditional-independence test.
//!
//! The statistic is n times the squared Frobenius norm of the latent
//! partial covariance C_UV - C_UW C_WV of whitened features on the held
//! -out set, compared against the 1-alpha quantile of chi-squared with
//! d^2 degrees of freedom. Rejection is on T >= critical value.

use crate::datagen::Dataset;
use crate::emploss;
use crate::numkit::{self, Matrix, NumError};
use crate::trainer::{self, Block, RepresentationBundle, TrainConfig, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CiTestError {
    #[error("test set must hold at least 2 rows, got {0}")]
    TestSetTooSmall(usize),
    #[error("significance level must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, CiTestError>;

/// How features are centered before forming test-set covariances.
/// The default re-centers on the test set; the alternative keeps the
/// training means baked into the bundle's apply step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Centering {
    TestSet,
    TrainingMeans,
}

/// Bundle health indicators carried into the outcome record.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct OutcomeDiagnostics {
    pub omega_final: [f64; 3],
    pub whiten_jitter: [f64; 3],
    pub degenerate_whitening: bool,
}

/// Full test decision, serializable as a flat JSON record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub n_test: usize,
    pub diagnostics: OutcomeDiagnostics,
}

/// Statistic from feature matrices directly: n || C_uv - C_uw C_wv ||_F^2
/// with 1/n covariances.
pub fn statistic_from_features(
    u: &Matrix,
    v: &Matrix,
    w: &Matrix,
    centering: Centering,
) -> Result<f64> {
    let n = u.rows();
    if n < 2 {
        return Err(CiTestError::TestSetTooSmall(n));
    }
    let (cu, cv, cw) = match centering {
        Centering::TestSet => (emploss::center(u), emploss::center(v), emploss::center(w)),
        Centering::TrainingMeans => (u.clone(), v.clone(), w.clone()),
    };
    let scale = 1.0 / n as f64;
    let c_uv = cu.t_matmul(&cv).scale(scale);
    let c_uw = cu.t_matmul(&cw).scale(scale);
    let c_wv = cw.t_matmul(&cv).scale(scale);
    let latent = c_uv.sub(&c_uw.matmul(&c_wv));
    Ok(n as f64 * latent.frobenius_norm().powi(2))
}

/// The test statistic of a whitened bundle on a held-out set, with the
/// default test-set re-centering.
pub fn statistic(bundle: &RepresentationBundle, test_set: &Dataset) -> Result<(f64, usize)> {
    statistic_with_centering(bundle, test_set, Centering::TestSet)
}

pub fn statistic_with_centering(
    bundle: &RepresentationBundle,
    test_set: &Dataset,
    centering: Centering,
) -> Result<(f64, usize)> {
    let n = test_set.len();
    if n < 2 {
        return Err(CiTestError::TestSetTooSmall(n));
    }
    let u = bundle.apply(Block::U, &test_set.x)?;
    let v = bundle.apply(Block::V, &trainer::v_input(test_set, bundle.v_encoding)?)?;
    let w = bundle.apply(Block::W, &test_set.z)?;
    Ok((statistic_from_features(&u, &v, &w, centering)?, n))
}

/// Chi-squared(d^2) decision at level alpha; rejection on the boundary.
pub fn decide(t: f64, d: usize, alpha: f64, n: usize) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CiTestError::BadAlpha(alpha));
    }
    let dof = d * d;
    let critical_value = numkit::chi2_quantile(dof, 1.0 - alpha)?;
    Ok(TestOutcome {
        statistic: t,
        dof,
        critical_value,
        p_value: numkit::chi2_sf(dof, t),
        alpha,
        reject: t >= critical_value,
        n_test: n,
        diagnostics: OutcomeDiagnostics::default(),
    })
}

/// Train on the training split, whiten, compute the statistic on the test
/// split, and decide. Bundle diagnostics ride along in the outcome.
pub fn run_test(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    alpha: f64,
) -> Result<TestOutcome> {
    let bundle = trainer::train(train_set, config)?;
    let (t, n) = statistic(&bundle, test_set)?;
    let mut outcome = decide(t, config.d, alpha, n)?;
    outcome.diagnostics = OutcomeDiagnostics {
        omega_final: bundle.diagnostics.omega_final,
        whiten_jitter: bundle.diagnostics.whiten_jitter,
        degenerate_whitening: bundle.diagnostics.degenerate_whitening,
    };
    Ok(outcome)
}
