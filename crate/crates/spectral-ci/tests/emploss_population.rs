//! Monte-Carlo check that the empirical outer loss is an unbiased
//! estimator of its population objective, with the population side
//! computed by the exact discrete oracle.
//!
//! The population objective is
//!   tr[C_UU M C_VV M^T - 2 C_UV M^T] + 2 tr[M^T U* Sigma_XZ Sigma_ZY V]
//! for fixed feature functions. The w block is a complete orthonormal
//! basis of the centered z-function space, which makes the projector in
//! the mixed term exact; the operator-consistent reading is the one whose
//! expectation matches this objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_ci::datagen::{gen_discrete, make_dep_joint};
use spectral_ci::emploss::{loss_out, BatchFeatures, MixedTermConvention};
use spectral_ci::numkit::Matrix;
use spectral_ci::oracle::{centered_basis, cov_matrix, pcov_matrix};

#[test]
fn outer_loss_is_unbiased_for_population_objective() {
    let sizes = (3usize, 3usize, 3usize);
    let joint = make_dep_joint(sizes, 5, 0.5).unwrap();
    let pcov = pcov_matrix(&joint).unwrap();
    let d = 2;

    // fixed population feature functions: random mixes of basis functions
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mix_u = Matrix::from_fn(pcov.basis_x.dim(), d, |_, _| rng.gen_range(-1.0..1.0));
    let mix_v = Matrix::from_fn(pcov.basis_ydotz.dim(), d, |_, _| rng.gen_range(-1.0..1.0));
    let u_atoms = pcov.basis_x.functions.matmul(&mix_u); // |X| x d
    let v_atoms = pcov.basis_ydotz.functions.matmul(&mix_v); // |Y||Z| x d
    let w_atoms = pcov.basis_z.functions.clone(); // complete: |Z| x (|Z|-1)
    let r = w_atoms.cols();
    let m_mat = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));

    // population covariances of the fixed features (exact, basis coords)
    let c_uu = mix_u.transpose().matmul(&mix_u); // bases are orthonormal
    let c_vv = mix_v.transpose().matmul(&mix_v);
    let bx = centered_basis(&joint.marginal_x()).unwrap();
    let by = centered_basis(&joint.marginal_ydotz()).unwrap();
    let bz = centered_basis(&joint.marginal_z()).unwrap();
    let (_, sy, sz) = sizes;
    let mut joint_xy = Matrix::zeros(sizes.0, sy * sz);
    let mut joint_xz = Matrix::zeros(sizes.0, sz);
    let mut joint_zy = Matrix::zeros(sz, sy * sz);
    joint.for_each(|x, y, z, p| {
        joint_xy[(x, y * sz + z)] += p;
        joint_xz[(x, z)] += p;
        joint_zy[(z, y * sz + z)] += p;
    });
    let sigma_xy = cov_matrix(&joint_xy, &bx, &by).unwrap();
    let sigma_xz = cov_matrix(&joint_xz, &bx, &bz).unwrap();
    let sigma_zy = cov_matrix(&joint_zy, &bz, &by).unwrap();
    let c_uv = mix_u.transpose().matmul(&sigma_xy).matmul(&mix_v);
    // U* Sigma_XZ Sigma_ZY V in feature coordinates
    let correction = mix_u.transpose().matmul(&sigma_xz).matmul(&sigma_zy).matmul(&mix_v);

    let population = c_uu.matmul(&m_mat).matmul(&c_vv).matmul(&m_mat.transpose()).trace()
        - 2.0 * c_uv.matmul(&m_mat.transpose()).trace()
        + 2.0 * m_mat.transpose().matmul(&correction).trace();

    // Monte-Carlo mean of the batch loss with those frozen features
    let batches = 2000;
    let m = 512;
    let mut values = Vec::with_capacity(batches);
    for b in 0..batches {
        let samples = gen_discrete(&joint, m, 1000 + b as u64);
        let u = Matrix::from_fn(m, d, |i, k| u_atoms[(samples[i].0, k)]);
        let v = Matrix::from_fn(m, d, |i, k| {
            v_atoms[(samples[i].1 * sz + samples[i].2, k)]
        });
        let w = Matrix::from_fn(m, r, |i, k| w_atoms[(samples[i].2, k)]);
        let bf = BatchFeatures {
            u,
            v,
            w,
            m_mat: m_mat.clone(),
            n_raw: Matrix::zeros(r, r),
        };
        values.push(loss_out(&bf, MixedTermConvention::OperatorConsistent).unwrap().value);
    }
    let mean: f64 = values.iter().sum::<f64>() / batches as f64;
    let var: f64 =
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    let se = (var / batches as f64).sqrt();
    let dev = (mean - population).abs();
    assert!(
        dev <= 3.0 * se,
        "MC mean {mean:.6} vs population {population:.6}: |dev| {dev:.2e} > 3 SE {:.2e}",
        3.0 * se
    );
}
