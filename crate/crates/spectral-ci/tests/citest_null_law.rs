//! Distributional check of the statistic under the null with oracle
//! features: exactly population-whitened, with zero conditional mean
//! given Z (the structure the true singular functions have — the partial
//! covariance annihilates pure-z functions). Over repeated test sets the
//! empirical law of the statistic must track chi-squared(d^2).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_ci::bench::ks_distance_chi2;
use spectral_ci::citest::{statistic_from_features, Centering};
use spectral_ci::datagen::{gen_discrete, make_ci_joint, DiscreteJoint};
use spectral_ci::numkit::{self, Matrix};
use spectral_ci::oracle::centered_basis;

/// Orthonormal (population) functions on `atoms` with zero mean under
/// every conditional p(atom | z); `cond[z][atom]` are those conditionals
/// and `marginal` the atom marginal.
fn conditional_mean_zero_features(
    cond: &[Vec<f64>],
    marginal: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Matrix {
    let atoms = marginal.len();
    // null space of the constraint matrix C[z, atom] = p(atom | z), via
    // the zero eigenvectors of C^T C
    let constraints = Matrix::from_fn(cond.len(), atoms, |z, a| cond[z][a]);
    let gram = constraints.t_matmul(&constraints);
    let eig = numkit::eig_sym(&gram).unwrap();
    let rank = eig.eigenvalues.iter().filter(|&&s| s > 1e-10).count();
    let null_dim = atoms - rank;
    assert!(null_dim >= count, "need {count} free functions, have {null_dim}");
    // random mix inside the null space
    let mix = Matrix::from_fn(null_dim, count, |_, _| rng.gen_range(-1.0..1.0));
    let null_basis = Matrix::from_fn(atoms, null_dim, |a, k| eig.eigenvectors[(a, rank + k)]);
    let raw = null_basis.matmul(&mix);
    // orthonormalize under the population inner product
    let gram = Matrix::from_fn(count, count, |i, j| {
        (0..atoms).map(|a| marginal[a] * raw[(a, i)] * raw[(a, j)]).sum()
    });
    let fix = numkit::inv_sqrt_spd(&gram, 0.0).unwrap();
    raw.matmul(&fix)
}

#[test]
fn null_statistic_tracks_chi_squared() {
    let sizes = (6usize, 4usize, 3usize);
    let joint = make_ci_joint(sizes, 3).unwrap();
    let d = 2;
    let n = 2000;
    let reps = 300;

    let (sx, sy, sz) = sizes;
    let pz = joint.marginal_z();
    // conditionals p(x|z) and p(y,z-atom | z) = p(y|z) on the z-slice
    let px_given: Vec<Vec<f64>> = (0..sz)
        .map(|z| {
            let slice: Vec<f64> = (0..sx)
                .map(|x| (0..sy).map(|y| joint.prob(x, y, z)).sum::<f64>())
                .collect();
            let total: f64 = slice.iter().sum();
            slice.iter().map(|p| p / total).collect()
        })
        .collect();
    // conditional over composite atoms (y, z'): zero unless z' == z
    let pv_given: Vec<Vec<f64>> = (0..sz)
        .map(|z| {
            let mut slice = vec![0.0; sy * sz];
            let total: f64 = (0..sx)
                .flat_map(|x| (0..sy).map(move |y| (x, y)))
                .map(|(x, y)| joint.prob(x, y, z))
                .sum();
            for y in 0..sy {
                let pyz: f64 = (0..sx).map(|x| joint.prob(x, y, z)).sum();
                slice[y * sz + z] = pyz / total;
            }
            slice
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u_atoms =
        conditional_mean_zero_features(&px_given, &joint.marginal_x(), d, &mut rng);
    let v_atoms =
        conditional_mean_zero_features(&pv_given, &joint.marginal_ydotz(), d, &mut rng);
    // complete orthonormal basis of the centered z-function space
    let w_atoms = centered_basis(&pz).unwrap().functions;
    let r = w_atoms.cols();

    let mut stats = Vec::with_capacity(reps);
    for rep in 0..reps {
        let samples = gen_discrete(&joint, n, 10_000 + rep as u64);
        let u = Matrix::from_fn(n, d, |i, k| u_atoms[(samples[i].0, k)]);
        let v = Matrix::from_fn(n, d, |i, k| v_atoms[(samples[i].1 * sz + samples[i].2, k)]);
        let w = Matrix::from_fn(n, r, |i, k| w_atoms[(samples[i].2, k)]);
        stats.push(statistic_from_features(&u, &v, &w, Centering::TestSet).unwrap());
    }
    let ks = ks_distance_chi2(&stats, d * d);
    assert!(ks <= 0.12, "KS distance from chi2({}) is {ks:.4}", d * d);

    // sanity: the same features detect dependence on a perturbed joint
    let dep = dependent_variant(&joint);
    let samples = gen_discrete(&dep, n, 999);
    let u = Matrix::from_fn(n, d, |i, k| u_atoms[(samples[i].0, k)]);
    let v = Matrix::from_fn(n, d, |i, k| v_atoms[(samples[i].1 * sz + samples[i].2, k)]);
    let w = Matrix::from_fn(n, r, |i, k| w_atoms[(samples[i].2, k)]);
    let t_dep = statistic_from_features(&u, &v, &w, Centering::TestSet).unwrap();
    let critical = numkit::chi2_quantile(d * d, 0.95).unwrap();
    assert!(
        t_dep > critical,
        "dependent variant should exceed the critical value: {t_dep:.2} vs {critical:.2}"
    );
}

/// Strong multiplicative dependence layered on the CI joint.
fn dependent_variant(joint: &DiscreteJoint) -> DiscreteJoint {
    let (sx, sy, sz) = joint.sizes();
    let mut probs = Vec::with_capacity(sx * sy * sz);
    for x in 0..sx {
        for y in 0..sy {
            for z in 0..sz {
                let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                probs.push(joint.prob(x, y, z) * (1.0 + 0.8 * sign));
            }
        }
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    DiscreteJoint::new((sx, sy, sz), probs).unwrap()
}
