// scratch rehearsal for the discrete recovery run; superseded by the
// acceptance suite once configs are frozen
use spectral_ci::datagen::{gen_discrete, Dataset};
use spectral_ci::emploss::MixedTermConvention;
use spectral_ci::numkit;
use spectral_ci::oracle::{gap_diagnostic, learned_operator_matrix, pcov_matrix, recovery_fixture};
use spectral_ci::trainer::{train, ArchSpec, TrainConfig, VEncoding};

#[test]
#[ignore]
fn recovery_grid() {
    let joint = recovery_fixture();
    let pcov = pcov_matrix(&joint).unwrap();
    let norm = pcov.op.matrix.frobenius_norm();
    let truncated = numkit::svd(&pcov.op.matrix).unwrap().truncate(2).reconstruct();
    let samples = gen_discrete(&joint, 4000, 1);
    let data = Dataset::from_discrete(&samples, (4, 4, 3));
    for conv in [MixedTermConvention::OperatorConsistent, MixedTermConvention::AsPrinted] {
        for (n_steps, batch_size, lr) in
            [(600usize, 256usize, 1e-2), (1200, 256, 1e-2), (1200, 512, 5e-3)]
        {
            let config = TrainConfig {
                n_steps,
                n_steps_inner: 2,
                batch_size,
                gamma: 1.0,
                lr_out: lr,
                lr_in: lr,
                arch: ArchSpec::linear(),
                mixed_term: conv,
                w_dim: Some(2),
                v_encoding: VEncoding::OneHotProduct,
                seed: 11,
                ..TrainConfig::new(2)
            };
            let t0 = std::time::Instant::now();
            let bundle = train(&data, &config).unwrap();
            let approx = learned_operator_matrix(&bundle, &joint).unwrap();
            let rel = truncated.sub(&approx).frobenius_norm() / norm;
            let gap = gap_diagnostic(&bundle, &joint).unwrap();
            eprintln!(
                "{conv:?} steps {n_steps} batch {batch_size} lr {lr}: rel {rel:.4}, gap {gap:.4}, {:?}",
                t0.elapsed()
            );
        }
    }
}
