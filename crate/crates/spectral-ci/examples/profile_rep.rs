use spectral_ci::datagen::{gen_gauss_linear, GaussLinConfig};
use spectral_ci::trainer::{train, ArchSpec, TrainConfig};
use spectral_ci::citest;

fn main() {
    let gen = GaussLinConfig::seeded(1, 1, 3, 1.0, 1.0, 0.0, 7);
    let t0 = std::time::Instant::now();
    let data = gen_gauss_linear(&gen, 7000).unwrap();
    eprintln!("gen: {:?}", t0.elapsed());
    let (train_set, test_set) = data.split_at(5000);
    let config = TrainConfig {
        n_steps: 150, n_steps_inner: 2, batch_size: 256,
        arch: ArchSpec::mlp(vec![32]),
        ..TrainConfig::new(2)
    };
    let t1 = std::time::Instant::now();
    let bundle = train(&train_set, &config).unwrap();
    eprintln!("train 150 steps: {:?}", t1.elapsed());
    let t2 = std::time::Instant::now();
    let (t, n) = citest::statistic(&bundle, &test_set).unwrap();
    eprintln!("statistic: {:?} (T = {t:.3}, n = {n})", t2.elapsed());
}
