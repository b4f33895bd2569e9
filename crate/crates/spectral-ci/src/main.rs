//! Command-line front end: dataset generation, training, testing, the
//! Monte-Carlo benchmark, and a self-test of the numerical invariants.
//!
//! Exit codes: 0 success, 1 self-test failure, 2 usage error, 3 runtime
//! error.

use clap::{Parser, Subcommand};
use spectral_ci::bench::{self, parse_bench_config, parse_generator, parse_kv, parse_train};
use spectral_ci::citest;
use spectral_ci::datagen::Dataset;
use spectral_ci::trainer::{self, RepresentationBundle};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spectral-ci", version, about = "Conditional independence testing with learned spectral features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV from a generator config
    Gen {
        /// flat key-value config: kind = ..., n = ..., seed = ..., plus
        /// the generator's own keys
        #[arg(long)]
        config: PathBuf,
        /// output CSV path
        #[arg(long)]
        out: PathBuf,
        /// overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a representation bundle from a dataset CSV
    Train {
        /// flat key-value training config (d = ..., n_steps = ..., ...)
        #[arg(long)]
        config: PathBuf,
        /// input dataset CSV
        #[arg(long)]
        data: PathBuf,
        /// output bundle path
        #[arg(long)]
        out: PathBuf,
        /// overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the test statistic of a saved bundle on a dataset
    Test {
        /// trained bundle path
        #[arg(long)]
        bundle: PathBuf,
        /// held-out dataset CSV
        #[arg(long)]
        data: PathBuf,
        /// significance level
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// also write the outcome JSON here (always printed to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo benchmark; writes CSV and JSON reports
    Bench {
        /// bench config (scenarios, reps, train.* group)
        #[arg(long)]
        config: PathBuf,
        /// output stem: writes <out>.csv and <out>.json
        #[arg(long)]
        out: PathBuf,
        /// overrides the config's base seed
        #[arg(long)]
        seed: Option<u64>,
        /// overrides the config's repetition count
        #[arg(long)]
        reps: Option<usize>,
        /// overrides the config's significance level
        #[arg(long)]
        alpha: Option<f64>,
        /// worker threads for repetitions (default: all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the built-in oracle/gradient/quantile invariant suites
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let map = parse_kv(&text)?;
            let generator = parse_generator(&map, "")?;
            let n: usize = map
                .get("n")
                .ok_or("missing key 'n'")?
                .parse()
                .map_err(|_| "bad value for 'n'")?;
            let cfg_seed: u64 = match map.get("seed") {
                Some(v) => v.parse().map_err(|_| "bad value for 'seed'")?,
                None => 0,
            };
            let data = generator.generate(n, seed.unwrap_or(cfg_seed))?;
            std::fs::write(&out, data.to_csv())?;
            eprintln!("wrote {} rows to {}", data.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, data, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let map = parse_kv(&text)?;
            let mut train_config = parse_train(&map, "")?;
            if let Some(s) = seed {
                train_config.seed = s;
            }
            let dataset = Dataset::from_csv(&std::fs::read_to_string(&data)?)?;
            let bundle = trainer::train(&dataset, &train_config)?;
            std::fs::write(&out, bundle.to_text())?;
            eprintln!(
                "trained on {} rows (d = {}); bundle written to {}",
                dataset.len(),
                train_config.d,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Test { bundle, data, alpha, out } => {
            let bundle = RepresentationBundle::from_text(&std::fs::read_to_string(&bundle)?)?;
            let dataset = Dataset::from_csv(&std::fs::read_to_string(&data)?)?;
            let (t, n) = citest::statistic(&bundle, &dataset)?;
            let mut outcome = citest::decide(t, bundle.d, alpha, n)?;
            outcome.diagnostics = citest::OutcomeDiagnostics {
                omega_final: bundle.diagnostics.omega_final,
                whiten_jitter: bundle.diagnostics.whiten_jitter,
                degenerate_whitening: bundle.diagnostics.degenerate_whitening,
            };
            let json = serde_json::to_string_pretty(&outcome)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, &json)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { config, out, seed, reps, alpha, threads } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let text = std::fs::read_to_string(&config)?;
            let mut bench_config = parse_bench_config(&text)?;
            if let Some(s) = seed {
                bench_config.base_seed = s;
            }
            if let Some(r) = reps {
                bench_config.repetitions = r;
            }
            if let Some(a) = alpha {
                bench_config.alpha = a;
            }
            let report = bench::run_bench(&bench_config)?;
            let csv_path = out.with_extension("csv");
            let json_path = out.with_extension("json");
            std::fs::write(&csv_path, report.to_csv())?;
            std::fs::write(&json_path, report.to_json())?;
            for row in &report.scenarios {
                eprintln!(
                    "{}: reject rate {:.3} +- {:.3} over {} reps ({:.1} s)",
                    row.scenario, row.reject_rate, row.rate_ci_halfwidth, row.reps, row.seconds
                );
            }
            eprintln!("reports: {} and {}", csv_path.display(), json_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let failures = selftest::run_all();
            if failures == 0 {
                eprintln!("selftest: all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("selftest: {failures} check(s) failed");
                Ok(ExitCode::from(1))
            }
        }
    }
}

mod selftest {
    use spectral_ci::citest::{statistic_from_features, Centering};
    use spectral_ci::datagen::{make_ci_joint, make_dep_joint};
    use spectral_ci::emploss::{self, BatchFeatures, MixedTermConvention};
    use spectral_ci::numkit::{self, Matrix};
    use spectral_ci::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(name: &str, ok: bool, detail: String) -> usize {
        if ok {
            println!("pass  {name}");
            0
        } else {
            println!("FAIL  {name}: {detail}");
            1
        }
    }

    pub fn run_all() -> usize {
        let mut failures = 0;
        failures += quantiles();
        failures += decompositions();
        failures += loss_gradients();
        failures += oracle_ci();
        failures += statistic_invariances();
        failures
    }

    fn quantiles() -> usize {
        let q1 = numkit::chi2_quantile(1, 0.95).unwrap_or(f64::NAN);
        let q4 = numkit::chi2_quantile(4, 0.95).unwrap_or(f64::NAN);
        check(
            "chi-squared quantiles",
            (q1 - 3.841459).abs() < 1e-5 && (q4 - 9.487729).abs() < 1e-5,
            format!("q(1,.95) = {q1}, q(4,.95) = {q4}"),
        )
    }

    fn decompositions() -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let sym = Matrix::from_fn(8, 8, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        let eig = numkit::eig_sym(&sym).unwrap();
        let rec = eig
            .eigenvectors
            .matmul(&Matrix::diag(&eig.eigenvalues))
            .matmul(&eig.eigenvectors.transpose());
        let eig_err = rec.sub(&sym).max_abs();
        let b = Matrix::from_fn(7, 4, |_, _| rng.gen_range(-1.0..1.0));
        let svd = numkit::svd(&b).unwrap();
        let svd_err = svd.reconstruct().sub(&b).max_abs();
        check(
            "eigen/SVD reconstruction",
            eig_err <= 1e-10 && svd_err <= 1e-10,
            format!("eig err {eig_err:.2e}, svd err {svd_err:.2e}"),
        )
    }

    fn loss_gradients() -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand_m =
            |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let bf = BatchFeatures {
            u: rand_m(8, 2),
            v: rand_m(8, 2),
            w: rand_m(8, 4),
            m_mat: rand_m(2, 2),
            n_raw: rand_m(4, 4),
        };
        let out = emploss::loss_out(&bf, MixedTermConvention::AsPrinted).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..8 {
            for j in 0..2 {
                let mut plus = bf.clone();
                plus.u[(i, j)] += h;
                let mut minus = bf.clone();
                minus.u[(i, j)] -= h;
                let fd = (emploss::loss_out(&plus, MixedTermConvention::AsPrinted).unwrap().value
                    - emploss::loss_out(&minus, MixedTermConvention::AsPrinted).unwrap().value)
                    / (2.0 * h);
                let a = out.grad_u[(i, j)];
                worst = worst.max((a - fd).abs() / fd.abs().max(a.abs()).max(1e-6));
            }
        }
        check(
            "outer-loss gradient vs finite differences",
            worst <= 1e-5,
            format!("worst rel err {worst:.2e}"),
        )
    }

    fn oracle_ci() -> usize {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let joint = make_ci_joint((3, 3, 3), seed).unwrap();
            let pcov = oracle::pcov_matrix(&joint).unwrap();
            worst = worst.max(pcov.op.matrix.frobenius_norm());
        }
        let dep = make_dep_joint((3, 3, 3), 1, 0.3).unwrap();
        let dep_norm = oracle::pcov_matrix(&dep).unwrap().op.matrix.frobenius_norm();
        check(
            "partial covariance characterizes conditional independence",
            worst <= 1e-12 && dep_norm > 0.01,
            format!("ci norm {worst:.2e}, dep norm {dep_norm:.3}"),
        )
    }

    fn statistic_invariances() -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Matrix::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = Matrix::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let w = Matrix::from_fn(40, 4, |_, _| rng.gen_range(-1.0..1.0));
        let t = statistic_from_features(&u, &v, &w, Centering::TestSet).unwrap();
        let q = numkit::svd(&Matrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap()
            .left;
        let t_rot =
            statistic_from_features(&u.matmul(&q), &v, &w, Centering::TestSet).unwrap();
        check(
            "statistic rotation invariance",
            t >= 0.0 && (t - t_rot).abs() <= 1e-10,
            format!("t {t}, rotated {t_rot}"),
        )
    }
}
