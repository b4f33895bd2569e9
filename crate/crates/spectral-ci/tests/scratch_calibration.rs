// scratch rehearsal for null calibration and power; superseded by the
// acceptance suite once configs are frozen
use spectral_ci::bench::{
    derive_seed, ks_distance_chi2, run_scenario, BenchConfig, GeneratorKind, Scenario,
};
use spectral_ci::datagen::Hypothesis;
use spectral_ci::trainer::{ArchSpec, TrainConfig};

fn gauss_scenario_scaled(id: &str, ab_scale: f64, c_scale: f64, n_total: usize) -> Scenario {
    Scenario {
        id: id.into(),
        hypothesis: if c_scale == 0.0 { Hypothesis::Null } else { Hypothesis::Alternative },
        n_total,
        generator: GeneratorKind::GaussLinear {
            d_x: 1,
            d_y: 1,
            d_z: 3,
            a_scale: ab_scale,
            b_scale: ab_scale,
            c_scale,
        },
    }
}

fn gauss_scenario(id: &str, c_scale: f64, n_total: usize) -> Scenario {
    gauss_scenario_scaled(id, 1.0, c_scale, n_total)
}

fn light_train(n_steps: usize, hidden: Vec<usize>) -> TrainConfig {
    TrainConfig {
        n_steps,
        n_steps_inner: 2,
        batch_size: 256,
        gamma: 1.0,
        lr_out: 1e-3,
        lr_in: 1e-3,
        arch: ArchSpec::mlp(hidden),
        ..TrainConfig::new(2)
    }
}

#[test]
#[ignore]
fn calibration_rehearsal() {
    let _ = derive_seed(0, "x", 0);
    for (steps, ab, label) in [
        (800usize, 1.0, "800 / ab 1.0"),
        (800, 0.3, "800 / ab 0.3"),
        (1600, 0.3, "1600 / ab 0.3"),
    ] {
        let hidden = vec![32usize];
        let config = BenchConfig {
            scenarios: vec![gauss_scenario_scaled("null-cal", ab, 0.0, 7000)],
            repetitions: 60,
            alpha: 0.05,
            split_ratio: 5000.0 / 7000.0,
            base_seed: 2024,
            train: light_train(steps, hidden),
        };
        let t0 = std::time::Instant::now();
        let outcomes = run_scenario(&config.scenarios[0], &config);
        let ts: Vec<f64> = outcomes
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .map(|o| o.statistic)
            .collect();
        let rejects =
            outcomes.iter().filter_map(|r| r.outcome.as_ref().ok()).filter(|o| o.reject).count();
        let rate = rejects as f64 / ts.len() as f64;
        let ks = ks_distance_chi2(&ts, 4);
        eprintln!(
            "{label}: rate {rate:.3}, ks {ks:.3}, n_ok {}, elapsed {:?}",
            ts.len(),
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn power_rehearsal() {
    for n_total in [4000usize, 2250] {
        let config = BenchConfig {
            scenarios: vec![gauss_scenario("alt-power", 1.0, n_total)],
            repetitions: 30,
            alpha: 0.05,
            split_ratio: 0.5,
            base_seed: 77,
            train: light_train(150, vec![32]),
        };
        let t0 = std::time::Instant::now();
        let outcomes = run_scenario(&config.scenarios[0], &config);
        let oks: Vec<_> = outcomes.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let rate = oks.iter().filter(|o| o.reject).count() as f64 / oks.len() as f64;
        eprintln!("alt n_total {n_total}: reject rate {rate:.3}, elapsed {:?}", t0.elapsed());
    }
}
