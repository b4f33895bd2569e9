//! Monte-Carlo benchmark harness.
//!
//! Every repetition derives its own seed from (base seed, scenario id,
//! repetition index), so any single repetition can be rerun in isolation
//! and reproduces its recorded outcome exactly; parallel execution cannot
//! change any number in the report.

use crate::citest::{self, TestOutcome};
use crate::datagen::{
    gen_discrete, gen_gauss_linear, gen_pnl, make_ci_joint, make_dep_joint, splitmix64, Dataset,
    GaussLinConfig, Hypothesis, Nonlinearity, PnlConfig,
};
use crate::trainer::TrainConfig;
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("scenario '{id}' failed: {errors} of {reps} repetitions errored")]
    ScenarioFailed { id: String, errors: usize, reps: usize },
    #[error("config parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Data-generating process of one scenario.
#[derive(Debug, Clone)]
pub enum GeneratorKind {
    GaussLinear {
        d_x: usize,
        d_y: usize,
        d_z: usize,
        a_scale: f64,
        b_scale: f64,
        c_scale: f64,
    },
    Pnl {
        d_x: usize,
        d_y: usize,
        d_z: usize,
        hypothesis: Hypothesis,
        nonlinearity: Nonlinearity,
        y_noise_uses_a_y: bool,
    },
    DiscreteCi {
        sizes: (usize, usize, usize),
        joint_seed: u64,
    },
    DiscreteDep {
        sizes: (usize, usize, usize),
        joint_seed: u64,
        strength: f64,
    },
}

impl GeneratorKind {
    /// One dataset of `n_total` rows from this process.
    pub fn generate(&self, n_total: usize, seed: u64) -> std::result::Result<Dataset, String> {
        match self {
            GeneratorKind::GaussLinear { d_x, d_y, d_z, a_scale, b_scale, c_scale } => {
                let config =
                    GaussLinConfig::seeded(*d_x, *d_y, *d_z, *a_scale, *b_scale, *c_scale, seed);
                gen_gauss_linear(&config, n_total).map_err(|e| e.to_string())
            }
            GeneratorKind::Pnl { d_x, d_y, d_z, hypothesis, nonlinearity, y_noise_uses_a_y } => {
                let config = PnlConfig {
                    nonlinearity: *nonlinearity,
                    y_noise_uses_a_y: *y_noise_uses_a_y,
                    ..PnlConfig::new(*d_x, *d_y, *d_z, n_total, *hypothesis, seed)
                };
                gen_pnl(&config).map_err(|e| e.to_string())
            }
            GeneratorKind::DiscreteCi { sizes, joint_seed } => {
                let joint = make_ci_joint(*sizes, *joint_seed).map_err(|e| e.to_string())?;
                Ok(Dataset::from_discrete(&gen_discrete(&joint, n_total, seed), *sizes))
            }
            GeneratorKind::DiscreteDep { sizes, joint_seed, strength } => {
                let joint =
                    make_dep_joint(*sizes, *joint_seed, *strength).map_err(|e| e.to_string())?;
                Ok(Dataset::from_discrete(&gen_discrete(&joint, n_total, seed), *sizes))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub hypothesis: Hypothesis,
    pub n_total: usize,
    pub generator: GeneratorKind,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scenarios: Vec<Scenario>,
    pub repetitions: usize,
    pub alpha: f64,
    pub split_ratio: f64,
    pub base_seed: u64,
    pub train: TrainConfig,
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(BenchError::InvalidConfig("repetitions must be >= 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(BenchError::InvalidConfig(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BenchError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.scenarios.is_empty() {
            return Err(BenchError::InvalidConfig("no scenarios".into()));
        }
        Ok(())
    }
}

/// One repetition's result; failures are recorded, not fatal.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<TestOutcome, String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub hypothesis: String,
    pub reps: usize,
    pub errors: usize,
    pub reject_rate: f64,
    pub rate_ci_halfwidth: f64,
    pub mean_t: f64,
    pub p50_t: f64,
    pub p95_t: f64,
    pub mean_omega_residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub scenarios: Vec<ScenarioReport>,
}

/// Stream seed for one (scenario, repetition) pair: FNV-1a over the id,
/// mixed with the base seed and index through splitmix64.
pub fn derive_seed(base: u64, scenario_id: &str, rep: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in scenario_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = base ^ h;
    let mixed = splitmix64(&mut state);
    let mut state2 = mixed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut state2)
}

/// Runs one repetition of a scenario end to end.
pub fn run_repetition(
    scenario: &Scenario,
    config: &BenchConfig,
    rep: usize,
) -> RepOutcome {
    let seed = derive_seed(config.base_seed, &scenario.id, rep as u64);
    let mut train_seed_state = seed ^ 0x6A09_E667_F3BC_C909;
    let train_seed = splitmix64(&mut train_seed_state);
    let outcome = (|| {
        let data = scenario.generator.generate(scenario.n_total, seed)?;
        let split = ((scenario.n_total as f64) * config.split_ratio).floor() as usize;
        if split < 1 || split >= scenario.n_total {
            return Err("split point out of range".to_string());
        }
        let (train_set, test_set) = data.split_at(split);
        let train_config = TrainConfig { seed: train_seed, ..config.train.clone() };
        citest::run_test(&train_set, &test_set, &train_config, config.alpha)
            .map_err(|e| e.to_string())
    })();
    RepOutcome { rep, seed, outcome }
}

/// All repetitions of one scenario, possibly in parallel; the returned
/// vector is ordered by repetition index regardless of execution order.
pub fn run_scenario(scenario: &Scenario, config: &BenchConfig) -> Vec<RepOutcome> {
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(scenario, config, rep))
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Aggregates repetition outcomes into one report row (pure fold,
/// permutation-invariant).
pub fn aggregate(scenario: &Scenario, outcomes: &[RepOutcome], seconds: f64) -> ScenarioReport {
    let successes: Vec<&TestOutcome> =
        outcomes.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let errors = outcomes.len() - successes.len();
    let n_ok = successes.len().max(1) as f64;
    let rejects = successes.iter().filter(|o| o.reject).count() as f64;
    let rate = rejects / n_ok;
    let mut ts: Vec<f64> = successes.iter().map(|o| o.statistic).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_t = ts.iter().sum::<f64>() / n_ok;
    let mean_omega = successes
        .iter()
        .map(|o| o.diagnostics.omega_final.iter().fold(0.0_f64, |m, &v| m.max(v)))
        .sum::<f64>()
        / n_ok;
    ScenarioReport {
        scenario: scenario.id.clone(),
        hypothesis: scenario.hypothesis.tag().to_string(),
        reps: outcomes.len(),
        errors,
        reject_rate: rate,
        rate_ci_halfwidth: 1.96 * (rate * (1.0 - rate) / n_ok).sqrt(),
        mean_t,
        p50_t: quantile(&ts, 0.50),
        p95_t: quantile(&ts, 0.95),
        mean_omega_residual: mean_omega,
        seconds,
    }
}

/// Full benchmark: every scenario, every repetition. A scenario with more
/// than 20% failed repetitions fails the bench.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for scenario in &config.scenarios {
        let start = std::time::Instant::now();
        let outcomes = run_scenario(scenario, config);
        let seconds = start.elapsed().as_secs_f64();
        let errors = outcomes.iter().filter(|r| r.outcome.is_err()).count();
        if errors * 5 > outcomes.len() {
            return Err(BenchError::ScenarioFailed {
                id: scenario.id.clone(),
                errors,
                reps: outcomes.len(),
            });
        }
        rows.push(aggregate(scenario, &outcomes, seconds));
    }
    Ok(BenchReport { scenarios: rows })
}

/// Kolmogorov-Smirnov distance of a sample from the chi-squared(dof) law.
pub fn ks_distance_chi2(values: &[f64], dof: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0_f64;
    for (i, &t) in sorted.iter().enumerate() {
        let cdf = crate::numkit::chi2_cdf(dof, t);
        let hi = (i + 1) as f64 / n - cdf;
        let lo = cdf - i as f64 / n;
        ks = ks.max(hi).max(lo);
    }
    ks
}

impl BenchReport {
    /// CSV with one row per scenario, fixed column order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scenario,hypothesis,reps,reject_rate,rate_ci_halfwidth,mean_T,p50_T,p95_T,mean_omega_residual,seconds\n",
        );
        for r in &self.scenarios {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.hypothesis,
                r.reps,
                r.reject_rate,
                r.rate_ci_halfwidth,
                r.mean_t,
                r.p50_t,
                r.p95_t,
                r.mean_omega_residual,
                r.seconds
            ));
        }
        s
    }

    /// JSON mirror with identical values.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

// --- flat key-value config files -------------------------------------------

/// Parses `key = value` lines; '#' starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| BenchError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key).map(|s| s.as_str()).ok_or_else(|| BenchError::Parse(format!("missing key '{key}'")))
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(map, key)?
        .parse()
        .map_err(|_| BenchError::Parse(format!("bad value for '{key}'")))
}

fn parse_num_or<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| BenchError::Parse(format!("bad value for '{key}'"))),
    }
}

fn parse_hypothesis(tag: &str) -> Result<Hypothesis> {
    match tag {
        "null" => Ok(Hypothesis::Null),
        "alternative" => Ok(Hypothesis::Alternative),
        other => Err(BenchError::Parse(format!("unknown hypothesis '{other}'"))),
    }
}

fn parse_nonlinearity(tag: &str) -> Result<Nonlinearity> {
    match tag {
        "identity" => Ok(Nonlinearity::Identity),
        "tanh" => Ok(Nonlinearity::Tanh),
        "cos" => Ok(Nonlinearity::Cos),
        other => Err(BenchError::Parse(format!("unknown nonlinearity '{other}'"))),
    }
}

/// Generator description under `prefix` (e.g. "scenario.0."). Documented
/// keys per kind:
///
/// gauss_linear: d_x d_y d_z a_scale b_scale c_scale
/// pnl:          d_x d_y d_z hypothesis nonlinearity [y_noise_uses_a_y]
/// discrete_ci:  sx sy sz joint_seed
/// discrete_dep: sx sy sz joint_seed strength
pub fn parse_generator(map: &BTreeMap<String, String>, prefix: &str) -> Result<GeneratorKind> {
    let key = |k: &str| format!("{prefix}{k}");
    match get(map, &key("kind"))? {
        "gauss_linear" => Ok(GeneratorKind::GaussLinear {
            d_x: parse_num(map, &key("d_x"))?,
            d_y: parse_num(map, &key("d_y"))?,
            d_z: parse_num(map, &key("d_z"))?,
            a_scale: parse_num(map, &key("a_scale"))?,
            b_scale: parse_num(map, &key("b_scale"))?,
            c_scale: parse_num(map, &key("c_scale"))?,
        }),
        "pnl" => Ok(GeneratorKind::Pnl {
            d_x: parse_num(map, &key("d_x"))?,
            d_y: parse_num(map, &key("d_y"))?,
            d_z: parse_num(map, &key("d_z"))?,
            hypothesis: parse_hypothesis(get(map, &key("hypothesis"))?)?,
            nonlinearity: parse_nonlinearity(get(map, &key("nonlinearity"))?)?,
            y_noise_uses_a_y: parse_num_or(map, &key("y_noise_uses_a_y"), false)?,
        }),
        "discrete_ci" => Ok(GeneratorKind::DiscreteCi {
            sizes: (
                parse_num(map, &key("sx"))?,
                parse_num(map, &key("sy"))?,
                parse_num(map, &key("sz"))?,
            ),
            joint_seed: parse_num(map, &key("joint_seed"))?,
        }),
        "discrete_dep" => Ok(GeneratorKind::DiscreteDep {
            sizes: (
                parse_num(map, &key("sx"))?,
                parse_num(map, &key("sy"))?,
                parse_num(map, &key("sz"))?,
            ),
            joint_seed: parse_num(map, &key("joint_seed"))?,
            strength: parse_num(map, &key("strength"))?,
        }),
        other => Err(BenchError::Parse(format!("unknown generator kind '{other}'"))),
    }
}

/// Training keys under `prefix` (e.g. "train."): d, n_steps,
/// n_steps_inner, batch_size, gamma, lr_out, lr_in, seed, hidden
/// (comma-separated, empty for linear), activation, mixed_term, w_dim,
/// v_encoding. Missing keys fall back to the defaults.
pub fn parse_train(map: &BTreeMap<String, String>, prefix: &str) -> Result<TrainConfig> {
    use crate::emploss::MixedTermConvention;
    use crate::featnet::Activation;
    use crate::trainer::{ArchSpec, VEncoding};
    let key = |k: &str| format!("{prefix}{k}");
    let d: usize = parse_num(map, &key("d"))?;
    let mut config = TrainConfig::new(d);
    config.n_steps = parse_num_or(map, &key("n_steps"), config.n_steps)?;
    config.n_steps_inner = parse_num_or(map, &key("n_steps_inner"), config.n_steps_inner)?;
    config.batch_size = parse_num_or(map, &key("batch_size"), config.batch_size)?;
    config.gamma = parse_num_or(map, &key("gamma"), config.gamma)?;
    config.lr_out = parse_num_or(map, &key("lr_out"), config.lr_out)?;
    config.lr_in = parse_num_or(map, &key("lr_in"), config.lr_in)?;
    config.seed = parse_num_or(map, &key("seed"), config.seed)?;
    if let Some(hidden) = map.get(&key("hidden")) {
        let widths: Vec<usize> = if hidden.trim().is_empty() {
            vec![]
        } else {
            hidden
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| BenchError::Parse(format!("bad hidden width '{t}'")))
                })
                .collect::<Result<_>>()?
        };
        config.arch.hidden = widths;
    }
    if let Some(act) = map.get(&key("activation")) {
        config.arch.activation = Activation::from_tag(act)
            .map_err(|e| BenchError::Parse(e.to_string()))?;
        if config.arch.hidden.is_empty() {
            config.arch = ArchSpec { hidden: vec![], activation: config.arch.activation };
        }
    }
    if let Some(conv) = map.get(&key("mixed_term")) {
        config.mixed_term = match conv.as_str() {
            "as_printed" => MixedTermConvention::AsPrinted,
            "operator_consistent" => MixedTermConvention::OperatorConsistent,
            other => return Err(BenchError::Parse(format!("unknown mixed_term '{other}'"))),
        };
    }
    if map.contains_key(&key("w_dim")) {
        config.w_dim = Some(parse_num(map, &key("w_dim"))?);
    }
    if let Some(enc) = map.get(&key("v_encoding")) {
        config.v_encoding =
            VEncoding::from_tag(enc).map_err(|e| BenchError::Parse(e.to_string()))?;
    }
    Ok(config)
}

/// Full bench config: top-level keys reps, alpha, split_ratio, base_seed,
/// the train.* group, and numbered scenario.N.* groups each carrying id,
/// hypothesis, n_total and a generator description.
pub fn parse_bench_config(text: &str) -> Result<BenchConfig> {
    let map = parse_kv(text)?;
    let train = parse_train(&map, "train.")?;
    let mut scenarios = Vec::new();
    for idx in 0.. {
        let prefix = format!("scenario.{idx}.");
        if !map.contains_key(&format!("{prefix}id")) {
            break;
        }
        scenarios.push(Scenario {
            id: get(&map, &format!("{prefix}id"))?.to_string(),
            hypothesis: parse_hypothesis(get(&map, &format!("{prefix}hypothesis"))?)?,
            n_total: parse_num(&map, &format!("{prefix}n_total"))?,
            generator: parse_generator(&map, &prefix)?,
        });
    }
    let config = BenchConfig {
        scenarios,
        repetitions: parse_num(&map, "reps")?,
        alpha: parse_num_or(&map, "alpha", 0.05)?,
        split_ratio: parse_num_or(&map, "split_ratio", 0.5)?,
        base_seed: parse_num_or(&map, "base_seed", 0)?,
        train,
    };
    config.validate()?;
    Ok(config)
}
