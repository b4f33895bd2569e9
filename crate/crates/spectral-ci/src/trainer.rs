//! Bi-level training loop and whitening post-processing.
//!
//! Each outer iteration first runs `n_steps_inner` inner steps that update
//! only the w-net and N, minimizing the inner loss plus its orthonormality
//! penalty, then takes one outer step updating the u-net, v-net and M.
//! Parameter checksums assert that ordering on every step. After the loop
//! the three feature blocks are whitened against the full training set:
//! stored whiteners A satisfy A C A = I, which rescales feature geometry
//! without changing spans.

use crate::datagen::Dataset;
use crate::emploss::{self, BatchFeatures, MixedTermConvention};
use crate::featnet::{
    opt_step, Activation, AdamHyper, AdamSlot, FeatNetError, FeatureNet, OptimizerState,
};
use crate::numkit::{self, Matrix, NumError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set has {got} rows, need at least {needed}")]
    DatasetTooSmall { needed: usize, got: usize },
    #[error("whitening failed for the {block} block even at jitter {jitter:.1e}: {source}")]
    WhiteningSingular { block: &'static str, jitter: f64, source: NumError },
    #[error(transparent)]
    Net(#[from] FeatNetError),
    #[error(transparent)]
    Loss(#[from] emploss::EmpLossError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("bundle record: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Network shape: hidden widths plus activation; empty hidden layers give
/// a single linear map (the exactly-representable regime for one-hot
/// inputs).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn linear() -> Self {
        ArchSpec { hidden: vec![], activation: Activation::Identity }
    }

    pub fn mlp(hidden: Vec<usize>) -> Self {
        ArchSpec { hidden, activation: Activation::Tanh }
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend_from_slice(&self.hidden);
        w.push(output);
        w
    }
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::mlp(vec![64, 64])
    }
}

/// How the v-net sees the composite (y, z) input.
///
/// `Concat` stacks the y and z rows side by side and suits continuous
/// data. A linear net on concatenated one-hots can only express additive
/// functions of (y, z), so discrete exact-recovery runs use
/// `OneHotProduct`: the one-hot of the composite atom y * |Z| + z, whose
/// linear span is every function of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VEncoding {
    Concat,
    OneHotProduct,
}

impl VEncoding {
    pub fn tag(self) -> &'static str {
        match self {
            VEncoding::Concat => "concat",
            VEncoding::OneHotProduct => "onehot_product",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "concat" => Ok(VEncoding::Concat),
            "onehot_product" => Ok(VEncoding::OneHotProduct),
            other => Err(TrainError::Parse(format!("unknown v encoding '{other}'"))),
        }
    }
}

/// Builds the v-net input rows for a dataset under the given encoding.
pub fn v_input(data: &Dataset, encoding: VEncoding) -> Result<Matrix> {
    match encoding {
        VEncoding::Concat => Ok(data.ydotz()),
        VEncoding::OneHotProduct => {
            let (sy, sz) = (data.y.cols(), data.z.cols());
            let onehot_index = |row: &[f64], what: &str| -> Result<usize> {
                let mut hit = None;
                for (j, &v) in row.iter().enumerate() {
                    if (v - 1.0).abs() <= 1e-9 {
                        if hit.is_some() {
                            return Err(TrainError::Parse(format!(
                                "{what} row is not one-hot"
                            )));
                        }
                        hit = Some(j);
                    } else if v.abs() > 1e-9 {
                        return Err(TrainError::Parse(format!("{what} row is not one-hot")));
                    }
                }
                hit.ok_or_else(|| TrainError::Parse(format!("{what} row is not one-hot")))
            };
            let mut m = Matrix::zeros(data.len(), sy * sz);
            for i in 0..data.len() {
                let y = onehot_index(data.y.row(i), "y")?;
                let z = onehot_index(data.z.row(i), "z")?;
                m[(i, y * sz + z)] = 1.0;
            }
            Ok(m)
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// feature dimension d; w-features have dimension 2d
    pub d: usize,
    pub n_steps: usize,
    pub n_steps_inner: usize,
    pub batch_size: usize,
    /// orthonormality regularization strength
    pub gamma: f64,
    pub lr_out: f64,
    pub lr_in: f64,
    pub seed: u64,
    pub arch: ArchSpec,
    pub mixed_term: MixedTermConvention,
    /// width of the w block; defaults to 2d, may be narrowed down to d
    /// when the conditioning variable's centered function space is thinner
    /// than 2d (small discrete supports)
    pub w_dim: Option<usize>,
    pub v_encoding: VEncoding,
}

impl TrainConfig {
    pub fn new(d: usize) -> Self {
        TrainConfig {
            d,
            n_steps: 2000,
            n_steps_inner: 5,
            batch_size: 256,
            gamma: 1.0,
            lr_out: 1e-3,
            lr_in: 1e-3,
            seed: 0,
            arch: ArchSpec::default(),
            mixed_term: MixedTermConvention::AsPrinted,
            w_dim: None,
            v_encoding: VEncoding::Concat,
        }
    }

    /// Effective width of the w block.
    pub fn w_width(&self) -> usize {
        self.w_dim.unwrap_or(2 * self.d)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Training diagnostics carried by the bundle.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainDiagnostics {
    /// L_out + gamma Omega_out per outer step
    pub outer_trace: Vec<f64>,
    /// L_in + gamma Omega_in per inner step
    pub inner_trace: Vec<f64>,
    /// pre-whitening Omega of the u/v/w blocks over the training set
    pub omega_final: [f64; 3],
    /// jitter each whitener ended up using
    pub whiten_jitter: [f64; 3],
    /// set when a feature covariance was near-singular and the jitter
    /// materially floors its smallest eigenvalue
    pub degenerate_whitening: bool,
}

/// Trained nets, weight matrices, whiteners and training means.
#[derive(Debug, Clone)]
pub struct RepresentationBundle {
    pub d: usize,
    pub net_u: FeatureNet,
    pub net_v: FeatureNet,
    pub net_w: FeatureNet,
    /// d x d outer weight matrix in raw (pre-whitening) coordinates
    pub m_mat: Matrix,
    /// 2d x 2d raw inner weight matrix
    pub n_raw: Matrix,
    pub whiten_u: Matrix,
    pub whiten_v: Matrix,
    pub whiten_w: Matrix,
    pub mean_u: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub mean_w: Vec<f64>,
    pub v_encoding: VEncoding,
    pub diagnostics: TrainDiagnostics,
}

/// Which feature block to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    U,
    V,
    W,
}

impl RepresentationBundle {
    /// Whitened features: whitener * (net(row) - training mean), per row.
    pub fn apply(&self, block: Block, batch: &Matrix) -> Result<Matrix> {
        let (net, mean, whitener) = match block {
            Block::U => (&self.net_u, &self.mean_u, &self.whiten_u),
            Block::V => (&self.net_v, &self.mean_v, &self.whiten_v),
            Block::W => (&self.net_w, &self.mean_w, &self.whiten_w),
        };
        let mut raw = net.apply(batch)?;
        for i in 0..raw.rows() {
            let row = raw.row_mut(i);
            for (j, mu) in mean.iter().enumerate() {
                row[j] -= mu;
            }
        }
        // whitener is symmetric, so row * A^T = row * A
        Ok(raw.matmul(whitener))
    }

    /// M transported into whitened coordinates: whitening maps features by
    /// A, so the operator product is preserved by A_u^{-1} M A_v^{-1}.
    pub fn m_whitened(&self) -> Result<Matrix> {
        let inv_u = invert_spd(&self.whiten_u)?;
        let inv_v = invert_spd(&self.whiten_v)?;
        Ok(inv_u.matmul(&self.m_mat).matmul(&inv_v))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("bundle v1\n");
        s.push_str(&format!("d {}\n", self.d));
        s.push_str(&format!("v_encoding {}\n", self.v_encoding.tag()));
        for (tag, net) in [("u", &self.net_u), ("v", &self.net_v), ("w", &self.net_w)] {
            s.push_str(&format!("net {tag}\n"));
            s.push_str(&net.to_text());
        }
        push_matrix(&mut s, "m", &self.m_mat);
        push_matrix(&mut s, "n_raw", &self.n_raw);
        push_matrix(&mut s, "whiten_u", &self.whiten_u);
        push_matrix(&mut s, "whiten_v", &self.whiten_v);
        push_matrix(&mut s, "whiten_w", &self.whiten_w);
        push_vector(&mut s, "mean_u", &self.mean_u);
        push_vector(&mut s, "mean_v", &self.mean_v);
        push_vector(&mut s, "mean_w", &self.mean_w);
        push_vector(&mut s, "omega_final", &self.diagnostics.omega_final);
        push_vector(&mut s, "whiten_jitter", &self.diagnostics.whiten_jitter);
        s.push_str(&format!("degenerate {}\n", self.diagnostics.degenerate_whitening));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        expect_line(&mut lines, "bundle v1")?;
        let d: usize = parse_tagged(&mut lines, "d")?;
        let enc_tag: String = parse_tagged(&mut lines, "v_encoding")?;
        let v_encoding = VEncoding::from_tag(&enc_tag)?;
        let mut nets = Vec::new();
        for tag in ["u", "v", "w"] {
            expect_line(&mut lines, &format!("net {tag}"))?;
            // a featnet record is self-delimiting: header, widths,
            // activation, then per layer 1 marker + rows + 1 bias line
            let mut net_text = String::new();
            let header = lines.next().ok_or_else(|| TrainError::Parse("missing net".into()))?;
            net_text.push_str(header);
            net_text.push('\n');
            let widths_line =
                lines.next().ok_or_else(|| TrainError::Parse("missing widths".into()))?;
            net_text.push_str(widths_line);
            net_text.push('\n');
            let widths: Vec<usize> = widths_line
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse().map_err(|_| TrainError::Parse("bad width".into())))
                .collect::<Result<_>>()?;
            let act = lines.next().ok_or_else(|| TrainError::Parse("missing activation".into()))?;
            net_text.push_str(act);
            net_text.push('\n');
            for l in 0..widths.len() - 1 {
                for _ in 0..widths[l] + 2 {
                    let line = lines
                        .next()
                        .ok_or_else(|| TrainError::Parse("truncated net record".into()))?;
                    net_text.push_str(line);
                    net_text.push('\n');
                }
            }
            nets.push(FeatureNet::from_text(&net_text)?);
        }
        let net_w = nets.pop().unwrap();
        let net_v = nets.pop().unwrap();
        let net_u = nets.pop().unwrap();
        let m_mat = parse_matrix(&mut lines, "m")?;
        let n_raw = parse_matrix(&mut lines, "n_raw")?;
        let whiten_u = parse_matrix(&mut lines, "whiten_u")?;
        let whiten_v = parse_matrix(&mut lines, "whiten_v")?;
        let whiten_w = parse_matrix(&mut lines, "whiten_w")?;
        let mean_u = parse_vector(&mut lines, "mean_u")?;
        let mean_v = parse_vector(&mut lines, "mean_v")?;
        let mean_w = parse_vector(&mut lines, "mean_w")?;
        let omega = parse_vector(&mut lines, "omega_final")?;
        let jitter = parse_vector(&mut lines, "whiten_jitter")?;
        let degenerate: bool = parse_tagged(&mut lines, "degenerate")?;
        if omega.len() != 3 || jitter.len() != 3 {
            return Err(TrainError::Parse("diagnostics must have 3 entries".into()));
        }
        Ok(RepresentationBundle {
            d,
            net_u,
            net_v,
            net_w,
            m_mat,
            n_raw,
            whiten_u,
            whiten_v,
            whiten_w,
            mean_u,
            mean_v,
            mean_w,
            v_encoding,
            diagnostics: TrainDiagnostics {
                outer_trace: vec![],
                inner_trace: vec![],
                omega_final: [omega[0], omega[1], omega[2]],
                whiten_jitter: [jitter[0], jitter[1], jitter[2]],
                degenerate_whitening: degenerate,
            },
        })
    }
}

fn push_matrix(s: &mut String, tag: &str, m: &Matrix) {
    s.push_str(&format!("matrix {tag} {} {}\n", m.rows(), m.cols()));
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
}

fn push_vector(s: &mut String, tag: &str, v: &[f64]) {
    s.push_str(&format!("vector {tag} {}\n", v.len()));
    let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    s.push_str(&row.join(" "));
    s.push('\n');
}

fn expect_line<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    expected: &str,
) -> Result<()> {
    match lines.next() {
        Some(line) if line.trim() == expected => Ok(()),
        Some(line) => Err(TrainError::Parse(format!("expected '{expected}', got '{line}'"))),
        None => Err(TrainError::Parse(format!("expected '{expected}', got end of record"))),
    }
}

fn parse_tagged<'a, T: std::str::FromStr>(
    lines: &mut impl Iterator<Item = &'a str>,
    tag: &str,
) -> Result<T> {
    let line = lines.next().ok_or_else(|| TrainError::Parse(format!("missing '{tag}'")))?;
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| TrainError::Parse(format!("expected '{tag} ...', got '{line}'")))?;
    rest.trim().parse().map_err(|_| TrainError::Parse(format!("bad value in '{line}'")))
}

fn parse_matrix<'a>(lines: &mut impl Iterator<Item = &'a str>, tag: &str) -> Result<Matrix> {
    let head = lines.next().ok_or_else(|| TrainError::Parse(format!("missing matrix {tag}")))?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "matrix" || parts[1] != tag {
        return Err(TrainError::Parse(format!("expected 'matrix {tag} r c', got '{head}'")));
    }
    let rows: usize = parts[2].parse().map_err(|_| TrainError::Parse("bad rows".into()))?;
    let cols: usize = parts[3].parse().map_err(|_| TrainError::Parse("bad cols".into()))?;
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| TrainError::Parse("truncated matrix".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| TrainError::Parse(format!("bad float '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(TrainError::Parse("matrix row length mismatch".into()));
        }
        m.row_mut(i).copy_from_slice(&vals);
    }
    Ok(m)
}

fn parse_vector<'a>(lines: &mut impl Iterator<Item = &'a str>, tag: &str) -> Result<Vec<f64>> {
    let head = lines.next().ok_or_else(|| TrainError::Parse(format!("missing vector {tag}")))?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "vector" || parts[1] != tag {
        return Err(TrainError::Parse(format!("expected 'vector {tag} n', got '{head}'")));
    }
    let n: usize = parts[2].parse().map_err(|_| TrainError::Parse("bad length".into()))?;
    let line = lines.next().ok_or_else(|| TrainError::Parse("truncated vector".into()))?;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| TrainError::Parse(format!("bad float '{t}'"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(TrainError::Parse("vector length mismatch".into()));
    }
    Ok(vals)
}

fn invert_spd(a: &Matrix) -> Result<Matrix> {
    let eig = numkit::eig_sym(a)?;
    let min_ev = *eig.eigenvalues.last().unwrap();
    if min_ev <= 0.0 {
        return Err(TrainError::Num(NumError::Singular { eigenvalue: min_ev, jitter: 0.0 }));
    }
    let n = a.rows();
    let q = &eig.eigenvectors;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += q[(i, k)] * q[(j, k)] / eig.eigenvalues[k];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

fn param_checksum(net: &FeatureNet) -> u64 {
    net.flat_params()
        .iter()
        .fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits())
}

fn matrix_checksum(m: &Matrix) -> u64 {
    m.data().iter().fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits())
}

/// Draws `k` distinct row indices from 0..n (partial Fisher-Yates).
fn sample_batch(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn take_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.cols(), |i, j| m[(idx[i], j)])
}

/// Runs the bi-level loop and whitening; deterministic in `config.seed`.
pub fn train(train_set: &Dataset, config: &TrainConfig) -> Result<RepresentationBundle> {
    let n = train_set.len();
    let needed = config.batch_size.max(4 * config.d);
    if n < needed {
        return Err(TrainError::DatasetTooSmall { needed, got: n });
    }
    let d = config.d;
    let w_width = config.w_width();
    assert!(
        w_width >= d && w_width <= 2 * d,
        "w width must lie in [d, 2d], got {w_width}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let yz = v_input(train_set, config.v_encoding)?;

    let mut net_u = FeatureNet::new(
        &config.arch.widths(train_set.x.cols(), d),
        config.arch.activation,
        &mut rng,
    );
    let mut net_v = FeatureNet::new(&config.arch.widths(yz.cols(), d), config.arch.activation, &mut rng);
    let mut net_w = FeatureNet::new(
        &config.arch.widths(train_set.z.cols(), w_width),
        config.arch.activation,
        &mut rng,
    );
    let mut m_mat = Matrix::zeros(d, d);
    let mut n_raw = Matrix::zeros(w_width, w_width);

    let mut opt_u = OptimizerState::new(&net_u, AdamHyper::with_lr(config.lr_out));
    let mut opt_v = OptimizerState::new(&net_v, AdamHyper::with_lr(config.lr_out));
    let mut opt_w = OptimizerState::new(&net_w, AdamHyper::with_lr(config.lr_in));
    let mut slot_m = AdamSlot::new(d * d);
    let mut slot_n = AdamSlot::new(w_width * w_width);
    let mut m_steps = 0u64;
    let mut n_steps_taken = 0u64;

    let mut diagnostics = TrainDiagnostics::default();

    for _ in 0..config.n_steps {
        for _ in 0..config.n_steps_inner {
            let sum_outer =
                param_checksum(&net_u) ^ param_checksum(&net_v) ^ matrix_checksum(&m_mat);
            let idx = sample_batch(&mut rng, n, config.batch_size);
            let xb = take_rows(&train_set.x, &idx);
            let yzb = take_rows(&yz, &idx);
            let zb = take_rows(&train_set.z, &idx);

            let u_feat = net_u.apply(&xb)?;
            let v_feat = net_v.apply(&yzb)?;
            let w_cache = net_w.forward(&zb)?;
            let bf = BatchFeatures {
                u: u_feat,
                v: v_feat,
                w: w_cache.output().clone(),
                m_mat: m_mat.clone(),
                n_raw: n_raw.clone(),
            };
            let inl = emploss::loss_in(&bf, config.mixed_term)?;
            let (om_w, om_w_grad) = emploss::omega(&bf.w)?;
            let w_grad = inl.grad_w.add(&om_w_grad.scale(config.gamma));
            let net_grads = net_w.backward(&w_cache, &w_grad)?;
            opt_step(&mut opt_w, &mut net_w, &net_grads)?;
            n_steps_taken += 1;
            slot_n.update(
                &AdamHyper::with_lr(config.lr_in),
                n_steps_taken,
                n_raw.data_mut(),
                inl.grad_n_raw.data(),
                "N_raw",
            )?;
            diagnostics.inner_trace.push(inl.value + config.gamma * om_w);
            assert_eq!(
                sum_outer,
                param_checksum(&net_u) ^ param_checksum(&net_v) ^ matrix_checksum(&m_mat),
                "inner step must not touch u, v, or M"
            );
        }

        let sum_inner = param_checksum(&net_w) ^ matrix_checksum(&n_raw);
        let idx = sample_batch(&mut rng, n, config.batch_size);
        let xb = take_rows(&train_set.x, &idx);
        let yzb = take_rows(&yz, &idx);
        let zb = take_rows(&train_set.z, &idx);

        let u_cache = net_u.forward(&xb)?;
        let v_cache = net_v.forward(&yzb)?;
        let w_feat = net_w.apply(&zb)?;
        let bf = BatchFeatures {
            u: u_cache.output().clone(),
            v: v_cache.output().clone(),
            w: w_feat,
            m_mat: m_mat.clone(),
            n_raw: n_raw.clone(),
        };
        let out = emploss::loss_out(&bf, config.mixed_term)?;
        let (om_u, om_u_grad) = emploss::omega(&bf.u)?;
        let (om_v, om_v_grad) = emploss::omega(&bf.v)?;
        let u_grad = out.grad_u.add(&om_u_grad.scale(config.gamma));
        let v_grad = out.grad_v.add(&om_v_grad.scale(config.gamma));
        let gu = net_u.backward(&u_cache, &u_grad)?;
        let gv = net_v.backward(&v_cache, &v_grad)?;
        opt_step(&mut opt_u, &mut net_u, &gu)?;
        opt_step(&mut opt_v, &mut net_v, &gv)?;
        m_steps += 1;
        slot_m.update(
            &AdamHyper::with_lr(config.lr_out),
            m_steps,
            m_mat.data_mut(),
            out.grad_m.data(),
            "M",
        )?;
        diagnostics.outer_trace.push(out.value + config.gamma * (om_u + om_v));
        assert_eq!(
            sum_inner,
            param_checksum(&net_w) ^ matrix_checksum(&n_raw),
            "outer step must not touch w or N_raw"
        );
    }

    let mut bundle = RepresentationBundle {
        d,
        net_u,
        net_v,
        net_w,
        m_mat,
        n_raw,
        whiten_u: Matrix::identity(d),
        whiten_v: Matrix::identity(d),
        whiten_w: Matrix::identity(w_width),
        mean_u: vec![0.0; d],
        mean_v: vec![0.0; d],
        mean_w: vec![0.0; w_width],
        v_encoding: config.v_encoding,
        diagnostics,
    };
    whiten(&mut bundle, train_set)?;
    Ok(bundle)
}

const WHITEN_JITTER_START: f64 = 1e-10;
const WHITEN_JITTER_MAX: f64 = 1e-6;

/// Recomputes training means and whiteners from the full training set.
///
/// A positive-definite covariance is inverted exactly, which keeps the
/// post-whitening covariance at the identity to near machine precision.
/// Only when that fails does jitter enter, starting at 1e-10 and
/// escalating tenfold up to 1e-6; any jittered block is flagged as
/// degenerate in the diagnostics.
pub fn whiten(bundle: &mut RepresentationBundle, train_set: &Dataset) -> Result<()> {
    let yz = v_input(train_set, bundle.v_encoding)?;
    let blocks: [(&'static str, &FeatureNet, &Matrix); 3] = [
        ("u", &bundle.net_u, &train_set.x),
        ("v", &bundle.net_v, &yz),
        ("w", &bundle.net_w, &train_set.z),
    ];
    let mut whiteners = Vec::new();
    let mut means = Vec::new();
    let mut omegas = [0.0; 3];
    let mut jitters = [0.0; 3];
    let mut degenerate = false;
    for (bi, (name, net, input)) in blocks.into_iter().enumerate() {
        let feats = net.apply(input)?;
        let mrows = feats.rows() as f64;
        let mean: Vec<f64> = (0..feats.cols())
            .map(|j| (0..feats.rows()).map(|i| feats[(i, j)]).sum::<f64>() / mrows)
            .collect();
        let cov = emploss::cross_cov(&feats, &feats)?;
        let (om, _) = emploss::omega(&feats)?;
        omegas[bi] = om;
        let mut jitter = 0.0;
        let whitener = loop {
            match numkit::inv_sqrt_spd(&cov, jitter) {
                Ok(w) => break w,
                Err(err) => {
                    if jitter >= WHITEN_JITTER_MAX {
                        return Err(TrainError::WhiteningSingular { block: name, jitter, source: err });
                    }
                    jitter = if jitter == 0.0 { WHITEN_JITTER_START } else { jitter * 10.0 };
                }
            }
        };
        if jitter > 0.0 {
            degenerate = true;
        }
        jitters[bi] = jitter;
        whiteners.push(whitener);
        means.push(mean);
    }
    bundle.whiten_w = whiteners.pop().unwrap();
    bundle.whiten_v = whiteners.pop().unwrap();
    bundle.whiten_u = whiteners.pop().unwrap();
    bundle.mean_w = means.pop().unwrap();
    bundle.mean_v = means.pop().unwrap();
    bundle.mean_u = means.pop().unwrap();
    bundle.diagnostics.omega_final = omegas;
    bundle.diagnostics.whiten_jitter = jitters;
    bundle.diagnostics.degenerate_whitening = degenerate;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_gauss_linear, GaussLinConfig};

    fn small_dataset(seed: u64, n: usize) -> Dataset {
        let config = GaussLinConfig::seeded(2, 1, 2, 1.0, 1.0, 0.0, seed);
        gen_gauss_linear(&config, n).unwrap()
    }

    fn tiny_config(d: usize) -> TrainConfig {
        TrainConfig {
            n_steps: 5,
            n_steps_inner: 2,
            batch_size: 32,
            arch: ArchSpec::mlp(vec![8]),
            ..TrainConfig::new(d)
        }
    }

    fn max_cov_deviation(bundle: &RepresentationBundle, data: &Dataset) -> f64 {
        let yz = data.ydotz();
        let mut worst = 0.0_f64;
        for (block, input, dim) in [
            (Block::U, &data.x, bundle.d),
            (Block::V, &yz, bundle.d),
            (Block::W, &data.z, 2 * bundle.d),
        ] {
            let f = bundle.apply(block, input).unwrap();
            let cov = emploss::cross_cov(&f, &f).unwrap();
            worst = worst.max(cov.sub(&Matrix::identity(dim)).frobenius_norm());
        }
        worst
    }

    #[test]
    fn zero_steps_still_whitens() {
        let data = small_dataset(1, 200);
        let config = TrainConfig { n_steps: 0, ..tiny_config(2) };
        let bundle = train(&data, &config).unwrap();
        assert!(max_cov_deviation(&bundle, &data) <= 1e-8);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_dataset(2, 150);
        let config = tiny_config(2).with_seed(42);
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        let pa = a.net_u.flat_params();
        let pb = b.net_u.flat_params();
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.m_mat.data(), b.m_mat.data());
        assert_eq!(a.whiten_u.data(), b.whiten_u.data());
        assert_eq!(a.mean_w, b.mean_w);
    }

    #[test]
    fn whitening_invariant_after_training() {
        let data = small_dataset(3, 300);
        let bundle = train(&data, &tiny_config(2)).unwrap();
        assert!(max_cov_deviation(&bundle, &data) <= 1e-8);
    }

    #[test]
    fn whitener_scales_inversely_with_features() {
        // d=1 scaling law: tripling the feature scales the whitener by 1/3
        let data = small_dataset(4, 200);
        let config = TrainConfig { n_steps: 2, ..tiny_config(1) };
        let bundle = train(&data, &config).unwrap();
        let mut scaled = bundle.clone();
        // scale the u-net output by 3 (last layer weights and bias)
        let l = scaled.net_u.num_layers() - 1;
        let mut params = scaled.net_u.flat_params();
        // recover layout: scale only the last layer
        let mut offset = 0;
        for li in 0..scaled.net_u.num_layers() {
            let wlen = scaled.net_u.weights()[li].data().len();
            let blen = scaled.net_u.biases()[li].len();
            if li == l {
                for v in params[offset..offset + wlen + blen].iter_mut() {
                    *v *= 3.0;
                }
            }
            offset += wlen + blen;
        }
        scaled.net_u.set_flat_params(&params);
        whiten(&mut scaled, &data).unwrap();
        let ratio = scaled.whiten_u[(0, 0)] / bundle.whiten_u[(0, 0)];
        assert!((ratio - 1.0 / 3.0).abs() <= 1e-6, "ratio {ratio}");
    }

    #[test]
    fn whitening_preserves_feature_spans() {
        let data = small_dataset(5, 250);
        let bundle = train(&data, &tiny_config(2)).unwrap();
        // projector onto the column space of centered raw features equals
        // the one for whitened features
        let raw = bundle.net_u.apply(&data.x).unwrap();
        let raw_c = emploss::center(&raw);
        let white = bundle.apply(Block::U, &data.x).unwrap();
        let white_c = emploss::center(&white);
        let proj = |m: &Matrix| {
            let svd = numkit::svd(m).unwrap();
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9).count();
            let q = Matrix::from_fn(m.rows(), rank, |i, j| svd.left[(i, j)]);
            q.matmul(&q.transpose())
        };
        let diff = proj(&raw_c).sub(&proj(&white_c)).max_abs();
        assert!(diff <= 1e-8, "span deviation {diff}");
    }

    #[test]
    fn apply_is_row_deterministic() {
        let data = small_dataset(6, 120);
        let bundle = train(&data, &tiny_config(1)).unwrap();
        let row = Matrix::from_fn(4, data.x.cols(), |_, j| data.x[(0, j)]);
        let out = bundle.apply(Block::U, &row).unwrap();
        for i in 1..4 {
            for j in 0..out.cols() {
                assert_eq!(out[(0, j)].to_bits(), out[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn degenerate_feature_is_flagged_not_fatal() {
        // constant z column collapses the w-features to a constant
        let mut data = small_dataset(7, 150);
        data.z = Matrix::zeros(150, 2);
        let config = TrainConfig { n_steps: 1, ..tiny_config(1) };
        let bundle = train(&data, &config).unwrap();
        assert!(bundle.diagnostics.degenerate_whitening);
    }

    #[test]
    fn rejects_small_dataset() {
        let data = small_dataset(8, 20);
        let config = tiny_config(2); // batch_size 32 > 20
        assert!(matches!(
            train(&data, &config),
            Err(TrainError::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn bundle_text_round_trip() {
        let data = small_dataset(9, 150);
        let bundle = train(&data, &tiny_config(2)).unwrap();
        let text = bundle.to_text();
        let loaded = RepresentationBundle::from_text(&text).unwrap();
        assert_eq!(loaded.d, bundle.d);
        let a = bundle.net_v.flat_params();
        let b = loaded.net_v.flat_params();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(bundle.whiten_w.data(), loaded.whiten_w.data());
        assert_eq!(bundle.mean_v, loaded.mean_v);
        // applying the loaded bundle reproduces features bit-exactly
        let fa = bundle.apply(Block::V, &data.ydotz()).unwrap();
        let fb = loaded.apply(Block::V, &data.ydotz()).unwrap();
        assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn m_whitened_preserves_operator_product() {
        let data = small_dataset(10, 200);
        let bundle = train(&data, &tiny_config(2)).unwrap();
        // raw features times raw M equal whitened features times m_whitened
        let raw_u = emploss::center(&bundle.net_u.apply(&data.x).unwrap());
        let raw_v = emploss::center(&bundle.net_v.apply(&data.ydotz()).unwrap());
        let white_u = emploss::center(&bundle.apply(Block::U, &data.x).unwrap());
        let white_v = emploss::center(&bundle.apply(Block::V, &data.ydotz()).unwrap());
        let prod_raw = raw_u.matmul(&bundle.m_mat).matmul(&raw_v.transpose());
        let mw = bundle.m_whitened().unwrap();
        let prod_white = white_u.matmul(&mw).matmul(&white_v.transpose());
        let rel = prod_raw.sub(&prod_white).max_abs() / prod_raw.max_abs().max(1e-12);
        assert!(rel <= 1e-6, "operator product changed by {rel}");
    }
}

