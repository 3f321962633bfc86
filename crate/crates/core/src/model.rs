//! Feature extractor, linear head, and the pretraining procedure that
//! stands in for a large pretrained encoder.
//!
//! Pretraining optimizes a classification head and an auxiliary
//! simple-block reconstruction head on top of the extractor, on a stream
//! where the simple block is uninformative about the label (ρ = 1/C). The
//! auxiliary task guarantees the returned representation still encodes the
//! simple feature, which is the premise the adaptation protocols probe:
//! both feature families must be linearly decodable from h.

use crate::data::{sample, Dataset, GeneratorState, Provenance};
use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, InitScale, Layer};
use crate::loss::{self, LossKind};
use crate::matrix::Matrix;
use crate::optim::GraphSgd;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Representation width shared by every model in a study.
pub const REPR_DIM: usize = 32;
const HIDDEN_DIM: usize = 64;

/// Relu MLP mapping inputs to the representation space.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<F: Scalar> {
    graph: ComputationGraph<F>,
}

impl<F: Scalar> FeatureExtractor<F> {
    /// Fresh extractor with widths [d_in, 64, 64, 32].
    pub fn init(input_dim: usize, rng: &mut Rng) -> Result<Self> {
        let graph = ComputationGraph::mlp(
            &[input_dim, HIDDEN_DIM, HIDDEN_DIM, REPR_DIM],
            InitScale::He,
            rng,
        )?;
        Ok(FeatureExtractor { graph })
    }

    pub fn from_graph(graph: ComputationGraph<F>) -> Self {
        FeatureExtractor { graph }
    }

    pub fn graph(&self) -> &ComputationGraph<F> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ComputationGraph<F> {
        &mut self.graph
    }

    pub fn input_dim(&self) -> usize {
        self.graph.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.graph.output_dim()
    }

    pub fn bit_equal(&self, other: &FeatureExtractor<F>) -> bool {
        self.graph.params_bit_equal(&other.graph)
    }
}

/// Deterministic embedding h = extractor(x).
pub fn embed<F: Scalar>(extractor: &FeatureExtractor<F>, x: &Matrix<F>) -> Result<Matrix<F>> {
    Ok(extractor.graph.forward(x)?.logits().clone())
}

/// Linear classifier over the representation; weight is C × p.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<F: Scalar> {
    pub weight: Matrix<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Head<F> {
    /// Near-zero init for probes (convex training starts at the origin).
    pub fn init(classes: usize, repr_dim: usize, rng: &mut Rng) -> Self {
        Head::init_scaled(classes, repr_dim, 0.01, rng)
    }

    /// He-scaled init for a fresh classifier ahead of fine-tuning; the
    /// early misaligned-head gradients are what distort the extractor.
    pub fn init_fresh(classes: usize, repr_dim: usize, rng: &mut Rng) -> Self {
        Head::init_scaled(classes, repr_dim, (2.0 / repr_dim as f64).sqrt(), rng)
    }

    pub fn init_scaled(classes: usize, repr_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let scale = F::from_config(scale);
        let mut weight = Matrix::zeros(classes, repr_dim);
        for x in weight.data_mut() {
            *x = rng.normal::<F>() * scale;
        }
        Head { weight, bias: vec![F::zero(); classes] }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn repr_dim(&self) -> usize {
        self.weight.cols()
    }

    /// z = h · Wᵀ + b
    pub fn logits(&self, h: &Matrix<F>) -> Matrix<F> {
        h.matmul_t(&self.weight).add_row_broadcast(&self.bias)
    }

    /// Given dL/dz, returns (dL/dW, dL/db, dL/dh).
    pub fn gradients(&self, h: &Matrix<F>, delta: &Matrix<F>) -> (Matrix<F>, Vec<F>, Matrix<F>) {
        let dw = delta.t_matmul(h);
        let db = delta.column_sums();
        let dh = delta.matmul(&self.weight);
        (dw, db, dh)
    }

    /// The head as a single affine layer (graph convention: x·W + b).
    pub fn to_affine(&self) -> ComputationGraph<F> {
        let weight = self.weight.transpose();
        ComputationGraph::new(vec![Layer::affine(weight, self.bias.clone())])
            .expect("single affine layer is always a valid graph")
    }

    pub fn from_affine(graph: &ComputationGraph<F>) -> Result<Self> {
        match graph.layers() {
            [Layer::Affine { weight, bias }] => Ok(Head {
                weight: weight.transpose(),
                bias: bias.clone(),
            }),
            _ => Err(Error::config("head checkpoint must hold one affine layer")),
        }
    }
}

/// Extractor + head, with the pretrained extractor retained for
/// distortion measurement. The snapshot is never mutated after adaptation
/// starts.
#[derive(Debug, Clone)]
pub struct ModelState<F: Scalar> {
    pub extractor: FeatureExtractor<F>,
    pub head: Head<F>,
    pub pretrained_snapshot: FeatureExtractor<F>,
}

impl<F: Scalar> ModelState<F> {
    pub fn new(extractor: FeatureExtractor<F>, head: Head<F>) -> Self {
        let snapshot = extractor.clone();
        ModelState { extractor, head, pretrained_snapshot: snapshot }
    }

    /// Full network input → logits for attacks and fine-tuning.
    pub fn full_graph(&self) -> ComputationGraph<F> {
        self.extractor
            .graph
            .chain(&self.head.to_affine())
            .expect("extractor and head dimensions compose")
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }
}

/// Softmax probabilities of the full model.
pub fn predict<F: Scalar>(model: &ModelState<F>, x: &Matrix<F>) -> Result<Matrix<F>> {
    let h = embed(&model.extractor, x)?;
    Ok(loss::softmax(&model.head.logits(&h)))
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Weight of the simple-block reconstruction loss.
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            lambda: 1.0,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 128,
            samples_per_epoch: 4000,
            seed: 1234,
        }
    }
}

/// Decodability thresholds the pretrained extractor must clear.
const PROBE_ACC_MIN: f64 = 0.90;
const RECON_R2_MIN: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// ID accuracy of a fresh linear probe on h at ρ = 1/C.
    pub probe_accuracy: f64,
    /// R² of a least-squares reconstruction of the simple block from h.
    pub reconstruction_r2: f64,
    pub final_loss: f64,
}

/// Trains the extractor with a temporary classification head and a
/// temporary reconstruction head, discards both heads, verifies the two
/// decodability checks, and returns the extractor.
pub fn pretrain<F: Scalar>(
    gen: &GeneratorState<F>,
    cfg: &PretrainConfig,
) -> Result<(FeatureExtractor<F>, PretrainReport)> {
    let c = gen.config().classes;
    let d_s = c;
    let rho_pre = 1.0 / c as f64;
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.substream("pretrain-init", 0);
    let mut data_rng = root.substream("pretrain-data", 0);

    let mut extractor = FeatureExtractor::<F>::init(gen.input_dim(), &mut init_rng)?;
    let mut class_head = ComputationGraph::<F>::mlp(
        &[REPR_DIM, c],
        InitScale::Fixed(0.01),
        &mut init_rng,
    )?;
    let mut recon_head = ComputationGraph::<F>::mlp(
        &[REPR_DIM, d_s],
        InitScale::Fixed(0.01),
        &mut init_rng,
    )?;

    let mut opt_extractor = GraphSgd::new(cfg.lr, cfg.momentum);
    let mut opt_class = GraphSgd::new(cfg.lr, cfg.momentum);
    let mut opt_recon = GraphSgd::new(cfg.lr, cfg.momentum);
    let lambda = F::from_config(cfg.lambda);
    let mut final_loss = 0.0f64;

    for epoch in 0..cfg.epochs {
        let ds = sample(gen, cfg.samples_per_epoch, Some(rho_pre), Provenance::Train, &mut data_rng)?;
        let simple_target = simple_block_of(&ds, d_s);
        let mut epoch_loss = F::zero();
        let mut batches = 0usize;
        for start in (0..ds.len()).step_by(cfg.batch_size) {
            let end = (start + cfg.batch_size).min(ds.len());
            let idx: Vec<usize> = (start..end).collect();
            let x = ds.inputs.gather_rows(&idx);
            let y = &ds.labels[start..end];
            let s_target = simple_target.gather_rows(&idx);

            let acts = extractor.graph.forward(&x)?;
            let h = acts.logits();

            let class_acts = class_head.forward(h)?;
            let (ce, ce_grads) = class_head.backward(
                &class_acts,
                &LossKind::SoftmaxCrossEntropy { labels: y },
            )?;

            let recon_acts = recon_head.forward(h)?;
            let (mse, mse_grads) = recon_head.backward(
                &recon_acts,
                &LossKind::MeanSquaredError { target: &s_target },
            )?;

            // dL/dh joins the two branches: CE + λ·MSE.
            let mut dh = ce_grads.input.clone();
            dh.add_scaled_assign(&mse_grads.input, lambda);
            let ext_grads = extractor.graph.backward_from(&acts, &dh)?;

            let batch_loss = ce + lambda * mse;
            if !batch_loss.is_finite() {
                return Err(Error::run(format!(
                    "pretraining diverged at epoch {epoch} (loss {batch_loss})"
                )));
            }
            opt_class.step(&mut class_head, &ce_grads)?;
            opt_recon.step(&mut recon_head, &mse_grads)?;
            opt_extractor.step(extractor.graph_mut(), &ext_grads)?;
            epoch_loss = epoch_loss + batch_loss;
            batches += 1;
        }
        final_loss = (epoch_loss / F::from_config(batches as f64)).to_report();
    }

    let report = verify_pretrained(gen, &extractor, cfg)?;
    let report = PretrainReport { final_loss, ..report };
    Ok((extractor, report))
}

/// The first d_s columns of a dataset (the simple block).
fn simple_block_of<F: Scalar>(ds: &Dataset<F>, d_s: usize) -> Matrix<F> {
    let mut out = Matrix::zeros(ds.len(), d_s);
    for i in 0..ds.len() {
        out.row_mut(i).copy_from_slice(&ds.inputs.row(i)[..d_s]);
    }
    out
}

/// Runs the two decodability checks; errors with diagnostics when either
/// falls below its threshold.
fn verify_pretrained<F: Scalar>(
    gen: &GeneratorState<F>,
    extractor: &FeatureExtractor<F>,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    let c = gen.config().classes;
    let rho_pre = 1.0 / c as f64;
    let root = Rng::new(cfg.seed);
    let mut check_rng = root.substream("pretrain-check", 0);

    let train = sample(gen, 5000, Some(rho_pre), Provenance::Train, &mut check_rng)?;
    let test = sample(gen, 2000, Some(rho_pre), Provenance::IdTest, &mut check_rng)?;
    let h_train = embed(extractor, &train.inputs)?;
    let h_test = embed(extractor, &test.inputs)?;

    // Complex-feature check: fresh linear probe on h.
    let mut probe = ComputationGraph::<F>::mlp(
        &[REPR_DIM, c],
        InitScale::Fixed(0.01),
        &mut check_rng.substream("probe-init", 0),
    )?;
    let mut opt = GraphSgd::new(0.1, 0.9);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = check_rng.substream("probe-shuffle", 0);
    for _ in 0..40 {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(128) {
            let hb = h_train.gather_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let acts = probe.forward(&hb)?;
            let (_, grads) =
                probe.backward(&acts, &LossKind::SoftmaxCrossEntropy { labels: &yb })?;
            opt.step(&mut probe, &grads)?;
        }
    }
    let logits = probe.forward(&h_test)?.logits().clone();
    let mut correct = 0usize;
    for i in 0..test.len() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == test.labels[i] {
            correct += 1;
        }
    }
    let probe_accuracy = correct as f64 / test.len() as f64;

    // Simple-feature check: least-squares reconstruction of the simple block.
    let s_train = simple_block_of(&train, c);
    let s_test = simple_block_of(&test, c);
    let reconstruction_r2 = least_squares_r2(&h_train, &s_train, &h_test, &s_test)?;

    if probe_accuracy < PROBE_ACC_MIN || reconstruction_r2 < RECON_R2_MIN {
        return Err(Error::Pretrain(format!(
            "extractor failed decodability checks: probe accuracy {probe_accuracy:.4} \
             (need >= {PROBE_ACC_MIN}), reconstruction R² {reconstruction_r2:.4} \
             (need >= {RECON_R2_MIN})"
        )));
    }
    Ok(PretrainReport { probe_accuracy, reconstruction_r2, final_loss: 0.0 })
}

/// Fits s ≈ [h, 1]·B by normal equations and reports test R² over all entries.
fn least_squares_r2<F: Scalar>(
    h_train: &Matrix<F>,
    s_train: &Matrix<F>,
    h_test: &Matrix<F>,
    s_test: &Matrix<F>,
) -> Result<f64> {
    let aug = |h: &Matrix<F>| {
        let mut out = Matrix::zeros(h.rows(), h.cols() + 1);
        for i in 0..h.rows() {
            out.row_mut(i)[..h.cols()].copy_from_slice(h.row(i));
            out.row_mut(i)[h.cols()] = F::one();
        }
        out
    };
    let a = aug(h_train);
    let mut gram = a.t_matmul(&a);
    // Small ridge keeps the solve well-posed if h has collinear coordinates.
    let ridge = F::from_config(1e-8);
    for i in 0..gram.rows() {
        let v = gram.get(i, i);
        gram.set(i, i, v + ridge);
    }
    let rhs = a.t_matmul(s_train);
    let coef = solve_spd(&gram, &rhs)?;

    let pred = aug(h_test).matmul(&coef);
    let n = s_test.rows();
    let cols = s_test.cols();
    let mut mean = vec![0.0f64; cols];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(s_test.row(i)) {
            *m += v.to_report();
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut ss_res = 0.0f64;
    let mut ss_tot = 0.0f64;
    for i in 0..n {
        for j in 0..cols {
            let actual = s_test.get(i, j).to_report();
            let fitted = pred.get(i, j).to_report();
            ss_res += (actual - fitted).powi(2);
            ss_tot += (actual - mean[j]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::eval("R²: zero-variance target"));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Gaussian elimination with partial pivoting for a symmetric positive
/// definite system A·X = B (A is small: repr_dim + 1 square).
fn solve_spd<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Result<Matrix<F>> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::config("solve: shape mismatch"));
    }
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if lhs.get(r, col).abs() > lhs.get(pivot, col).abs() {
                pivot = r;
            }
        }
        if lhs.get(pivot, col).abs() < F::from_config(1e-300) {
            return Err(Error::eval("solve: singular system"));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lhs.get(col, j);
                lhs.set(col, j, lhs.get(pivot, j));
                lhs.set(pivot, j, tmp);
            }
            for j in 0..rhs.cols() {
                let tmp = rhs.get(col, j);
                rhs.set(col, j, rhs.get(pivot, j));
                rhs.set(pivot, j, tmp);
            }
        }
        let diag = lhs.get(col, col);
        for r in col + 1..n {
            let factor = lhs.get(r, col) / diag;
            if factor == F::zero() {
                continue;
            }
            for j in col..n {
                let v = lhs.get(r, j) - factor * lhs.get(col, j);
                lhs.set(r, j, v);
            }
            for j in 0..rhs.cols() {
                let v = rhs.get(r, j) - factor * rhs.get(col, j);
                rhs.set(r, j, v);
            }
        }
    }
    let mut x = Matrix::zeros(n, b.cols());
    for col in (0..n).rev() {
        for j in 0..b.cols() {
            let mut acc = rhs.get(col, j);
            for k in col + 1..n {
                acc = acc - lhs.get(col, k) * x.get(k, j);
            }
            x.set(col, j, acc / lhs.get(col, col));
        }
    }
    Ok(x)
}

// --- checkpoint format -----------------------------------------------------
//
// Text format, one token stream:
//   adaptlab-graph v1
//   layers <count>
//   affine <in> <out>
//   <in*out weight values, row-major, whitespace separated>
//   <out bias values>
//   relu
// Floats are printed with Rust's shortest-roundtrip formatting, so a
// save/load cycle is bit-exact.

pub fn graph_to_text<F: Scalar>(graph: &ComputationGraph<F>) -> String {
    let mut out = String::from("adaptlab-graph v1\n");
    out.push_str(&format!("layers {}\n", graph.layers().len()));
    for layer in graph.layers() {
        match layer {
            Layer::Affine { weight, bias } => {
                out.push_str(&format!("affine {} {}\n", weight.rows(), weight.cols()));
                for i in 0..weight.rows() {
                    let row: Vec<String> =
                        weight.row(i).iter().map(|v| format!("{v}")).collect();
                    out.push_str(&row.join(" "));
                    out.push('\n');
                }
                let b: Vec<String> = bias.iter().map(|v| format!("{v}")).collect();
                out.push_str(&b.join(" "));
                out.push('\n');
            }
            Layer::Relu => out.push_str("relu\n"),
        }
    }
    out
}

pub fn graph_from_text<F: Scalar>(text: &str) -> Result<ComputationGraph<F>> {
    let mut tokens = text.split_whitespace();
    let mut next = || tokens.next().ok_or_else(|| Error::Io("truncated checkpoint".into()));
    let magic = next()?;
    let version = next()?;
    if magic != "adaptlab-graph" || version != "v1" {
        return Err(Error::Io(format!("unrecognized checkpoint header {magic} {version}")));
    }
    if next()? != "layers" {
        return Err(Error::Io("expected 'layers'".into()));
    }
    let count: usize = next()?
        .parse()
        .map_err(|e| Error::Io(format!("bad layer count: {e}")))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        match next()? {
            "affine" => {
                let rows: usize = next()?
                    .parse()
                    .map_err(|e| Error::Io(format!("bad shape: {e}")))?;
                let cols: usize = next()?
                    .parse()
                    .map_err(|e| Error::Io(format!("bad shape: {e}")))?;
                let mut weight = Matrix::zeros(rows, cols);
                for v in weight.data_mut() {
                    let raw: f64 = next()?
                        .parse()
                        .map_err(|e| Error::Io(format!("bad weight value: {e}")))?;
                    if !raw.is_finite() {
                        return Err(Error::Io("non-finite weight in checkpoint".into()));
                    }
                    *v = F::from_config(raw);
                }
                let mut bias = vec![F::zero(); cols];
                for v in bias.iter_mut() {
                    let raw: f64 = next()?
                        .parse()
                        .map_err(|e| Error::Io(format!("bad bias value: {e}")))?;
                    if !raw.is_finite() {
                        return Err(Error::Io("non-finite bias in checkpoint".into()));
                    }
                    *v = F::from_config(raw);
                }
                layers.push(Layer::Affine { weight, bias });
            }
            "relu" => layers.push(Layer::Relu),
            other => return Err(Error::Io(format!("unknown layer kind {other}"))),
        }
    }
    ComputationGraph::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_generators, DominoConfig};

    fn small_gen() -> GeneratorState<f64> {
        build_generators(&DominoConfig::default()).unwrap()
    }

    #[test]
    fn embed_is_deterministic_and_matches_forward() {
        let mut rng = Rng::new(21);
        let ext = FeatureExtractor::<f64>::init(13, &mut rng).unwrap();
        let mut x = Matrix::zeros(4, 13);
        for v in x.data_mut() {
            *v = rng.normal::<f64>();
        }
        let h1 = embed(&ext, &x).unwrap();
        let h2 = embed(&ext, &x).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.cols(), REPR_DIM);
        let direct = ext.graph().forward(&x).unwrap().logits().clone();
        assert_eq!(h1, direct);
    }

    #[test]
    fn zero_weight_extractor_embeds_everything_to_zero() {
        let layers = vec![
            Layer::affine(Matrix::zeros(4, 6), vec![0.0; 6]),
            Layer::Relu,
            Layer::affine(Matrix::zeros(6, 3), vec![0.0; 3]),
        ];
        let ext = FeatureExtractor::from_graph(ComputationGraph::new(layers).unwrap());
        let mut rng = Rng::new(1);
        let mut x = Matrix::zeros(5, 4);
        for v in x.data_mut() {
            *v = rng.normal::<f64>();
        }
        let h = embed(&ext, &x).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_predicts_uniform_rows() {
        let mut rng = Rng::new(22);
        let ext = FeatureExtractor::<f64>::init(13, &mut rng).unwrap();
        let head = Head {
            weight: Matrix::zeros(5, REPR_DIM),
            bias: vec![0.0; 5],
        };
        let model = ModelState::new(ext, head);
        let mut x = Matrix::zeros(3, 13);
        for v in x.data_mut() {
            *v = rng.normal::<f64>();
        }
        let p = predict(&model, &x).unwrap();
        for i in 0..3 {
            for &v in p.row(i) {
                assert!((v - 0.2).abs() < 1e-12);
            }
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn head_roundtrips_through_affine_form() {
        let mut rng = Rng::new(23);
        let head = Head::<f64>::init(5, REPR_DIM, &mut rng);
        let back = Head::from_affine(&head.to_affine()).unwrap();
        assert_eq!(head, back);

        let mut h = Matrix::zeros(3, REPR_DIM);
        for v in h.data_mut() {
            *v = rng.normal::<f64>();
        }
        let z1 = head.logits(&h);
        let z2 = head.to_affine().forward(&h).unwrap().logits().clone();
        for (a, b) in z1.data().iter().zip(z2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn least_squares_recovers_a_linear_map() {
        let mut rng = Rng::new(24);
        let mut h = Matrix::<f64>::zeros(300, 6);
        for v in h.data_mut() {
            *v = rng.normal::<f64>();
        }
        let mut true_map = Matrix::<f64>::zeros(7, 3);
        for v in true_map.data_mut() {
            *v = rng.normal::<f64>();
        }
        let aug = {
            let mut out = Matrix::zeros(h.rows(), 7);
            for i in 0..h.rows() {
                out.row_mut(i)[..6].copy_from_slice(h.row(i));
                out.row_mut(i)[6] = 1.0;
            }
            out
        };
        let s = aug.matmul(&true_map);
        let r2 = least_squares_r2(&h, &s, &h, &s).unwrap();
        assert!(r2 > 1.0 - 1e-8, "noiseless linear target, r2 = {r2}");
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = Rng::new(25);
        let ext = FeatureExtractor::<f64>::init(13, &mut rng).unwrap();
        let text = graph_to_text(ext.graph());
        let loaded: ComputationGraph<f64> = graph_from_text(&text).unwrap();
        assert!(ext.graph().params_bit_equal(&loaded));
    }

    #[test]
    fn checkpoint_loader_rejects_garbage() {
        assert!(graph_from_text::<f64>("bogus v9").is_err());
        assert!(graph_from_text::<f64>("adaptlab-graph v1\nlayers 1\naffine 2 2\n1 2 3").is_err());
    }

    #[test]
    fn pretrain_with_no_budget_fails_its_checks_with_diagnostics() {
        let gen = small_gen();
        let cfg = PretrainConfig { epochs: 0, ..PretrainConfig::default() };
        let err = pretrain(&gen, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("probe accuracy"), "{msg}");
        assert!(msg.contains("R²"), "{msg}");
    }

    #[test]
    fn pretrain_produces_decodable_features_deterministically() {
        let gen = small_gen();
        // Reduced budget: decodability is comfortably reached well before the
        // default epoch count.
        let cfg = PretrainConfig {
            epochs: 12,
            samples_per_epoch: 2000,
            ..PretrainConfig::default()
        };
        let (ext1, report) = pretrain(&gen, &cfg).unwrap();
        assert!(report.probe_accuracy >= 0.90, "probe acc {}", report.probe_accuracy);
        assert!(report.reconstruction_r2 >= 0.8, "r2 {}", report.reconstruction_r2);

        let (ext2, _) = pretrain(&gen, &cfg).unwrap();
        assert!(ext1.bit_equal(&ext2));
    }
}
