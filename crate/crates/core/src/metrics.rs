//! The safety metric suite: accuracies under shift, binned calibration,
//! anomaly AUROC on max-softmax scores, PGD adversarial accuracy, and
//! linear CKA between pretrained and adapted representations.

use crate::data::{AnomalyKind, Dataset};
use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::matrix::Matrix;
use crate::model::{embed, predict, ModelState};
use crate::protocols::AdaptedModel;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const CALIBRATION_BINS: usize = 15;

/// One row of the results tables. Every field lies in [0, 1]; calibration
/// fields are reported as 1 − RMS so that higher is uniformly better.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub id_acc: f64,
    pub ood_acc: f64,
    pub corr_acc: f64,
    pub rand_acc: f64,
    /// Mean accuracy over the 15 corrupted sets.
    pub mca: f64,
    pub adv_acc: f64,
    pub calib_id: f64,
    /// Mean over the corrupted sets of per-set 1 − RMS.
    pub calib_corr: f64,
    pub calib_ood: f64,
    /// Mean AUROC over the anomaly kinds.
    pub anomaly_auroc: f64,
    pub cka: f64,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 11] = [
        "id_acc",
        "ood_acc",
        "corr_acc",
        "rand_acc",
        "mca",
        "adv_acc",
        "calib_id",
        "calib_corr",
        "calib_ood",
        "anomaly_auroc",
        "cka",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.id_acc,
            self.ood_acc,
            self.corr_acc,
            self.rand_acc,
            self.mca,
            self.adv_acc,
            self.calib_id,
            self.calib_corr,
            self.calib_ood,
            self.anomaly_auroc,
            self.cka,
        ]
    }

    pub fn all_in_unit_interval(&self) -> bool {
        self.values().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax_row<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy<F: Scalar>(model: &ModelState<F>, ds: &Dataset<F>) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::eval("accuracy: empty dataset"));
    }
    let probs = predict(model, &ds.inputs)?;
    let mut correct = 0usize;
    for (i, &y) in ds.labels.iter().enumerate() {
        if argmax_row(probs.row(i)) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Per-sample (confidence, correct) pairs plus accuracy, where confidence
/// is the max softmax probability of the predicted class.
pub fn predict_stats<F: Scalar>(
    model: &ModelState<F>,
    ds: &Dataset<F>,
) -> Result<(f64, Vec<f64>, Vec<bool>)> {
    if ds.is_empty() {
        return Err(Error::eval("predict_stats: empty dataset"));
    }
    let probs = predict(model, &ds.inputs)?;
    let mut confidences = Vec::with_capacity(ds.len());
    let mut correct = Vec::with_capacity(ds.len());
    let mut hits = 0usize;
    for (i, &y) in ds.labels.iter().enumerate() {
        let pred = argmax_row(probs.row(i));
        confidences.push(probs.get(i, pred).to_report());
        let ok = pred == y;
        correct.push(ok);
        hits += ok as usize;
    }
    Ok((hits as f64 / ds.len() as f64, confidences, correct))
}

/// Max softmax probability per sample (the anomaly score).
pub fn msp_scores<F: Scalar>(model: &ModelState<F>, inputs: &Matrix<F>) -> Result<Vec<f64>> {
    let h = embed(&model.extractor, inputs)?;
    let probs = loss::softmax(&model.head.logits(&h));
    Ok((0..probs.rows())
        .map(|i| probs.get(i, argmax_row(probs.row(i))).to_report())
        .collect())
}

/// Root mean square calibration error over equal-width confidence bins,
/// weighted by bin count.
pub fn calibration_rmse(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() || confidences.len() != correct.len() {
        return Err(Error::eval("calibration: empty or mismatched inputs"));
    }
    if bins == 0 {
        return Err(Error::eval("calibration: need at least one bin"));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::eval("calibration: confidence outside [0,1]"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += ok as usize as f64;
    }
    let n = confidences.len() as f64;
    let mut weighted = 0.0f64;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        let gap = hit_sum[b] / k - conf_sum[b] / k;
        weighted += (k / n) * gap * gap;
    }
    Ok(weighted.sqrt())
}

/// Rank-based AUROC with tie credit:
/// (#{id > anom} + ½·#{id = anom}) / (n_id · n_anom).
/// Computed by sorting and average ranks; identical to brute-force pair
/// counting.
pub fn auroc(id_scores: &[f64], anomaly_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || anomaly_scores.is_empty() {
        return Err(Error::eval("auroc: empty score set"));
    }
    let n_id = id_scores.len();
    let n_anom = anomaly_scores.len();
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(anomaly_scores.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::eval("auroc: NaN score"));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Sum of average ranks of the ID scores (1-based, ties share the mean rank).
    let mut rank_sum_id = 0.0f64;
    let mut i = 0usize;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = ((i + 1) + (j + 1)) as f64 / 2.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_id += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_anom as f64))
}

/// PGD attack budget in L∞ on raw inputs.
#[derive(Debug, Clone)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig { epsilon: 0.05, steps: 10, seed: 99 }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::config("pgd epsilon must be >= 0"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.epsilon / 4.0
    }
}

/// Accuracy against a 10-step signed-gradient attack with random start,
/// re-clipped to the L∞ ball around the clean input each step.
pub fn pgd_attack<F: Scalar>(
    model: &ModelState<F>,
    ds: &Dataset<F>,
    pcfg: &PgdConfig,
) -> Result<f64> {
    pcfg.validate()?;
    if ds.is_empty() {
        return Err(Error::eval("pgd: empty dataset"));
    }
    let graph = model.full_graph();
    let eps = F::from_config(pcfg.epsilon);
    let step = F::from_config(pcfg.step_size());
    let mut rng = Rng::new(pcfg.seed).substream("pgd", 0);
    let mut correct = 0usize;

    let batch = 512usize;
    let n = ds.len();
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x0 = ds.inputs.gather_rows(&idx);
        let labels = &ds.labels[start..end];

        let mut x = x0.clone();
        for v in x.data_mut() {
            let noise: F = rng.uniform(-pcfg.epsilon, pcfg.epsilon);
            *v = *v + noise;
        }
        for _ in 0..pcfg.steps {
            let acts = graph.forward(&x)?;
            let (_, grads) =
                graph.backward(&acts, &LossKind::SoftmaxCrossEntropy { labels })?;
            for ((xv, &g), &at) in x
                .data_mut()
                .iter_mut()
                .zip(grads.input.data())
                .zip(x0.data())
            {
                let signed = if g > F::zero() {
                    F::one()
                } else if g < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                let moved = *xv + step * signed;
                let lo = at - eps;
                let hi = at + eps;
                *xv = if moved < lo {
                    lo
                } else if moved > hi {
                    hi
                } else {
                    moved
                };
            }
        }
        let logits = graph.forward(&x)?.logits().clone();
        for (i, &y) in labels.iter().enumerate() {
            if argmax_row(logits.row(i)) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Linear CKA on column-centered representations:
/// ‖H̃1ᵀH̃2‖²_F / (‖H̃1ᵀH̃1‖_F · ‖H̃2ᵀH̃2‖_F), computed exactly on the full
/// evaluation set.
pub fn linear_cka<F: Scalar>(h1: &Matrix<F>, h2: &Matrix<F>) -> Result<F> {
    if h1.rows() != h2.rows() {
        return Err(Error::eval("cka: row count mismatch"));
    }
    if h1.rows() < 2 {
        return Err(Error::eval("cka: need at least 2 samples"));
    }
    let c1 = h1.center_columns();
    let c2 = h2.center_columns();
    let cross = c1.t_matmul(&c2).frobenius_norm();
    let self1 = c1.t_matmul(&c1).frobenius_norm();
    let self2 = c2.t_matmul(&c2).frobenius_norm();
    if self1 == F::zero() || self2 == F::zero() {
        return Err(Error::eval("cka: zero-variance representation"));
    }
    Ok(cross * cross / (self1 * self2))
}

/// Everything `evaluate_suite` consumes: one entry per split of the paper's
/// evaluation protocol.
#[derive(Debug, Clone)]
pub struct EvalSets<F: Scalar> {
    /// ID test at the training correlation.
    pub id_test: Dataset<F>,
    /// Shifted complex features at the training correlation.
    pub ood_test: Dataset<F>,
    /// Fully correlated pairing (ρ = 1).
    pub correlated: Dataset<F>,
    /// Chance pairing (ρ = 1/C).
    pub randomized: Dataset<F>,
    /// The 15 corrupted variants of id_test.
    pub corrupted: Vec<Dataset<F>>,
    /// Anomaly inputs per kind.
    pub anomalies: Vec<(AnomalyKind, Matrix<F>)>,
}

impl<F: Scalar> EvalSets<F> {
    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        if self.id_test.is_empty() {
            missing.push("id_test".to_string());
        }
        if self.ood_test.is_empty() {
            missing.push("ood_test".to_string());
        }
        if self.correlated.is_empty() {
            missing.push("correlated".to_string());
        }
        if self.randomized.is_empty() {
            missing.push("randomized".to_string());
        }
        if self.corrupted.len() != 15 {
            missing.push(format!("corrupted ({} of 15 sets)", self.corrupted.len()));
        }
        if self.anomalies.len() != AnomalyKind::ALL.len() {
            missing.push(format!(
                "anomalies ({} of {} kinds)",
                self.anomalies.len(),
                AnomalyKind::ALL.len()
            ));
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::eval(format!("evaluation sets missing: {}", missing.join(", "))))
        }
    }
}

/// Produces one full table row for an adapted model.
pub fn evaluate_suite<F: Scalar>(
    adapted: &AdaptedModel<F>,
    sets: &EvalSets<F>,
    pcfg: &PgdConfig,
) -> Result<MetricReport> {
    sets.validate()?;
    let model = &adapted.model;

    let (id_acc, id_conf, id_correct) = predict_stats(model, &sets.id_test)?;
    let (ood_acc, ood_conf, ood_correct) = predict_stats(model, &sets.ood_test)?;
    let corr_acc = accuracy(model, &sets.correlated)?;
    let rand_acc = accuracy(model, &sets.randomized)?;

    let mut corr_accs = Vec::with_capacity(sets.corrupted.len());
    let mut corr_calibs = Vec::with_capacity(sets.corrupted.len());
    for ds in &sets.corrupted {
        let (acc, conf, correct) = predict_stats(model, ds)?;
        corr_accs.push(acc);
        corr_calibs.push(1.0 - calibration_rmse(&conf, &correct, CALIBRATION_BINS)?);
    }
    let mca = corr_accs.iter().sum::<f64>() / corr_accs.len() as f64;
    let calib_corr = corr_calibs.iter().sum::<f64>() / corr_calibs.len() as f64;

    let adv_acc = pgd_attack(model, &sets.id_test, pcfg)?;

    let id_scores = msp_scores(model, &sets.id_test.inputs)?;
    let mut aurocs = Vec::with_capacity(sets.anomalies.len());
    for (_, inputs) in &sets.anomalies {
        let anomaly_scores = msp_scores(model, inputs)?;
        aurocs.push(auroc(&id_scores, &anomaly_scores)?);
    }
    let anomaly_auroc = aurocs.iter().sum::<f64>() / aurocs.len() as f64;

    let h_pre = embed(&model.pretrained_snapshot, &sets.id_test.inputs)?;
    let h_adapted = embed(&model.extractor, &sets.id_test.inputs)?;
    let cka = linear_cka(&h_pre, &h_adapted)?.to_report();

    Ok(MetricReport {
        id_acc,
        ood_acc,
        corr_acc,
        rand_acc,
        mca,
        adv_acc,
        calib_id: 1.0 - calibration_rmse(&id_conf, &id_correct, CALIBRATION_BINS)?,
        calib_corr,
        calib_ood: 1.0 - calibration_rmse(&ood_conf, &ood_correct, CALIBRATION_BINS)?,
        anomaly_auroc,
        cka,
    })
}
