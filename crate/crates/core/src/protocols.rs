//! Adaptation protocols: linear probing, fine-tuning, LP-then-FT, and the
//! hardness-promoting probe variants (VAT, UDP, sparse probe soups), each
//! applicable at the LP stage, the FT stage, or both.
//!
//! Probe training shares one code path for the plain probe, the soup
//! members, and the perturbation variants, so the degenerate settings
//! (VAT α=0, UDP ε=0, soup k=1 s=0) reproduce the plain LP trajectory
//! bit-for-bit under a matched seed.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::loss::{self, LossKind};
use crate::matrix::Matrix;
use crate::model::{embed, FeatureExtractor, Head, ModelState};
use crate::optim::{sgd_step, GraphSgd};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Lp,
    Ft,
    LpFt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MitigationStage {
    Lp,
    Ft,
    Both,
}

impl MitigationStage {
    pub fn covers_lp(&self) -> bool {
        matches!(self, MitigationStage::Lp | MitigationStage::Both)
    }

    pub fn covers_ft(&self) -> bool {
        matches!(self, MitigationStage::Ft | MitigationStage::Both)
    }
}

#[derive(Debug, Clone)]
pub struct VatConfig {
    /// Weight of the smoothness term.
    pub alpha: f64,
    /// L2 perturbation budget in latent space.
    pub epsilon: f64,
    /// Finite-difference scale of the power-iteration probe.
    pub xi: f64,
    pub power_iters: usize,
}

impl Default for VatConfig {
    fn default() -> Self {
        VatConfig { alpha: 0.01, epsilon: 0.1, xi: 1e-6, power_iters: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct UdpConfig {
    /// L2 perturbation budget in latent space.
    pub epsilon: f64,
    pub ascent_steps: usize,
}

impl Default for UdpConfig {
    fn default() -> Self {
        UdpConfig { epsilon: 0.01, ascent_steps: 5 }
    }
}

impl UdpConfig {
    pub fn step_size(&self) -> f64 {
        self.epsilon / 4.0
    }
}

#[derive(Debug, Clone)]
pub struct SoupConfig {
    /// Number of jointly trained probes.
    pub k: usize,
    /// Fraction of latent dimensions masked out per probe.
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for SoupConfig {
    fn default() -> Self {
        SoupConfig { k: 5, sparsity: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub enum Mitigation {
    None,
    Vat(VatConfig),
    Udp(UdpConfig),
    Soup(SoupConfig),
}

impl Mitigation {
    pub fn name(&self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::Vat(_) => "vat",
            Mitigation::Udp(_) => "udp",
            Mitigation::Soup(_) => "soup",
        }
    }

    /// Degenerate hyperparameters reproduce the plain protocol exactly; map
    /// them to `None` so the code path (and the rng consumption) is
    /// literally the same.
    fn normalized(&self) -> Mitigation {
        match self {
            Mitigation::Vat(v) if v.alpha == 0.0 => Mitigation::None,
            Mitigation::Udp(u) if u.epsilon == 0.0 => Mitigation::None,
            Mitigation::Soup(s) if s.k == 1 && s.sparsity == 0.0 => Mitigation::None,
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Fine-tune from a freshly initialized extractor instead of the
    /// pretrained one (kind must be Ft).
    pub scratch_init: bool,
    pub mitigation: Mitigation,
    pub stage: MitigationStage,
    pub lp_lr: f64,
    pub ft_lr: f64,
    pub lp_epochs: usize,
    pub ft_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            kind: ProtocolKind::Lp,
            scratch_init: false,
            mitigation: Mitigation::None,
            stage: MitigationStage::Lp,
            lp_lr: 0.1,
            ft_lr: 1e-3,
            lp_epochs: 100,
            ft_epochs: 20,
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is a legal degenerate setting (the stage becomes a no-op).
        if !(self.lp_lr >= 0.0) || !(self.ft_lr >= 0.0) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0,1)"));
        }
        if let Mitigation::Soup(s) = &self.mitigation {
            if self.stage != MitigationStage::Lp {
                return Err(Error::config("soup mitigation applies to the LP stage only"));
            }
            if s.k < 1 {
                return Err(Error::config("soup needs k >= 1"));
            }
            if !(0.0..1.0).contains(&s.sparsity) {
                return Err(Error::config("soup sparsity must lie in [0,1)"));
            }
        }
        if let Mitigation::Vat(v) = &self.mitigation {
            if v.epsilon <= 0.0 || v.alpha < 0.0 {
                return Err(Error::config("vat needs epsilon > 0 and alpha >= 0"));
            }
        }
        if let Mitigation::Udp(u) = &self.mitigation {
            if u.epsilon < 0.0 {
                return Err(Error::config("udp needs epsilon >= 0"));
            }
        }
        match self.kind {
            ProtocolKind::Lp => {
                if self.stage != MitigationStage::Lp {
                    return Err(Error::config("kind=LP has no FT stage to mitigate"));
                }
            }
            ProtocolKind::Ft => {
                if !matches!(self.mitigation, Mitigation::None)
                    && self.stage != MitigationStage::Ft
                {
                    return Err(Error::config("kind=FT has no LP stage to mitigate"));
                }
            }
            ProtocolKind::LpFt => {}
        }
        if self.scratch_init && self.kind != ProtocolKind::Ft {
            return Err(Error::config("scratch initialization only applies to kind=FT"));
        }
        Ok(())
    }
}

/// Adaptation result: the adapted model plus per-epoch training losses.
#[derive(Debug, Clone)]
pub struct AdaptedModel<F: Scalar> {
    pub model: ModelState<F>,
    pub train_log: Vec<f64>,
}

// --- perturbations ----------------------------------------------------------

/// One power-iteration approximation of the worst-case KL perturbation:
/// rows of the returned matrix have L2 norm ε (or 0 where the local KL
/// gradient vanishes).
pub fn vat_perturbation<F: Scalar>(
    head: &Head<F>,
    h: &Matrix<F>,
    vcfg: &VatConfig,
    rng: &mut Rng,
) -> Matrix<F> {
    let n = h.rows();
    let p = h.cols();
    let reference = loss::softmax(&head.logits(h));
    let mut direction = Matrix::zeros(n, p);
    for x in direction.data_mut() {
        *x = rng.normal::<F>();
    }
    normalize_rows(&mut direction, F::one());

    let xi = F::from_config(vcfg.xi);
    for _ in 0..vcfg.power_iters.max(1) {
        // g = ∇_d KL(p(h) ‖ p(h + ξ d)); for the softmax head this is
        // ξ·(p' − p_ref)·W evaluated at the probed point.
        let mut probed = h.clone();
        probed.add_scaled_assign(&direction, xi);
        let perturbed = loss::softmax(&head.logits(&probed));
        let dz = perturbed.sub(&reference);
        direction = dz.matmul(&head.weight);
        normalize_rows(&mut direction, F::one());
    }
    normalize_rows(&mut direction, F::from_config(vcfg.epsilon));
    direction
}

/// Scales each nonzero row to length `target`; rows with norm < 1e-12 are
/// zeroed.
fn normalize_rows<F: Scalar>(m: &mut Matrix<F>, target: F) {
    let tiny = F::from_config(1e-12);
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
        if norm < tiny {
            for x in row.iter_mut() {
                *x = F::zero();
            }
        } else {
            let s = target / norm;
            for x in row.iter_mut() {
                *x = *x * s;
            }
        }
    }
}

/// CE + α·KL(stopgrad p(h) ‖ p(h+δ)) with δ from [`vat_perturbation`].
pub fn vat_loss<F: Scalar>(
    head: &Head<F>,
    h: &Matrix<F>,
    labels: &[usize],
    vcfg: &VatConfig,
    rng: &mut Rng,
) -> Result<F> {
    let delta = vat_perturbation(head, h, vcfg, rng);
    vat_loss_with_delta(head, h, labels, vcfg.alpha, &delta)
}

/// VAT objective for a fixed δ (exposed so δ = 0 behaviour is checkable).
pub fn vat_loss_with_delta<F: Scalar>(
    head: &Head<F>,
    h: &Matrix<F>,
    labels: &[usize],
    alpha: f64,
    delta: &Matrix<F>,
) -> Result<F> {
    let logits = head.logits(h);
    let ce = loss::loss_value(&LossKind::SoftmaxCrossEntropy { labels }, &logits)?;
    if alpha == 0.0 {
        return Ok(ce);
    }
    let reference = loss::softmax(&logits);
    let mut shifted = h.clone();
    shifted.add_scaled_assign(delta, F::one());
    let kl = loss::loss_value(
        &LossKind::KlFromReference { reference: &reference },
        &head.logits(&shifted),
    )?;
    Ok(ce + F::from_config(alpha) * kl)
}

/// Projected entropy ascent in latent space. Each row's step is kept only
/// if that row's prediction entropy did not decrease, so the perturbation
/// is entropy-monotone per sample.
pub fn udp_perturbation<F: Scalar>(
    head: &Head<F>,
    h: &Matrix<F>,
    ucfg: &UdpConfig,
) -> Matrix<F> {
    let n = h.rows();
    let p = h.cols();
    let mut delta = Matrix::zeros(n, p);
    if ucfg.epsilon == 0.0 {
        return delta;
    }
    let eps = F::from_config(ucfg.epsilon);
    let step = F::from_config(ucfg.step_size());
    let mut entropy = row_entropies(head, h, &delta);
    for _ in 0..ucfg.ascent_steps {
        // ∇_h H = diag(-p(ln p + H)) · W, row-normalized to the step size.
        let mut shifted = h.clone();
        shifted.add_scaled_assign(&delta, F::one());
        let probs = loss::softmax(&head.logits(&shifted));
        let mut dz = Matrix::zeros(n, probs.cols());
        for i in 0..n {
            let h_i = loss::entropy_row(probs.row(i));
            for j in 0..probs.cols() {
                let pj = probs.get(i, j);
                dz.set(i, j, -pj * (loss::ln_prob(pj) + h_i));
            }
        }
        let mut grad = dz.matmul(&head.weight);
        normalize_rows(&mut grad, F::one());

        let mut candidate = delta.clone();
        candidate.add_scaled_assign(&grad, step);
        project_rows(&mut candidate, eps);
        let cand_entropy = row_entropies(head, h, &candidate);
        for i in 0..n {
            if cand_entropy[i] >= entropy[i] {
                let src: Vec<F> = candidate.row(i).to_vec();
                delta.row_mut(i).copy_from_slice(&src);
                entropy[i] = cand_entropy[i];
            }
        }
    }
    delta
}

fn row_entropies<F: Scalar>(head: &Head<F>, h: &Matrix<F>, delta: &Matrix<F>) -> Vec<F> {
    let mut shifted = h.clone();
    shifted.add_scaled_assign(delta, F::one());
    let probs = loss::softmax(&head.logits(&shifted));
    loss::entropy_rows(&probs)
}

/// Projects each row into the L2 ball of radius eps.
fn project_rows<F: Scalar>(m: &mut Matrix<F>, eps: F) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
        if norm > eps {
            let s = eps / norm;
            for x in row.iter_mut() {
                *x = *x * s;
            }
        }
    }
}

// --- probe training ---------------------------------------------------------

struct ProbeState<F: Scalar> {
    head: Head<F>,
    /// 1/0 multipliers over the latent dims; None means no mask.
    mask: Option<Vec<F>>,
    vel_w: Vec<F>,
    vel_b: Vec<F>,
}

fn apply_mask<F: Scalar>(h: &Matrix<F>, mask: Option<&Vec<F>>) -> Matrix<F> {
    match mask {
        None => h.clone(),
        Some(m) => {
            let mut out = h.clone();
            for i in 0..out.rows() {
                for (x, &keep) in out.row_mut(i).iter_mut().zip(m) {
                    *x = *x * keep;
                }
            }
            out
        }
    }
}

/// Trains `k` probes jointly on frozen representations with a shared
/// minibatch schedule. Every LP-family protocol funnels through here.
fn train_probes<F: Scalar>(
    h_train: &Matrix<F>,
    labels: &[usize],
    classes: usize,
    k: usize,
    masks: Vec<Option<Vec<F>>>,
    per_batch: &Mitigation,
    cfg: &ProtocolConfig,
    rng: &Rng,
) -> Result<(Vec<Head<F>>, Vec<f64>)> {
    let n = h_train.rows();
    if labels.len() != n {
        return Err(Error::config("probe training: labels/representation mismatch"));
    }
    let p = h_train.cols();
    let lr = F::from_config(cfg.lp_lr);
    let momentum = F::from_config(cfg.momentum);

    let mut probes: Vec<ProbeState<F>> = (0..k)
        .map(|i| {
            let mut init_rng = rng.substream("probe-init", i as u64);
            ProbeState {
                head: Head::init(classes, p, &mut init_rng),
                mask: masks[i].clone(),
                vel_w: vec![F::zero(); classes * p],
                vel_b: vec![F::zero(); classes],
            }
        })
        .collect();

    let mut shuffle_rng = rng.substream("lp-shuffle", 0);
    let mut attack_rng = rng.substream("lp-attack", 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.lp_epochs);

    for epoch in 0..cfg.lp_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = F::zero();
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let hb = h_train.gather_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut batch_loss = F::zero();
            for probe in probes.iter_mut() {
                let h_in = apply_mask(&hb, probe.mask.as_ref());
                let loss_val = probe_step(
                    &mut probe.head,
                    &h_in,
                    &yb,
                    per_batch,
                    lr,
                    momentum,
                    &mut probe.vel_w,
                    &mut probe.vel_b,
                    &mut attack_rng,
                )?;
                batch_loss = batch_loss + loss_val;
            }
            batch_loss = batch_loss / F::from_config(k as f64);
            if !batch_loss.is_finite() {
                return Err(Error::run(format!(
                    "probe training diverged at epoch {epoch}"
                )));
            }
            epoch_loss = epoch_loss + batch_loss * F::from_config(batch.len() as f64);
            seen += batch.len();
        }
        log.push((epoch_loss / F::from_config(seen as f64)).to_report());
    }
    Ok((probes.into_iter().map(|s| s.head).collect(), log))
}

/// One SGD step of one probe on one batch; returns the batch loss.
#[allow(clippy::too_many_arguments)]
fn probe_step<F: Scalar>(
    head: &mut Head<F>,
    h: &Matrix<F>,
    labels: &[usize],
    per_batch: &Mitigation,
    lr: F,
    momentum: F,
    vel_w: &mut [F],
    vel_b: &mut [F],
    attack_rng: &mut Rng,
) -> Result<F> {
    let (loss_val, dw, db) = match per_batch {
        Mitigation::None | Mitigation::Soup(_) => {
            let logits = head.logits(h);
            let (v, dz) =
                loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels }, &logits)?;
            let (dw, db, _) = head.gradients(h, &dz);
            (v, dw, db)
        }
        Mitigation::Vat(vcfg) => {
            let delta = vat_perturbation(head, h, vcfg, attack_rng);
            let logits = head.logits(h);
            let (ce, dz_ce) =
                loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels }, &logits)?;
            let (mut dw, mut db, _) = head.gradients(h, &dz_ce);

            // Smoothness branch: the reference distribution is stop-gradient,
            // so only the perturbed forward contributes.
            let reference = loss::softmax(&logits);
            let mut shifted = h.clone();
            shifted.add_scaled_assign(&delta, F::one());
            let (kl, dz_kl) = loss::loss_and_grad(
                &LossKind::KlFromReference { reference: &reference },
                &head.logits(&shifted),
            )?;
            let (dw_kl, db_kl, _) = head.gradients(&shifted, &dz_kl);
            let alpha = F::from_config(vcfg.alpha);
            dw.add_scaled_assign(&dw_kl, alpha);
            for (b, &g) in db.iter_mut().zip(&db_kl) {
                *b = *b + alpha * g;
            }
            (ce + alpha * kl, dw, db)
        }
        Mitigation::Udp(ucfg) => {
            let delta = udp_perturbation(head, h, ucfg);
            let mut shifted = h.clone();
            shifted.add_scaled_assign(&delta, F::one());
            let logits = head.logits(&shifted);
            let (v, dz) =
                loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels }, &logits)?;
            let (dw, db, _) = head.gradients(&shifted, &dz);
            (v, dw, db)
        }
    };
    sgd_step(head.weight.data_mut(), dw.data(), vel_w, lr, momentum)?;
    sgd_step(&mut head.bias, &db, vel_b, lr, momentum)?;
    Ok(loss_val)
}

/// Weight-space average of trained probes; masked columns enter as zero.
fn average_heads<F: Scalar>(heads: &[Head<F>], masks: &[Option<Vec<F>>]) -> Head<F> {
    let k = heads.len();
    let classes = heads[0].classes();
    let p = heads[0].repr_dim();
    let inv_k = F::from_config(1.0 / k as f64);
    let mut weight = Matrix::zeros(classes, p);
    let mut bias = vec![F::zero(); classes];
    for (head, mask) in heads.iter().zip(masks) {
        for c in 0..classes {
            for j in 0..p {
                let keep = match mask {
                    Some(m) => m[j],
                    None => F::one(),
                };
                let v = weight.get(c, j) + head.weight.get(c, j) * keep;
                weight.set(c, j, v);
            }
        }
        for (b, &hb) in bias.iter_mut().zip(&head.bias) {
            *b = *b + hb;
        }
    }
    Head {
        weight: weight.scale(inv_k),
        bias: bias.into_iter().map(|b| b * inv_k).collect(),
    }
}

/// Fixed seeded binary masks, one per probe, each zeroing
/// round-half-up(sparsity · p) latent dimensions.
fn soup_masks<F: Scalar>(k: usize, p: usize, sparsity: f64, rng: &Rng) -> Vec<Option<Vec<F>>> {
    if sparsity == 0.0 {
        return vec![None; k];
    }
    let zeroed = ((sparsity * p as f64) + 0.5).floor() as usize;
    (0..k)
        .map(|i| {
            let mut mask_rng = rng.substream("soup-mask", i as u64);
            let mut coords: Vec<usize> = (0..p).collect();
            mask_rng.shuffle(&mut coords);
            let mut mask = vec![F::one(); p];
            for &j in &coords[..zeroed] {
                mask[j] = F::zero();
            }
            Some(mask)
        })
        .collect()
}

/// Joint sparse-probe training followed by weight averaging.
pub fn soup_train<F: Scalar>(
    h_train: &Matrix<F>,
    labels: &[usize],
    classes: usize,
    scfg: &SoupConfig,
    cfg: &ProtocolConfig,
    rng: &Rng,
) -> Result<(Head<F>, Vec<f64>)> {
    let soup_rng = rng.substream("soup", scfg.seed);
    let masks = soup_masks::<F>(scfg.k, h_train.cols(), scfg.sparsity, &soup_rng);
    let (heads, log) = train_probes(
        h_train,
        labels,
        classes,
        scfg.k,
        masks.clone(),
        &Mitigation::Soup(scfg.clone()),
        cfg,
        rng,
    )?;
    Ok((average_heads(&heads, &masks), log))
}

// --- protocol runners ---------------------------------------------------------

/// Linear probing: the extractor stays frozen; only a head is trained on
/// the cached representations.
pub fn run_lp<F: Scalar>(
    pretrained: &FeatureExtractor<F>,
    train: &Dataset<F>,
    cfg: &ProtocolConfig,
    mitigation: &Mitigation,
) -> Result<AdaptedModel<F>> {
    let classes = class_count(train)?;
    let h_train = embed(pretrained, &train.inputs)?;
    let rng = Rng::new(cfg.seed).substream("lp", 0);
    let active = if cfg.stage.covers_lp() {
        mitigation.normalized()
    } else {
        Mitigation::None
    };

    let (head, train_log) = match &active {
        Mitigation::Soup(scfg) => {
            soup_train(&h_train, &train.labels, classes, scfg, cfg, &rng)?
        }
        other => {
            let (mut heads, log) = train_probes(
                &h_train,
                &train.labels,
                classes,
                1,
                vec![None],
                other,
                cfg,
                &rng,
            )?;
            (heads.remove(0), log)
        }
    };

    Ok(AdaptedModel {
        model: ModelState {
            extractor: pretrained.clone(),
            head,
            pretrained_snapshot: pretrained.clone(),
        },
        train_log,
    })
}

/// Fine-tuning: every parameter moves. `init` carries the starting
/// extractor and head; its `pretrained_snapshot` is preserved for
/// distortion measurement.
pub fn run_ft<F: Scalar>(
    init: &ModelState<F>,
    train: &Dataset<F>,
    cfg: &ProtocolConfig,
    mitigation: &Mitigation,
) -> Result<AdaptedModel<F>> {
    let classes = class_count(train)?;
    if classes != init.head.classes() {
        return Err(Error::config("fine-tuning: head class count mismatch"));
    }
    let mut model = init.clone();
    let rng = Rng::new(cfg.seed).substream("ft", 0);
    let mut shuffle_rng = rng.substream("ft-shuffle", 0);
    let mut attack_rng = rng.substream("ft-attack", 0);
    let active = if cfg.stage.covers_ft() {
        mitigation.normalized()
    } else {
        Mitigation::None
    };
    if matches!(active, Mitigation::Soup(_)) {
        return Err(Error::config("soup mitigation applies to the LP stage only"));
    }

    let mut opt_extractor = GraphSgd::new(cfg.ft_lr, cfg.momentum);
    let lr = F::from_config(cfg.ft_lr);
    let momentum = F::from_config(cfg.momentum);
    let mut vel_w = vec![F::zero(); model.head.weight.data().len()];
    let mut vel_b = vec![F::zero(); model.head.bias.len()];

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_log = Vec::with_capacity(cfg.ft_epochs);

    for epoch in 0..cfg.ft_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = F::zero();
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.inputs.gather_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();

            let acts = model.extractor.graph().forward(&x)?;
            let h = acts.logits().clone();

            let (loss_val, dw, db, dh) = match &active {
                Mitigation::None | Mitigation::Soup(_) => {
                    let logits = model.head.logits(&h);
                    let (v, dz) =
                        loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels: &yb }, &logits)?;
                    let (dw, db, dh) = model.head.gradients(&h, &dz);
                    (v, dw, db, dh)
                }
                Mitigation::Vat(vcfg) => {
                    let delta = vat_perturbation(&model.head, &h, vcfg, &mut attack_rng);
                    let logits = model.head.logits(&h);
                    let (ce, dz_ce) =
                        loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels: &yb }, &logits)?;
                    let (mut dw, mut db, mut dh) = model.head.gradients(&h, &dz_ce);
                    let reference = loss::softmax(&logits);
                    let mut shifted = h.clone();
                    shifted.add_scaled_assign(&delta, F::one());
                    let (kl, dz_kl) = loss::loss_and_grad(
                        &LossKind::KlFromReference { reference: &reference },
                        &model.head.logits(&shifted),
                    )?;
                    let (dw_kl, db_kl, dh_kl) = model.head.gradients(&shifted, &dz_kl);
                    let alpha = F::from_config(vcfg.alpha);
                    dw.add_scaled_assign(&dw_kl, alpha);
                    for (b, &g) in db.iter_mut().zip(&db_kl) {
                        *b = *b + alpha * g;
                    }
                    // δ is treated as a constant, so the KL branch flows into
                    // the extractor through h as well.
                    dh.add_scaled_assign(&dh_kl, alpha);
                    (ce + alpha * kl, dw, db, dh)
                }
                Mitigation::Udp(ucfg) => {
                    let delta = udp_perturbation(&model.head, &h, ucfg);
                    let mut shifted = h.clone();
                    shifted.add_scaled_assign(&delta, F::one());
                    let logits = model.head.logits(&shifted);
                    let (v, dz) =
                        loss::loss_and_grad(&LossKind::SoftmaxCrossEntropy { labels: &yb }, &logits)?;
                    let (dw, db, dh) = model.head.gradients(&shifted, &dz);
                    (v, dw, db, dh)
                }
            };

            if !loss_val.is_finite() {
                return Err(Error::run(format!("fine-tuning diverged at epoch {epoch}")));
            }
            let ext_grads: Gradients<F> = model.extractor.graph().backward_from(&acts, &dh)?;
            opt_extractor.step(model.extractor.graph_mut(), &ext_grads)?;
            sgd_step(model.head.weight.data_mut(), dw.data(), &mut vel_w, lr, momentum)?;
            sgd_step(&mut model.head.bias, &db, &mut vel_b, lr, momentum)?;

            epoch_loss = epoch_loss + loss_val * F::from_config(batch.len() as f64);
            seen += batch.len();
        }
        train_log.push((epoch_loss / F::from_config(seen as f64)).to_report());
    }
    Ok(AdaptedModel { model, train_log })
}

/// Dispatches a full protocol run from a pretrained extractor.
pub fn run_protocol<F: Scalar>(
    pretrained: &FeatureExtractor<F>,
    train: &Dataset<F>,
    cfg: &ProtocolConfig,
) -> Result<AdaptedModel<F>> {
    cfg.validate()?;
    let classes = class_count(train)?;
    match cfg.kind {
        ProtocolKind::Lp => run_lp(pretrained, train, cfg, &cfg.mitigation),
        ProtocolKind::Ft => {
            let rng = Rng::new(cfg.seed);
            let extractor = if cfg.scratch_init {
                let mut init_rng = rng.substream("scratch-extractor", 0);
                FeatureExtractor::init(pretrained.input_dim(), &mut init_rng)?
            } else {
                pretrained.clone()
            };
            let mut head_rng = rng.substream("ft-head-init", 0);
            let head = Head::init_fresh(classes, extractor.output_dim(), &mut head_rng);
            let init = ModelState {
                extractor,
                head,
                pretrained_snapshot: pretrained.clone(),
            };
            run_ft(&init, train, cfg, &cfg.mitigation)
        }
        ProtocolKind::LpFt => {
            let lp = run_lp(pretrained, train, cfg, &cfg.mitigation)?;
            let mut adapted = run_ft(&lp.model, train, cfg, &cfg.mitigation)?;
            let mut log = lp.train_log;
            log.extend(adapted.train_log);
            adapted.train_log = log;
            Ok(adapted)
        }
    }
}

fn class_count<F: Scalar>(train: &Dataset<F>) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    Ok(train.labels.iter().max().map_or(0, |&m| m + 1).max(2))
}
