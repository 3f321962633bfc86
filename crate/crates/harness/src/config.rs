//! Study configuration: a flat JSON file with documented keys (unknown keys
//! are rejected) plus the protocol-name grammar.
//!
//! Protocol names compose the stage names with an optional mitigation in
//! parentheses:
//!
//! ```text
//! lp            ft            ft_scratch        lp+ft
//! lp(vat)       lp(udp)       lp(soup)
//! lp(vat)+ft    lp(udp)+ft    lp(soup)+ft
//! lp+ft(vat)    lp+ft(udp)
//! lp(vat)+ft(vat)              lp(udp)+ft(udp)
//! ft(vat)       ft(udp)
//! ```
//!
//! A mitigation on the lp part applies during linear probing, on the ft
//! part during fine-tuning, and on both parts (same mitigation) during both
//! stages. Soup is probe-stage only.

use adaptlab_core::protocols::{
    Mitigation, MitigationStage, ProtocolConfig, ProtocolKind, SoupConfig, UdpConfig, VatConfig,
};
use adaptlab_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    // dominoes
    pub classes: usize,
    pub complex_dim: usize,
    pub sigma_simple: f64,
    pub sigma_complex: f64,
    pub rho_values: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_anomaly: usize,
    pub data_seed: u64,
    // OOD shift
    pub rotation_angle: f64,
    pub noise_scale: f64,
    // study
    pub protocols: Vec<String>,
    pub seeds: Vec<u64>,
    pub val_fraction: f64,
    // hyperparameter grids
    pub lp_lr_grid: Vec<f64>,
    pub ft_lr_grid: Vec<f64>,
    pub lp_ft_ft_lr_grid: Vec<f64>,
    pub vat_alpha_grid: Vec<f64>,
    pub vat_epsilon: f64,
    pub udp_epsilon_grid: Vec<f64>,
    pub soup_k_grid: Vec<usize>,
    pub soup_sparsity: f64,
    // training
    pub lp_epochs: usize,
    pub ft_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    // pretraining
    pub pretrain_epochs: usize,
    pub pretrain_lambda: f64,
    pub pretrain_lr: f64,
    pub pretrain_samples_per_epoch: usize,
    pub pretrain_seed: u64,
    // attack
    pub pgd_epsilon: f64,
    pub pgd_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            classes: 5,
            complex_dim: 8,
            sigma_simple: 0.1,
            // The complex block must carry irreducible error for protocols
            // to differ in their simple-feature reliance; 0.3 puts the
            // complex-only ceiling near 0.95.
            sigma_complex: 0.3,
            rho_values: vec![0.95, 0.99, 1.0],
            n_train: 20_000,
            n_test: 5_000,
            n_anomaly: 2_000,
            data_seed: 7,
            rotation_angle: std::f64::consts::FRAC_PI_6,
            noise_scale: 1.5,
            protocols: vec!["lp".into(), "ft".into(), "lp+ft".into()],
            seeds: vec![0, 1, 2],
            val_fraction: 0.1,
            // Learning-rate grids are desk-scale; probe training is plain
            // minibatch SGD, so the big frozen-feature rates used at image
            // scale do not transfer.
            lp_lr_grid: vec![0.001, 0.003, 0.01],
            ft_lr_grid: vec![1e-3, 1e-2],
            lp_ft_ft_lr_grid: vec![1e-5, 1e-4],
            vat_alpha_grid: vec![0.001, 0.01, 0.1],
            vat_epsilon: 0.1,
            udp_epsilon_grid: vec![0.005, 0.01, 0.02, 0.1],
            soup_k_grid: vec![5, 10, 20],
            soup_sparsity: 0.5,
            lp_epochs: 100,
            ft_epochs: 20,
            batch_size: 128,
            momentum: 0.9,
            pretrain_epochs: 50,
            pretrain_lambda: 1.0,
            pretrain_lr: 0.05,
            pretrain_samples_per_epoch: 4000,
            pretrain_seed: 1234,
            pgd_epsilon: 0.05,
            pgd_seed: 99,
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<StudyConfig> {
        let cfg: StudyConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.protocols.is_empty() {
            return Err(Error::config("protocol list is empty"));
        }
        for name in &self.protocols {
            parse_protocol(name)?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.rho_values.is_empty() {
            return Err(Error::config("rho_values is empty"));
        }
        if self.rho_values.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("rho_values must lie in [0,1]"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::config("val_fraction must lie in (0, 0.5)"));
        }
        if self.n_anomaly == 0 {
            return Err(Error::config("n_anomaly must be at least 1"));
        }
        if self.lp_lr_grid.is_empty()
            || self.ft_lr_grid.is_empty()
            || self.lp_ft_ft_lr_grid.is_empty()
            || self.vat_alpha_grid.is_empty()
            || self.udp_epsilon_grid.is_empty()
            || self.soup_k_grid.is_empty()
        {
            return Err(Error::config("hyperparameter grids must be nonempty"));
        }
        if self.n_train < 10 || self.n_test < 10 {
            return Err(Error::config("n_train and n_test must be at least 10"));
        }
        Ok(())
    }
}

/// A parsed protocol name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub scratch: bool,
    pub mitigation: MitigationName,
    pub stage: MitigationStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MitigationName {
    None,
    Vat,
    Udp,
    Soup,
}

impl MitigationName {
    fn parse(s: &str) -> Result<MitigationName> {
        match s {
            "vat" => Ok(MitigationName::Vat),
            "udp" => Ok(MitigationName::Udp),
            "soup" => Ok(MitigationName::Soup),
            other => Err(Error::config(format!("unknown mitigation '{other}'"))),
        }
    }

    fn token(&self) -> &'static str {
        match self {
            MitigationName::None => "",
            MitigationName::Vat => "vat",
            MitigationName::Udp => "udp",
            MitigationName::Soup => "soup",
        }
    }
}

/// One stage token: `lp`, `ft`, `ft_scratch`, optionally `(mitigation)`.
fn parse_stage(token: &str) -> Result<(&str, Option<MitigationName>)> {
    if let Some(open) = token.find('(') {
        if !token.ends_with(')') {
            return Err(Error::config(format!("unbalanced parentheses in '{token}'")));
        }
        let base = &token[..open];
        let mit = MitigationName::parse(&token[open + 1..token.len() - 1])?;
        Ok((base, Some(mit)))
    } else {
        Ok((token, None))
    }
}

pub fn parse_protocol(name: &str) -> Result<ProtocolSpec> {
    let parts: Vec<&str> = name.split('+').collect();
    let bad = || Error::Config(format!("unrecognized protocol '{name}'"));
    match parts.as_slice() {
        [single] => {
            let (base, mit) = parse_stage(single)?;
            match base {
                "lp" => Ok(ProtocolSpec {
                    kind: ProtocolKind::Lp,
                    scratch: false,
                    mitigation: mit.unwrap_or(MitigationName::None),
                    stage: MitigationStage::Lp,
                }),
                "ft" => Ok(ProtocolSpec {
                    kind: ProtocolKind::Ft,
                    scratch: false,
                    mitigation: mit.unwrap_or(MitigationName::None),
                    stage: MitigationStage::Ft,
                }),
                "ft_scratch" => {
                    if mit.is_some() {
                        return Err(bad());
                    }
                    Ok(ProtocolSpec {
                        kind: ProtocolKind::Ft,
                        scratch: true,
                        mitigation: MitigationName::None,
                        stage: MitigationStage::Ft,
                    })
                }
                _ => Err(bad()),
            }
        }
        [lp_part, ft_part] => {
            let (lp_base, lp_mit) = parse_stage(lp_part)?;
            let (ft_base, ft_mit) = parse_stage(ft_part)?;
            if lp_base != "lp" || ft_base != "ft" {
                return Err(bad());
            }
            let (mitigation, stage) = match (lp_mit, ft_mit) {
                (None, None) => (MitigationName::None, MitigationStage::Lp),
                (Some(m), None) => (m, MitigationStage::Lp),
                (None, Some(m)) => (m, MitigationStage::Ft),
                (Some(a), Some(b)) => {
                    if a != b {
                        return Err(Error::config(format!(
                            "protocol '{name}' mixes two different mitigations"
                        )));
                    }
                    (a, MitigationStage::Both)
                }
            };
            if mitigation == MitigationName::Soup && stage != MitigationStage::Lp {
                return Err(Error::config("soup applies to the lp stage only"));
            }
            Ok(ProtocolSpec {
                kind: ProtocolKind::LpFt,
                scratch: false,
                mitigation,
                stage,
            })
        }
        _ => Err(bad()),
    }
}

impl ProtocolSpec {
    /// Canonical display name (the parseable grammar above).
    pub fn name(&self) -> String {
        let decorate = |base: &str, covered: bool| {
            if covered && self.mitigation != MitigationName::None {
                format!("{base}({})", self.mitigation.token())
            } else {
                base.to_string()
            }
        };
        match self.kind {
            ProtocolKind::Lp => decorate("lp", true),
            ProtocolKind::Ft => {
                if self.scratch {
                    "ft_scratch".to_string()
                } else {
                    decorate("ft", true)
                }
            }
            ProtocolKind::LpFt => {
                let lp = decorate("lp", self.stage.covers_lp());
                let ft = decorate("ft", self.stage.covers_ft());
                format!("{lp}+{ft}")
            }
        }
    }

    pub fn uses_lp(&self) -> bool {
        matches!(self.kind, ProtocolKind::Lp | ProtocolKind::LpFt)
    }

    pub fn uses_ft(&self) -> bool {
        matches!(self.kind, ProtocolKind::Ft | ProtocolKind::LpFt)
    }

    /// Concrete protocol configuration for one grid point.
    pub fn to_protocol_config(
        &self,
        hp: &HpPoint,
        study: &StudyConfig,
        seed: u64,
    ) -> ProtocolConfig {
        let mitigation = match self.mitigation {
            MitigationName::None => Mitigation::None,
            MitigationName::Vat => Mitigation::Vat(VatConfig {
                alpha: hp.vat_alpha.expect("vat grid point carries alpha"),
                epsilon: study.vat_epsilon,
                ..VatConfig::default()
            }),
            MitigationName::Udp => Mitigation::Udp(UdpConfig {
                epsilon: hp.udp_epsilon.expect("udp grid point carries epsilon"),
                ..UdpConfig::default()
            }),
            MitigationName::Soup => Mitigation::Soup(SoupConfig {
                k: hp.soup_k.expect("soup grid point carries k"),
                sparsity: study.soup_sparsity,
                seed: 0,
            }),
        };
        ProtocolConfig {
            kind: self.kind,
            scratch_init: self.scratch,
            mitigation,
            stage: self.stage,
            lp_lr: hp.lp_lr.unwrap_or(0.0),
            ft_lr: hp.ft_lr.unwrap_or(0.0),
            lp_epochs: study.lp_epochs,
            ft_epochs: study.ft_epochs,
            batch_size: study.batch_size,
            momentum: study.momentum,
            seed,
        }
    }
}

/// One point of a protocol's hyperparameter grid. Fields not applicable to
/// the protocol stay None.
#[derive(Debug, Clone, PartialEq)]
pub struct HpPoint {
    pub lp_lr: Option<f64>,
    pub ft_lr: Option<f64>,
    pub vat_alpha: Option<f64>,
    pub udp_epsilon: Option<f64>,
    pub soup_k: Option<usize>,
}

impl HpPoint {
    /// Lexicographic order over (lp_lr, ft_lr, vat_alpha, udp_epsilon, soup_k)
    /// used to break validation-accuracy ties.
    pub fn tuple_key(&self) -> [f64; 5] {
        let opt = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
        [
            opt(self.lp_lr),
            opt(self.ft_lr),
            opt(self.vat_alpha),
            opt(self.udp_epsilon),
            opt(self.soup_k.map(|k| k as f64)),
        ]
    }
}

/// Full grid for one protocol, in deterministic order.
pub fn hyperparameter_grid(spec: &ProtocolSpec, study: &StudyConfig) -> Vec<HpPoint> {
    let lp_lrs: Vec<Option<f64>> = if spec.uses_lp() {
        study.lp_lr_grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let ft_lrs: Vec<Option<f64>> = if spec.uses_ft() {
        let grid = if spec.kind == ProtocolKind::LpFt {
            &study.lp_ft_ft_lr_grid
        } else {
            &study.ft_lr_grid
        };
        grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mitigation_axis: Vec<(Option<f64>, Option<f64>, Option<usize>)> = match spec.mitigation {
        MitigationName::None => vec![(None, None, None)],
        MitigationName::Vat => study
            .vat_alpha_grid
            .iter()
            .map(|&a| (Some(a), None, None))
            .collect(),
        MitigationName::Udp => study
            .udp_epsilon_grid
            .iter()
            .map(|&e| (None, Some(e), None))
            .collect(),
        MitigationName::Soup => study
            .soup_k_grid
            .iter()
            .map(|&k| (None, None, Some(k)))
            .collect(),
    };

    let mut out = Vec::new();
    for &lp_lr in &lp_lrs {
        for &ft_lr in &ft_lrs {
            for &(vat_alpha, udp_epsilon, soup_k) in &mitigation_axis {
                out.push(HpPoint { lp_lr, ft_lr, vat_alpha, udp_epsilon, soup_k });
            }
        }
    }
    out
}
