//! Synthetic dominoes: a simple one-hot block paired with a hard antipodal
//! block under a controllable correlation, plus shifted, corrupted and
//! anomalous variants.
//!
//! Each sample concatenates [simple | complex]. The label is always the
//! class of the complex block. The complex block for class c is b·v_c plus
//! gaussian noise, with a uniform sign b ∈ {±1}, so class means are zero and
//! no linear classifier can separate the complex block on its own. The
//! simple block is the class one-hot e_{l_s} plus noise, where l_s equals
//! the label with probability ρ and is drawn uniformly over all classes
//! otherwise (match rate ρ + (1−ρ)/C).

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Number of extra class directions reserved for held-out-class anomalies.
pub const RESERVED_DIRECTIONS: usize = 2;

/// ρ of the randomized evaluation split. Mismatched simple labels are drawn
/// uniformly over all C classes, so the match rate is ρ + (1−ρ)/C; at ρ = 0
/// pairings are at chance with match rate exactly 1/C.
pub const RANDOMIZED_RHO: f64 = 0.0;

#[derive(Debug, Clone)]
pub struct DominoConfig {
    /// Class count C; the simple block width equals C.
    pub classes: usize,
    /// Complex block width, must be at least C.
    pub complex_dim: usize,
    /// Probability that the simple label matches the complex label.
    pub rho: f64,
    /// Simple-block noise std.
    pub sigma_simple: f64,
    /// Complex-block noise std.
    pub sigma_complex: f64,
    pub seed: u64,
}

impl Default for DominoConfig {
    fn default() -> Self {
        DominoConfig {
            classes: 5,
            complex_dim: 8,
            rho: 1.0,
            sigma_simple: 0.1,
            sigma_complex: 0.15,
            seed: 7,
        }
    }
}

impl DominoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("dominoes need at least 2 classes"));
        }
        if self.complex_dim < self.classes {
            return Err(Error::config(format!(
                "complex_dim {} must be >= classes {}",
                self.complex_dim, self.classes
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho {} outside [0,1]", self.rho)));
        }
        if self.sigma_simple <= 0.0 || self.sigma_complex <= 0.0 {
            return Err(Error::config("noise stds must be positive"));
        }
        Ok(())
    }

    /// Width of one input vector: simple block (C) + complex block.
    pub fn input_dim(&self) -> usize {
        self.classes + self.complex_dim
    }
}

/// Distribution shift applied to the complex block for OOD evaluation:
/// the class directions are rotated inside their span and the noise grows.
#[derive(Debug, Clone)]
pub struct ShiftConfig {
    /// Rotation angle in radians within the complex subspace.
    pub rotation_angle: f64,
    /// Multiplier on sigma_complex.
    pub noise_scale: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            rotation_angle: std::f64::consts::FRAC_PI_6,
            noise_scale: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    UniformNoise,
    MaskZero,
    ScaleDown,
    ConstantShift,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::UniformNoise,
        CorruptionKind::MaskZero,
        CorruptionKind::ScaleDown,
        CorruptionKind::ConstantShift,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::UniformNoise => "uniform_noise",
            CorruptionKind::MaskZero => "mask_zero",
            CorruptionKind::ScaleDown => "scale_down",
            CorruptionKind::ConstantShift => "constant_shift",
        }
    }
}

/// Corruption kind plus severity in {1, 2, 3}; per-kind magnitudes are fixed
/// tables that grow strictly with severity.
#[derive(Debug, Clone, Copy)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn magnitude(&self) -> Result<f64> {
        let idx = match self.severity {
            1 => 0,
            2 => 1,
            3 => 2,
            s => return Err(Error::config(format!("corruption severity {s} not in 1..=3"))),
        };
        let table = match self.kind {
            CorruptionKind::GaussianNoise => [0.1, 0.2, 0.4],
            CorruptionKind::UniformNoise => [0.1, 0.2, 0.4],
            CorruptionKind::MaskZero => [0.1, 0.25, 0.5],
            CorruptionKind::ScaleDown => [0.8, 0.6, 0.4],
            CorruptionKind::ConstantShift => [0.2, 0.5, 1.0],
        };
        Ok(table[idx])
    }

    /// The 15 corrupted-set specs: every kind at every severity.
    pub fn full_suite() -> Vec<CorruptionSpec> {
        let mut out = Vec::with_capacity(15);
        for kind in CorruptionKind::ALL {
            for severity in 1..=3 {
                out.push(CorruptionSpec { kind, severity });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    Gaussian,
    Uniform,
    Blob,
    HeldoutClass,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::Gaussian,
        AnomalyKind::Uniform,
        AnomalyKind::Blob,
        AnomalyKind::HeldoutClass,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnomalyKind::Gaussian => "gaussian",
            AnomalyKind::Uniform => "uniform",
            AnomalyKind::Blob => "blob",
            AnomalyKind::HeldoutClass => "heldout_class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Train,
    IdTest,
    OodTest,
    Randomized,
    Corrupted(CorruptionKind, u8),
    Anomaly(AnomalyKind),
}

impl Provenance {
    pub fn label(&self) -> String {
        match self {
            Provenance::Train => "train".to_string(),
            Provenance::IdTest => "id_test".to_string(),
            Provenance::OodTest => "ood_test".to_string(),
            Provenance::Randomized => "randomized".to_string(),
            Provenance::Corrupted(kind, sev) => format!("corrupted({},{sev})", kind.name()),
            Provenance::Anomaly(kind) => format!("anomaly({})", kind.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    pub inputs: Matrix<F>,
    /// Complex-block class per sample; this is always the label.
    pub labels: Vec<usize>,
    /// Simple-block class per sample (diagnostic only).
    pub simple_labels: Vec<usize>,
    pub provenance: Provenance,
}

impl<F: Scalar> Dataset<F> {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV layout: x_0..x_{d-1}, y, l_s, provenance.
    pub fn to_csv(&self) -> String {
        let d = self.inputs.cols();
        let mut out = String::new();
        for j in 0..d {
            out.push_str(&format!("x_{j},"));
        }
        out.push_str("y,l_s,provenance\n");
        let tag = self.provenance.label();
        for i in 0..self.len() {
            for &x in self.inputs.row(i) {
                out.push_str(&format!("{x},"));
            }
            out.push_str(&format!("{},{},{tag}\n", self.labels[i], self.simple_labels[i]));
        }
        out
    }
}

/// Immutable sampling state: orthonormal class directions for the complex
/// block plus reserved directions for held-out-class anomalies.
#[derive(Debug, Clone)]
pub struct GeneratorState<F: Scalar> {
    cfg: DominoConfig,
    /// complex_dim × classes, orthonormal columns.
    directions: Matrix<F>,
    /// complex_dim × RESERVED_DIRECTIONS when there is room, orthonormal to
    /// the class directions.
    reserved: Option<Matrix<F>>,
}

/// Gram-Schmidt over the columns of a matrix of gaussian draws.
fn orthonormal_columns<F: Scalar>(dim: usize, count: usize, rng: &mut Rng) -> Matrix<F> {
    assert!(count <= dim, "cannot orthonormalize {count} columns in dim {dim}");
    let mut cols: Vec<Vec<F>> = Vec::with_capacity(count);
    while cols.len() < count {
        let mut v: Vec<F> = (0..dim).map(|_| rng.normal::<F>()).collect();
        for prev in &cols {
            let dot = v.iter().zip(prev).fold(F::zero(), |a, (&x, &y)| a + x * y);
            for (x, &p) in v.iter_mut().zip(prev) {
                *x = *x - dot * p;
            }
        }
        let norm = v.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
        // A degenerate draw is astronomically unlikely; redraw if it happens.
        if norm < F::from_config(1e-8) {
            continue;
        }
        for x in v.iter_mut() {
            *x = *x / norm;
        }
        cols.push(v);
    }
    let mut out = Matrix::zeros(dim, count);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            out.set(i, j, x);
        }
    }
    out
}

/// Builds the class directions from a seeded orthonormalization.
pub fn build_generators<F: Scalar>(cfg: &DominoConfig) -> Result<GeneratorState<F>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed).substream("directions", 0);
    let want_reserved = cfg.complex_dim >= cfg.classes + RESERVED_DIRECTIONS;
    let total = if want_reserved {
        cfg.classes + RESERVED_DIRECTIONS
    } else {
        cfg.classes
    };
    let all = orthonormal_columns::<F>(cfg.complex_dim, total, &mut rng);
    let mut directions = Matrix::zeros(cfg.complex_dim, cfg.classes);
    for i in 0..cfg.complex_dim {
        for j in 0..cfg.classes {
            directions.set(i, j, all.get(i, j));
        }
    }
    let reserved = want_reserved.then(|| {
        let mut r = Matrix::zeros(cfg.complex_dim, RESERVED_DIRECTIONS);
        for i in 0..cfg.complex_dim {
            for j in 0..RESERVED_DIRECTIONS {
                r.set(i, j, all.get(i, cfg.classes + j));
            }
        }
        r
    });
    Ok(GeneratorState { cfg: cfg.clone(), directions, reserved })
}

impl<F: Scalar> GeneratorState<F> {
    pub fn config(&self) -> &DominoConfig {
        &self.cfg
    }

    pub fn directions(&self) -> &Matrix<F> {
        &self.directions
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim()
    }

    fn direction_column(&self, matrix: &Matrix<F>, class: usize) -> Vec<F> {
        (0..self.cfg.complex_dim).map(|i| matrix.get(i, class)).collect()
    }

    fn sample_with(
        &self,
        n: usize,
        rho: f64,
        directions: &Matrix<F>,
        sigma_complex: f64,
        provenance: Provenance,
        rng: &mut Rng,
    ) -> Dataset<F> {
        let c = self.cfg.classes;
        let d_s = c;
        let d_c = self.cfg.complex_dim;
        let sig_s = F::from_config(self.cfg.sigma_simple);
        let sig_c = F::from_config(sigma_complex);
        let mut inputs = Matrix::zeros(n, d_s + d_c);
        let mut labels = Vec::with_capacity(n);
        let mut simple_labels = Vec::with_capacity(n);
        for i in 0..n {
            let l_c = rng.index(c);
            let sign: F = rng.sign();
            let l_s = if rng.bernoulli(rho) { l_c } else { rng.index(c) };
            let row = inputs.row_mut(i);
            for (j, x) in row[..d_s].iter_mut().enumerate() {
                let proto = if j == l_s { F::one() } else { F::zero() };
                *x = proto + sig_s * rng.normal::<F>();
            }
            let v = (0..d_c).map(|r| directions.get(r, l_c));
            for (x, dir) in row[d_s..].iter_mut().zip(v) {
                *x = sign * dir + sig_c * rng.normal::<F>();
            }
            labels.push(l_c);
            simple_labels.push(l_s);
        }
        Dataset { inputs, labels, simple_labels, provenance }
    }
}

/// Draws n dominoes at the generator's ρ (or an override).
pub fn sample<F: Scalar>(
    gen: &GeneratorState<F>,
    n: usize,
    rho_override: Option<f64>,
    provenance: Provenance,
    rng: &mut Rng,
) -> Result<Dataset<F>> {
    if n < 1 {
        return Err(Error::config("sample: n must be >= 1"));
    }
    let rho = rho_override.unwrap_or(gen.cfg.rho);
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("rho override {rho} outside [0,1]")));
    }
    Ok(gen.sample_with(n, rho, &gen.directions, gen.cfg.sigma_complex, provenance, rng))
}

/// Rotation by `angle` in a seeded 2-plane inside the span of the class
/// directions: R = I + (cosθ−1)(aaᵀ+bbᵀ) + sinθ(abᵀ−baᵀ).
fn shifted_directions<F: Scalar>(gen: &GeneratorState<F>, angle: f64) -> Matrix<F> {
    let d_c = gen.cfg.complex_dim;
    let c = gen.cfg.classes;
    let mut plane_rng = Rng::new(gen.cfg.seed).substream("shift-plane", 0);

    // Two orthonormal vectors inside span(v_1..v_C).
    let coeffs_a: Vec<F> = (0..c).map(|_| plane_rng.normal::<F>()).collect();
    let coeffs_b: Vec<F> = (0..c).map(|_| plane_rng.normal::<F>()).collect();
    let in_span = |coeffs: &[F]| -> Vec<F> {
        (0..d_c)
            .map(|i| {
                coeffs
                    .iter()
                    .enumerate()
                    .fold(F::zero(), |acc, (j, &w)| acc + w * gen.directions.get(i, j))
            })
            .collect()
    };
    let normalize = |v: &mut Vec<F>| {
        let norm = v.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    };
    let mut a = in_span(&coeffs_a);
    normalize(&mut a);
    let mut b = in_span(&coeffs_b);
    let dot = b.iter().zip(&a).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
    for (x, &ai) in b.iter_mut().zip(&a) {
        *x = *x - dot * ai;
    }
    normalize(&mut b);

    let cos_m1 = F::from_config(angle.cos() - 1.0);
    let sin = F::from_config(angle.sin());
    let mut out = Matrix::zeros(d_c, c);
    for j in 0..c {
        let v = gen.direction_column(&gen.directions, j);
        let av = a.iter().zip(&v).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        let bv = b.iter().zip(&v).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        for i in 0..d_c {
            let rotated =
                v[i] + cos_m1 * (a[i] * av + b[i] * bv) + sin * (a[i] * bv - b[i] * av);
            out.set(i, j, rotated);
        }
    }
    out
}

/// OOD draw: rotated class directions and scaled complex noise.
pub fn sample_ood<F: Scalar>(
    gen: &GeneratorState<F>,
    shift: &ShiftConfig,
    n: usize,
    rho: f64,
    rng: &mut Rng,
) -> Result<Dataset<F>> {
    if n < 1 {
        return Err(Error::config("sample_ood: n must be >= 1"));
    }
    let directions = shifted_directions(gen, shift.rotation_angle);
    Ok(gen.sample_with(
        n,
        rho,
        &directions,
        gen.cfg.sigma_complex * shift.noise_scale,
        Provenance::OodTest,
        rng,
    ))
}

/// Applies one corruption to a copy of the dataset; labels are preserved.
pub fn corrupt<F: Scalar>(
    ds: &Dataset<F>,
    spec: &CorruptionSpec,
    rng: &mut Rng,
) -> Result<Dataset<F>> {
    let magnitude = spec.magnitude()?;
    let mut inputs = ds.inputs.clone();
    let d = inputs.cols();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let m = F::from_config(magnitude);
            for x in inputs.data_mut() {
                *x = *x + m * rng.normal::<F>();
            }
        }
        CorruptionKind::UniformNoise => {
            for x in inputs.data_mut() {
                *x = *x + rng.uniform::<F>(-magnitude, magnitude);
            }
        }
        CorruptionKind::MaskZero => {
            // round-half-up count of zeroed coordinates per sample
            let k = (magnitude * d as f64 + 0.5).floor() as usize;
            let mut coords: Vec<usize> = (0..d).collect();
            for i in 0..inputs.rows() {
                rng.shuffle(&mut coords);
                let row = inputs.row_mut(i);
                for &j in &coords[..k] {
                    row[j] = F::zero();
                }
            }
        }
        CorruptionKind::ScaleDown => {
            let m = F::from_config(magnitude);
            for x in inputs.data_mut() {
                *x = *x * m;
            }
        }
        CorruptionKind::ConstantShift => {
            let m = F::from_config(magnitude);
            for x in inputs.data_mut() {
                *x = *x + m;
            }
        }
    }
    Ok(Dataset {
        inputs,
        labels: ds.labels.clone(),
        simple_labels: ds.simple_labels.clone(),
        provenance: Provenance::Corrupted(spec.kind, spec.severity),
    })
}

/// Anomalous inputs (no labels).
pub fn sample_anomalies<F: Scalar>(
    kind: AnomalyKind,
    n: usize,
    gen: &GeneratorState<F>,
    rng: &mut Rng,
) -> Result<Matrix<F>> {
    if n < 1 {
        return Err(Error::config("sample_anomalies: n must be >= 1"));
    }
    let d = gen.input_dim();
    match kind {
        AnomalyKind::Gaussian => {
            let mut out = Matrix::zeros(n, d);
            for x in out.data_mut() {
                *x = rng.normal::<F>();
            }
            Ok(out)
        }
        AnomalyKind::Uniform => {
            let mut out = Matrix::zeros(n, d);
            for x in out.data_mut() {
                *x = rng.uniform::<F>(-2.0, 2.0);
            }
            Ok(out)
        }
        AnomalyKind::Blob => {
            // Fixed seeded unit direction; each sample slides along it.
            let mut dir_rng = Rng::new(gen.cfg.seed).substream("blob-direction", 0);
            let mut u: Vec<F> = (0..d).map(|_| dir_rng.normal::<F>()).collect();
            let norm = u.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
            for x in u.iter_mut() {
                *x = *x / norm;
            }
            let spread = F::from_config(0.1);
            let mut out = Matrix::zeros(n, d);
            for i in 0..n {
                let s: F = rng.uniform(-2.0, 2.0);
                for (x, &ui) in out.row_mut(i).iter_mut().zip(&u) {
                    *x = s * ui + spread * rng.normal::<F>();
                }
            }
            Ok(out)
        }
        AnomalyKind::HeldoutClass => {
            let reserved = gen.reserved.as_ref().ok_or_else(|| {
                Error::config(format!(
                    "heldout_class anomalies need complex_dim >= classes + {RESERVED_DIRECTIONS}"
                ))
            })?;
            // Dominoes whose complex class is one of the reserved directions;
            // the simple block is paired at chance, like the randomized split.
            let c = gen.cfg.classes;
            let d_s = c;
            let sig_s = F::from_config(gen.cfg.sigma_simple);
            let sig_c = F::from_config(gen.cfg.sigma_complex);
            let mut out = Matrix::zeros(n, d);
            for i in 0..n {
                let class = rng.index(RESERVED_DIRECTIONS);
                let sign: F = rng.sign();
                let l_s = rng.index(c);
                let row = out.row_mut(i);
                for (j, x) in row[..d_s].iter_mut().enumerate() {
                    let proto = if j == l_s { F::one() } else { F::zero() };
                    *x = proto + sig_s * rng.normal::<F>();
                }
                for (r, x) in row[d_s..].iter_mut().enumerate() {
                    *x = sign * reserved.get(r, class) + sig_c * rng.normal::<F>();
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen_default() -> GeneratorState<f64> {
        build_generators(&DominoConfig::default()).unwrap()
    }

    #[test]
    fn directions_are_orthonormal() {
        let g = gen_default();
        let v = g.directions();
        let gram = v.t_matmul(v);
        for i in 0..gram.rows() {
            for j in 0..gram.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn same_seed_same_directions_different_seed_differs() {
        let a = gen_default();
        let b = gen_default();
        assert_eq!(a.directions(), b.directions());

        let mut cfg = DominoConfig::default();
        cfg.seed = 8;
        let c: GeneratorState<f64> = build_generators(&cfg).unwrap();
        let dist = a.directions().sub(c.directions()).frobenius_norm();
        assert!(dist > 0.0);
    }

    #[test]
    fn complex_dim_smaller_than_classes_is_rejected() {
        let cfg = DominoConfig { complex_dim: 3, ..DominoConfig::default() };
        assert!(build_generators::<f64>(&cfg).is_err());
    }

    #[test]
    fn rho_one_forces_matching_labels() {
        let g = gen_default();
        let mut rng = Rng::new(1).substream("data", 0);
        let ds = sample(&g, 500, Some(1.0), Provenance::Train, &mut rng).unwrap();
        assert!(ds.labels.iter().zip(&ds.simple_labels).all(|(a, b)| a == b));
    }

    #[test]
    fn match_rate_tracks_rho() {
        let g = gen_default();
        let mut rng = Rng::new(2).substream("data", 0);
        // Chance pairing: match rate is exactly 1/C.
        let ds =
            sample(&g, 100_000, Some(RANDOMIZED_RHO), Provenance::Randomized, &mut rng).unwrap();
        let matches = ds
            .labels
            .iter()
            .zip(&ds.simple_labels)
            .filter(|(a, b)| a == b)
            .count() as f64;
        let rate = matches / ds.len() as f64;
        assert!((rate - 0.2).abs() < 0.01, "rate {rate}");

        let ds = sample(&g, 100_000, Some(0.95), Provenance::IdTest, &mut rng).unwrap();
        let matches = ds
            .labels
            .iter()
            .zip(&ds.simple_labels)
            .filter(|(a, b)| a == b)
            .count() as f64;
        let rate = matches / ds.len() as f64;
        // counting oracle: 0.95 + 0.05/5 = 0.96
        assert!((rate - 0.96).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn zero_shift_reproduces_plain_sampling_bitwise() {
        let g = gen_default();
        let shift = ShiftConfig { rotation_angle: 0.0, noise_scale: 1.0 };
        let mut r1 = Rng::new(3).substream("data", 1);
        let mut r2 = r1.clone();
        let plain = sample(&g, 200, Some(0.9), Provenance::OodTest, &mut r1).unwrap();
        let shifted = sample_ood(&g, &shift, 200, 0.9, &mut r2).unwrap();
        assert_eq!(plain.inputs, shifted.inputs);
        assert_eq!(plain.labels, shifted.labels);
    }

    #[test]
    fn shifted_directions_stay_unit_norm() {
        let g = gen_default();
        let rotated = shifted_directions(&g, ShiftConfig::default().rotation_angle);
        for j in 0..rotated.cols() {
            let norm: f64 = (0..rotated.rows()).map(|i| rotated.get(i, j).powi(2)).sum();
            assert!((norm.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mask_zero_hits_exact_count() {
        let g = gen_default();
        let mut rng = Rng::new(4).substream("data", 0);
        let ds = sample(&g, 50, Some(1.0), Provenance::IdTest, &mut rng).unwrap();
        let spec = CorruptionSpec { kind: CorruptionKind::MaskZero, severity: 2 };
        let corrupted = corrupt(&ds, &spec, &mut rng).unwrap();
        // d = 13, round-half-up(0.25 · 13) = 3
        for i in 0..corrupted.len() {
            let zeros = corrupted.inputs.row(i).iter().filter(|&&x| x == 0.0).count();
            assert_eq!(zeros, 3, "row {i}");
        }
        assert_eq!(corrupted.labels, ds.labels);
    }

    #[test]
    fn scale_down_is_exact_multiplication() {
        let g = gen_default();
        let mut rng = Rng::new(5).substream("data", 0);
        let ds = sample(&g, 20, Some(1.0), Provenance::IdTest, &mut rng).unwrap();
        let spec = CorruptionSpec { kind: CorruptionKind::ScaleDown, severity: 2 };
        let corrupted = corrupt(&ds, &spec, &mut rng).unwrap();
        for (a, b) in corrupted.inputs.data().iter().zip(ds.inputs.data()) {
            assert_eq!(*a, *b * 0.6);
        }
    }

    #[test]
    fn severity_magnitudes_strictly_increase() {
        for kind in CorruptionKind::ALL {
            let m: Vec<f64> = (1..=3)
                .map(|severity| CorruptionSpec { kind, severity }.magnitude().unwrap())
                .collect();
            // scale_down severities shrink the factor, i.e. the distortion grows
            if kind == CorruptionKind::ScaleDown {
                assert!(m[0] > m[1] && m[1] > m[2]);
            } else {
                assert!(m[0] < m[1] && m[1] < m[2]);
            }
        }
    }

    #[test]
    fn gaussian_anomalies_have_near_zero_mean() {
        let g = gen_default();
        let mut rng = Rng::new(6).substream("anomaly", 0);
        let xs = sample_anomalies(AnomalyKind::Gaussian, 10_000, &g, &mut rng).unwrap();
        for j in 0..xs.cols() {
            let mean: f64 = (0..xs.rows()).map(|i| xs.get(i, j)).sum::<f64>() / xs.rows() as f64;
            assert!(mean.abs() < 0.05, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn blob_anomalies_concentrate_on_one_direction() {
        let g = gen_default();
        let mut rng = Rng::new(7).substream("anomaly", 0);
        let xs = sample_anomalies(AnomalyKind::Blob, 2_000, &g, &mut rng).unwrap();
        // eigen oracle via the covariance trace vs its largest eigenvalue
        // (power iteration on the 13×13 covariance).
        let centered = xs.center_columns();
        let cov = centered.t_matmul(&centered).scale(1.0 / xs.rows() as f64);
        let trace: f64 = (0..cov.rows()).map(|i| cov.get(i, i)).sum();
        let mut v = vec![1.0f64; cov.rows()];
        for _ in 0..200 {
            let mut next = vec![0.0; cov.rows()];
            for (i, n) in next.iter_mut().enumerate() {
                for (j, &x) in v.iter().enumerate() {
                    *n += cov.get(i, j) * x;
                }
            }
            let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in next.iter_mut() {
                *x /= norm;
            }
            v = next;
        }
        let mut top = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &vj) in v.iter().enumerate() {
                acc += cov.get(i, j) * vj;
            }
            top += vi * acc;
        }
        assert!(top / trace > 0.9, "top/trace = {}", top / trace);
    }

    #[test]
    fn heldout_class_needs_reserved_room() {
        let cfg = DominoConfig { complex_dim: 5, ..DominoConfig::default() };
        let g: GeneratorState<f64> = build_generators(&cfg).unwrap();
        let mut rng = Rng::new(8);
        let res = sample_anomalies(AnomalyKind::HeldoutClass, 10, &g, &mut rng);
        assert!(res.is_err());

        let g = gen_default();
        let xs = sample_anomalies(AnomalyKind::HeldoutClass, 10, &g, &mut rng).unwrap();
        assert_eq!(xs.rows(), 10);
    }

    #[test]
    fn datasets_are_bit_identical_for_same_seed() {
        let g = gen_default();
        let mut r1 = Rng::new(9).substream("data", 3);
        let mut r2 = Rng::new(9).substream("data", 3);
        let a = sample(&g, 100, None, Provenance::Train, &mut r1).unwrap();
        let b = sample(&g, 100, None, Provenance::Train, &mut r2).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.simple_labels, b.simple_labels);
    }

    #[test]
    fn csv_layout_has_expected_header() {
        let g = gen_default();
        let mut rng = Rng::new(10);
        let ds = sample(&g, 2, Some(1.0), Provenance::IdTest, &mut rng).unwrap();
        let csv = ds.to_csv();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("x_0,"));
        assert!(header.ends_with("y,l_s,provenance"));
        assert_eq!(csv.lines().count(), 3);
    }
}
