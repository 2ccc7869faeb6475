use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::series::{paa, perturb_zero_series, rescale_to_unit, MultiStepLabel};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Values may overshoot `[−1, 1]` by this much before polar encoding fails.
pub const POLAR_TOLERANCE: f64 = 1e-12;

/// Square image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GafMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GafMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape {
                op: "gaf matrix",
                left: vec![data.len()],
                right: vec![n, n],
            });
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.data[j * self.n + i] = self.get(i, j);
            }
        }
        t
    }
}

/// Angles `ψ_i = arccos(x_i)` and radii `ρ_i = i / C` for `i = 1..=T`.
pub fn to_polar(window: &[f64], c: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::validation(format!("polar span constant must be positive, got {c}")));
    }
    let x = clamp_unit(window)?;
    let psi = x.iter().map(|v| v.acos()).collect();
    let rho = (1..=window.len()).map(|i| i as f64 / c).collect();
    Ok((psi, rho))
}

fn clamp_unit(window: &[f64]) -> Result<Vec<f64>> {
    window
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.abs() <= 1.0 + POLAR_TOLERANCE {
                Ok(v.clamp(-1.0, 1.0))
            } else {
                Err(Error::validation(format!("value {v} at step {i} is outside [-1, 1]")))
            }
        })
        .collect()
}

/// `cos ψ` and `sin ψ` of each step, computed without trigonometry.
fn cos_sin(window: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = clamp_unit(window)?;
    let s = c.iter().map(|&x| (1.0 - x * x).max(0.0).sqrt()).collect();
    Ok((c, s))
}

/// `G_ij = cos(ψ_i + ψ_j) = x_i·x_j − sqrt(1−x_i²)·sqrt(1−x_j²)`.
pub fn gasf(window: &[f64]) -> Result<GafMatrix> {
    let (c, s) = cos_sin(window)?;
    let n = c.len();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(c[i] * c[j] - s[i] * s[j]);
        }
    }
    GafMatrix::new(n, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GadfForm {
    /// `sin(ψ_i − ψ_j)`: antisymmetric with a zero diagonal.
    #[default]
    Difference,
    /// `sin(ψ_i + ψ_j)`.
    Sum,
}

/// `G_ij = sin(ψ_i − ψ_j) = sqrt(1−x_i²)·x_j − x_i·sqrt(1−x_j²)`.
pub fn gadf(window: &[f64]) -> Result<GafMatrix> {
    gadf_with(window, GadfForm::Difference)
}

pub fn gadf_with(window: &[f64], form: GadfForm) -> Result<GafMatrix> {
    let (c, s) = cos_sin(window)?;
    let n = c.len();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(match form {
                GadfForm::Difference => s[i] * c[j] - c[i] * s[j],
                GadfForm::Sum => s[i] * c[j] + c[i] * s[j],
            });
        }
    }
    GafMatrix::new(n, data)
}

/// Where an image pair came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub service_id: String,
    pub cluster_id: usize,
    /// First step of the window in its series.
    pub start: usize,
    /// Set for images produced by [`augment`].
    pub augmented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GafImagePair {
    pub gasf: GafMatrix,
    pub gadf: GafMatrix,
    pub meta: WindowMeta,
}

impl GafImagePair {
    pub fn size(&self) -> usize {
        self.gasf.size()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: GafImagePair,
    pub label: MultiStepLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GafOptions {
    /// Value substituted into all-zero windows.
    pub perturb_eps: f64,
    /// Downsample windows to this length before encoding.
    pub paa: Option<usize>,
    pub gadf_form: GadfForm,
}

impl Default for GafOptions {
    fn default() -> Self {
        Self {
            perturb_eps: 1e-3,
            paa: None,
            gadf_form: GadfForm::Difference,
        }
    }
}

/// Perturb → PAA (optional) → rescale → GASF/GADF.
pub fn encode_window(window: &[f64], opts: &GafOptions, meta: WindowMeta) -> Result<GafImagePair> {
    if window.is_empty() {
        return Err(Error::validation("cannot encode an empty window"));
    }
    let mut w = perturb_zero_series(window, opts.perturb_eps);
    if let Some(m) = opts.paa {
        w = paa(&w, m)?;
    }
    let x = rescale_to_unit(&w);
    Ok(GafImagePair {
        gasf: gasf(&x)?,
        gadf: gadf_with(&x, opts.gadf_form)?,
        meta,
    })
}

/// Rotation (degrees) followed by a horizontal shear, both about the image
/// centre, resampled bilinearly with zero fill outside the source.
pub fn augment(image: &GafMatrix, rotation_deg: f64, shear: f64) -> GafMatrix {
    let n = image.size();
    let centre = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut out = GafMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            // Output (x, y) = S·R·(u, v); invert: (u, v) = R⁻¹·S⁻¹·(x, y).
            let (x, y) = (c as f64 - centre, r as f64 - centre);
            let (xs, ys) = (x - shear * y, y);
            let u = cos * xs + sin * ys;
            let v = -sin * xs + cos * ys;
            out.data[r * n + c] = bilinear(image, v + centre, u + centre);
        }
    }
    out
}

fn bilinear(image: &GafMatrix, row: f64, col: f64) -> f64 {
    let n = image.size() as isize;
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let px = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= n || c >= n {
            0.0
        } else {
            image.get(r as usize, c as usize)
        }
    };
    let top = px(r0, c0) * (1.0 - fc) + px(r0, c0 + 1) * fc;
    let bottom = px(r0 + 1, c0) * (1.0 - fc) + px(r0 + 1, c0 + 1) * fc;
    top * (1.0 - fr) + bottom * fr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotations are drawn uniformly from `[−max, max]` degrees.
    pub max_rotation_deg: f64,
    /// Shear factors are drawn uniformly from `[−max, max]`.
    pub max_shear: f64,
    /// Minority classes are filled up to `(1 − tolerance)·majority`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 40.0,
            max_shear: 0.2,
            tolerance: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub samples: Vec<LabeledPair>,
    /// Class index → synthetic samples added.
    pub added: BTreeMap<usize, usize>,
    /// Classes of the label space with no samples at all.
    pub empty_classes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Oversamples minority classes with augmented copies of their own samples
/// until every present class has at least `(1 − tolerance)·majority` samples.
pub fn balance_classes(samples: Vec<LabeledPair>, cfg: &AugmentConfig) -> Result<BalanceReport> {
    if !(0.0..1.0).contains(&cfg.tolerance) {
        return Err(Error::config(format!("balance tolerance must lie in [0, 1), got {}", cfg.tolerance)));
    }
    let mut warnings = Vec::new();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label.class_index()).or_default().push(i);
    }
    let num_classes = samples.first().map_or(0, |s| s.label.num_classes());
    if samples.iter().any(|s| s.label.num_classes() != num_classes) {
        return Err(Error::data("samples mix labels of different horizons"));
    }
    let empty_classes: Vec<usize> = (0..num_classes).filter(|c| !by_class.contains_key(c)).collect();
    if !empty_classes.is_empty() {
        warnings.push(format!("classes without samples: {empty_classes:?}"));
    }
    let mut added = BTreeMap::new();
    if by_class.len() < 2 {
        if !samples.is_empty() {
            warnings.push("only one class present; nothing to balance".to_string());
        }
        return Ok(BalanceReport {
            samples,
            added,
            empty_classes,
            warnings,
        });
    }
    let majority = by_class.values().map(Vec::len).max().expect("non-empty");
    let target = ((1.0 - cfg.tolerance) * majority as f64).ceil() as usize;
    let mut rng = seeded(cfg.seed);
    let mut out = samples;
    for (&class, members) in &by_class {
        let need = target.saturating_sub(members.len());
        for _ in 0..need {
            let src = &out[members[rng.random_range(0..members.len())]];
            let rot = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
            let shear = rng.random_range(-cfg.max_shear..=cfg.max_shear);
            let pair = GafImagePair {
                gasf: augment(&src.pair.gasf, rot, shear),
                gadf: augment(&src.pair.gadf, rot, shear),
                meta: WindowMeta {
                    augmented: true,
                    ..src.pair.meta.clone()
                },
            };
            let label = src.label.clone();
            out.push(LabeledPair { pair, label });
        }
        if need > 0 {
            added.insert(class, need);
        }
    }
    Ok(BalanceReport {
        samples: out,
        added,
        empty_classes,
        warnings,
    })
}
