//! Random Fourier feature maps with reparameterized frequencies.
//!
//! Frequencies are never sampled directly from a kernel's spectral density.
//! Instead a [`BaseSample`] of uniform draws is generated once and pushed
//! through the family quantile function, then scaled elementwise by the
//! kernel hyperparameters:
//!
//! ```text
//! gamma[j, i] = sigma[i] * h(omega[j, i])
//! phi_j(x)    = sqrt(2/d) * cos(t(x) . gamma_j + 2 pi phase[j])
//! ```
//!
//! Because the uniform draws stay fixed, the embedding is a smooth function of
//! `sigma` and can be differentiated analytically (see [`FeatureJacobian`]).
//! `t` is the identity for the Gaussian family and `ln(x + c)` for the skewed
//! histogram families.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::{PI, SQRT_2};
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::t_dot;

/// Offset `c` used by the skewed families when none is configured.
pub const DEFAULT_SKEW_OFFSET: f64 = 0.1;

/// Uniform draws are kept inside `[OMEGA_EPS, 1 - OMEGA_EPS]`.
pub const OMEGA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    SkewedChi2,
    SkewedIntersection,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Gaussian,
        KernelFamily::SkewedChi2,
        KernelFamily::SkewedIntersection,
    ];

    /// Whether inputs pass through `ln(x + c)` before projection.
    pub fn is_skewed(self) -> bool {
        !matches!(self, KernelFamily::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::SkewedChi2 => "skewed_chi2",
            KernelFamily::SkewedIntersection => "skewed_intersection",
        }
    }

    /// Quantile (inverse CDF) of the unit-scale spectral density.
    pub fn quantile(self, u: f64) -> Result<f64> {
        quantile(self, u)
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "skewed_chi2" => Ok(KernelFamily::SkewedChi2),
            "skewed_intersection" => Ok(KernelFamily::SkewedIntersection),
            other => Err(Error::Parameter(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Quantile function of the family's unit-scale frequency distribution.
///
/// * gaussian: `sqrt(2) erfinv(2u - 1)`
/// * skewed chi2: `(2/pi) ln(tan(pi u / 2))`
/// * skewed intersection: `tan(pi (u - 1/2))`
///
/// All three are odd about `u = 1/2`. The upper half is evaluated by
/// reflection, `h(u) = -h(1 - u)`, so that `1 - u` (exact for `u >= 1/2`)
/// feeds the well-conditioned lower tail.
pub fn quantile(family: KernelFamily, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("quantile argument must lie in (0, 1), got {u}")));
    }
    if u > 0.5 {
        return Ok(-lower_quantile(family, 1.0 - u));
    }
    Ok(lower_quantile(family, u))
}

// u in (0, 1/2]
fn lower_quantile(family: KernelFamily, u: f64) -> f64 {
    if u == 0.5 {
        return 0.0;
    }
    match family {
        // sqrt(2) erfinv(2u - 1) = -sqrt(2) erfcinv(2u), accurate for small u.
        KernelFamily::Gaussian => -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u),
        KernelFamily::SkewedChi2 => (2.0 / PI) * (0.5 * PI * u).tan().ln(),
        // tan(pi (u - 1/2)) = -cot(pi u)
        KernelFamily::SkewedIntersection => -1.0 / (PI * u).tan(),
    }
}

/// Kernel family together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec")]
pub struct KernelSpec {
    family: KernelFamily,
    sigma: Vec<f64>,
    skew_offset: f64,
}

#[derive(Deserialize)]
struct RawKernelSpec {
    family: KernelFamily,
    sigma: Vec<f64>,
    #[serde(default = "default_skew_offset")]
    skew_offset: f64,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.family, raw.sigma, raw.skew_offset)
    }
}

fn default_skew_offset() -> f64 {
    DEFAULT_SKEW_OFFSET
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: Vec<f64>, skew_offset: f64) -> Result<Self> {
        let spec = KernelSpec {
            family,
            sigma,
            skew_offset,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Isotropic spec: the same `sigma` on each of `m` input dimensions.
    pub fn isotropic(family: KernelFamily, sigma: f64, m: usize, skew_offset: f64) -> Result<Self> {
        Self::new(family, vec![sigma; m], skew_offset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_empty() {
            return Err(Error::Dimension("sigma must have at least one entry".into()));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Parameter(format!(
                "sigma entries must be finite and positive, got {s}"
            )));
        }
        if !(self.skew_offset.is_finite() && self.skew_offset >= 0.0) {
            return Err(Error::Parameter(format!(
                "skew offset must be finite and nonnegative, got {}",
                self.skew_offset
            )));
        }
        Ok(())
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn skew_offset(&self) -> f64 {
        self.skew_offset
    }

    pub fn input_dim(&self) -> usize {
        self.sigma.len()
    }

    /// Same family and offset with new hyperparameters.
    pub fn with_sigma(&self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.sigma.len() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.sigma.len(),
                sigma.len()
            )));
        }
        Self::new(self.family, sigma, self.skew_offset)
    }

    /// Elementwise input transform: identity or `ln(x + c)`.
    pub fn transform_inputs(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns but the kernel expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite input value {v}")));
        }
        if !self.family.is_skewed() {
            return Ok(x.to_owned());
        }
        let c = self.skew_offset;
        if let Some(v) = x.iter().find(|v| **v + c <= 0.0) {
            return Err(Error::Domain(format!(
                "{} kernel needs x + c > 0, got x = {v} with c = {c}",
                self.family
            )));
        }
        Ok(x.mapv(|v| (v + c).ln()))
    }
}

/// Frozen uniform draws shared by every hyperparameter setting.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSample {
    seed: u64,
    /// `d x m` uniforms in `(0, 1)`.
    omega: Array2<f64>,
    /// `d` uniforms in `[0, 1)`.
    phase: Array1<f64>,
}

/// Draws the uniform base sample for `d` features over `m` input dimensions.
///
/// The stream is ChaCha8 seeded from `seed`: all of `omega` row-major, then
/// the phases.
pub fn sample_base(m: usize, d: usize, seed: u64) -> Result<BaseSample> {
    if m == 0 || d == 0 {
        return Err(Error::Dimension(format!(
            "base sample needs m >= 1 and d >= 1, got m = {m}, d = {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_simple_fn((d, m), || rng.random::<f64>().clamp(OMEGA_EPS, 1.0 - OMEGA_EPS));
    let phase = Array1::from_shape_simple_fn(d, || rng.random::<f64>());
    Ok(BaseSample { seed, omega, phase })
}

impl BaseSample {
    /// Rebuilds a base sample from raw draws, checking every invariant.
    pub fn from_parts(seed: u64, omega: Array2<f64>, phase: Array1<f64>) -> Result<Self> {
        let base = BaseSample { seed, omega, phase };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = self.omega.dim();
        if d == 0 || m == 0 {
            return Err(Error::Dimension("empty base sample".into()));
        }
        if self.phase.len() != d {
            return Err(Error::Dimension(format!(
                "phase has {} entries for {} features",
                self.phase.len(),
                d
            )));
        }
        if self.omega.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::Domain("omega entries must lie in (0, 1)".into()));
        }
        if self.phase.iter().any(|b| !(*b >= 0.0 && *b < 1.0)) {
            return Err(Error::Domain("phase entries must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_count(&self) -> usize {
        self.omega.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn omega(&self) -> ArrayView2<'_, f64> {
        self.omega.view()
    }

    pub fn phase(&self) -> ArrayView1<'_, f64> {
        self.phase.view()
    }

    fn check_spec(&self, spec: &KernelSpec) -> Result<()> {
        if spec.input_dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "kernel has {} hyperparameters but the base sample covers {} input dimensions",
                spec.input_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `h(omega)` for a family, `d x m`.
    pub fn quantiles(&self, family: KernelFamily) -> Array2<f64> {
        self.omega
            .mapv(|w| quantile(family, w).expect("omega is kept inside (0, 1)"))
    }
}

/// Materialized frequencies `gamma = sigma . h(omega)`, `d x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    pub gamma: Array2<f64>,
}

pub fn materialize_frequencies(spec: &KernelSpec, base: &BaseSample) -> Result<FrequencyMatrix> {
    base.check_spec(spec)?;
    let mut gamma = base.quantiles(spec.family());
    scale_columns(&mut gamma, spec.sigma());
    Ok(FrequencyMatrix { gamma })
}

fn scale_columns(h: &mut Array2<f64>, sigma: &[f64]) {
    for (mut col, s) in h.axis_iter_mut(Axis(1)).zip(sigma) {
        col.mapv_inplace(|v| s * v);
    }
}

/// `N x d` feature matrix tagged with the kernel spec and base sample that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub fingerprint: u64,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Identifier tying a feature matrix to its generating spec and base sample.
pub fn fingerprint(spec: &KernelSpec, base: &BaseSample) -> u64 {
    let mut h = DefaultHasher::new();
    spec.family().hash(&mut h);
    for s in spec.sigma() {
        s.to_bits().hash(&mut h);
    }
    spec.skew_offset().to_bits().hash(&mut h);
    base.seed().hash(&mut h);
    base.omega.dim().hash(&mut h);
    h.finish()
}

/// Phase arguments `t(x_k) . gamma_j + 2 pi phase[j]`, `N x d`.
fn projection(t: ArrayView2<'_, f64>, gamma: ArrayView2<'_, f64>, phase: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut p = t.dot(&gamma.t());
    let offsets = phase.mapv(|b| 2.0 * PI * b);
    Zip::from(p.axis_iter_mut(Axis(0))).par_for_each(|mut row| {
        row += &offsets;
    });
    p
}

/// Random Fourier embedding of the rows of `x`.
pub fn embed(x: ArrayView2<'_, f64>, spec: &KernelSpec, base: &BaseSample) -> Result<FeatureMatrix> {
    let freq = materialize_frequencies(spec, base)?;
    let t = spec.transform_inputs(x)?;
    let scale = (2.0 / base.feature_count() as f64).sqrt();
    let mut values = projection(t.view(), freq.gamma.view(), base.phase());
    values.par_mapv_inplace(|a| scale * a.cos());
    Ok(FeatureMatrix {
        values,
        fingerprint: fingerprint(spec, base),
    })
}

/// Derivative of the embedding of `u` with respect to `sigma[index]`.
///
/// Entry `(k, j)` is `-sqrt(2/d) t(u_k)_i h(omega_ji) sin(t(u_k) . gamma_j + 2 pi phase_j)`.
pub fn embed_derivative(
    u: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    base: &BaseSample,
    index: usize,
) -> Result<Array2<f64>> {
    if index >= spec.input_dim() {
        return Err(Error::Index {
            index,
            len: spec.input_dim(),
        });
    }
    Ok(FeatureJacobian::new(u, spec, base)?.derivative(index))
}

/// Embedding plus everything needed for its derivatives in `sigma`.
///
/// Derivative matrices are never stored; products with them are formed in
/// `O(N d)` from the shared sine matrix.
#[derive(Debug, Clone)]
pub struct FeatureJacobian {
    features: FeatureMatrix,
    /// `-sqrt(2/d) sin(projection)`, `N x d`.
    neg_sin: Array2<f64>,
    /// Transformed inputs `t(u)`, `N x m`.
    inputs: Array2<f64>,
    /// `h(omega)`, `d x m`.
    quantiles: Array2<f64>,
}

impl FeatureJacobian {
    pub fn new(u: ArrayView2<'_, f64>, spec: &KernelSpec, base: &BaseSample) -> Result<Self> {
        base.check_spec(spec)?;
        let inputs = spec.transform_inputs(u)?;
        let quantiles = base.quantiles(spec.family());
        let mut gamma = quantiles.clone();
        scale_columns(&mut gamma, spec.sigma());
        let scale = (2.0 / base.feature_count() as f64).sqrt();
        let p = projection(inputs.view(), gamma.view(), base.phase());
        let mut values = Array2::zeros(p.raw_dim());
        let mut neg_sin = Array2::zeros(p.raw_dim());
        Zip::from(&mut values)
            .and(&mut neg_sin)
            .and(&p)
            .par_for_each(|c, s, &a| {
                *c = scale * a.cos();
                *s = -scale * a.sin();
            });
        Ok(FeatureJacobian {
            features: FeatureMatrix {
                values,
                fingerprint: fingerprint(spec, base),
            },
            neg_sin,
            inputs,
            quantiles,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn into_features(self) -> FeatureMatrix {
        self.features
    }

    pub fn param_count(&self) -> usize {
        self.inputs.ncols()
    }

    /// Materializes `d phi / d sigma_i` as an `N x d` matrix.
    pub fn derivative(&self, i: usize) -> Array2<f64> {
        let t = self.inputs.column(i);
        let h = self.quantiles.column(i);
        let mut out = self.neg_sin.clone();
        for (mut row, tk) in out.axis_iter_mut(Axis(0)).zip(t) {
            Zip::from(&mut row).and(&h).for_each(|v, hj| *v *= tk * hj);
        }
        out
    }

    /// `(d phi / d sigma_i) v` for a length-`d` vector.
    pub fn derivative_dot(&self, i: usize, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let hv = &self.quantiles.column(i) * &v;
        let mut out = self.neg_sin.dot(&hv);
        out *= &self.inputs.column(i);
        out
    }

    /// `(d phi / d sigma_i)^T w` for a length-`N` vector.
    pub fn derivative_t_dot(&self, i: usize, w: ArrayView1<'_, f64>) -> Array1<f64> {
        let tw = &self.inputs.column(i) * &w;
        let mut out = t_dot(self.neg_sin.view(), tw.view());
        out *= &self.quantiles.column(i);
        out
    }
}
