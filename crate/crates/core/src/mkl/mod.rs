//! Multiple kernel learning as a group Lasso over random Fourier blocks.
//!
//! Each kernel gets its own block of features. The blocks are concatenated
//! and a linear model is trained with one Euclidean-norm penalty per block:
//!
//! ```text
//! min_w  lambda * sum_t ||w_t||_2 + sum_i l(y_i, F_i . w)
//! ```
//!
//! With `lambda = sqrt(2) / C` this has the same minimizer as the kernel-weight
//! formulation solved by [`gmkl_reference`], and the kernel weights are
//! recovered as `d_t = ||w_t||_2 / sqrt(2)`.

mod gmkl;
mod group_lasso;
mod loss;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{embed, sample_base, BaseSample, KernelSpec};
use crate::linalg::norm2;

pub use gmkl::{gmkl_reference, GmklOptions, GmklSolution};
pub use group_lasso::{
    check_block_optimality, group_lasso_objective, lambda_max, train_group_lasso, BlockOptimality, GroupLassoOptions,
};
pub use loss::{
    epsilon_insensitive, igll_gradient, igll_loss, logistic, softplus, LossKind, LossSpec, DEFAULT_EPSILON,
    DEFAULT_SHARPNESS,
};

/// One kernel of a multiple-kernel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBlock {
    pub spec: KernelSpec,
    /// Input columns the kernel reads; all columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Range<usize>>,
    /// Offset added to the run seed for this block's base sample; the block
    /// position when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_offset: Option<u64>,
}

impl KernelBlock {
    pub fn new(spec: KernelSpec) -> Self {
        KernelBlock {
            spec,
            columns: None,
            seed_offset: None,
        }
    }

    pub fn with_columns(mut self, columns: Range<usize>) -> Self {
        self.columns = Some(columns);
        self
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.seed_offset = Some(offset);
        self
    }

    fn base_seed(&self, seed: u64, position: usize) -> u64 {
        seed.wrapping_add(self.seed_offset.unwrap_or(position as u64))
    }

    fn inputs<'a>(&self, x: ArrayView2<'a, f64>) -> Result<ArrayView2<'a, f64>> {
        match &self.columns {
            None => Ok(x),
            Some(r) if r.start < r.end && r.end <= x.ncols() => Ok(x.slice_move(s![.., r.clone()])),
            Some(r) => Err(Error::Dimension(format!(
                "kernel columns {}..{} do not fit inputs with {} columns",
                r.start,
                r.end,
                x.ncols()
            ))),
        }
    }
}

/// Column-wise concatenation of per-kernel feature blocks.
#[derive(Debug, Clone)]
pub struct GroupedFeatures {
    pub features: Array2<f64>,
    pub groups: Vec<Range<usize>>,
    pub blocks: Vec<KernelBlock>,
    pub bases: Vec<BaseSample>,
    pub seed: u64,
    pub d_per_kernel: usize,
}

/// Embeds `x` once per kernel with independent base samples and concatenates
/// the blocks in kernel order.
pub fn build_grouped_features(
    x: ArrayView2<'_, f64>,
    blocks: &[KernelBlock],
    d_per_kernel: usize,
    seed: u64,
) -> Result<GroupedFeatures> {
    if blocks.is_empty() {
        return Err(Error::Parameter("at least one kernel is required".into()));
    }
    let bases = blocks
        .iter()
        .enumerate()
        .map(|(t, b)| sample_base(b.spec.input_dim(), d_per_kernel, b.base_seed(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    let features = embed_blocks(x, blocks, &bases)?;
    let groups = (0..blocks.len())
        .map(|t| t * d_per_kernel..(t + 1) * d_per_kernel)
        .collect();
    Ok(GroupedFeatures {
        features,
        groups,
        blocks: blocks.to_vec(),
        bases,
        seed,
        d_per_kernel,
    })
}

fn embed_blocks(x: ArrayView2<'_, f64>, blocks: &[KernelBlock], bases: &[BaseSample]) -> Result<Array2<f64>> {
    let total = bases.iter().map(|b| b.feature_count()).sum();
    // Row-major, so solvers can stream whole examples.
    let mut out = Array2::zeros((x.nrows(), total));
    let mut start = 0;
    for (b, base) in blocks.iter().zip(bases) {
        let part = embed(b.inputs(x)?, &b.spec, base)?;
        let end = start + part.ncols();
        out.slice_mut(s![.., start..end]).assign(&part.values);
        start = end;
    }
    Ok(out)
}

impl GroupedFeatures {
    pub fn nrows(&self) -> usize {
        self.features.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.features.ncols()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn block(&self, t: usize) -> ArrayView2<'_, f64> {
        self.features.slice(s![.., self.groups[t].clone()])
    }

    /// Embeds new inputs with the same kernels and base samples.
    pub fn embed_like(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        embed_blocks(x, &self.blocks, &self.bases)
    }
}

/// Block soft-thresholding: `w_t <- max(0, 1 - tau / ||w_t||) w_t` per group.
pub fn block_prox(w: ArrayView1<'_, f64>, groups: &[Range<usize>], tau: f64) -> Array1<f64> {
    let mut out = w.to_owned();
    for g in groups {
        let mut block = out.slice_mut(s![g.clone()]);
        let norm = norm2(block.view());
        if norm <= tau {
            block.fill(0.0);
        } else {
            block *= 1.0 - tau / norm;
        }
    }
    out
}

/// Trained group-Lasso model over random Fourier blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedLinearModel {
    pub w: Array1<f64>,
    pub groups: Vec<Range<usize>>,
    pub lambda: f64,
    pub loss: LossSpec,
    pub blocks: Vec<KernelBlock>,
    pub seed: u64,
    pub d_per_kernel: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GroupedLinearModel {
    pub fn block_weights(&self, t: usize) -> ArrayView1<'_, f64> {
        self.w.slice(s![self.groups[t].clone()])
    }

    pub fn predict_features(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.w.len() {
            return Err(Error::Dimension(format!(
                "model has {} weights but features have {} columns",
                self.w.len(),
                features.ncols()
            )));
        }
        Ok(features.dot(&self.w))
    }

    /// Re-embeds `x` with the model's kernels and predicts.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let bases = self
            .blocks
            .iter()
            .enumerate()
            .map(|(t, b)| sample_base(b.spec.input_dim(), self.d_per_kernel, b.base_seed(self.seed, t)))
            .collect::<Result<Vec<_>>>()?;
        let features = embed_blocks(x, &self.blocks, &bases)?;
        self.predict_features(features.view())
    }

    pub fn to_record(&self) -> GroupedModelRecord {
        let weights = kernel_weights(self);
        GroupedModelRecord {
            groups: self
                .blocks
                .iter()
                .enumerate()
                .map(|(t, b)| GroupRecord {
                    kernel: b.clone(),
                    range: self.groups[t].clone(),
                    weights: self.block_weights(t).to_vec(),
                    kernel_weight: weights.d[t],
                })
                .collect(),
            lambda: self.lambda,
            loss: self.loss,
            seed: self.seed,
            d_per_kernel: self.d_per_kernel,
            kernel_weights: weights.d,
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    pub fn from_record(record: GroupedModelRecord) -> Result<Self> {
        if record.groups.is_empty() {
            return Err(Error::Artifact("model has no groups".into()));
        }
        let mut w = Vec::new();
        let mut groups = Vec::new();
        let mut blocks = Vec::new();
        for (t, g) in record.groups.into_iter().enumerate() {
            let expect = t * record.d_per_kernel..(t + 1) * record.d_per_kernel;
            if g.range != expect || g.weights.len() != record.d_per_kernel {
                return Err(Error::Artifact(format!(
                    "group {t} covers {:?} with {} weights, expected {:?}",
                    g.range,
                    g.weights.len(),
                    expect
                )));
            }
            let norm = g.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (g.kernel_weight - norm / std::f64::consts::SQRT_2).abs() > 1e-9 * norm.max(1.0) {
                return Err(Error::Artifact(format!(
                    "group {t} kernel weight {} inconsistent with its coefficients",
                    g.kernel_weight
                )));
            }
            g.kernel.spec.validate()?;
            w.extend(g.weights);
            groups.push(g.range);
            blocks.push(g.kernel);
        }
        if w.iter().any(|v| !v.is_finite()) || !(record.lambda > 0.0) {
            return Err(Error::Artifact("non-finite weights or invalid lambda".into()));
        }
        record.loss.validate()?;
        Ok(GroupedLinearModel {
            w: Array1::from(w),
            groups,
            lambda: record.lambda,
            loss: record.loss,
            blocks,
            seed: record.seed,
            d_per_kernel: record.d_per_kernel,
            objective: record.objective,
            iterations: record.iterations,
            converged: record.converged,
        })
    }
}

/// Serialized per-kernel group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub kernel: KernelBlock,
    pub range: Range<usize>,
    pub weights: Vec<f64>,
    pub kernel_weight: f64,
}

/// Serialized form of a [`GroupedLinearModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedModelRecord {
    pub groups: Vec<GroupRecord>,
    pub lambda: f64,
    pub loss: LossSpec,
    pub seed: u64,
    pub d_per_kernel: usize,
    pub kernel_weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    pub d: Vec<f64>,
}

/// Kernel weights `d_t = ||w_t||_2 / sqrt(2)`.
pub fn kernel_weights(model: &GroupedLinearModel) -> KernelWeights {
    KernelWeights {
        d: (0..model.groups.len())
            .map(|t| norm2(model.block_weights(t)) / std::f64::consts::SQRT_2)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::KernelFamily;
    use ndarray::array;

    fn blocks() -> Vec<KernelBlock> {
        vec![
            KernelBlock::new(KernelSpec::isotropic(KernelFamily::Gaussian, 2.0, 3, 0.1).unwrap()),
            KernelBlock::new(KernelSpec::isotropic(KernelFamily::SkewedChi2, 1.0, 3, 0.1).unwrap()),
            KernelBlock::new(KernelSpec::isotropic(KernelFamily::SkewedIntersection, 0.5, 2, 0.1).unwrap())
                .with_columns(1..3),
        ]
    }

    fn inputs() -> Array2<f64> {
        Array2::from_shape_fn((12, 3), |(i, j)| ((i * 5 + j * 7) as f64 * 0.123).fract())
    }

    #[test]
    fn prox_known_values() {
        let g: Vec<_> = std::iter::once(0..2).collect();
        let out = block_prox(array![3.0, 4.0].view(), &g, 1.0);
        assert!((out[0] - 2.4).abs() < 1e-15 && (out[1] - 3.2).abs() < 1e-15);
        let out = block_prox(array![0.3, 0.4].view(), &g, 0.5);
        assert_eq!(out, array![0.0, 0.0]);
        let out = block_prox(array![0.3, 0.4, 0.0, 0.0].view(), &[0..2, 2..4], 1e-300);
        assert_eq!(out, array![0.3, 0.4, 0.0, 0.0]);
    }

    #[test]
    fn single_block_equals_embed() {
        let x = inputs();
        let b = &blocks()[..1];
        let gf = build_grouped_features(x.view(), b, 20, 5).unwrap();
        let base = sample_base(3, 20, 5).unwrap();
        let phi = embed(x.view(), &b[0].spec, &base).unwrap();
        assert_eq!(gf.features, phi.values);
        assert_eq!(gf.groups, vec![0..20]);
    }

    #[test]
    fn shape_contract() {
        let gf = build_grouped_features(inputs().view(), &blocks(), 16, 1).unwrap();
        assert_eq!(gf.features.dim(), (12, 48));
        assert_eq!(gf.groups, vec![0..16, 16..32, 32..48]);
        assert!(build_grouped_features(inputs().view(), &[], 16, 1).is_err());
        let bad = vec![
            KernelBlock::new(KernelSpec::isotropic(KernelFamily::Gaussian, 1.0, 2, 0.1).unwrap()).with_columns(2..4),
        ];
        assert!(matches!(
            build_grouped_features(inputs().view(), &bad, 4, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kernel_weight_values() {
        let mut model = GroupedLinearModel {
            w: array![1.0, 1.0, 0.0, 0.0],
            groups: vec![0..2, 2..4],
            lambda: 1.0,
            loss: LossSpec::quadratic(),
            blocks: blocks()[..2].to_vec(),
            seed: 0,
            d_per_kernel: 2,
            objective: 0.0,
            iterations: 0,
            converged: true,
        };
        let d = kernel_weights(&model).d;
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert_eq!(d[1], 0.0);
        model.w.fill(0.0);
        assert_eq!(kernel_weights(&model).d, vec![0.0, 0.0]);
    }

    #[test]
    fn model_record_rejects_tampering() {
        let model = GroupedLinearModel {
            w: array![1.0, 2.0, 0.0, 0.5],
            groups: vec![0..2, 2..4],
            lambda: 0.3,
            loss: LossSpec::default(),
            blocks: blocks()[..2].to_vec(),
            seed: 4,
            d_per_kernel: 2,
            objective: 1.5,
            iterations: 7,
            converged: true,
        };
        let rec = model.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back = GroupedLinearModel::from_record(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
        let mut bad = rec.clone();
        bad.groups[0].weights[0] = 9.0;
        assert!(matches!(GroupedLinearModel::from_record(bad), Err(Error::Artifact(_))));
        let mut bad = rec;
        bad.groups[1].range = 1..3;
        assert!(GroupedLinearModel::from_record(bad).is_err());
    }
}
