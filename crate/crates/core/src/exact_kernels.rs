//! Closed-form kernels, the ground truth the feature maps approximate.
//!
//! All forms are unit-normalized (`k(x, x) = 1`) and multiply over input
//! dimensions:
//!
//! * gaussian: `exp(-sigma_i^2 (x_i - y_i)^2 / 2)`
//! * skewed chi2: `sech(sigma_i (ln(x_i + c) - ln(y_i + c)))`
//! * skewed intersection: `exp(-sigma_i |ln(x_i + c) - ln(y_i + c)|)`

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::feature_map::{KernelFamily, KernelSpec};

/// Symmetric Gram matrix of a dataset under one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub spec: KernelSpec,
}

impl GramMatrix {
    pub fn new(spec: &KernelSpec, x: ArrayView2<'_, f64>) -> Result<Self> {
        Ok(GramMatrix {
            values: gram(spec, x, x)?,
            spec: spec.clone(),
        })
    }
}

fn log_shift(v: f64, c: f64) -> Result<f64> {
    if !(v + c > 0.0) {
        return Err(Error::Domain(format!(
            "skewed kernels need x + c > 0, got x = {v} with c = {c}"
        )));
    }
    Ok((v + c).ln())
}

pub fn kernel_eval(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    let m = spec.input_dim();
    if x.len() != m || y.len() != m {
        return Err(Error::Dimension(format!(
            "kernel over {m} dimensions evaluated at vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    let c = spec.skew_offset();
    let mut k = 1.0;
    for ((&xi, &yi), &s) in x.iter().zip(y.iter()).zip(spec.sigma()) {
        k *= match spec.family() {
            KernelFamily::Gaussian => {
                let r = s * (xi - yi);
                (-0.5 * r * r).exp()
            }
            KernelFamily::SkewedChi2 => {
                let delta = log_shift(xi, c)? - log_shift(yi, c)?;
                1.0 / (s * delta).cosh()
            }
            KernelFamily::SkewedIntersection => {
                let delta = log_shift(xi, c)? - log_shift(yi, c)?;
                (-s * delta.abs()).exp()
            }
        };
    }
    Ok(k)
}

/// Kernel matrix with entry `(i, j) = k(x_i, y_j)`.
pub fn gram(spec: &KernelSpec, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "gram inputs have {} and {} columns",
            x.ncols(),
            y.ncols()
        )));
    }
    let mut out = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            out[[i, j]] = kernel_eval(spec, xi, yj)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn spec(f: KernelFamily, sigma: Vec<f64>, c: f64) -> KernelSpec {
        KernelSpec::new(f, sigma, c).unwrap()
    }

    #[test]
    fn known_values() {
        let g = spec(KernelFamily::Gaussian, vec![1.0], 0.0);
        let v = kernel_eval(&g, array![1.0].view(), array![0.0].view()).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);

        let s = spec(KernelFamily::SkewedChi2, vec![1.0], 0.0);
        let e = std::f64::consts::E;
        let v = kernel_eval(&s, array![e].view(), array![1.0].view()).unwrap();
        assert!((v - 1.0 / 1.0f64.cosh()).abs() < 1e-15);
        assert!((v - 0.6481).abs() < 1e-4);
    }

    #[test]
    fn unit_diagonal_for_all_families() {
        let x = array![0.2, 0.0, 0.9];
        for f in KernelFamily::ALL {
            let k = spec(f, vec![0.5, 2.0, 7.0], 0.1);
            assert_eq!(kernel_eval(&k, x.view(), x.view()).unwrap(), 1.0);
        }
    }

    #[test]
    fn domain_and_dimension_errors() {
        let k = spec(KernelFamily::SkewedIntersection, vec![1.0], 0.0);
        assert!(matches!(
            kernel_eval(&k, array![0.0].view(), array![1.0].view()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            kernel_eval(&k, array![1.0, 2.0].view(), array![1.0].view()),
            Err(Error::Dimension(_))
        ));
        let a = Array2::<f64>::zeros((2, 1));
        let b = Array2::<f64>::zeros((2, 2));
        assert!(matches!(gram(&k, a.view(), b.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn gram_transpose_symmetry() {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| ((i * 3 + j) as f64 * 0.31).fract());
        let y = Array2::from_shape_fn((4, 2), |(i, j)| ((i * 5 + j) as f64 * 0.17).fract());
        for f in KernelFamily::ALL {
            let k = spec(f, vec![1.5, 0.5], 0.1);
            let a = gram(&k, x.view(), y.view()).unwrap();
            let b = gram(&k, y.view(), x.view()).unwrap();
            assert_eq!(a, b.t());
            let g = GramMatrix::new(&k, x.view()).unwrap();
            assert!(g.values.diag().iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 11) as f64 * 0.0731).fract());
        for f in KernelFamily::ALL {
            let k = spec(f, vec![2.0, 1.0, 3.0], 0.1);
            let g = gram(&k, x.view(), x.view()).unwrap();
            let m = nalgebra::DMatrix::from_fn(30, 30, |i, j| g[[i, j]]);
            let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8, "{f}: {min}");
        }
    }

    proptest! {
        #[test]
        fn skewed_chi2_matches_ratio_form(
            x in 0.0f64..1.0, y in 0.0f64..1.0, s in 0.1f64..5.0, c in 0.01f64..1.0,
        ) {
            let k = spec(KernelFamily::SkewedChi2, vec![s], c);
            let v = kernel_eval(&k, array![x].view(), array![y].view()).unwrap();
            let (a, b) = ((x + c).powf(s), (y + c).powf(s));
            let table = 2.0 * a * b / (a * a + b * b);
            prop_assert!((v - table).abs() <= 1e-12);
        }

        #[test]
        fn skewed_intersection_matches_min_form(
            x in 0.0f64..1.0, y in 0.0f64..1.0, s in 0.1f64..5.0, c in 0.01f64..1.0,
        ) {
            let k = spec(KernelFamily::SkewedIntersection, vec![s], c);
            let v = kernel_eval(&k, array![x].view(), array![y].view()).unwrap();
            let (a, b) = ((x + c).powf(s), (y + c).powf(s));
            prop_assert!((v - (a / b).min(b / a)).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_and_bounded(
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, y0 in 0.0f64..1.0, y1 in 0.0f64..1.0,
            fi in 0usize..3, s in 0.1f64..5.0,
        ) {
            let k = spec(KernelFamily::ALL[fi], vec![s, 1.0 / s], 0.1);
            let (x, y) = (array![x0, x1], array![y0, y1]);
            let a = kernel_eval(&k, x.view(), y.view()).unwrap();
            let b = kernel_eval(&k, y.view(), x.view()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }
}
