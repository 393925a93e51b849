//! One-vs-rest RBF-kernel SVM trained with Pegasos-style stochastic
//! subgradient descent on the regularized hinge loss.
//!
//! Node counts are small (hundreds), so the full train-train kernel matrix
//! is precomputed and each binary problem reuses the same seeded iteration
//! sequence, which keeps the whole fit deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::NodeDataset;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// Per class: dual coefficients over the training rows
    /// (alpha_j * y_j / (lambda * T)).
    pub coefficients: Vec<Vec<f64>>,
    /// Training feature rows the coefficients refer to.
    pub train_features: Matrix,
    pub gamma: f64,
    pub lambda: f64,
}

/// exp(-gamma * ||x_i - y_j||^2) for all row pairs.
pub fn rbf_kernel_matrix(x: &Matrix, y: &Matrix, gamma: f64) -> Matrix {
    assert_eq!(x.cols(), y.cols(), "kernel feature dims disagree");
    let mut k = Matrix::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            let mut d2 = 0.0;
            for (a, b) in x.row(i).iter().zip(y.row(j)) {
                let d = a - b;
                d2 += d * d;
            }
            k.set(i, j, (-gamma * d2).exp());
        }
    }
    k
}

/// Kernel Pegasos for one binary problem: at step t with pick i, add one to
/// alpha_i when y_i * f_t(x_i) < 1 where f_t = (1 / (lambda t)) sum alpha_j y_j K(j, .).
fn pegasos_binary(kernel: &Matrix, y: &[f64], lambda: f64, picks: &[usize]) -> Vec<f64> {
    let n = y.len();
    let mut alpha = vec![0.0f64; n];
    for (step, &i) in picks.iter().enumerate() {
        let t = (step + 1) as f64;
        let mut decision = 0.0;
        for j in 0..n {
            if alpha[j] != 0.0 {
                decision += alpha[j] * y[j] * kernel.get(j, i);
            }
        }
        decision /= lambda * t;
        if y[i] * decision < 1.0 {
            alpha[i] += 1.0;
        }
    }
    let t_final = picks.len() as f64;
    (0..n)
        .map(|j| alpha[j] * y[j] / (lambda * t_final))
        .collect()
}

/// Train one-vs-rest classifiers on the dataset's training mask.
pub fn svm_train(
    dataset: &NodeDataset,
    gamma: f64,
    lambda: f64,
    iterations: usize,
    seed: u64,
) -> Result<SvmModel> {
    if gamma < 0.0 || lambda <= 0.0 || iterations == 0 {
        return Err(Error::Domain(
            "svm needs gamma >= 0, lambda > 0, iterations > 0".into(),
        ));
    }
    let masks = dataset.masks()?;
    let train_idx: Vec<usize> = (0..dataset.n_nodes()).filter(|&i| masks.train[i]).collect();
    if train_idx.is_empty() {
        return Err(Error::Domain("svm training mask is empty".into()));
    }
    let train_labels: Vec<u16> = train_idx.iter().map(|&i| dataset.labels[i]).collect();
    let first = train_labels[0];
    if train_labels.iter().all(|&l| l == first) {
        return Err(Error::Domain(
            "svm training set contains a single class".into(),
        ));
    }

    let dim = dataset.features.cols();
    let mut train_features = Matrix::zeros(train_idx.len(), dim);
    for (row, &i) in train_idx.iter().enumerate() {
        train_features
            .row_mut(row)
            .copy_from_slice(dataset.features.row(i));
    }
    let kernel = rbf_kernel_matrix(&train_features, &train_features, gamma);

    // one pick sequence shared by every binary problem
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..iterations)
        .map(|_| rng.gen_range(0..train_idx.len()))
        .collect();

    let coefficients = (0..dataset.n_classes() as u16)
        .map(|class| {
            let y: Vec<f64> = train_labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            pegasos_binary(&kernel, &y, lambda, &picks)
        })
        .collect();

    Ok(SvmModel {
        coefficients,
        train_features,
        gamma,
        lambda,
    })
}

/// One-vs-rest decision values for every feature row.
pub fn svm_decision(model: &SvmModel, features: &Matrix) -> Matrix {
    let kernel = rbf_kernel_matrix(features, &model.train_features, model.gamma);
    let mut out = Matrix::zeros(features.rows(), model.coefficients.len());
    for i in 0..features.rows() {
        let k_row = kernel.row(i);
        for (c, coef) in model.coefficients.iter().enumerate() {
            let v: f64 = coef.iter().zip(k_row).map(|(a, k)| a * k).sum();
            out.set(i, c, v);
        }
    }
    out
}

/// Class with the maximum decision value; ties go to the lower class id.
pub fn svm_predict(model: &SvmModel, features: &Matrix) -> Vec<u16> {
    let decisions = svm_decision(model, features);
    (0..decisions.rows())
        .map(|i| crate::gcn::argmax_ties_low(decisions.row(i)) as u16)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SplitMasks;

    /// Two tight clusters with a wide margin, all nodes in train.
    fn separable_dataset() -> NodeDataset {
        let rows = vec![
            0.0, 0.0, 0.0, //
            0.05, 0.0, 0.1, //
            0.0, 0.05, -0.1, //
            1.0, 1.0, 0.0, //
            0.95, 1.0, 0.1, //
            1.0, 0.95, -0.1,
        ];
        let n = 6;
        NodeDataset {
            features: Matrix::from_vec(n, 3, rows),
            labels: vec![0, 0, 0, 1, 1, 1],
            class_names: vec!["A".into(), "B".into()],
            masks: Some(SplitMasks {
                train: vec![true; n],
                val: vec![false; n],
                test: vec![false; n],
            }),
        }
    }

    #[test]
    fn kernel_matrix_gamma_zero_is_all_ones() {
        let x = Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 2.0, -3.0, 4.0]);
        let k = rbf_kernel_matrix(&x, &x, 0.0);
        for v in k.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_data_reaches_perfect_training_accuracy() {
        let ds = separable_dataset();
        let model = svm_train(&ds, 1.0, 1.0 / 6.0, 4000, 3).unwrap();
        let preds = svm_predict(&model, &ds.features);
        assert_eq!(preds, ds.labels);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = separable_dataset();
        let a = svm_train(&ds, 1.0, 1.0 / 6.0, 500, 9).unwrap();
        let b = svm_train(&ds, 1.0, 1.0 / 6.0, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_train_set_is_domain_error() {
        let mut ds = separable_dataset();
        ds.masks = Some(SplitMasks {
            train: vec![true, true, true, false, false, false],
            val: vec![false; 6],
            test: vec![false, false, false, true, true, true],
        });
        assert!(svm_train(&ds, 1.0, 0.1, 100, 1).is_err());
    }

    #[test]
    fn argmax_decision_and_tie_rule() {
        let model = SvmModel {
            coefficients: vec![vec![2.0], vec![-1.0], vec![0.5]],
            train_features: Matrix::from_vec(1, 2, vec![0.0, 0.0]),
            gamma: 0.0, // kernel == 1 everywhere: decisions are the raw coefficients
            lambda: 1.0,
        };
        let x = Matrix::from_vec(1, 2, vec![5.0, 5.0]);
        assert_eq!(svm_predict(&model, &x), vec![0]);

        let tied = SvmModel {
            coefficients: vec![vec![1.0], vec![1.0], vec![1.0]],
            train_features: Matrix::from_vec(1, 2, vec![0.0, 0.0]),
            gamma: 0.0,
            lambda: 1.0,
        };
        assert_eq!(svm_predict(&tied, &x), vec![0]);
    }

    #[test]
    fn predictions_match_direct_kernel_expansion() {
        let ds = separable_dataset();
        let model = svm_train(&ds, 2.0, 1.0 / 6.0, 1000, 5).unwrap();
        let decisions = svm_decision(&model, &ds.features);
        for i in 0..ds.n_nodes() {
            for c in 0..2 {
                let mut expected = 0.0;
                for j in 0..model.train_features.rows() {
                    let mut d2 = 0.0;
                    for (a, b) in ds.features.row(i).iter().zip(model.train_features.row(j)) {
                        d2 += (a - b) * (a - b);
                    }
                    expected += model.coefficients[c][j] * (-2.0 * d2).exp();
                }
                assert!((decisions.get(i, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_class_decisions_are_sign_symmetric() {
        let ds = separable_dataset();
        let model = svm_train(&ds, 1.0, 1.0 / 6.0, 800, 7).unwrap();
        let decisions = svm_decision(&model, &ds.features);
        for i in 0..ds.n_nodes() {
            let a = decisions.get(i, 0);
            let b = decisions.get(i, 1);
            assert_eq!(a, -b, "one-vs-rest mirror broke at row {i}");
        }
    }
}
