//! Classification and anti-interference contrastive objectives.

use ndarray::{Array2, Axis};

use super::classifier::{log_sum_exp, Classifier};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClassificationLoss {
    pub loss: f64,
    pub probs: Array2<f64>,
    pub grad_z: Array2<f64>,
    pub grads: Classifier,
}

/// Mean negative log-likelihood of the true classes under `softmax(f(z))`.
pub fn classification_loss(clf: &Classifier, z: &Array2<f64>, labels: &[usize]) -> Result<ClassificationLoss> {
    let c = clf.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidLabel { label: bad, classes: c });
    }
    if labels.len() != z.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            z.nrows()
        )));
    }
    let b = z.nrows() as f64;
    let (logits, cache) = clf.logits(z);
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (j, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
        let lse = log_sum_exp(row.view());
        loss -= row[labels[j]] - lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    let mut g_logits = probs.clone();
    for (j, &l) in labels.iter().enumerate() {
        g_logits[[j, l]] -= 1.0;
    }
    g_logits /= b;
    let (grads, grad_z) = clf.backward(&cache, &g_logits);
    Ok(ClassificationLoss {
        loss: loss / b,
        probs,
        grad_z,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub grad_z_p: Vec<Array2<f64>>,
    pub grad_z_n: Array2<f64>,
}

/// For each anchor `j`: softmax over `Z_p[j] · Z_n[j]ᵀ` (one logit per batch
/// document), scored by the negative log of entry `j`; averaged over `b`.
pub fn contrastive_loss(z_p: &[Array2<f64>], z_n: &Array2<f64>) -> Result<ContrastiveLoss> {
    let b = z_n.nrows();
    if z_p.len() != b || z_p.iter().any(|m| m.dim() != z_n.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "contrastive: {} anchor matrices for a {}x{} jammed block",
            z_p.len(),
            b,
            z_n.ncols()
        )));
    }
    let mut loss = 0.0;
    let mut grad_z_p = Vec::with_capacity(b);
    let mut grad_z_n = Array2::zeros(z_n.raw_dim());
    for (j, zp) in z_p.iter().enumerate() {
        let anchor = z_n.row(j);
        let logits = zp.dot(&anchor);
        let lse = log_sum_exp(logits.view());
        loss -= logits[j] - lse;
        let mut g = logits.mapv(|v| (v - lse).exp());
        g[j] -= 1.0;
        g /= b as f64;
        let gp = g
            .view()
            .insert_axis(Axis(1))
            .dot(&anchor.insert_axis(Axis(0)));
        grad_z_n.row_mut(j).assign(&g.dot(zp));
        grad_z_p.push(gp);
    }
    Ok(ContrastiveLoss {
        loss: loss / b as f64,
        grad_z_p,
        grad_z_n,
    })
}

/// `L_cls + λ L_aic`.
pub fn total_loss(cls: f64, aic: f64, lambda: f64) -> f64 {
    cls + lambda * aic
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_classifier_gives_log_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut clf = Classifier::init(4, 5, &mut rng);
        clf.w2.fill(0.0);
        let z = Array2::from_shape_simple_fn((3, 4), || rng.gen_range(-1.0..1.0));
        let out = classification_loss(&clf, &z, &[0, 3, 4]).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_predictions_approach_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut clf = Classifier::init(2, 3, &mut rng);
        clf.w2.fill(0.0);
        clf.b2 = Array1::from(vec![0.0, 60.0, 0.0]);
        let z = Array2::ones((2, 2));
        let out = classification_loss(&clf, &z, &[1, 1]).unwrap();
        assert!(out.loss < 1e-20);
    }

    #[test]
    fn invalid_label_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clf = Classifier::init(2, 2, &mut rng);
        assert!(matches!(
            classification_loss(&clf, &Array2::zeros((1, 2)), &[2]),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn classification_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut clf = Classifier::init(4, 3, &mut rng);
        clf.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let z = Array2::from_shape_simple_fn((5, 4), || rng.gen_range(-1.0..1.0));
        let labels = [0, 2, 1, 1, 0];
        let out = classification_loss(&clf, &z, &labels).unwrap();
        let eps = 1e-6;
        let f = |clf: &Classifier, z: &Array2<f64>| classification_loss(clf, z, &labels).unwrap().loss;
        for idx in [(0, 0), (2, 3), (3, 1)] {
            let mut p = clf.clone();
            p.w1[idx] += eps;
            let plus = f(&p, &z);
            p.w1[idx] -= 2.0 * eps;
            let fd = (plus - f(&p, &z)) / (2.0 * eps);
            assert!((fd - out.grads.w1[idx]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        for idx in [(0, 0), (3, 2)] {
            let mut p = clf.clone();
            p.w2[idx] += eps;
            let plus = f(&p, &z);
            p.w2[idx] -= 2.0 * eps;
            let fd = (plus - f(&p, &z)) / (2.0 * eps);
            assert!((fd - out.grads.w2[idx]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        for idx in [(0, 1), (4, 3)] {
            let mut zp = z.clone();
            zp[idx] += eps;
            let plus = f(&clf, &zp);
            zp[idx] -= 2.0 * eps;
            let fd = (plus - f(&clf, &zp)) / (2.0 * eps);
            assert!((fd - out.grad_z[idx]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn single_document_contrastive_is_zero() {
        let out = contrastive_loss(&[array![[3.0, -2.0]]], &array![[0.5, 7.0]]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z_n.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_way_hand_value() {
        // Z_p rows orthonormal, anchors equal to the matching row: logits (1, 0)
        let zp = array![[1.0, 0.0], [0.0, 1.0]];
        let zn = zp.clone();
        let out = contrastive_loss(&[zp.clone(), zp], &zn).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((out.loss - expected).abs() < 1e-15);
        assert!((out.loss - 0.313_261_687_518_222_9).abs() < 1e-15);
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, d) = (3, 4);
        let zp: Vec<Array2<f64>> = (0..b)
            .map(|_| Array2::from_shape_simple_fn((b, d), || rng.gen_range(-1.0..1.0)))
            .collect();
        let zn = Array2::from_shape_simple_fn((b, d), || rng.gen_range(-1.0..1.0));
        let out = contrastive_loss(&zp, &zn).unwrap();
        let eps = 1e-6;
        for idx in [(0, 0), (2, 3), (1, 2)] {
            let mut p = zn.clone();
            p[idx] += eps;
            let plus = contrastive_loss(&zp, &p).unwrap().loss;
            p[idx] -= 2.0 * eps;
            let fd = (plus - contrastive_loss(&zp, &p).unwrap().loss) / (2.0 * eps);
            assert!((fd - out.grad_z_n[idx]).abs() < 1e-8);
        }
        for (a, idx) in [(0, (1, 1)), (2, (2, 0)), (1, (0, 3))] {
            let mut p = zp.clone();
            p[a][idx] += eps;
            let plus = contrastive_loss(&p, &zn).unwrap().loss;
            p[a][idx] -= 2.0 * eps;
            let fd = (plus - contrastive_loss(&p, &zn).unwrap().loss) / (2.0 * eps);
            assert!((fd - out.grad_z_p[a][idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        assert_eq!(total_loss(0.5, 0.25, 1.0), 0.75);
        assert_eq!(total_loss(0.5, 123.0, 0.0), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn contrastive_nonnegative_and_permutation_invariant(seed in 0u64..1000, b in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let zp: Vec<Array2<f64>> = (0..b)
                .map(|_| Array2::from_shape_simple_fn((b, d), || rng.gen_range(-2.0..2.0)))
                .collect();
            let zn = Array2::from_shape_simple_fn((b, d), || rng.gen_range(-2.0..2.0));
            let base = contrastive_loss(&zp, &zn).unwrap().loss;
            proptest::prop_assert!(base >= 0.0);
            // permuting the batch permutes anchors and the rows inside each anchor block
            let perm: Vec<usize> = (0..b).rev().collect();
            let zn2 = zn.select(Axis(0), &perm);
            let zp2: Vec<Array2<f64>> = perm.iter().map(|&j| zp[j].select(Axis(0), &perm)).collect();
            let permuted = contrastive_loss(&zp2, &zn2).unwrap().loss;
            proptest::prop_assert!((base - permuted).abs() < 1e-9);
        }
    }
}
