//! Linear SVM trained with Pegasos-style stochastic subgradient descent on
//! the L2-regularized hinge loss.
//!
//! The bias is an extra always-one feature and is regularized with the
//! weights. `lambda = 1 / (C * n)`; step `t` uses learning rate
//! `1 / (lambda * t)` and rows are visited in a per-epoch shuffle seeded
//! from `(seed, epoch)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 200 }
    }
}

pub(crate) type SparseRow = (Vec<usize>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn decision(&self, cols: &[usize], vals: &[f64]) -> f64 {
        cols.iter().zip(vals).map(|(&c, &v)| self.weights[c] * v).sum::<f64>() + self.bias
    }

    /// `rows` must be in canonical order; `sample_weights` scale each row's
    /// hinge term.
    pub(crate) fn fit(rows: &[SparseRow], labels: &[u8], sample_weights: &[f64], n_features: usize, params: &SvmParams, seed: u64) -> Self {
        let n = rows.len();
        let lambda = 1.0 / (params.c * n as f64);
        let radius_sq = 1.0 / lambda;
        // w = scale * v, bias stored at index n_features.
        let mut v = vec![0.0; n_features + 1];
        let mut scale = 1.0f64;
        let mut v_norm_sq = 0.0f64;
        let row_norm_sq: Vec<f64> = rows.iter().map(|(_, x)| x.iter().map(|a| a * a).sum::<f64>() + 1.0).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 0u64;
        for epoch in 0..params.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let (cols, vals) = &rows[i];
                let y = if labels[i] == 1 { 1.0 } else { -1.0 };
                let dot_v = cols.iter().zip(vals).map(|(&c, &x)| v[c] * x).sum::<f64>() + v[n_features];
                let margin = y * scale * dot_v;

                let shrink = 1.0 - eta * lambda;
                if shrink <= 0.0 {
                    v.iter_mut().for_each(|a| *a = 0.0);
                    scale = 1.0;
                    v_norm_sq = 0.0;
                } else {
                    scale *= shrink;
                }
                if margin < 1.0 {
                    let a = eta * sample_weights[i] * y / scale;
                    let dot_now = if shrink <= 0.0 { 0.0 } else { dot_v };
                    for (&c, &x) in cols.iter().zip(vals) {
                        v[c] += a * x;
                    }
                    v[n_features] += a;
                    v_norm_sq += 2.0 * a * dot_now + a * a * row_norm_sq[i];
                }
                let w_norm_sq = scale * scale * v_norm_sq;
                if w_norm_sq > radius_sq {
                    scale *= (radius_sq / w_norm_sq).sqrt();
                }
                if scale < 1e-100 {
                    v.iter_mut().for_each(|a| *a *= scale);
                    v_norm_sq *= scale * scale;
                    scale = 1.0;
                }
            }
        }
        let bias = scale * v[n_features];
        let weights = v[..n_features].iter().map(|a| a * scale).collect();
        Self { weights, bias }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sparse(rows: &[[f64; 2]]) -> Vec<SparseRow> {
        rows.iter().map(|r| (vec![0, 1], r.to_vec())).collect()
    }

    #[test]
    fn separates_linearly_separable_points() {
        let rows = sparse(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]);
        let labels = [1, 1, 0, 0];
        let svm = LinearSvm::fit(&rows, &labels, &[1.0; 4], 2, &SvmParams::default(), 1);
        for ((c, v), &y) in rows.iter().zip(&labels) {
            let s = svm.decision(c, v);
            assert_eq!(s > 0.0, y == 1, "score {s}");
        }
    }

    #[test]
    fn weight_norm_stays_in_pegasos_ball() {
        let rows = sparse(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.2]]);
        let params = SvmParams { c: 0.01, epochs: 50 };
        let svm = LinearSvm::fit(&rows, &[1, 0, 1, 0], &[1.0; 4], 2, &params, 9);
        let norm_sq: f64 = svm.weights.iter().map(|w| w * w).sum::<f64>() + svm.bias * svm.bias;
        let lambda = 1.0 / (params.c * 4.0);
        assert!(norm_sq <= 1.0 / lambda + 1e-9);
    }

    #[test]
    fn same_seed_same_weights() {
        let rows = sparse(&[[1.0, 0.2], [0.3, 1.0], [0.8, 0.1], [0.0, 0.7]]);
        let a = LinearSvm::fit(&rows, &[1, 0, 1, 0], &[1.0; 4], 2, &SvmParams::default(), 5);
        let b = LinearSvm::fit(&rows, &[1, 0, 1, 0], &[1.0; 4], 2, &SvmParams::default(), 5);
        assert_eq!(a, b);
    }
}
