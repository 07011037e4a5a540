use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// One-hidden-layer perceptron `d → d → c` with a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    input: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl Classifier {
    pub fn init<R: Rng>(dim: usize, classes: usize, rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut R| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-a..a))
        };
        Self {
            w1: glorot(dim, dim, rng),
            b1: Array1::zeros(dim),
            w2: glorot(dim, classes, rng),
            b2: Array1::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.b2.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    /// Unnormalized class scores for each row of `z`.
    pub fn logits(&self, z: &Array2<f64>) -> (Array2<f64>, ClassifierCache) {
        let hidden_pre = z.dot(&self.w1) + &self.b1;
        let hidden = hidden_pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        let cache = ClassifierCache {
            input: z.clone(),
            hidden_pre,
            hidden,
        };
        (logits, cache)
    }

    pub fn probabilities(&self, z: &Array2<f64>) -> Array2<f64> {
        let (mut logits, _) = self.logits(z);
        for mut row in logits.axis_iter_mut(Axis(0)) {
            let lse = log_sum_exp(row.view());
            row.mapv_inplace(|v| (v - lse).exp());
        }
        logits
    }

    /// Gradients w.r.t. parameters and input, given `dL/dlogits`.
    pub fn backward(&self, cache: &ClassifierCache, g_logits: &Array2<f64>) -> (Classifier, Array2<f64>) {
        let g_w2 = cache.hidden.t().dot(g_logits);
        let g_b2 = g_logits.sum_axis(Axis(0));
        let mut g_hidden = g_logits.dot(&self.w2.t());
        ndarray::Zip::from(&mut g_hidden)
            .and(&cache.hidden_pre)
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
        let g_w1 = cache.input.t().dot(&g_hidden);
        let g_b1 = g_hidden.sum_axis(Axis(0));
        let g_input = g_hidden.dot(&self.w1.t());
        (
            Classifier {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
            g_input,
        )
    }
}

pub(crate) fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
