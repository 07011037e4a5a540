/// Adam with bias correction. Each parameter tensor owns a fixed slot so
/// moments survive across steps; learning rates are supplied per tensor,
/// which is how parameter groups are expressed.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One tensor's update request. `lr == None` freezes the tensor.
pub struct ParamUpdate<'a> {
    pub lr: Option<f64>,
    pub param: &'a mut [f64],
    pub grad: &'a [f64],
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, updates: Vec<ParamUpdate<'_>>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        if self.moments.len() < updates.len() {
            self.moments.resize(updates.len(), (Vec::new(), Vec::new()));
        }
        for (slot, u) in updates.into_iter().enumerate() {
            let Some(lr) = u.lr else { continue };
            assert_eq!(u.param.len(), u.grad.len(), "parameter/gradient size mismatch");
            let (m, v) = &mut self.moments[slot];
            if m.len() != u.param.len() {
                *m = vec![0.0; u.param.len()];
                *v = vec![0.0; u.param.len()];
            }
            for i in 0..u.param.len() {
                let g = u.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                u.param[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
