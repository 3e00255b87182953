use deco_core::model::Parameters;
use deco_core::Tensor;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &Parameters, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `grads[k]` belongs to the `k`-th parameter tensor.
    pub fn step(&mut self, params: &mut Parameters, grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.tensors_mut().enumerate() {
            let g = grads[k].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let decay = 1.0 - self.lr * self.weight_decay;
            let updated: Vec<f64> = p
                .data()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    w * decay - self.lr * mh / (vh.sqrt() + self.eps)
                })
                .collect();
            *p = Tensor::new(p.shape().to_vec(), updated).expect("shape unchanged");
        }
    }
}
