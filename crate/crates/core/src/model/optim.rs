use super::ModelParams;

/// Adaptive-moment gradient descent over [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dense, ModelKind};
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ModelParams {
            kind: ModelKind::Sgc,
            layers: vec![Dense {
                weight: array![[1.0, -1.0]],
                bias: array![0.0, 0.0],
            }],
        };
        let g = ModelParams {
            kind: ModelKind::Sgc,
            layers: vec![Dense {
                weight: array![[3.0, -0.5]],
                bias: array![0.0, 2.0],
            }],
        };
        let mut opt = Adam::new(&p, 0.01);
        opt.step(&mut p, &g);
        let w = &p.layers[0].weight;
        assert!((w[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((w[[0, 1]] + 0.99).abs() < 1e-9);
        assert_eq!(p.layers[0].bias[0], 0.0);
        assert!((p.layers[0].bias[1] + 0.01).abs() < 1e-9);
        assert_eq!(opt.steps_taken(), 1);
    }
}
