use super::model::{AutoencoderParams, Gradients};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &AutoencoderParams, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let sizes: Vec<usize> = params
            .layers()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut AutoencoderParams, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let slots = params
            .layers_mut()
            .zip(&grads.layers)
            .flat_map(|(l, g)| [(&mut l.weights, &g.weights), (&mut l.bias, &g.bias)]);
        for ((p, g), (m, v)) in slots.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::model::Architecture;
    use crate::voxel::Repr;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = AutoencoderParams::init(
            Architecture {
                channels: [2, 3, 2],
            },
            Repr::Tdf,
            1,
        )
        .unwrap();
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.001, 0.9, 0.999, 1e-8);
        let g = Gradients::zeros_like(&p);
        for _ in 0..5 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut p = AutoencoderParams::init(
            Architecture {
                channels: [1, 1, 1],
            },
            Repr::Tdf,
            2,
        )
        .unwrap();
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.01, 0.9, 0.999, 1e-8);
        let mut g = Gradients::zeros_like(&p);
        g.layers[0].bias[0] = 3.0;
        adam.step(&mut p, &g);
        let moved = before.analysis[0].bias[0] - p.analysis[0].bias[0];
        assert!((moved - 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
    }
}
