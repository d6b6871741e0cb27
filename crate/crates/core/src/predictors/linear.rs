use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::optim::Descent;
use super::Hyper;
use crate::util::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn logit(&self, z: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn logits(&self, z: &Array2<f64>) -> Vec<f64> {
        let w = ArrayView1::from(&self.weights);
        (z.dot(&w) + self.bias).to_vec()
    }
}

/// Mean log-loss plus `l2/2·|w|²`, minimised from the prior log-odds.
pub(super) fn fit(z: &Array2<f64>, y: &[f64], hyper: &Hyper) -> (LogisticModel, Vec<f64>) {
    let (n, d) = z.dim();
    let l2 = hyper["l2"];
    let yv = Array1::from(y.to_vec());
    let prior = y.iter().sum::<f64>() / n as f64;
    let mut theta = vec![0.0; d + 1];
    theta[d] = (prior / (1.0 - prior)).ln();

    let forward = |t: &[f64]| z.dot(&ArrayView1::from(&t[..d])) + t[d];
    let loss = |t: &[f64]| {
        let s = forward(t);
        let data: f64 = s.iter().zip(y).map(|(s, y)| softplus(*s) - y * s).sum::<f64>() / n as f64;
        data + 0.5 * l2 * t[..d].iter().map(|w| w * w).sum::<f64>()
    };
    let loss_grad = |t: &[f64]| {
        let s = forward(t);
        let r = (s.mapv(sigmoid) - &yv) / n as f64;
        let mut g = z.t().dot(&r).to_vec();
        for (gj, wj) in g.iter_mut().zip(&t[..d]) {
            *gj += l2 * wj;
        }
        g.push(r.sum());
        (loss(t), g)
    };
    let descent = Descent {
        epochs: hyper["epochs"] as usize,
        lr: hyper["lr"],
        momentum: hyper["momentum"],
    };
    let (t, history) = descent.run(theta, loss, loss_grad);
    let model = LogisticModel {
        weights: t[..d].to_vec(),
        bias: t[d],
    };
    (model, history)
}
