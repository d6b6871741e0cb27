use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::Descent;
use super::Hyper;
use crate::util::{rng_for, sigmoid, softplus};

const STREAM_INIT: u64 = 0x4d4c50;

/// One hidden ReLU layer and a logistic output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// hidden × inputs
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl MlpModel {
    pub fn logit(&self, z: &[f64]) -> f64 {
        let h = self.w1.dot(&ArrayView1::from(z)) + &self.b1;
        self.b2 + h.iter().zip(&self.w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>()
    }

    pub fn logits(&self, z: &Array2<f64>) -> Vec<f64> {
        let mut h = z.dot(&self.w1.t()) + &self.b1;
        h.mapv_inplace(|a| a.max(0.0));
        (h.dot(&self.w2) + self.b2).to_vec()
    }
}

struct Shape {
    d: usize,
    h: usize,
}

impl Shape {
    fn unpack<'a>(&self, t: &'a [f64]) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>, ArrayView1<'a, f64>, f64) {
        let (d, h) = (self.d, self.h);
        let w1 = ArrayView2::from_shape((h, d), &t[..h * d]).expect("w1 block");
        let b1 = ArrayView1::from(&t[h * d..h * d + h]);
        let w2 = ArrayView1::from(&t[h * d + h..h * d + 2 * h]);
        (w1, b1, w2, t[h * d + 2 * h])
    }
}

struct Objective<'a> {
    z: &'a Array2<f64>,
    y: Array1<f64>,
    shape: Shape,
    l2: f64,
}

impl Objective<'_> {
    fn forward(&self, t: &[f64]) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let (w1, b1, w2, b2) = self.shape.unpack(t);
        let pre = self.z.dot(&w1.t()) + b1;
        let act = pre.mapv(|a| a.max(0.0));
        let s = act.dot(&w2) + b2;
        (pre, act, s)
    }

    fn penalty(&self, t: &[f64]) -> f64 {
        let (w1, _, w2, _) = self.shape.unpack(t);
        0.5 * self.l2 * (w1.iter().map(|w| w * w).sum::<f64>() + w2.iter().map(|w| w * w).sum::<f64>())
    }

    fn data_loss(&self, s: &Array1<f64>) -> f64 {
        s.iter().zip(&self.y).map(|(s, y)| softplus(*s) - y * s).sum::<f64>() / s.len() as f64
    }

    fn loss(&self, t: &[f64]) -> f64 {
        let (_, _, s) = self.forward(t);
        self.data_loss(&s) + self.penalty(t)
    }

    fn loss_grad(&self, t: &[f64]) -> (f64, Vec<f64>) {
        let (w1, _, w2, _) = self.shape.unpack(t);
        let (pre, act, s) = self.forward(t);
        let l = self.data_loss(&s) + self.penalty(t);
        let r = (s.mapv(sigmoid) - &self.y) / s.len() as f64;
        let g_w2 = act.t().dot(&r) + &w2.mapv(|w| self.l2 * w);
        let g_b2 = r.sum();
        let mut delta = r.insert_axis(Axis(1)).dot(&w2.insert_axis(Axis(0)));
        delta.zip_mut_with(&pre, |g, p| {
            if *p <= 0.0 {
                *g = 0.0;
            }
        });
        let g_w1 = delta.t().dot(self.z) + &w1.mapv(|w| self.l2 * w);
        let g_b1 = delta.sum_axis(Axis(0));
        let mut g = Vec::with_capacity(t.len());
        g.extend(g_w1.iter());
        g.extend(g_b1.iter());
        g.extend(g_w2.iter());
        g.push(g_b2);
        (l, g)
    }
}

fn init(d: usize, h: usize, prior: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[STREAM_INIT]);
    let n1 = Normal::new(0.0, (2.0 / d.max(1) as f64).sqrt()).expect("finite sd");
    let n2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("finite sd");
    let mut theta: Vec<f64> = (0..h * d).map(|_| n1.sample(&mut rng)).collect();
    theta.extend(std::iter::repeat_n(0.0, h));
    theta.extend((0..h).map(|_| n2.sample(&mut rng)));
    theta.push((prior / (1.0 - prior)).ln());
    theta
}

pub(super) fn fit(z: &Array2<f64>, y: &[f64], hyper: &Hyper, seed: u64) -> (MlpModel, Vec<f64>) {
    let (n, d) = z.dim();
    let h = hyper["hidden"] as usize;
    let prior = y.iter().sum::<f64>() / n as f64;
    let obj = Objective {
        z,
        y: Array1::from(y.to_vec()),
        shape: Shape { d, h },
        l2: hyper["l2"],
    };
    let descent = Descent {
        epochs: hyper["epochs"] as usize,
        lr: hyper["lr"],
        momentum: hyper["momentum"],
    };
    let (t, history) = descent.run(init(d, h, prior, seed), |t| obj.loss(t), |t| obj.loss_grad(t));
    let (w1, b1, w2, b2) = obj.shape.unpack(&t);
    let model = MlpModel {
        w1: w1.to_owned(),
        b1: b1.to_owned(),
        w2: w2.to_owned(),
        b2,
    };
    (model, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let z = array![[0.5, -1.0], [1.5, 0.3], [-0.7, 0.9], [0.1, 0.1]];
        let obj = Objective {
            z: &z,
            y: array![1.0, 0.0, 1.0, 0.0],
            shape: Shape { d: 2, h: 3 },
            l2: 0.01,
        };
        let t = init(2, 3, 0.5, 9);
        let (_, g) = obj.loss_grad(&t);
        for i in 0..t.len() {
            let mut a = t.clone();
            let mut b = t.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (obj.loss(&a) - obj.loss(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn batched_and_single_row_agree() {
        let z = array![[0.5, -1.0], [1.5, 0.3], [-0.7, 0.9]];
        let mut hyper = super::super::PredictorKind::Mlp.default_hyper();
        hyper.insert("epochs".into(), 5.0);
        let (m, _) = fit(&z, &[1.0, 0.0, 1.0], &hyper, 5);
        let batch = m.logits(&z);
        for (i, row) in z.rows().into_iter().enumerate() {
            assert!((m.logit(&row.to_vec()) - batch[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_non_increasing() {
        let z = array![
            [0.5, -1.0],
            [1.5, 0.3],
            [-0.7, 0.9],
            [0.1, 0.1],
            [2.0, 2.0],
            [-2.0, -1.0]
        ];
        let y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let hyper = super::super::PredictorKind::Mlp.default_hyper();
        let (_, h) = fit(&z, &y, &hyper, 1);
        assert!(!h.is_empty());
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }
}
