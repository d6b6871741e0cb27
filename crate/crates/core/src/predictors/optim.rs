/// Full-batch gradient descent with momentum and an adaptive step
/// ("bold driver"): a step is only accepted if it does not raise the loss,
/// so the recorded loss sequence is non-increasing.
pub(super) struct Descent {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

const MAX_RETRIES: usize = 40;

impl Descent {
    pub fn run<L, G>(&self, mut theta: Vec<f64>, loss: L, loss_grad: G) -> (Vec<f64>, Vec<f64>)
    where
        L: Fn(&[f64]) -> f64,
        G: Fn(&[f64]) -> (f64, Vec<f64>),
    {
        let mut lr = self.lr;
        let mut velocity = vec![0.0; theta.len()];
        let mut history = Vec::with_capacity(self.epochs);
        let (mut current, mut grad) = loss_grad(&theta);
        let mut cand = vec![0.0; theta.len()];
        'epochs: for _ in 0..self.epochs {
            for _ in 0..MAX_RETRIES {
                for i in 0..theta.len() {
                    cand[i] = theta[i] - lr * grad[i] + self.momentum * velocity[i];
                }
                let l = loss(&cand);
                if l <= current {
                    for i in 0..theta.len() {
                        velocity[i] = cand[i] - theta[i];
                    }
                    std::mem::swap(&mut theta, &mut cand);
                    (current, grad) = loss_grad(&theta);
                    history.push(current);
                    lr *= 1.05;
                    continue 'epochs;
                }
                velocity.iter_mut().for_each(|v| *v = 0.0);
                lr *= 0.5;
            }
            break;
        }
        (theta, history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_monotonically() {
        let loss = |t: &[f64]| (t[0] - 3.0).powi(2) + 10.0 * (t[1] + 1.0).powi(2);
        let lg = |t: &[f64]| (loss(t), vec![2.0 * (t[0] - 3.0), 20.0 * (t[1] + 1.0)]);
        let d = Descent {
            epochs: 500,
            lr: 1.0,
            momentum: 0.9,
        };
        let (t, h) = d.run(vec![0.0, 0.0], loss, lg);
        assert!((t[0] - 3.0).abs() < 1e-4 && (t[1] + 1.0).abs() < 1e-4);
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }
}
