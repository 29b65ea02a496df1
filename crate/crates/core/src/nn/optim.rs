use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Param, Scalar};

/// Which adaptive-moment rule an [`Optimizer`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Rectified Adam (variance-rectified warmup).
    Radam,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Radam => "radam",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Adam / RAdam with bias correction, one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "optimizer bound to a different parameter list");
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);

        // Scalar multipliers on m_hat and on 1/(sqrt(v_hat)+eps); None means
        // the un-adapted (momentum only) step used during RAdam's warmup.
        let rect = match self.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::Radam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bias2;
                (rho_t > 5.0).then(|| {
                    (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
                })
            }
        };

        let c = |v: f64| T::from_f64_lossy(v);
        let (b1t, b2t, one_b1, one_b2) = (c(b1), c(b2), c(1.0 - b1), c(1.0 - b2));
        let lr_m = self.lr / bias1;
        let sqrt_bias2 = bias2.sqrt();
        let eps = c(self.eps);
        for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1t * *m + one_b1 * g;
                    *v = b2t * *v + one_b2 * g * g;
                    match rect {
                        Some(r) => {
                            let denom = v.sqrt() / c(sqrt_bias2) + eps;
                            *w = *w - c(lr_m * r) * *m / denom;
                        }
                        None => *w = *w - c(lr_m) * *m,
                    }
                });
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descent(kind: OptimizerKind) -> f64 {
        let mut p = Param::<f64>::zeros("x", &[1]);
        p.value[[0]] = 3.0;
        let mut opt = Optimizer::new(kind, 0.05);
        for _ in 0..500 {
            let x = p.value[[0]];
            p.grad[[0]] = 2.0 * (x - 1.0);
            opt.step(vec![&mut p]);
        }
        p.value[[0]]
    }

    #[test]
    fn both_rules_minimize_a_quadratic() {
        for kind in [OptimizerKind::Radam, OptimizerKind::Adam] {
            let x = quadratic_descent(kind);
            assert!((x - 1.0).abs() < 1e-2, "{kind:?} ended at {x}");
        }
    }

    #[test]
    fn radam_first_steps_are_momentum_sgd() {
        // rho_t <= 5 for the first few steps, so the update is lr * m_hat.
        let mut p = Param::<f64>::zeros("x", &[1]);
        p.grad[[0]] = 2.0;
        let mut opt = Optimizer::new(OptimizerKind::Radam, 0.1);
        opt.step(vec![&mut p]);
        assert!((p.value[[0]] + 0.2).abs() < 1e-12);
        assert_eq!(p.grad[[0]], 0.0);
    }
}
