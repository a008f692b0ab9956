use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Moment estimates carried between steps (empty for SGD).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub steps: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState { kind, steps: 0, m, v },
        }
    }

    /// Continues from saved moments; a state of the wrong kind or size is discarded.
    pub fn resume(kind: OptimizerKind, lr: f64, n_params: usize, state: Option<OptimizerState>) -> Self {
        let mut opt = Self::new(kind, lr, n_params);
        if let Some(s) = state {
            let fits = s.kind == kind && (kind == OptimizerKind::Sgd || (s.m.len() == n_params && s.v.len() == n_params));
            if fits {
                opt.state = s;
            }
        }
        opt
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.state.steps += 1;
        match self.state.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let k = self.state.steps as i32;
                let c1 = 1.0 - self.beta1.powi(k);
                let c2 = 1.0 - self.beta2.powi(k);
                let st = &mut self.state;
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.0, 3);
            let mut p = vec![1.0, -2.0, 0.5];
            opt.step(&mut p, &[3.0, 1.0, -4.0]);
            assert_eq!(p, vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[5.0, -0.01]);
        assert!((p[0] + 0.1).abs() < 1e-6);
        assert!((p[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 1);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
