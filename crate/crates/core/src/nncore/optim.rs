use serde::{Deserialize, Serialize};

use super::{Parameterized, Real, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One bias-corrected Adam update. Accumulators are created on the first
    /// call and must mirror the parameter shapes afterwards.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: Vec<&Tensor<T>>) -> Result<()> {
        if params.len() != grads.len() {
            return dim_err(format!(
                "adam: {} parameters vs {} gradients",
                params.len(),
                grads.len()
            ));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.shape() != g.shape() {
                return dim_err(format!("adam: param {:?} vs grad {:?}", p.shape(), g.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(&params).any(|(m, p)| m.shape() != p.shape())
        {
            return dim_err("adam: parameter set changed shape between steps");
        }

        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    params: Vec<&mut Tensor<T>>,
    grads: Vec<&Tensor<T>>,
    state: &mut AdamState<T>,
) -> Result<()> {
    state.step(params, grads)
}

/// Adam or plain SGD behind one interface.
#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Adam(AdamState<T>),
    Sgd { lr: f64 },
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(AdamConfig {
                lr,
                ..AdamConfig::default()
            })),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step<P: Parameterized<T>>(&mut self, model: &mut P, grads: &P) -> Result<()> {
        let g: Vec<&Tensor<T>> = grads.params().into_iter().map(|(_, t)| t).collect();
        let p: Vec<&mut Tensor<T>> = model.params_mut().into_iter().map(|(_, t)| t).collect();
        match self {
            Optimizer::Adam(state) => state.step(p, g),
            Optimizer::Sgd { lr } => {
                let lr = T::lit(*lr);
                for (pt, gt) in p.into_iter().zip(g) {
                    if pt.shape() != gt.shape() {
                        return dim_err("sgd: shape mismatch");
                    }
                    for (a, &b) in pt.data_mut().iter_mut().zip(gt.data()) {
                        *a -= lr * b;
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_slice(&[v])
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.7, -0.02, 1e4] {
            let mut st = AdamState::new(AdamConfig::default());
            let mut p = scalar(0.5);
            st.step(vec![&mut p], vec![&scalar(g)]).unwrap();
            let delta = p.data()[0] - 0.5;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-8, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = Tensor::from_slice(&[0.25, -4.0]);
        for _ in 0..50 {
            st.step(vec![&mut p], vec![&Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(p.data(), &[0.25, -4.0]);
    }

    // Independent scalar re-derivation of the Adam recurrence on f(w) = w².
    #[test]
    fn quadratic_descent_matches_scalar_simulation() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg);
        let mut p = scalar(1.0);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = 2.0 * p.data()[0];
            st.step(vec![&mut p], vec![&scalar(g)]).unwrap();

            let gs = 2.0 * w;
            m = 0.9 * m + 0.1 * gs;
            v = 0.999 * v + 0.001 * gs * gs;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);

            assert!((p.data()[0] - w).abs() < 1e-12);
            assert!(w.abs() < prev, "step {t}: |{w}| !< {prev}");
            prev = w.abs();
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[2]);
        assert!(st.step(vec![&mut p], vec![&Tensor::zeros(&[3])]).is_err());
        st.step(vec![&mut p], vec![&Tensor::zeros(&[2])]).unwrap();
        let mut q = Tensor::zeros(&[4]);
        assert!(st.step(vec![&mut q], vec![&Tensor::zeros(&[4])]).is_err());
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Adam, 0.0);
        let mut p = crate::nncore::ParamList::new(vec![("w".into(), scalar(2.0))]);
        let g = crate::nncore::ParamList::new(vec![("w".into(), scalar(5.0))]);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.entries[0].1.data(), &[2.0]);
        let mut sgd = Optimizer::<f64>::new(OptimizerKind::Sgd, 0.5);
        sgd.step(&mut p, &g).unwrap();
        assert_eq!(p.entries[0].1.data(), &[-0.5]);
    }
}
