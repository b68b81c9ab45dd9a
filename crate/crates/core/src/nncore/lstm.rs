use rand::Rng;

use super::loss::sigmoid;
use super::{Parameterized, Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Weights of a single LSTM cell. Each gate matrix is `[H × (input_dim + H)]`
/// and acts on the concatenation `[x; h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_i: Tensor<T>,
    pub w_f: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_g: Tensor<T>,
    pub b_i: Tensor<T>,
    pub b_f: Tensor<T>,
    pub b_o: Tensor<T>,
    pub b_g: Tensor<T>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct LstmStepCache<T> {
    z: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    o: Vec<T>,
    g: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

/// Forward trace of a sequence.
#[derive(Clone, Debug)]
pub struct LstmTrace<T> {
    pub steps: Vec<LstmStepCache<T>>,
}

impl<T: Real> LstmTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_hidden(&self) -> &[T] {
        &self.steps.last().expect("non-empty trace").h
    }

    pub fn last_cell(&self) -> &[T] {
        &self.steps.last().expect("non-empty trace").c
    }
}

/// Gradients flowing out of an LSTM back into its inputs.
#[derive(Clone, Debug)]
pub struct LstmInputGrads<T> {
    pub dxs: Vec<Vec<T>>,
    pub dh0: Vec<T>,
    pub dc0: Vec<T>,
}

impl<T: Real> LstmParams<T> {
    /// Glorot-initialized weights, zero biases except the forget gate (1.0).
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let cols = input_dim + hidden_dim;
        let mut w = || Tensor::glorot(&[hidden_dim, cols], cols, hidden_dim, rng);
        let (w_i, w_f, w_o, w_g) = (w(), w(), w(), w());
        LstmParams {
            input_dim,
            hidden_dim,
            w_i,
            w_f,
            w_o,
            w_g,
            b_i: Tensor::zeros(&[hidden_dim]),
            b_f: Tensor::filled(&[hidden_dim], T::one()),
            b_o: Tensor::zeros(&[hidden_dim]),
            b_g: Tensor::zeros(&[hidden_dim]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let cols = input_dim + hidden_dim;
        let w = || Tensor::zeros(&[hidden_dim, cols]);
        let b = || Tensor::zeros(&[hidden_dim]);
        LstmParams {
            input_dim,
            hidden_dim,
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_g: w(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_g: b(),
        }
    }

    fn check(&self) -> Result<()> {
        let cols = self.input_dim + self.hidden_dim;
        for w in [&self.w_i, &self.w_f, &self.w_o, &self.w_g] {
            if w.shape() != [self.hidden_dim, cols] {
                return dim_err(format!(
                    "lstm gate matrix {:?}, expected [{}, {cols}]",
                    w.shape(),
                    self.hidden_dim
                ));
            }
        }
        for b in [&self.b_i, &self.b_f, &self.b_o, &self.b_g] {
            if b.len() != self.hidden_dim {
                return dim_err("lstm gate bias length");
            }
        }
        Ok(())
    }

    /// One cell step, keeping the intermediates for backpropagation.
    pub fn step_cached(&self, x: &[T], h: &[T], c: &[T]) -> Result<LstmStepCache<T>> {
        let hd = self.hidden_dim;
        if x.len() != self.input_dim || h.len() != hd || c.len() != hd {
            return dim_err(format!(
                "lstm step: x {} h {} c {}, expected {} / {hd} / {hd}",
                x.len(),
                h.len(),
                c.len(),
                self.input_dim
            ));
        }
        let mut z = Vec::with_capacity(x.len() + hd);
        z.extend_from_slice(x);
        z.extend_from_slice(h);

        let gate = |w: &Tensor<T>, b: &Tensor<T>, act: fn(T) -> T| {
            let mut out = vec![T::zero(); hd];
            w.matvec_into(&z, &mut out);
            for (o, &bb) in out.iter_mut().zip(b.data()) {
                *o = act(*o + bb);
            }
            out
        };
        let i = gate(&self.w_i, &self.b_i, sigmoid);
        let f = gate(&self.w_f, &self.b_f, sigmoid);
        let o = gate(&self.w_o, &self.b_o, sigmoid);
        let g = gate(&self.w_g, &self.b_g, |v: T| v.tanh());

        let mut c_new = vec![T::zero(); hd];
        let mut tanh_c = vec![T::zero(); hd];
        let mut h_new = vec![T::zero(); hd];
        for k in 0..hd {
            c_new[k] = f[k] * c[k] + i[k] * g[k];
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o[k] * tanh_c[k];
        }
        Ok(LstmStepCache {
            z,
            i,
            f,
            o,
            g,
            c_prev: c.to_vec(),
            tanh_c,
            h: h_new,
            c: c_new,
        })
    }

    /// Runs the cell over `seq`, starting from `state` or zeros.
    pub fn forward<X: AsRef<[T]>>(
        &self,
        seq: &[X],
        state: Option<(&[T], &[T])>,
    ) -> Result<LstmTrace<T>> {
        self.check()?;
        let zeros = vec![T::zero(); self.hidden_dim];
        let (mut h, mut c) = match state {
            Some((h, c)) => (h.to_vec(), c.to_vec()),
            None => (zeros.clone(), zeros),
        };
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let s = self.step_cached(x.as_ref(), &h, &c)?;
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        Ok(LstmTrace { steps })
    }

    /// Backpropagation through time.
    ///
    /// `d_hs[t]` is the loss gradient arriving at step `t`'s hidden output
    /// (from anything other than the recurrence). Parameter gradients are
    /// accumulated into `grads`.
    pub fn backward(
        &self,
        trace: &LstmTrace<T>,
        d_hs: &[Vec<T>],
        grads: &mut LstmParams<T>,
    ) -> Result<LstmInputGrads<T>> {
        if d_hs.len() != trace.len() {
            return dim_err(format!(
                "lstm backward: {} output grads for {} steps",
                d_hs.len(),
                trace.len()
            ));
        }
        let hd = self.hidden_dim;
        let n_in = self.input_dim;
        let mut dh_next = vec![T::zero(); hd];
        let mut dc_next = vec![T::zero(); hd];
        let mut dxs = vec![Vec::new(); trace.len()];
        let mut dai = vec![T::zero(); hd];
        let mut daf = vec![T::zero(); hd];
        let mut dao = vec![T::zero(); hd];
        let mut dag = vec![T::zero(); hd];
        let one = T::one();

        for t in (0..trace.len()).rev() {
            let s = &trace.steps[t];
            for k in 0..hd {
                let dh = dh_next[k] + d_hs[t][k];
                let d_o = dh * s.tanh_c[k];
                let dc = dc_next[k] + dh * s.o[k] * (one - s.tanh_c[k] * s.tanh_c[k]);
                let d_f = dc * s.c_prev[k];
                let d_i = dc * s.g[k];
                let d_g = dc * s.i[k];
                dc_next[k] = dc * s.f[k];
                dai[k] = d_i * s.i[k] * (one - s.i[k]);
                daf[k] = d_f * s.f[k] * (one - s.f[k]);
                dao[k] = d_o * s.o[k] * (one - s.o[k]);
                dag[k] = d_g * (one - s.g[k] * s.g[k]);
            }
            let mut dz = vec![T::zero(); n_in + hd];
            for (w, gw, gb, da) in [
                (&self.w_i, &mut grads.w_i, &mut grads.b_i, &dai),
                (&self.w_f, &mut grads.w_f, &mut grads.b_f, &daf),
                (&self.w_o, &mut grads.w_o, &mut grads.b_o, &dao),
                (&self.w_g, &mut grads.w_g, &mut grads.b_g, &dag),
            ] {
                gw.outer_acc(da, &s.z);
                for (b, &d) in gb.data_mut().iter_mut().zip(da.iter()) {
                    *b += d;
                }
                w.matvec_t_acc(da, &mut dz);
            }
            dh_next.copy_from_slice(&dz[n_in..]);
            dz.truncate(n_in);
            dxs[t] = dz;
        }
        Ok(LstmInputGrads {
            dxs,
            dh0: dh_next,
            dc0: dc_next,
        })
    }

    /// Backward pass when only the final hidden state feeds the loss.
    pub fn backward_last(
        &self,
        trace: &LstmTrace<T>,
        d_last: &[T],
        grads: &mut LstmParams<T>,
    ) -> Result<LstmInputGrads<T>> {
        let mut d_hs = vec![vec![T::zero(); self.hidden_dim]; trace.len()];
        if let Some(last) = d_hs.last_mut() {
            last.copy_from_slice(d_last);
        }
        self.backward(trace, &d_hs, grads)
    }
}

impl<T: Real> Parameterized<T> for LstmParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_o".into(), &self.w_o),
            ("w_g".into(), &self.w_g),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_o".into(), &self.b_o),
            ("b_g".into(), &self.b_g),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("w_i".into(), &mut self.w_i),
            ("w_f".into(), &mut self.w_f),
            ("w_o".into(), &mut self.w_o),
            ("w_g".into(), &mut self.w_g),
            ("b_i".into(), &mut self.b_i),
            ("b_f".into(), &mut self.b_f),
            ("b_o".into(), &mut self.b_o),
            ("b_g".into(), &mut self.b_g),
        ]
    }
}

/// Single LSTM cell step: returns `(h', c')`.
pub fn lstm_step<T: Real>(
    x: &[T],
    h: &[T],
    c: &[T],
    p: &LstmParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    p.check()?;
    let s = p.step_cached(x, h, c)?;
    Ok((s.h, s.c))
}

/// Final hidden state after folding the cell over `seq` from the zero state.
pub fn lstm_encode<T: Real, X: AsRef<[T]>>(seq: &[X], p: &LstmParams<T>) -> Result<Vec<T>> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("lstm_encode on an empty sequence".into()));
    }
    Ok(p.forward(seq, None)?.last_hidden().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::grad_check;
    use crate::nncore::ParamList;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::<f64>::zeros(3, 4);
        let (h, c) = lstm_step(&[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4], &p).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn zero_params_carry_cell() {
        let p = LstmParams::<f64>::zeros(2, 3);
        let (h, c) = lstm_step(&[0.3, 0.7], &[0.0; 3], &[2.0; 3], &p).unwrap();
        for k in 0..3 {
            assert!((c[k] - 1.0).abs() < 1e-15);
            assert!((h[k] - 0.5 * 1f64.tanh()).abs() < 1e-15);
            assert!((h[k] - 0.38079).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = LstmParams::<f64>::zeros(2, 3);
        assert!(lstm_step(&[0.0; 3], &[0.0; 3], &[0.0; 3], &p).is_err());
        assert!(lstm_step(&[0.0; 2], &[0.0; 2], &[0.0; 3], &p).is_err());
    }

    #[test]
    fn encode_unrolls_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::<f64>::new(2, 5, &mut rng);
        let seq = [vec![0.1, -0.4], vec![1.2, 0.3], vec![-0.7, 0.9]];
        let enc = lstm_encode(&seq, &p).unwrap();
        let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
        for x in &seq {
            let (h2, c2) = lstm_step(x, &h, &c, &p).unwrap();
            h = h2;
            c = c2;
        }
        assert_eq!(enc, h);
        let one = lstm_encode(&seq[..1], &p).unwrap();
        assert_eq!(one, lstm_step(&seq[0], &[0.0; 5], &[0.0; 5], &p).unwrap().0);
        assert_eq!(enc, lstm_encode(&seq, &p).unwrap());
        assert!(lstm_encode::<f64, Vec<f64>>(&[], &p).is_err());
    }

    // loss = Σ_t w_t · h_t, exercising every per-step output gradient plus
    // the inputs and the initial state.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n_in, hd, steps) = (3, 4, 4);
        let mut p = LstmParams::<f64>::new(n_in, hd, &mut rng);
        for (_, t) in p.params_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let mut inputs = ParamList::new(vec![
            ("xs".into(), Tensor::uniform(&[steps, n_in], 1.0, &mut rng)),
            ("h0".into(), Tensor::uniform(&[hd], 0.5, &mut rng)),
            ("c0".into(), Tensor::uniform(&[hd], 0.5, &mut rng)),
        ]);
        let weights: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..hd).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let loss = |p: &LstmParams<f64>, inp: &ParamList<f64>| {
            let xs = inp.get("xs").unwrap();
            let seq: Vec<&[f64]> = (0..steps).map(|t| xs.row(t)).collect();
            let tr = p
                .forward(
                    &seq,
                    Some((inp.get("h0").unwrap().data(), inp.get("c0").unwrap().data())),
                )
                .unwrap();
            tr.steps
                .iter()
                .zip(&weights)
                .map(|(s, w)| s.h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
        };

        let xs = inputs.get("xs").unwrap().clone();
        let seq: Vec<&[f64]> = (0..steps).map(|t| xs.row(t)).collect();
        let h0 = inputs.get("h0").unwrap().data().to_vec();
        let c0 = inputs.get("c0").unwrap().data().to_vec();
        let tr = p.forward(&seq, Some((&h0, &c0))).unwrap();
        let mut grads = p.zeros_like();
        let ig = p.backward(&tr, &weights, &mut grads).unwrap();

        let inp_snapshot = inputs.clone();
        let report = grad_check(&mut p, &grads, 1e-5, |m| loss(m, &inp_snapshot)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let dx_flat: Vec<f64> = ig.dxs.concat();
        let analytic_inputs = ParamList::new(vec![
            ("xs".into(), Tensor::new(&[steps, n_in], dx_flat).unwrap()),
            ("h0".into(), Tensor::from_slice(&ig.dh0)),
            ("c0".into(), Tensor::from_slice(&ig.dc0)),
        ]);
        let p_snapshot = p.clone();
        let report =
            grad_check(&mut inputs, &analytic_inputs, 1e-5, |i| loss(&p_snapshot, i)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
