//! Finite-difference gradient suite over every differentiable component,
//! run in 64-bit mode at tiny dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codelm::{CharLmDims, CharLmModel};
use crate::codeprep::Lang;
use crate::error::Result;
use crate::gridcnn::{ConvSpec, GridCnnModel, GridDims, GridToken, Segment, TokenSequence};
use crate::nncore::{
    bce_logit_grad, bce_loss, conv2d, conv2d_backward, cosine_sim, cosine_sim_backward,
    crop_to_multiple, grad_check, maxpool2d_argmax, maxpool2d_backward, sigmoid, uncrop,
    Activation, DenseParams, GradCheckReport, LstmParams, Mlp, ParamList, Parameterized, Tensor,
    FD_EPS, GRAD_TOL,
};
use crate::siamese::{SiameseDims, SiameseInput, SiameseModel};

/// Worst result of one component across all its random trials.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<Vec<GradCheckReport>>;

const COMPONENTS: &[(&str, Check)] = &[
    ("lstm", check_lstm),
    ("dense.identity", |r| check_dense(r, Activation::Identity)),
    ("dense.relu", |r| check_dense(r, Activation::Relu)),
    ("dense.tanh", |r| check_dense(r, Activation::Tanh)),
    ("dense.sigmoid", |r| check_dense(r, Activation::Sigmoid)),
    ("mlp.bce", check_mlp),
    ("conv2d.maxpool", check_conv),
    ("cosine_sim", check_cosine),
    ("bce.sigmoid", check_bce),
    ("codelm", check_codelm),
    ("siamese", check_siamese),
    ("gridcnn", check_gridcnn),
];

/// Runs `trials` random configurations of every component.
pub fn run_gradient_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut entries = Vec::with_capacity(COMPONENTS.len());
    for (k, (name, check)) in COMPONENTS.iter().enumerate() {
        let mut worst: Option<GradCheckReport> = None;
        for t in 0..trials.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ t as u64);
            for r in check(&mut rng)? {
                if worst.as_ref().map_or(true, |w| r.max_rel_error > w.max_rel_error) {
                    worst = Some(r);
                }
            }
        }
        let worst = worst.expect("every check yields a report");
        log::info!("gradcheck {name} max_rel_error={:.3e}", worst.max_rel_error);
        entries.push(SuiteEntry {
            name: name.to_string(),
            trials: trials.max(1),
            max_rel_error: worst.max_rel_error,
            worst_param: worst.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")),
            passed: worst.passed(GRAD_TOL),
        });
    }
    Ok(SuiteReport {
        tolerance: GRAD_TOL,
        entries,
    })
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn jitter<P: Parameterized<f64>>(p: &mut P, rng: &mut ChaCha8Rng, amount: f64) {
    for (_, t) in p.params_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-amount..amount);
        }
    }
}

fn check_lstm(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let (n_in, hd, steps) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
    let mut p = LstmParams::<f64>::new(n_in, hd, rng);
    jitter(&mut p, rng, 0.5);
    let mut inputs = ParamList::new(vec![
        ("xs".into(), Tensor::uniform(&[steps, n_in], 1.0, rng)),
        ("h0".into(), Tensor::uniform(&[hd], 0.5, rng)),
        ("c0".into(), Tensor::uniform(&[hd], 0.5, rng)),
    ]);
    let w: Vec<Vec<f64>> = (0..steps).map(|_| weights(rng, hd)).collect();
    let loss = |p: &LstmParams<f64>, inp: &ParamList<f64>| -> f64 {
        let xs = inp.get("xs").unwrap();
        let seq: Vec<&[f64]> = (0..steps).map(|t| xs.row(t)).collect();
        let h0 = inp.get("h0").unwrap().data();
        let c0 = inp.get("c0").unwrap().data();
        let tr = p.forward(&seq, Some((h0, c0))).unwrap();
        tr.steps
            .iter()
            .zip(&w)
            .map(|(s, w)| s.h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let xs = inputs.get("xs").unwrap().clone();
    let seq: Vec<&[f64]> = (0..steps).map(|t| xs.row(t)).collect();
    let h0 = inputs.get("h0").unwrap().data().to_vec();
    let c0 = inputs.get("c0").unwrap().data().to_vec();
    let tr = p.forward(&seq, Some((&h0, &c0)))?;
    let mut g = p.zeros_like();
    let ig = p.backward(&tr, &w, &mut g)?;
    let snap = inputs.clone();
    let r1 = grad_check(&mut p, &g, FD_EPS, |m| loss(m, &snap))?;
    let gi = ParamList::new(vec![
        ("xs".into(), Tensor::new(&[steps, n_in], ig.dxs.concat())?),
        ("h0".into(), Tensor::from_slice(&ig.dh0)),
        ("c0".into(), Tensor::from_slice(&ig.dc0)),
    ]);
    let psnap = p.clone();
    let r2 = grad_check(&mut inputs, &gi, FD_EPS, |i| loss(&psnap, i))?;
    Ok(vec![r1, r2])
}

fn check_dense(rng: &mut ChaCha8Rng, act: Activation) -> Result<Vec<GradCheckReport>> {
    let (n_in, n_out) = (rng.gen_range(1..6), rng.gen_range(1..5));
    let mut p = DenseParams::<f64>::new(n_in, n_out, act, rng);
    p.bias = Tensor::uniform(&[n_out], 0.5, rng);
    let x = weights(rng, n_in);
    let w = weights(rng, n_out);
    let loss = |p: &DenseParams<f64>, x: &[f64]| -> f64 {
        p.forward(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let y = p.forward(&x)?;
    let mut g = p.zeros_like();
    let dx = p.backward(&x, &y, &w, &mut g);
    let r1 = grad_check(&mut p, &g, FD_EPS, |m| loss(m, &x))?;
    let mut xin = ParamList::new(vec![("x".into(), Tensor::from_slice(&x))]);
    let gx = ParamList::new(vec![("x".into(), Tensor::from_slice(&dx))]);
    let snap = p.clone();
    let r2 = grad_check(&mut xin, &gx, FD_EPS, |m| loss(&snap, m.entries[0].1.data()))?;
    Ok(vec![r1, r2])
}

fn check_mlp(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let n_in = rng.gen_range(2..6);
    let hidden = [rng.gen_range(2..5), rng.gen_range(2..4)];
    let mut mlp = Mlp::<f64>::binary_head(n_in, &hidden, Activation::Tanh, rng);
    let x = weights(rng, n_in);
    let mut out = Vec::new();
    for y in [0.0, 1.0] {
        let outs = mlp.forward(&x)?;
        let p = outs.last().unwrap()[0];
        let mut g = mlp.zeros_like();
        mlp.backward_from_logit(&x, &outs, bce_logit_grad(p, y), &mut g);
        out.push(grad_check(&mut mlp, &g, FD_EPS, |m| {
            bce_loss(m.forward(&x).unwrap().last().unwrap()[0], y)
        })?);
    }
    Ok(out)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let stride = rng.gen_range(1..3);
    let (c_in, c_out, k, side) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), 7);
    let mut params = ParamList::new(vec![
        ("k".into(), Tensor::<f64>::uniform(&[c_out, c_in, k, k], 1.0, rng)),
        ("b".into(), Tensor::uniform(&[c_out], 1.0, rng)),
        ("x".into(), Tensor::uniform(&[c_in, side, side], 1.0, rng)),
    ]);
    let oh = (side - k) / stride + 1;
    let w = Tensor::<f64>::uniform(&[c_out, oh / 2, oh / 2], 1.0, rng);
    let forward = |p: &ParamList<f64>| {
        let y = conv2d(p.get("x").unwrap(), p.get("k").unwrap(), p.get("b").unwrap(), stride)
            .unwrap();
        let cropped = crop_to_multiple(&y, 2).unwrap();
        let (pooled, arg) = maxpool2d_argmax(&cropped, 2).unwrap();
        (cropped, pooled, arg)
    };
    let (cropped, _, arg) = forward(&params);
    let d_crop = maxpool2d_backward(cropped.shape(), &arg, &w)?;
    let d_y = uncrop(&d_crop, &[c_out, oh, oh])?;
    let mut dk = Tensor::zeros(&[c_out, c_in, k, k]);
    let mut db = Tensor::zeros(&[c_out]);
    let dx = conv2d_backward(
        params.get("x").unwrap(),
        params.get("k").unwrap(),
        stride,
        &d_y,
        &mut dk,
        &mut db,
    )?;
    let g = ParamList::new(vec![("k".into(), dk), ("b".into(), db), ("x".into(), dx)]);
    let r = grad_check(&mut params, &g, FD_EPS, |p| {
        let (_, pooled, _) = forward(p);
        pooled.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    })?;
    Ok(vec![r])
}

fn check_cosine(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let d = rng.gen_range(2..7);
    let mut uv = ParamList::new(vec![
        ("u".into(), Tensor::<f64>::uniform(&[d], 1.0, rng)),
        ("v".into(), Tensor::<f64>::uniform(&[d], 1.0, rng)),
    ]);
    let scale = rng.gen_range(0.5..2.0);
    let (u, v) = (uv.entries[0].1.data().to_vec(), uv.entries[1].1.data().to_vec());
    let (mut du, mut dv) = (vec![0.0; d], vec![0.0; d]);
    cosine_sim_backward(&u, &v, scale, &mut du, &mut dv);
    let g = ParamList::new(vec![
        ("u".into(), Tensor::from_slice(&du)),
        ("v".into(), Tensor::from_slice(&dv)),
    ]);
    let r = grad_check(&mut uv, &g, FD_EPS, |p| {
        scale * cosine_sim(p.entries[0].1.data(), p.entries[1].1.data()).unwrap()
    })?;
    Ok(vec![r])
}

fn check_bce(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for y in [0.0, 1.0] {
        let mut z = ParamList::new(vec![("z".into(), Tensor::from_slice(&[rng.gen_range(-4.0..4.0)]))]);
        let p = sigmoid(z.entries[0].1.data()[0]);
        let g = ParamList::new(vec![("z".into(), Tensor::from_slice(&[bce_logit_grad(p, y)]))]);
        out.push(grad_check(&mut z, &g, FD_EPS, |m| bce_loss(sigmoid(m.entries[0].1.data()[0]), y))?);
    }
    Ok(out)
}

fn check_codelm(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let dims = CharLmDims {
        vocab: rng.gen_range(3..9),
        embed: rng.gen_range(2..5),
        hidden: rng.gen_range(2..7),
    };
    let mut m = CharLmModel::<f64>::new(Lang::Python, dims, 64, rng);
    let len = rng.gen_range(2..8);
    let seg: Vec<usize> = (0..len).map(|_| rng.gen_range(0..dims.vocab)).collect();
    let h = weights(rng, dims.hidden);
    let c = weights(rng, dims.hidden);
    let mut g = m.zeros_like();
    m.segment_loss_grad(&seg, Some((&h, &c)), 1.0, &mut g)?;
    let r = grad_check(&mut m, &g, FD_EPS, |m| {
        let mut scratch = m.zeros_like();
        m.segment_loss_grad(&seg, Some((&h, &c)), 1.0, &mut scratch)
            .unwrap()
            .loss
    })?;
    Ok(vec![r])
}

fn siamese_input(rng: &mut ChaCha8Rng, vocab: usize, code_dim: usize) -> SiameseInput {
    let title = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect();
    let body = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect();
    let code = if rng.gen_bool(0.5) {
        let mut c: Vec<f32> = (0..code_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c.push(1.0);
        c
    } else {
        vec![0.0; code_dim + 1]
    };
    SiameseInput { title, body, code }
}

fn check_siamese(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let dims = SiameseDims {
        vocab: 7,
        word_dim: rng.gen_range(2..4),
        title_hidden: rng.gen_range(2..5),
        body_hidden: rng.gen_range(2..5),
        code_dim: 3,
        code_out: 2,
    };
    let mut m = SiameseModel::<f64>::new(dims, &[4], rng);
    let a = siamese_input(rng, dims.vocab, dims.code_dim);
    let b = siamese_input(rng, dims.vocab, dims.code_dim);
    let mut out = Vec::new();
    for label in [0.0, 1.0] {
        let mut g = m.zeros_like();
        m.pair_loss_grad(&a, &b, label, 1.0, &mut g)?;
        out.push(grad_check(&mut m, &g, FD_EPS, |m| {
            bce_loss(m.forward_pair(&a, &b).unwrap(), label)
        })?);
    }
    Ok(out)
}

fn grid_seq(rng: &mut ChaCha8Rng, words: usize, codes: usize) -> TokenSequence {
    let n = rng.gen_range(1..6);
    let tokens: Vec<GridToken> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                GridToken::Code(rng.gen_range(0..codes))
            } else {
                GridToken::Word(rng.gen_range(0..words))
            }
        })
        .collect();
    TokenSequence {
        segments: vec![Segment::Title; tokens.len()],
        tokens,
    }
}

fn check_gridcnn(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let dims = GridDims {
        side: 8,
        word_vocab: 6,
        code_vocab: 4,
        embed_dim: 3,
    };
    let conv = [ConvSpec {
        channels: 2,
        kernel: 3,
        stride: 1,
        pool: 2,
    }];
    let mut m = GridCnnModel::<f64>::new(dims, &conv, &[4], rng)?;
    // padded cells see an all-zero input; biases away from zero keep them off the ReLU kink
    m.convs[0].bias = Tensor::from_slice(&[rng.gen_range(0.05..0.3), -rng.gen_range(0.05..0.3)]);
    let a = grid_seq(rng, dims.word_vocab, dims.code_vocab);
    let b = grid_seq(rng, dims.word_vocab, dims.code_vocab);
    let mut out = Vec::new();
    for label in [0.0, 1.0] {
        let mut g = m.zeros_like();
        m.pair_loss_grad(&a, &b, label, 1.0, &mut g)?;
        out.push(grad_check(&mut m, &g, FD_EPS, |m| {
            bce_loss(m.forward_pair(&a, &b).unwrap(), label)
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run_gradient_suite(7, 2).unwrap();
        assert_eq!(report.entries.len(), COMPONENTS.len());
        for e in &report.entries {
            assert!(e.passed, "{e:?}");
        }
    }
}
