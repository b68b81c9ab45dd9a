//! Valid (unpadded) 2-D convolution and non-overlapping max pooling over
//! `[channels × height × width]` tensors.

use super::{Real, Tensor};
use crate::error::{dim_err, Result};

fn dims3<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => dim_err(format!("{what}: expected rank-3 tensor, got {s:?}")),
    }
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize) -> Result<ConvGeom> {
    let (c_in, h, w) = dims3(input, "conv2d input")?;
    let (c_out, kc, k, k2) = match kernels.shape() {
        [a, b, c, d] => (*a, *b, *c, *d),
        s => return dim_err(format!("conv2d kernels: expected rank 4, got {s:?}")),
    };
    if kc != c_in || k != k2 {
        return dim_err(format!(
            "conv2d: kernels {:?} for input {:?}",
            kernels.shape(),
            input.shape()
        ));
    }
    if k > h || k > w {
        return dim_err(format!("conv2d: kernel {k} larger than input {h}×{w}"));
    }
    if stride == 0 {
        return dim_err("conv2d: stride must be positive");
    }
    Ok(ConvGeom {
        c_in,
        c_out,
        h,
        w,
        k,
        stride,
        oh: (h - k) / stride + 1,
        ow: (w - k) / stride + 1,
    })
}

pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input, kernels, stride)?;
    if bias.len() != g.c_out {
        return dim_err(format!("conv2d: bias length {} for {} kernels", bias.len(), g.c_out));
    }
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![T::zero(); g.c_out * g.oh * g.ow];
    for co in 0..g.c_out {
        let plane = &mut out[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        plane.fill(bias.data()[co]);
        for ci in 0..g.c_in {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = kd[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    for oy in 0..g.oh {
                        let row = (ci * g.h + oy * g.stride + ky) * g.w + kx;
                        let orow = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            *o += wv * x[row + ox * g.stride];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[g.c_out, g.oh, g.ow], out)
}

/// Accumulates kernel and bias gradients; returns `∂L/∂input`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    d_out: &Tensor<T>,
    d_kernels: &mut Tensor<T>,
    d_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let g = geometry(input, kernels, stride)?;
    if d_out.shape() != [g.c_out, g.oh, g.ow] {
        return dim_err(format!("conv2d backward: output grad {:?}", d_out.shape()));
    }
    let x = input.data();
    let kd = kernels.data();
    let dy = d_out.data();
    let mut dx = vec![T::zero(); x.len()];
    let dk = d_kernels.data_mut();
    for co in 0..g.c_out {
        let plane = &dy[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        d_bias.data_mut()[co] += plane.iter().copied().sum::<T>();
        for ci in 0..g.c_in {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                    let wv = kd[widx];
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let row = (ci * g.h + oy * g.stride + ky) * g.w + kx;
                        for ox in 0..g.ow {
                            let d = plane[oy * g.ow + ox];
                            acc += d * x[row + ox * g.stride];
                            dx[row + ox * g.stride] += d * wv;
                        }
                    }
                    dk[widx] += acc;
                }
            }
        }
    }
    Tensor::new(input.shape(), dx)
}

pub fn maxpool2d<T: Real>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    Ok(maxpool2d_argmax(input, window)?.0)
}

/// Max pooling that also returns, per output cell, the flat input index of
/// the selected maximum (first occurrence on ties).
pub fn maxpool2d_argmax<T: Real>(
    input: &Tensor<T>,
    window: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = dims3(input, "maxpool2d input")?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return dim_err(format!("maxpool2d: window {window} does not divide {h}×{w}"));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + (oy * window) * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = ch * h * w + (oy * window + dy) * w + ox * window + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != d_out.len() {
        return dim_err("maxpool2d backward: argmax/gradient length mismatch");
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Drops trailing rows and columns so both spatial sides are multiples of `m`.
pub fn crop_to_multiple<T: Real>(input: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(input, "crop input")?;
    let (nh, nw) = (h - h % m, w - w % m);
    if nh == 0 || nw == 0 {
        return dim_err(format!("crop: {h}×{w} smaller than {m}"));
    }
    if (nh, nw) == (h, w) {
        return Ok(input.clone());
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * nh * nw);
    for ch in 0..c {
        for y in 0..nh {
            let start = (ch * h + y) * w;
            out.extend_from_slice(&x[start..start + nw]);
        }
    }
    Tensor::new(&[c, nh, nw], out)
}

/// Inverse of [`crop_to_multiple`] for gradients: zero-pads back to `shape`.
pub fn uncrop<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let (c, nh, nw) = dims3(grad, "uncrop grad")?;
    let (h, w) = (shape[1], shape[2]);
    let mut out = Tensor::zeros(shape);
    let d = out.data_mut();
    for ch in 0..c {
        for y in 0..nh {
            let src = &grad.data()[(ch * nh + y) * nw..(ch * nh + y + 1) * nw];
            let dst = (ch * h + y) * w;
            d[dst..dst + nw].copy_from_slice(src);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::grad_check;
    use crate::nncore::ParamList;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[3, 4, 5], 1.0, &mut rng);
        let k = Tensor::filled(&[1, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 5]);
        for i in 0..20 {
            let s = x.data()[i] + x.data()[20 + i] + x.data()[40 + i];
            assert!((y.data()[i] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_kernels_give_bias() {
        let x = Tensor::<f64>::filled(&[2, 5, 5], 3.0);
        let y = conv2d(&x, &Tensor::zeros(&[2, 2, 3, 3]), &Tensor::from_slice(&[0.7, -1.5]), 2)
            .unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data()[..4].iter().all(|&v| v == 0.7));
        assert!(y.data()[4..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(&[1, 3, 3], 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[1, 1, 2, 2], 1.0, &mut rng);
        let b = 0.25;
        let y = conv2d(&x, &k, &Tensor::from_slice(&[b]), 1).unwrap();
        let xv = |r: usize, c: usize| x.data()[r * 3 + c];
        let kv = |r: usize, c: usize| k.data()[r * 2 + c];
        for oy in 0..2 {
            for ox in 0..2 {
                let expect = b
                    + xv(oy, ox) * kv(0, 0)
                    + xv(oy, ox + 1) * kv(0, 1)
                    + xv(oy + 1, ox) * kv(1, 0)
                    + xv(oy + 1, ox + 1) * kv(1, 1);
                assert!((y.data()[oy * 2 + ox] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kernel_larger_than_input() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), 1).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f64>::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool2d(&x, 2).unwrap().data(), &[4.0]);
        let c = Tensor::<f64>::filled(&[2, 4, 4], 1.5);
        assert!(maxpool2d(&c, 2).unwrap().data().iter().all(|&v| v == 1.5));
        assert!(maxpool2d(&Tensor::<f64>::zeros(&[1, 3, 4]), 2).is_err());
    }

    #[test]
    fn maxpool_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::uniform(&[1, 4, 4], 1.0, &mut rng);
        let y = maxpool2d(&x, 2).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[(2 * oy + dy) * 4 + 2 * ox + dx]);
                    }
                }
                assert_eq!(y.data()[oy * 2 + ox], m);
            }
        }
    }

    #[test]
    fn crop_and_uncrop() {
        let x = Tensor::<f64>::new(&[1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let c = crop_to_multiple(&x, 2).unwrap();
        assert_eq!(c.data(), &[0., 1., 3., 4.]);
        let u = uncrop(&c, &[1, 3, 3]).unwrap();
        assert_eq!(u.data(), &[0., 1., 0., 3., 4., 0., 0., 0., 0.]);
    }

    #[test]
    fn conv_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for stride in [1, 2] {
            let mut params = ParamList::new(vec![
                ("k".into(), Tensor::<f64>::uniform(&[3, 2, 3, 3], 1.0, &mut rng)),
                ("b".into(), Tensor::uniform(&[3], 1.0, &mut rng)),
                ("x".into(), Tensor::uniform(&[2, 7, 7], 1.0, &mut rng)),
            ]);
            let oh = (7 - 3) / stride + 1;
            let weights = Tensor::<f64>::uniform(&[3, oh / 2, oh / 2], 1.0, &mut rng);
            let forward = |p: &ParamList<f64>| {
                let y = conv2d(p.get("x").unwrap(), p.get("k").unwrap(), p.get("b").unwrap(), stride)
                    .unwrap();
                let y = crop_to_multiple(&y, 2).unwrap();
                let (pooled, arg) = maxpool2d_argmax(&y, 2).unwrap();
                (y, pooled, arg)
            };
            let loss = |p: &ParamList<f64>| {
                let (_, pooled, _) = forward(p);
                pooled.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (y, _, arg) = forward(&params);
            let d_crop = maxpool2d_backward(y.shape(), &arg, &weights).unwrap();
            let full_shape = [3, oh, oh];
            let d_y = uncrop(&d_crop, &full_shape).unwrap();
            let mut dk = Tensor::zeros(&[3, 2, 3, 3]);
            let mut db = Tensor::zeros(&[3]);
            let dx = conv2d_backward(
                params.get("x").unwrap(),
                params.get("k").unwrap(),
                stride,
                &d_y,
                &mut dk,
                &mut db,
            )
            .unwrap();
            let g = ParamList::new(vec![("k".into(), dk), ("b".into(), db), ("x".into(), dx)]);
            let r = grad_check(&mut params, &g, 1e-5, loss).unwrap();
            assert!(r.max_rel_error < 1e-4, "stride {stride}: {r:?}");
        }
    }
}
