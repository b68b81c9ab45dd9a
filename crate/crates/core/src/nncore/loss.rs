use super::tensor::dot;
use super::Real;
use crate::error::{dim_err, Result};

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of probability `p` against label `y ∈ {0, 1}`.
pub fn bce_loss<T: Real>(p: T, y: T) -> T {
    let eps = T::lit(PROB_EPS);
    let p = p.max(eps).min(T::one() - eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Gradient of `bce_loss(sigmoid(z), y)` with respect to the logit `z`.
/// Zero when the clamp is active, matching the clamped loss exactly.
pub fn bce_logit_grad<T: Real>(p: T, y: T) -> T {
    let eps = T::lit(PROB_EPS);
    if p < eps || p > T::one() - eps {
        T::zero()
    } else {
        p - y
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_sim<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return dim_err(format!("cosine_sim: lengths {} vs {}", u.len(), v.len()));
    }
    // one left-to-right pass, so a plain double loop reproduces it bitwise
    let (mut uv, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == T::zero() || vv == T::zero() {
        return Ok(T::zero());
    }
    let s = uv / (uu.sqrt() * vv.sqrt());
    Ok(s.max(-T::one()).min(T::one()))
}

/// Accumulates `d_sim * ∂cos/∂u` into `du` and `d_sim * ∂cos/∂v` into `dv`.
pub fn cosine_sim_backward<T: Real>(u: &[T], v: &[T], d_sim: T, du: &mut [T], dv: &mut [T]) {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == T::zero() || nv == T::zero() {
        return;
    }
    let inv = T::one() / (nu * nv);
    let s = dot(u, v) * inv;
    let su = s / (nu * nu);
    let sv = s / (nv * nv);
    for k in 0..u.len() {
        du[k] += d_sim * (v[k] * inv - u[k] * su);
        dv[k] += d_sim * (u[k] * inv - v[k] * sv);
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of `target` under `softmax(logits)`; writes `∂loss/∂logits`
/// into `d_logits` scaled by `weight`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    target: usize,
    weight: T,
    d_logits: &mut [T],
) -> T {
    let lp = log_softmax(logits);
    for (d, &l) in d_logits.iter_mut().zip(&lp) {
        *d = weight * l.exp();
    }
    d_logits[target] -= weight;
    -lp[target]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5f64, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(0.5f64, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(1.0 - PROB_EPS, 1.0) < 1e-6);
        assert!((bce_loss(0.9f64, 0.0) - 10f64.ln()).abs() < 1e-9);
        // clamping keeps the loss finite at the extremes
        assert!(bce_loss(0.0f64, 1.0).is_finite());
        assert!(bce_loss(1.0f32, 0.0).is_finite());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[3.0f64, -4.0], &[3.0, -4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_sim(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0f64, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0f64], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(1000.0f32) <= 1.0);
    }

    #[test]
    fn softmax_ce_uniform() {
        let mut d = vec![0.0f64; 4];
        let l = softmax_cross_entropy(&[0.0; 4], 2, 1.0, &mut d);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((d.iter().sum::<f64>()).abs() < 1e-12);
    }
}
