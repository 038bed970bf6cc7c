use crate::error::{Error, Result};

/// Numerically stable softmax over one logit row (max-subtraction form).
pub fn softmax_row(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of empty row".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// VJP of softmax: given p = softmax(z) and dL/dp, returns dL/dz.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, u)| p * u).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, u)| p * (u - dot))
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Exact Gaussian-CDF GELU: z * Phi(z). The tanh approximation is not used
/// anywhere so finite differences always check against one function.
pub fn gelu(z: f64) -> f64 {
    z * normal_cdf(z)
}

/// d/dz [z * Phi(z)] = Phi(z) + z * phi(z).
pub fn gelu_grad(z: f64) -> f64 {
    normal_cdf(z) + z * normal_pdf(z)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// log(sum(exp(z))) with the max factored out. Accepts -inf entries as
/// log-zero; an all-(-inf) input yields -inf rather than NaN.
pub fn log_sum_exp(zs: &[f64]) -> f64 {
    debug_assert!(!zs.is_empty());
    let max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = zs.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln()
}

/// Two-argument form used in DP inner loops.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
