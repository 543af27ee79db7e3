//! Scalar numerical kernels shared by the autograd tape, the loss heads and
//! the test oracles. These operate on plain slices and never allocate tape
//! nodes.

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(z)[target]`
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

/// `-Σ t_i · ln(softmax(z)_i + eps)` against a soft target distribution.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64], eps: f64) -> f64 {
    let p = softmax(logits);
    -target
        .iter()
        .zip(&p)
        .map(|(t, p)| t * (p + eps).ln())
        .sum::<f64>()
}

/// Binary cross-entropy with logits, summed over labels.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = crate::tensor::norm(a);
    let nb = crate::tensor::norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(crate::tensor::dot(a, b) / (na * nb))
}

/// Index of the maximum, first occurrence on ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_cross_entropy_is_ln_c() {
        for c in [2usize, 11, 19, 151] {
            let z = vec![0.0; c];
            assert!((cross_entropy(&z, c - 1) - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_two_one_three() {
        let p = softmax(&[2.0, 1.0, 3.0]);
        assert!((p[0] - 0.244_728_471_054_797_6).abs() < 1e-12);
        assert!((p[1] - 0.090_030_573_170_380_46).abs() < 1e-12);
        assert!((p[2] - 0.665_240_955_774_821_9).abs() < 1e-12);
    }

    #[test]
    fn bce_zero_logits() {
        let l = bce_with_logits(&[0.0; 19], &[1.0; 19]);
        assert!((l - 19.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    }
}
