//! Small numeric helpers shared by the estimators.

/// Pairwise (cascade) summation. Deterministic for a given input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased (n − 1) sample variance. NaN for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Softmax of `z` written into `out`; returns log-sum-exp.
pub fn softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_and_large() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0]), 3.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn variance_of_two_points() {
        let a = 0.3;
        assert!((sample_variance(&[-a, a]) - 2.0 * a * a).abs() < 1e-15);
        assert!(sample_variance(&[1.0]).is_nan());
    }

    #[test]
    fn softplus_sigmoid_consistency() {
        for &x in &[-40.0, -3.0, 0.0, 2.5, 40.0] {
            let d = (softplus(x + 1e-6) - softplus(x - 1e-6)) / 2e-6;
            assert!((d - sigmoid(x)).abs() < 1e-6);
        }
        assert!((logit(sigmoid(1.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes() {
        let mut p = [0.0; 3];
        let lse = softmax_into(&[2.0, 1.0, 0.0], &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((lse - (2f64.exp() + 1f64.exp() + 1.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
