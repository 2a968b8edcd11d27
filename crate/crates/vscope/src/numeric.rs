//! Deterministic reductions. All physical-space sums go through
//! `pairwise_sum` so results are reproducible bit-for-bit and the error
//! stays O(eps * log n) instead of O(eps * n).

/// Pairwise (cascade) summation. Order-fixed, no data races, no fast-math.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    // below this length the simple loop is both fast and accurate enough
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of f(i) over 0..n without materializing the values.
pub fn pairwise_sum_fn(n: usize, f: &dyn Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        const LEAF: usize = 32;
        if hi - lo <= LEAF {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            return s;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, f)
}

/// Trapezoid weights for (possibly non-uniform) sample times.
/// Integrating f against these weights equals the composite trapezoid rule.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    for i in 0..n - 1 {
        let half = 0.5 * (times[i + 1] - times[i]);
        w[i] += half;
        w[i + 1] += half;
    }
    w
}

/// Composite Simpson integral of f over [a, b] with n subintervals
/// (n is rounded up to even).
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += c * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0, "integer sums are exact");
    }

    #[test]
    fn pairwise_beats_naive_on_cancellation() {
        // large constant + many tiny increments; exact value is known
        let n = 1 << 16;
        let mut xs = vec![1e-8; n];
        xs[0] = 1.0;
        let exact = 1.0 + 1e-8 * (n - 1) as f64;
        let got = pairwise_sum(&xs);
        assert!(
            (got - exact).abs() / exact < 1e-14,
            "pairwise sum drifted: {got} vs {exact}"
        );
    }

    #[test]
    fn pairwise_fn_agrees_with_slice() {
        let xs: Vec<f64> = (0..517).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum_fn(xs.len(), &|i| xs[i]);
        assert_eq!(a, b, "fn and slice variants must agree exactly");
    }

    #[test]
    fn trapezoid_weights_integrate_linear_exactly() {
        let times = [0.0, 0.1, 0.25, 0.5, 0.9, 1.0];
        let w = trapezoid_weights(&times);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-15, "weights sum to the span");
        let integral: f64 = times.iter().zip(&w).map(|(t, w)| (2.0 * t + 3.0) * w).sum();
        assert!(
            (integral - 4.0).abs() < 1e-14,
            "trapezoid is exact on affine integrands, got {integral}"
        );
    }

    #[test]
    fn simpson_quartic_accuracy() {
        let got = simpson(0.0, 1.0, 128, |x| x.exp());
        let exact = 1.0f64.exp() - 1.0;
        // theory: (b-a) h^4 max|f''''| / 180 ~ 4e-11 at n = 128
        assert!(
            (got - exact).abs() < 1e-9,
            "simpson(e^x) off by {}",
            (got - exact).abs()
        );
    }
}
