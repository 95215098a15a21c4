//! Small numeric helpers shared across the crate.

/// Compensated (Kahan) accumulator for long sums of terms with mixed magnitudes.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of an iterator, in iteration order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = Kahan::new();
    for x in it {
        acc.add(x);
    }
    acc.value()
}

/// ln(k!), exact summation for small k and a Stirling tail otherwise.
///
/// Absolute error stays below ~1e-13 over the whole range, which is far
/// tighter than the truncation budget of the Poisson windows that use it.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        return 0.0;
    }
    if k < 64 {
        return kahan_sum((2..=k).map(|i| (i as f64).ln()));
    }
    let x = k as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// Sample mean and (unbiased) variance with a compensated two-pass sweep.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = kahan_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1) as f64)
}

/// Pearson correlation coefficient; 0 when either input is degenerate.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "correlation needs equal-length inputs");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = kahan_sum(xs.iter().copied()) / n as f64;
    let my = kahan_sum(ys.iter().copied()) / n as f64;
    let mut sxy = Kahan::new();
    let mut sxx = Kahan::new();
    let mut syy = Kahan::new();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
    }
    let denom = (sxx.value() * syy.value()).sqrt();
    if denom <= 0.0 {
        0.0
    } else {
        sxy.value() / denom
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        // 1 followed by 1e16 tiny terms of 1e-16 each: naive summation loses them all.
        let mut acc = Kahan::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn ln_factorial_matches_direct_product() {
        for k in [0u64, 1, 2, 5, 10, 63, 64, 100, 1000] {
            let direct = (2..=k).map(|i| (i as f64).ln()).sum::<f64>();
            assert!(
                (ln_factorial(k) - direct).abs() < 1e-10 * direct.max(1.0),
                "k={k}"
            );
        }
    }

    #[test]
    fn pearson_of_linear_data_is_one() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        assert!((pearson(&xs, &ys) - 1.0).abs() < 1e-12);
        let yneg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &yneg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let (m, v) = mean_variance(&[2.5; 10]);
        assert_eq!(m, 2.5);
        assert_eq!(v, 0.0);
    }
}
