//! Literal, deliberately naive re-derivations used to cross-check the
//! production routines. Nothing in here calls the code it checks.

/// Procedure 1 transcribed step by step: sort descending (stable), start at
/// `L = n`, stop at `L = 2` or when the mean of `p ln p` over the first
/// `L - 1` entries is strictly below `p_L ln p_L`, otherwise drop the last
/// entry and renormalise the retained sorted values.
pub fn oracle_procedure1(d_bar: &[f64]) -> (usize, Vec<f64>) {
    let mut sorted: Vec<f64> = d_bar.to_vec();
    // insertion sort, only moving strictly larger values forward
    for i in 1..sorted.len() {
        let mut j = i;
        while j > 0 && sorted[j - 1] < sorted[j] {
            sorted.swap(j - 1, j);
            j -= 1;
        }
    }
    let h = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    let mut l = sorted.len();
    let mut p = sorted.clone();
    loop {
        if l == 2 {
            break;
        }
        let mut acc = 0.0;
        for value in p.iter().take(l - 1) {
            acc += h(*value);
        }
        let mean = acc / (l - 1) as f64;
        if mean < h(p[l - 1]) {
            break;
        }
        l -= 1;
        let total: f64 = sorted[..l].iter().sum();
        p = sorted[..l].iter().map(|x| x / total).collect();
    }
    p.truncate(l);
    (l, p)
}

/// Iterates `P <- A^2 P R / (P + R) + Q` from `P = Q` until successive
/// values differ by less than 1e-12. `None` after a million iterations.
pub fn oracle_riccati(a: f64, q: f64, r: f64) -> Option<f64> {
    let mut p = q;
    for _ in 0..1_000_000 {
        let next = a * a * p * r / (p + r) + q;
        if (next - p).abs() < 1e-12 {
            return Some(next);
        }
        p = next;
    }
    None
}

/// `(variance, skewness, kurtosis)` straight from the expectation
/// definitions on explicitly standardised samples. `None` for constant input.
pub fn oracle_moments(samples: &[f64]) -> Option<(f64, f64, f64)> {
    let n = samples.len() as f64;
    let mut mean = 0.0;
    for x in samples {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for x in samples {
        var += (x - mean) * (x - mean);
    }
    var /= n;
    if var == 0.0 {
        return None;
    }
    let sd = var.sqrt();
    let (mut skew, mut kurt) = (0.0, 0.0);
    for x in samples {
        let z = (x - mean) / sd;
        skew += z * z * z;
        kurt += z * z * z * z;
    }
    Some((var, skew / n, kurt / n))
}
