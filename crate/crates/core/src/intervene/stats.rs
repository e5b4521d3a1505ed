use std::collections::HashMap;

use statrs::function::factorial::ln_binomial;

use crate::harness::TokenId;

/// `P(X >= k)` for `X ~ Binomial(n, p0)` by direct summation of the upper tail.
/// Degenerate nulls: `p0 = 0` gives 0 for any `k >= 1`.
pub fn binomial_test_greater(k: usize, n: usize, p0: f64) -> f64 {
    assert!(k <= n, "k must not exceed n");
    assert!((0.0..=1.0).contains(&p0), "p0 must lie in [0, 1]");
    if k == 0 {
        return 1.0;
    }
    if p0 == 0.0 {
        return 0.0;
    }
    if p0 == 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p0.ln(), (-p0).ln_1p());
    let (n64, mut total) = (n as u64, 0.0);
    // Smallest terms first for accuracy.
    for i in (k..=n).rev() {
        let i64_ = i as u64;
        total += (ln_binomial(n64, i64_) + i as f64 * lp + (n - i) as f64 * lq).exp();
    }
    total.min(1.0)
}

/// `100 * |A ∩ B| / |A ∪ B|` over token multisets; two empty sequences score 100.
pub fn token_similarity(a: &[TokenId], b: &[TokenId]) -> f64 {
    let mut counts: HashMap<TokenId, (usize, usize)> = HashMap::new();
    for &t in a {
        counts.entry(t).or_default().0 += 1;
    }
    for &t in b {
        counts.entry(t).or_default().1 += 1;
    }
    let (inter, union) = counts
        .values()
        .fold((0, 0), |(i, u), &(x, y)| (i + x.min(y), u + x.max(y)));
    if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}
